"""Per-party state. Each party touches only its own fields and its endpoint."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import nn
from .sharing import ShareDomain, combine
from .transport import Endpoint


@dataclass
class PassiveParty:
    pid: int
    x: np.ndarray
    model: nn.MLP
    domain: ShareDomain
    share_rng: np.random.Generator
    endpoint: Endpoint
    active_id: int
    cache: list = field(default_factory=list)

    @property
    def n_layers(self) -> int:
        return self.model.n_layers


@dataclass
class ActiveParty:
    pid: int
    x: np.ndarray
    y: np.ndarray
    bottom: nn.MLP
    top: nn.MLP
    domain: ShareDomain
    share_rng: np.random.Generator
    noise_rng: np.random.Generator
    endpoint: Endpoint
    # (passive id, 1-based layer) -> [weight share, bias share]
    shares: dict = field(default_factory=dict)
    cache: dict = field(default_factory=dict)


def effective_bottom(passive: PassiveParty, active: ActiveParty) -> nn.MLP:
    """Simulation-side view of the jointly held model (shares recombined)."""
    layers = []
    for j, layer in enumerate(passive.model.layers, start=1):
        if layer.masked:
            w_a, b_a = active.shares[(passive.pid, j)]
            layers.append(nn.Linear(combine(layer.weight, w_a, passive.domain),
                                    combine(layer.bias, b_a, passive.domain)))
        else:
            layers.append(layer.copy())
    return nn.MLP(layers, passive.model.role, passive.model.activation)
