"""Moving bottom-model layers between plaintext and secret-shared form."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from .parties import ActiveParty, PassiveParty
from .sharing import add_local, combine, lift_public, share
from .transport import LAYER_RECONSTRUCT, LAYER_SHARE


class MaskStateError(ValueError):
    pass


@dataclass(frozen=True)
class NoiseConfig:
    sigma: float = 0.01

    def __post_init__(self):
        if not (np.isfinite(self.sigma) and self.sigma >= 0):
            raise ValueError(f"sigma must be finite and >= 0, got {self.sigma}")


@dataclass(frozen=True)
class MaskState:
    """Masked (``u``) and plaintext (``v``) 1-based layer sets, now and before."""

    u_curr: frozenset
    u_prev: frozenset
    v_curr: frozenset
    v_prev: frozenset
    n_layers: int

    def __post_init__(self):
        full = set(range(1, self.n_layers + 1))
        for u, v, tag in ((self.u_curr, self.v_curr, "current"), (self.u_prev, self.v_prev, "previous")):
            if u & v or (u | v) != full:
                raise MaskStateError(
                    f"{tag} masked {sorted(u)} and plaintext {sorted(v)} do not partition 1..{self.n_layers}"
                )

    @classmethod
    def step(cls, u_prev, u_curr, n_layers: int) -> "MaskState":
        full = frozenset(range(1, n_layers + 1))
        u_prev, u_curr = frozenset(u_prev), frozenset(u_curr)
        return cls(u_curr, u_prev, full - u_curr, full - u_prev, n_layers)

    @property
    def newly_masked(self) -> list[int]:
        return sorted(self.u_curr - self.u_prev)

    @property
    def newly_plain(self) -> list[int]:
        return sorted(self.v_curr - self.v_prev)


def _noise(shape, noise: NoiseConfig, rng, domain):
    return lift_public(rng.normal(0.0, noise.sigma, size=shape), domain)


def mask_transition(state: MaskState, passive: PassiveParty, active: ActiveParty,
                    noise: NoiseConfig) -> None:
    """Share layers in ``u_curr - u_prev``, reconstruct layers in ``v_curr - v_prev``.

    Fresh ``N(0, sigma^2)`` noise is added to the active party's share on both
    transitions, so the recombined parameter becomes ``theta + noise``.
    """
    k, model, ep_p, ep_a = passive.pid, passive.model, passive.endpoint, active.endpoint
    if model.n_layers != state.n_layers:
        raise MaskStateError(f"state covers {state.n_layers} layers, model has {model.n_layers}")
    for u in state.newly_masked:
        if model.layers[u - 1].masked:
            raise MaskStateError(f"party {k} layer {u} is already masked")
    for v in state.newly_plain:
        if not model.layers[v - 1].masked or (k, v) not in active.shares:
            raise MaskStateError(f"party {k} layer {v} is not masked; cannot reconstruct")

    dom = passive.domain
    # passive side: share and keep the first half
    for u in state.newly_masked:
        layer = model.layers[u - 1]
        w = share(layer.weight, dom, passive.share_rng)
        b = share(layer.bias, dom, passive.share_rng)
        model.layers[u - 1] = nn.Linear(w.share_a, b.share_a, masked=True)
        ep_p.send(active.pid, LAYER_SHARE, (w.share_b, b.share_b), layer=u)
    # active side: store the counterpart share plus noise
    for u in state.newly_masked:
        msg = active.endpoint.recv(k, LAYER_SHARE)
        w_b, b_b = msg.payload
        w_b = add_local(w_b, _noise(w_b.shape, noise, active.noise_rng, dom), dom)
        b_b = add_local(b_b, _noise(b_b.shape, noise, active.noise_rng, dom), dom)
        active.shares[(k, u)] = [w_b, b_b]

    for v in state.newly_plain:
        w_b, b_b = active.shares.pop((k, v))
        w_b = add_local(w_b, _noise(w_b.shape, noise, active.noise_rng, dom), dom)
        b_b = add_local(b_b, _noise(b_b.shape, noise, active.noise_rng, dom), dom)
        ep_a.send(k, LAYER_RECONSTRUCT, (w_b, b_b), layer=v)
    for v in state.newly_plain:
        msg = ep_p.recv(active.pid, LAYER_RECONSTRUCT)
        w_b, b_b = msg.payload
        own = model.layers[v - 1]
        model.layers[v - 1] = nn.Linear(combine(own.weight, w_b, dom), combine(own.bias, b_b, dom))


def mask_ratio(masked_counts, n_epochs: int, n_layers: int) -> float:
    """Fraction of layer-epochs spent masked: ``sum(L_t) / (T * L)``."""
    if n_epochs < 1 or n_layers < 1:
        raise ValueError("need at least one epoch and one layer")
    return float(sum(masked_counts)) / (n_epochs * n_layers)
