"""Greedy choice of layers to mask under a label-leakage budget."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from .attack import AttackDataset, build_attack_dataset, mc_attack

VMASK = "vmask"
VMASK_AS = "vmask-as"
VMASK_RS = "vmask-rs"
VMASK_ALLS = "vmask-alls"
VARIANTS = (VMASK, VMASK_AS, VMASK_RS, VMASK_ALLS)


class SelectionError(ValueError):
    pass


def accumulate(g: np.ndarray, grads) -> np.ndarray:
    """Add each layer's L1 gradient norm (weights and bias together)."""
    g = np.asarray(g, dtype=np.float64)
    if len(grads) != len(g):
        raise SelectionError(f"{len(grads)} layer gradients for an accumulator of length {len(g)}")
    return g + nn.l1_norms(grads)


def layer_order(g) -> list[int]:
    """1-based layer indices by accumulated norm, descending; ties to the lower index."""
    return [j + 1 for j in sorted(range(len(g)), key=lambda j: (-g[j], j))]


def estimate_leakage(shadow_masked: nn.MLP, dataset: AttackDataset, attack_epochs: int,
                     lr: float, rng: np.random.Generator) -> float:
    return mc_attack(dataset, shadow_masked, attack_epochs, lr, rng).best


def randomize_layers(shadow: nn.MLP, layers, rng: np.random.Generator) -> nn.MLP:
    """Copy of ``shadow`` with the given 1-based layers re-drawn from the init law."""
    out = shadow.copy()
    for u in sorted(layers):
        old = out.layers[u - 1]
        out.layers[u - 1] = nn.init_linear(old.n_in, old.n_out, rng)
    return out


@dataclass
class Selection:
    masked: set
    plain: set
    g: np.ndarray
    leakage: float  # last simulated attack accuracy, nan if none ran
    n_attacks: int
    vmask_count: int


def select_layers(aux_features, aux_labels, shadow: nn.MLP, grads, u_prev, budget: float,
                  g, m_per_class: int, attack_epochs: int, lr: float, variant: str,
                  rng: np.random.Generator, attack=estimate_leakage, n_classes=None) -> Selection:
    """Pick the layers to mask next epoch.

    Layers are tried in descending accumulated-gradient-norm order; each
    candidate set is checked by attacking a copy of the shadow whose masked
    layers are replaced with random parameters. ``attack`` may be swapped for
    a stub with the signature of :func:`estimate_leakage`.
    """
    if variant not in VARIANTS:
        raise SelectionError(f"invalid selection variant {variant!r}")
    n_layers = shadow.n_layers
    full = set(range(1, n_layers + 1))
    g = accumulate(g, grads)
    if variant == VMASK_ALLS:
        return Selection(full, set(), g, float("nan"), 0, n_layers)

    queue = layer_order(g)
    if variant == VMASK_AS:
        masked = set(u_prev)
        queue = [q for q in queue if q not in masked]
    else:
        masked = set()
    if m_per_class * len(np.unique(aux_labels)) > len(aux_labels):
        raise SelectionError(f"{m_per_class} labels per class exceeds the auxiliary set")
    dataset = build_attack_dataset(aux_features, aux_labels, m_per_class, rng, n_classes=n_classes)

    leakage, n_attacks = float("nan"), 0
    while queue:
        probe = randomize_layers(shadow, masked, rng)
        leakage = attack(probe, dataset, attack_epochs, lr, rng)
        n_attacks += 1
        if leakage > budget:
            masked.add(queue.pop(0))
        else:
            break

    count = len(masked)
    if variant == VMASK_RS:
        masked = set(int(u) for u in rng.choice(sorted(full), size=count, replace=False))
    return Selection(masked, full - masked, g, leakage, n_attacks, count)
