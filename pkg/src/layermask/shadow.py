"""Seed-matched shadow bottom models trained by the active party on auxiliary data."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import nn


class ShadowError(ValueError):
    pass


@dataclass
class ShadowSet:
    """Shadow models and auxiliary feature blocks, keyed by passive party id.

    All auxiliary blocks are row-aligned with ``labels``.
    """

    models: dict
    features: dict
    labels: np.ndarray
    grads: dict = field(default_factory=dict)

    def __post_init__(self):
        if set(self.models) != set(self.features):
            raise ShadowError("every shadow model needs an auxiliary feature block")
        for k, x in self.features.items():
            if len(x) != len(self.labels):
                raise ShadowError(f"aux block for party {k} has {len(x)} rows, labels {len(self.labels)}")
            if x.shape[1] != self.models[k].dims[0]:
                raise ShadowError(f"aux block for party {k} does not match the shadow input width")


def party_seed(seed: int, party: int) -> int:
    """Initialization seed a passive party uses for its bottom model."""
    return int(np.random.SeedSequence([seed, party]).generate_state(1)[0])


def init_seed_matched(seed: int, architectures: dict):
    """Bottom and shadow models from the same per-party seed.

    ``architectures`` maps passive party id to layer widths. Returns
    ``(bottoms, shadows)``, bit-identical per party.
    """
    bottoms, shadows = {}, {}
    for k, dims in sorted(architectures.items()):
        s = party_seed(seed, k)
        bottoms[k] = nn.init_mlp(dims, np.random.default_rng(s), role=nn.BOTTOM)
        shadows[k] = nn.init_mlp(dims, np.random.default_rng(s), role=nn.SHADOW)
    return bottoms, shadows


def shadow_model_update(shadows: ShadowSet, top: nn.MLP, lr: float, batch_size: int,
                        rng: np.random.Generator | None = None):
    """One pass over the auxiliary data with the top model frozen.

    Embeddings of all shadows are summed (the active party's own bottom is
    left out) and fed to a private copy of ``top``. Returns the per-party
    gradients summed over the pass, one ``(grad_w, grad_b)`` per layer; they
    are also stored on ``shadows.grads``.
    """
    if not len(shadows.labels):
        raise ShadowError("auxiliary set has no labelled rows")
    frozen = top.copy()
    n = len(shadows.labels)
    order = rng.permutation(n) if rng is not None else np.arange(n)
    parties = sorted(shadows.models)
    totals = {k: [(np.zeros_like(l.weight), np.zeros_like(l.bias))
                  for l in shadows.models[k].layers] for k in parties}
    for start in range(0, n, batch_size):
        idx = order[start:start + batch_size]
        outs = {k: nn.model_forward(shadows.models[k], shadows.features[k][idx]) for k in parties}
        agg = outs[parties[0]][0]
        for k in parties[1:]:
            agg = agg + outs[k][0]
        logits, cache_t = nn.model_forward(frozen, agg)
        _, grad = nn.softmax_ce(logits, shadows.labels[idx])
        _, grad_agg = nn.model_backward(frozen, cache_t, grad)
        for k in parties:
            grads, _ = nn.model_backward(shadows.models[k], outs[k][1], grad_agg)
            nn.sgd_step(shadows.models[k], grads, lr)
            totals[k] = [(tw + gw, tb + gb) for (tw, tb), (gw, gb) in zip(totals[k], grads)]
    shadows.grads = totals
    return totals
