"""One VFL training epoch with secret-shared bottom-model layers.

Masked layers run their linear map on shares through Beaver products; the
output (forward) or input gradient (backward) is reconstructed at the
passive party right after each masked layer, so ReLU and its derivative
always see plaintext. The active party trains its own bottom model and the
top model in plaintext; embeddings are aggregated by summation.

Passive parties are party 0 in every two-party sharing, the active party
is party 1.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .parties import ActiveParty, PassiveParty
from .sharing import (MATMUL, ShareDomain, SharingError, add_local, beaver_finish,
                      beaver_mask, combine, gen_beaver_triple, scale_local, share, sub_local)
from .transport import EMBEDDING, EMBEDDING_GRAD, SHARE_REVEAL, SHARED_MUL_OPEN, VALUE_SHARE

PASSIVE, ACTIVE = 0, 1


class TripleBudgetError(RuntimeError):
    pass


class ProtocolError(RuntimeError):
    pass


@dataclass
class EpochPlan:
    batches: list  # list of index arrays, in training order
    lr: float

    def __post_init__(self):
        if not self.lr >= 0:
            raise ValueError("learning rate must be non-negative")


@dataclass
class EpochMetrics:
    loss: float = 0.0
    train_acc: float = 0.0
    n_samples: int = 0
    batch_losses: list = field(default_factory=list)


def make_plan(n_samples: int, batch_size: int, lr: float, rng: np.random.Generator) -> EpochPlan:
    order = rng.permutation(n_samples)
    return EpochPlan([order[i:i + batch_size] for i in range(0, n_samples, batch_size)], lr)


# ---------------------------------------------------------------------------
# Beaver triple supply


def triple_shapes(batch: int, dims, masked) -> list[tuple]:
    """Triples one passive party consumes for one batch, in consumption order.

    Forward uses one per masked layer (ascending); backward uses two per
    masked layer (descending): weight gradient, then input gradient.
    """
    out = []
    for j in sorted(masked):
        n_in, n_out = dims[j - 1], dims[j]
        out.append(((batch, n_in), (n_in, n_out)))
    for j in sorted(masked, reverse=True):
        n_in, n_out = dims[j - 1], dims[j]
        out.append(((n_out, batch), (batch, n_in)))
        out.append(((batch, n_out), (n_out, n_in)))
    return out


class TriplePool:
    """Per-pair FIFO of pre-dealt triple halves for one epoch."""

    def __init__(self):
        self.queues: dict = {}

    def add(self, k: int, triple):
        qs = self.queues.setdefault(k, (deque(), deque()))
        qs[PASSIVE].append(triple.half(PASSIVE))
        qs[ACTIVE].append(triple.half(ACTIVE))

    def take(self, k: int, side: int):
        try:
            return self.queues[k][side].popleft()
        except (KeyError, IndexError):
            raise TripleBudgetError(f"triple budget exhausted for party {k}") from None

    def remaining(self) -> int:
        return sum(len(q) for qs in self.queues.values() for q in qs)


class Dealer:
    """Trusted third party producing Beaver triples from its own RNG."""

    def __init__(self, domain: ShareDomain, rng: np.random.Generator):
        self.domain = domain
        self.rng = rng
        self.dealt = 0

    def deal_epoch(self, plan: EpochPlan, passives: list[PassiveParty]) -> TriplePool:
        pool = TriplePool()
        for batch in plan.batches:
            for p in passives:
                for sa, sb in triple_shapes(len(batch), p.model.dims, p.model.masked_indices):
                    pool.add(p.pid, gen_beaver_triple(sa, sb, MATMUL, self.domain, self.rng))
                    self.dealt += 1
        return pool


# ---------------------------------------------------------------------------
# two-party shared linear algebra over the transport


def _shared_product(passive, active, pool, x, y, tag):
    """Beaver product of shared operands; ``x``/``y`` are (passive, active) halves."""
    k = passive.pid
    halves = pool.take(k, PASSIVE), pool.take(k, ACTIVE)
    dom = passive.domain
    e_p, f_p = beaver_mask(x[PASSIVE], y[PASSIVE], halves[PASSIVE])
    e_a, f_a = beaver_mask(x[ACTIVE], y[ACTIVE], halves[ACTIVE])
    passive.endpoint.send(active.pid, SHARED_MUL_OPEN, (e_p, f_p), **tag)
    active.endpoint.send(k, SHARED_MUL_OPEN, (e_a, f_a), **tag)
    # each side opens with the peer's masked differences
    e_a_rx, f_a_rx = passive.endpoint.recv(active.pid, SHARED_MUL_OPEN).payload
    e_p_rx, f_p_rx = active.endpoint.recv(k, SHARED_MUL_OPEN).payload
    z_p = beaver_finish(PASSIVE, add_local(e_p, e_a_rx, dom), add_local(f_p, f_a_rx, dom),
                        halves[PASSIVE])
    z_a = beaver_finish(ACTIVE, add_local(e_p_rx, e_a, dom), add_local(f_p_rx, f_a, dom),
                        halves[ACTIVE])
    return z_p, z_a


def _share_to_active(passive, active, value, tag):
    pair = share(value, passive.domain, passive.share_rng)
    passive.endpoint.send(active.pid, VALUE_SHARE, pair.share_b, **tag)
    received = active.endpoint.recv(passive.pid, VALUE_SHARE).payload
    return pair.share_a, received


def _reveal_to_passive(passive, active, mine, theirs, tag):
    active.endpoint.send(passive.pid, SHARE_REVEAL, theirs, **tag)
    return combine(mine, passive.endpoint.recv(active.pid, SHARE_REVEAL).payload, passive.domain)


def _masked_forward(passive, active, pool, j, h, tag):
    layer = passive.model.layers[j - 1]
    w_a, b_a = active.shares[(passive.pid, j)]
    dom = passive.domain
    x_p, x_a = _share_to_active(passive, active, h, tag)
    z_p, z_a = _shared_product(passive, active, pool, (x_p, x_a), (layer.weight.T, w_a.T), tag)
    z_p = add_local(z_p, layer.bias, dom)
    z_a = add_local(z_a, b_a, dom)
    active.cache[(passive.pid, j)] = x_a
    return _reveal_to_passive(passive, active, z_p, z_a, tag), x_p


def _masked_backward(passive, active, pool, j, g, x_p, lr, tag):
    k, dom = passive.pid, passive.domain
    layer = passive.model.layers[j - 1]
    w_a, b_a = active.shares[(k, j)]
    x_a = active.cache.pop((k, j))
    g_p, g_a = _share_to_active(passive, active, g, tag)
    gw_p, gw_a = _shared_product(passive, active, pool, (g_p.T, g_a.T), (x_p, x_a), tag)
    gin_p, gin_a = _shared_product(passive, active, pool, (g_p, g_a), (layer.weight, w_a), tag)
    gb_p = g_p.sum(axis=0)
    gb_a = g_a.sum(axis=0)
    if dom.is_ring:
        gb_p, gb_a = gb_p & dom.mask, gb_a & dom.mask
    # local share updates
    new_w_p = sub_local(layer.weight, scale_local(gw_p, lr, PASSIVE, dom), dom)
    new_b_p = sub_local(layer.bias, scale_local(gb_p, lr, PASSIVE, dom), dom)
    passive.model.layers[j - 1] = nn.Linear(new_w_p, new_b_p, masked=True)
    active.shares[(k, j)] = [sub_local(w_a, scale_local(gw_a, lr, ACTIVE, dom), dom),
                             sub_local(b_a, scale_local(gb_a, lr, ACTIVE, dom), dom)]
    return _reveal_to_passive(passive, active, gin_p, gin_a, tag)


# ---------------------------------------------------------------------------
# forward / backward


def passive_forward(passive: PassiveParty, active: ActiveParty, pool, idx, batch_no: int):
    """Passive bottom forward; masked layers run jointly with the active party."""
    model = passive.model
    h = passive.x[idx]
    cache = []
    last = model.n_layers - 1
    for j0, layer in enumerate(model.layers):
        j = j0 + 1
        tag = {"batch": batch_no, "layer": j, "step": "fwd"}
        if layer.masked:
            out, x_share = _masked_forward(passive, active, pool, j, h, tag)
        else:
            out, x_share = nn.fc_forward(layer, h), None
        cache.append((h, out, x_share))
        h = nn.relu(out) if j0 < last and model.activation == "relu" else out
    passive.cache = cache
    return h


def passive_backward(passive: PassiveParty, active: ActiveParty, pool, grad, lr, batch_no: int):
    model = passive.model
    if len(passive.cache) != model.n_layers:
        raise ProtocolError(f"party {passive.pid}: backward without a matching forward")
    g = grad
    last = model.n_layers - 1
    for j0 in range(last, -1, -1):
        j = j0 + 1
        h, pre, x_share = passive.cache[j0]
        if j0 < last and model.activation == "relu":
            g = nn.relu_backward(pre, g)
        layer = model.layers[j0]
        tag = {"batch": batch_no, "layer": j, "step": "bwd"}
        if layer.masked:
            g = _masked_backward(passive, active, pool, j, g, x_share, lr, tag)
        else:
            gw, gb, g_in = nn.fc_backward(layer, h, g)
            nn.sgd_update(layer, gw, gb, lr)
            g = g_in
    passive.cache = []


def secure_forward(passives, active: ActiveParty, pool, idx, batch_no: int):
    """Returns ``(passive embeddings, active embedding, Z, loss, grad_logits, logits)``."""
    embeddings = []
    for p in passives:
        z = passive_forward(p, active, pool, idx, batch_no)
        p.endpoint.send(active.pid, EMBEDDING, z, batch=batch_no)
        embeddings.append(z)
    received = [active.endpoint.recv(p.pid, EMBEDDING).payload for p in passives]
    z_active, cache_b = nn.model_forward(active.bottom, active.x[idx])
    agg = received[0]
    for z in received[1:]:
        agg = agg + z
    agg = agg + z_active
    logits, cache_t = nn.model_forward(active.top, agg)
    loss, grad = nn.softmax_ce(logits, active.y[idx])
    active.cache["plain"] = (cache_b, cache_t)
    return embeddings, z_active, agg, loss, grad, logits


def secure_backward(passives, active: ActiveParty, pool, grad_logits, lr, batch_no: int):
    cache_b, cache_t = active.cache.pop("plain")
    grads_t, grad_agg = nn.model_backward(active.top, cache_t, grad_logits)
    grads_b, _ = nn.model_backward(active.bottom, cache_b, grad_agg)
    nn.sgd_step(active.top, grads_t, lr)
    nn.sgd_step(active.bottom, grads_b, lr)
    # d Z / d z_k = 1 under summation
    for p in passives:
        active.endpoint.send(p.pid, EMBEDDING_GRAD, grad_agg, batch=batch_no)
    for p in passives:
        g = p.endpoint.recv(active.pid, EMBEDDING_GRAD).payload
        passive_backward(p, active, pool, g, lr, batch_no)


def run_epoch(plan: EpochPlan, passives, active: ActiveParty, dealer: Dealer) -> EpochMetrics:
    """Train over every batch of the plan; returns sample-weighted loss and accuracy."""
    metrics = EpochMetrics()
    if not plan.batches:
        return metrics
    pool = dealer.deal_epoch(plan, passives)
    loss_sum, correct = 0.0, 0
    for b, idx in enumerate(plan.batches):
        _, _, _, loss, grad, logits = secure_forward(passives, active, pool, idx, b)
        secure_backward(passives, active, pool, grad, plan.lr, b)
        metrics.batch_losses.append(loss)
        loss_sum += loss * len(idx)
        correct += int(np.sum(np.argmax(logits, axis=1) == active.y[idx]))
        metrics.n_samples += len(idx)
    if pool.remaining():
        raise TripleBudgetError(f"{pool.remaining()} dealt triple halves left unused")
    metrics.loss = loss_sum / metrics.n_samples
    metrics.train_acc = correct / metrics.n_samples
    return metrics


# ---------------------------------------------------------------------------
# single-process reference


def reference_epoch(bottoms: list[nn.MLP], top: nn.MLP, xs: list[np.ndarray], y: np.ndarray,
                    plan: EpochPlan) -> EpochMetrics:
    """Plain VFL training step by step in one process, no protocol at all.

    ``bottoms``/``xs`` list passive parties first and the active party last.
    """
    metrics = EpochMetrics()
    loss_sum, correct = 0.0, 0
    for idx in plan.batches:
        outs = [nn.model_forward(m, x[idx]) for m, x in zip(bottoms, xs)]
        agg = outs[0][0]
        for z, _ in outs[1:]:
            agg = agg + z
        logits, cache_t = nn.model_forward(top, agg)
        loss, grad = nn.softmax_ce(logits, y[idx])
        grads_t, grad_agg = nn.model_backward(top, cache_t, grad)
        grads = [nn.model_backward(m, c, grad_agg)[0] for m, (_, c) in zip(bottoms, outs)]
        nn.sgd_step(top, grads_t, plan.lr)
        for m, g in zip(bottoms, grads):
            nn.sgd_step(m, g, plan.lr)
        metrics.batch_losses.append(loss)
        loss_sum += loss * len(idx)
        correct += int(np.sum(np.argmax(logits, axis=1) == y[idx]))
        metrics.n_samples += len(idx)
    if metrics.n_samples:
        metrics.loss = loss_sum / metrics.n_samples
        metrics.train_acc = correct / metrics.n_samples
    return metrics


__all__ = [
    "Dealer", "EpochMetrics", "EpochPlan", "ProtocolError", "SharingError", "TripleBudgetError",
    "TriplePool", "make_plan", "reference_epoch", "run_epoch", "secure_backward", "secure_forward",
    "triple_shapes",
]
