"""Model-completion label inference: attach a head to a bottom model and fine-tune."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import nn
from .sharing import ShareDomain, decode_fixed


class AttackError(ValueError):
    pass


@dataclass
class AttackDataset:
    x_train: np.ndarray
    y_train: np.ndarray
    x_test: np.ndarray
    y_test: np.ndarray
    n_classes: int


@dataclass
class AttackResult:
    best: float
    per_epoch: list = field(default_factory=list)


def build_attack_dataset(features, labels, m_per_class: int, rng: np.random.Generator,
                         eval_fraction: float | None = None, n_classes: int | None = None
                         ) -> AttackDataset:
    """Pick ``m_per_class`` known labels per class; the rest is the test split.

    With ``eval_fraction`` set, only that fraction of the remaining samples
    (chosen uniformly) is kept for evaluation.
    """
    labels = np.asarray(labels)
    if m_per_class < 1:
        raise AttackError("m_per_class must be at least 1")
    classes = np.unique(labels)
    train = []
    for c in classes:
        idx = np.flatnonzero(labels == c)
        if len(idx) < m_per_class + 1:
            raise AttackError(
                f"class {c} has {len(idx)} samples; need at least {m_per_class + 1}"
            )
        train.extend(rng.choice(idx, size=m_per_class, replace=False))
    train = np.sort(np.asarray(train, dtype=np.int64))
    rest = np.setdiff1d(np.arange(len(labels)), train)
    if eval_fraction is not None:
        n = max(1, int(round(eval_fraction * len(rest))))
        rest = np.sort(rng.choice(rest, size=n, replace=False))
    if n_classes is None:
        n_classes = int(labels.max()) + 1
    return AttackDataset(features[train], labels[train], features[rest], labels[rest], n_classes)


def mc_attack(dataset: AttackDataset, bottom: nn.MLP, epochs: int, lr: float,
              rng: np.random.Generator, head_hidden=(16,)) -> AttackResult:
    """Full-batch supervised fine-tuning of ``bottom`` followed by a fresh head.

    Returns the best test accuracy over epochs (0 when ``epochs == 0``).
    """
    if bottom.masked_indices:
        raise AttackError("materialize the attacker view before attacking")
    model = bottom.copy()
    emb = model.dims[-1]
    head = nn.init_mlp([emb, *head_hidden, dataset.n_classes], rng, role=nn.HEAD)
    best, history = 0.0, []
    # diverging fine-tunes (e.g. on share-valued layers) are scored, not raised
    with np.errstate(all="ignore"):
        for _ in range(epochs):
            z, cache_b = nn.model_forward(model, dataset.x_train)
            logits, cache_h = nn.model_forward(head, z)
            _, grad = nn.softmax_ce(logits, dataset.y_train)
            grads_h, gz = nn.model_backward(head, cache_h, grad)
            grads_b, _ = nn.model_backward(model, cache_b, gz)
            nn.sgd_step(head, grads_h, lr)
            nn.sgd_step(model, grads_b, lr)
            acc = nn.accuracy(nn.predict(head, nn.predict(model, dataset.x_test)), dataset.y_test)
            history.append(acc)
            best = max(best, acc)
    return AttackResult(best, history)


def materialize_attacker_view(model: nn.MLP, domain: ShareDomain | None = None) -> nn.MLP:
    """What the passive party can run: its own shares taken as plaintext weights."""
    layers = []
    for layer in model.layers:
        if not layer.masked:
            layers.append(layer.copy())
        elif domain is not None and domain.is_ring:
            layers.append(nn.Linear(decode_fixed(layer.weight, domain),
                                    decode_fixed(layer.bias, domain)))
        else:
            layers.append(nn.Linear(np.asarray(layer.weight, dtype=np.float64).copy(),
                                    np.asarray(layer.bias, dtype=np.float64).copy()))
    return nn.MLP(layers, model.role, model.activation)
