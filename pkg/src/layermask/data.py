"""Dataset ingestion, standardization, vertical partitioning, auxiliary sets."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

STD_CLAMP = 1e-12


class DatasetError(ValueError):
    pass


@dataclass
class Dataset:
    x_train: np.ndarray
    y_train: np.ndarray
    x_test: np.ndarray
    y_test: np.ndarray
    classes: list

    @property
    def n_classes(self) -> int:
        return len(self.classes)

    @property
    def n_features(self) -> int:
        return self.x_train.shape[1]


def read_csv(path, label_column: str):
    """Parse a headered CSV into ``(features, raw_labels)``.

    Errors name the offending line (1-based, header is line 1).
    """
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DatasetError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        if label_column not in header:
            raise DatasetError(f"{path}: no label column {label_column!r} in header {header}")
        li = header.index(label_column)
        rows, labels = [], []
        for line_no, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise DatasetError(
                    f"{path}: line {line_no} has {len(row)} fields, expected {len(header)}"
                )
            feats = []
            for ci, cell in enumerate(row):
                if ci == li:
                    continue
                try:
                    v = float(cell)
                except ValueError:
                    raise DatasetError(
                        f"{path}: line {line_no}, column {header[ci]!r}: non-numeric value {cell!r}"
                    ) from None
                if not np.isfinite(v):
                    raise DatasetError(f"{path}: line {line_no}, column {header[ci]!r}: non-finite")
                feats.append(v)
            rows.append(feats)
            labels.append(row[li].strip())
    if not rows:
        raise DatasetError(f"{path}: no data rows")
    return np.asarray(rows, dtype=np.float64), labels


def _label_index(raw_labels, classes, path="") -> np.ndarray:
    lookup = {c: i for i, c in enumerate(classes)}
    out = []
    for i, lab in enumerate(raw_labels):
        if lab not in lookup:
            raise DatasetError(f"{path}: row {i + 1}: unknown label value {lab!r}")
        out.append(lookup[lab])
    return np.asarray(out, dtype=np.int64)


def _sort_key(label: str):
    try:
        return (0, float(label), label)
    except ValueError:
        return (1, 0.0, label)


def standardize(train: np.ndarray, *others):
    """Column-wise (x - mean) / std with train statistics; std clamped at 1e-12."""
    mean = train.mean(axis=0)
    std = np.maximum(train.std(axis=0), STD_CLAMP)
    return tuple((a - mean) / std for a in (train, *others))


def split_indices(labels: np.ndarray, test_fraction: float, seed: int):
    """Deterministic stratified train/test index split."""
    rng = np.random.default_rng(seed)
    train, test = [], []
    for c in np.unique(labels):
        idx = np.flatnonzero(labels == c)
        idx = idx[rng.permutation(len(idx))]
        n_test = int(round(test_fraction * len(idx)))
        test.extend(idx[:n_test])
        train.extend(idx[n_test:])
    return np.sort(np.asarray(train, dtype=np.int64)), np.sort(np.asarray(test, dtype=np.int64))


def _finish(x, y, classes, test_fraction, split_seed) -> Dataset:
    tr, te = split_indices(y, test_fraction, split_seed)
    x_tr, x_te = standardize(x[tr], x[te])
    return Dataset(x_tr, y[tr], x_te, y[te], list(classes))


def load_dataset(spec: dict, test_fraction: float = 0.2, split_seed: int = 0) -> Dataset:
    """Load a dataset described by a config block.

    ``kind`` is one of ``digits`` (8x8 digits, 1797 x 64, 10 classes),
    ``blobs`` (Gaussian clusters) or ``csv`` (``path``, ``label_column``,
    optional ``test_path``).
    """
    kind = spec.get("kind", "digits")
    if kind == "digits":
        from sklearn.datasets import load_digits

        d = load_digits()
        return _finish(d.data.astype(np.float64), d.target.astype(np.int64),
                       list(range(10)), test_fraction, split_seed)
    if kind == "blobs":
        return _finish(*make_blobs(
            n_samples=spec.get("n_samples", 2000),
            n_features=spec.get("n_features", 128),
            n_classes=spec.get("n_classes", 10),
            spread=spec.get("spread", 3.0),
            seed=spec.get("seed", 0),
        ), test_fraction, split_seed)
    if kind == "csv":
        label_col = spec.get("label_column", "label")
        x, raw = read_csv(spec["path"], label_col)
        classes = sorted(set(raw), key=_sort_key)
        y = _label_index(raw, classes, spec["path"])
        if not spec.get("test_path"):
            return _finish(x, y, classes, test_fraction, split_seed)
        x_te, raw_te = read_csv(spec["test_path"], label_col)
        if x_te.shape[1] != x.shape[1]:
            raise DatasetError(f"{spec['test_path']}: {x_te.shape[1]} features, expected {x.shape[1]}")
        y_te = _label_index(raw_te, classes, spec["test_path"])
        x, x_te = standardize(x, x_te)
        return Dataset(x, y, x_te, y_te, classes)
    raise DatasetError(f"unknown dataset kind {kind!r}")


def make_blobs(n_samples=2000, n_features=128, n_classes=10, spread=3.0, seed=0):
    rng = np.random.default_rng(seed)
    centers = rng.normal(0.0, spread, size=(n_classes, n_features))
    y = np.arange(n_samples) % n_classes
    x = centers[y] + rng.standard_normal((n_samples, n_features))
    return x, y.astype(np.int64), list(range(n_classes))


def split_widths(d: int, k: int) -> list[int]:
    if d < k:
        raise DatasetError(f"cannot split {d} features across {k} parties")
    base, extra = divmod(d, k)
    return [base + 1 if i < extra else base for i in range(k)]


def vertical_split(features: np.ndarray, k: int) -> list[np.ndarray]:
    """Contiguous column blocks; the active party (last) gets the final block."""
    widths = split_widths(features.shape[1], k)
    bounds = np.cumsum([0] + widths)
    return [features[:, a:b] for a, b in zip(bounds, bounds[1:])]


def aux_indices(labels: np.ndarray, ratio: float, rng: np.random.Generator,
                label_subset=None, min_per_class: int = 0) -> np.ndarray:
    """Stratified subsample of sample IDs for the auxiliary set.

    ``label_subset`` restricts the auxiliary set to some classes (non-IID
    ablation). Each kept class contributes ``max(round(ratio * n_c),
    min_per_class)`` samples, capped at ``n_c``.
    """
    picked = []
    classes = np.unique(labels) if label_subset is None else np.asarray(sorted(label_subset))
    for c in classes:
        idx = np.flatnonzero(labels == c)
        n = min(len(idx), max(int(round(ratio * len(idx))), min_per_class))
        picked.extend(rng.choice(idx, size=n, replace=False))
    return np.sort(np.asarray(picked, dtype=np.int64))
