"""Feasibility checks for recovering masked parameters from layer inputs/outputs.

An attacker who sees a masked layer's input ``A`` (B x n_in) and output can
solve for the weights only if ``rank(A) = n_in``, which needs ``B >= n_in``.
A single-channel convolution with kernel ``n``, padding ``p``, stride ``s``
on an ``h x h`` input is solvable when the output has at least ``n`` rows,
i.e. when ``n <= (h + 2p + s) / (s + 1)``. With wide padding and stride some
windows see only padding and contribute no equation, so those are not
counted.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass
from fractions import Fraction

log = logging.getLogger(__name__)

SECURE = "secure"
RECONSTRUCTIBLE = "reconstructible"


def check_fc(batch_size: int, n_in: int) -> str:
    if batch_size < 1 or n_in < 1:
        raise ValueError("batch size and input width must be >= 1")
    return SECURE if batch_size < n_in else RECONSTRUCTIBLE


def conv_threshold(h: int, n: int, p: int, s: int) -> Fraction:
    if h < 1 or n < 1 or s < 1 or p < 0 or n > h + 2 * p:
        raise ValueError(f"invalid conv geometry h={h} n={n} p={p} s={s}")
    return Fraction(h + 2 * p + s, s + 1)


def informative_windows(h: int, n: int, p: int, s: int) -> int:
    """Output positions per axis whose window overlaps the unpadded input."""
    out = (h + 2 * p - n) // s + 1
    return sum(1 for i in range(out) if i * s < p + h and i * s + n > p)


def check_conv(h: int, n: int, p: int, s: int) -> str:
    if n > conv_threshold(h, n, p, s):
        return SECURE
    return RECONSTRUCTIBLE if informative_windows(h, n, p, s) >= n else SECURE


@dataclass
class AuditEntry:
    party: int
    layer: int
    n_in: int
    batch_size: int
    verdict: str


@dataclass
class AuditReport:
    entries: list

    @property
    def warnings(self) -> list:
        return [e for e in self.entries if e.verdict == RECONSTRUCTIBLE]

    @property
    def ok(self) -> bool:
        return not self.warnings

    def to_rows(self) -> list[dict]:
        return [asdict(e) for e in self.entries]

    def format(self) -> str:
        if not self.entries:
            return "no masked-eligible layers"
        lines = [f"{'party':>5} {'layer':>5} {'n_in':>5} {'batch':>5}  verdict"]
        for e in self.entries:
            lines.append(f"{e.party:>5} {e.layer:>5} {e.n_in:>5} {e.batch_size:>5}  {e.verdict}")
        lines.append(f"{len(self.warnings)} reconstructible of {len(self.entries)}")
        return "\n".join(lines)


def audit_layers(layer_widths: dict, batch_size: int) -> AuditReport:
    """``layer_widths`` maps passive party id to the input width of each layer."""
    entries = []
    for party, widths in sorted(layer_widths.items()):
        for j, n_in in enumerate(widths, start=1):
            entries.append(AuditEntry(party, j, n_in, batch_size, check_fc(batch_size, n_in)))
    report = AuditReport(entries)
    for e in report.warnings:
        log.warning("party %d layer %d: batch %d >= input width %d, masked weights recoverable",
                    e.party, e.layer, e.batch_size, e.n_in)
    return report


def audit_config(config, feature_widths: list[int] | None = None) -> AuditReport:
    """Audit every masked-eligible passive layer of a run configuration.

    Only the masking modes have eligible layers. ``feature_widths`` are the
    per-party input widths; when omitted they are derived from the dataset.
    """
    if not config.mode.startswith("vmask"):
        return AuditReport([])
    if feature_widths is None:
        from .data import split_widths
        from .framework import dataset_feature_count

        feature_widths = split_widths(dataset_feature_count(config), config.parties)
    layer_widths = {}
    for k in range(1, config.parties):
        dims = config.bottom_dims(feature_widths[k - 1])
        layer_widths[k] = dims[:-1]
    return audit_layers(layer_widths, config.batch_size)
