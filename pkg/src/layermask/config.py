"""Run configuration, loaded from JSON and overridable from the command line."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .sharing import ShareDomain

MODES = ("vanilla", "vmask", "vmask-as", "vmask-rs", "vmask-alls", "scratch-baseline")


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    mode: str = "vmask"
    parties: int = 2
    dataset: dict = field(default_factory=lambda: {"kind": "digits"})
    test_fraction: float = 0.2
    split_seed: int = 0

    # auxiliary data held by the active party
    aux_ratio: float = 0.05
    aux_label_subset: list | None = None
    aux_feature_noise: float = 0.0

    # architectures: bottom MLP3 d -> 64 -> 32 -> 16, top/head MLP2 16 -> 16 -> C
    bottom_hidden: list = field(default_factory=lambda: [64, 32])
    embedding_dim: int = 16
    top_hidden: list = field(default_factory=lambda: [16])
    head_hidden: list = field(default_factory=lambda: [16])

    epochs: int = 50
    batch_size: int = 16
    lr: float = 0.1

    budget: float = 0.25
    sigma: float = 0.01
    share_domain: str = "float"
    frac_bits: int = 16
    modulus_bits: int = 64
    float_share_scale: float = 100.0

    m_per_class: int = 4
    attack_epochs: int = 50
    attack_lr: float = 0.1
    select_attack_epochs: int = 20
    attack_every_epoch: bool = False

    seed: int = 0
    transport: str = "inprocess"
    out_dir: str = "out"
    save_embeddings: bool = False
    figures: bool = True

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.parties < 2:
            raise ConfigError("need at least two parties (one passive, one active)")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.lr < 0:
            raise ConfigError("lr must be >= 0")
        if not 0.0 <= self.budget <= 1.0:
            raise ConfigError("budget must lie in [0, 1]")
        if self.sigma < 0:
            raise ConfigError("sigma must be >= 0")
        if self.transport not in ("inprocess", "socket"):
            raise ConfigError(f"unknown transport {self.transport!r}")
        if not 0.0 < self.aux_ratio <= 1.0:
            raise ConfigError("aux_ratio must lie in (0, 1]")
        self.domain()

    def domain(self) -> ShareDomain:
        try:
            if self.share_domain == "float":
                return ShareDomain.float_(self.float_share_scale)
            if self.share_domain == "ring":
                return ShareDomain.ring(self.frac_bits, self.modulus_bits)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        raise ConfigError(f"unknown share domain {self.share_domain!r}")

    def bottom_dims(self, n_in: int) -> list[int]:
        return [n_in, *self.bottom_hidden, self.embedding_dim]

    def top_dims(self, n_classes: int) -> list[int]:
        return [self.embedding_dim, *self.top_hidden, n_classes]

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path, **overrides) -> "RunConfig":
        with Path(path).open() as fh:
            d = json.load(fh)
        d.update({k: v for k, v in overrides.items() if v is not None})
        return cls.from_dict(d)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")
