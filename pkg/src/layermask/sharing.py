"""Two-party additive secret sharing with Beaver-triple multiplication.

Shares live in one of two domains:

* ``float``: real-valued shares ``(r, x - r)`` with ``r ~ N(0, s^2)``.
* ``ring``: fixed-point elements of Z_{2^m} with ``f`` fractional bits,
  stored as ``uint64`` arrays (the 32-bit ring is masked down).

Party 0 is the sharer (``share_a``), party 1 the counterparty (``share_b``).
In the training protocol party 0 is always the passive party.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

FLOAT = "float"
RING = "ring"

MATMUL = "matmul"
HADAMARD = "hadamard"


class SharingError(ValueError):
    """Raised on domain, shape, or triple misuse."""


class TripleReuseError(SharingError):
    pass


@dataclass(frozen=True)
class ShareDomain:
    kind: str = FLOAT
    frac_bits: int = 0
    modulus_bits: int = 0
    float_scale: float = 100.0

    def __post_init__(self):
        if self.kind == RING:
            if self.modulus_bits not in (32, 64):
                raise SharingError(f"modulus_bits must be 32 or 64, got {self.modulus_bits}")
            if not 0 < self.frac_bits < self.modulus_bits // 2:
                raise SharingError(
                    f"frac_bits must lie in (0, {self.modulus_bits // 2}), got {self.frac_bits}"
                )
        elif self.kind == FLOAT:
            if self.frac_bits or self.modulus_bits:
                raise SharingError("float domain takes no frac_bits/modulus_bits")
            if not self.float_scale > 0:
                raise SharingError("float_scale must be positive")
        else:
            raise SharingError(f"unknown share domain {self.kind!r}")

    @classmethod
    def float_(cls, scale: float = 100.0) -> "ShareDomain":
        return cls(FLOAT, float_scale=scale)

    @classmethod
    def ring(cls, frac_bits: int = 16, modulus_bits: int = 64) -> "ShareDomain":
        return cls(RING, frac_bits=frac_bits, modulus_bits=modulus_bits)

    @property
    def is_ring(self) -> bool:
        return self.kind == RING

    @cached_property
    def mask(self) -> np.uint64:
        return np.uint64((1 << self.modulus_bits) - 1)

    @cached_property
    def scale(self) -> float:
        return float(1 << self.frac_bits)


# ---------------------------------------------------------------------------
# Fixed-point encoding and ring arithmetic


def encode_fixed(x, domain: ShareDomain) -> np.ndarray:
    """Encode reals as ``round(x * 2^f) mod 2^m`` (two's complement)."""
    if not domain.is_ring:
        raise SharingError("encode_fixed requires a ring domain")
    x = np.asarray(x, dtype=np.float64)
    bound = 2.0 ** (domain.modulus_bits - domain.frac_bits - 1)
    if not (np.abs(x) < bound).all():
        bad = ~(np.abs(x) < bound)
        idx = tuple(int(i) for i in np.argwhere(bad)[0])
        raise OverflowError(
            f"element {idx} = {x[idx] if x.ndim else float(x)!r} exceeds the fixed-point "
            f"range |x| < 2^{domain.modulus_bits - domain.frac_bits - 1}"
        )
    v = np.rint(x * domain.scale).astype(np.int64).view(np.uint64)
    return v & domain.mask


def decode_fixed(v, domain: ShareDomain) -> np.ndarray:
    if not domain.is_ring:
        raise SharingError("decode_fixed requires a ring domain")
    return _signed(np.asarray(v, dtype=np.uint64), domain).astype(np.float64) / domain.scale


def _signed(v: np.ndarray, domain: ShareDomain) -> np.ndarray:
    if domain.modulus_bits == 64:
        return v.view(np.int64)
    s = (v & domain.mask).astype(np.int64)
    half = np.int64(1 << (domain.modulus_bits - 1))
    return np.where(s >= half, s - np.int64(1 << domain.modulus_bits), s)


# wraparound is the point of ring arithmetic; the ufuncs (unlike scalar
# operators) never warn about it
def ring_add(a, b, domain):
    return np.bitwise_and(np.add(a, b), domain.mask)


def ring_sub(a, b, domain):
    return np.bitwise_and(np.subtract(a, b), domain.mask)


def ring_neg(a, domain):
    return np.bitwise_and(np.subtract(np.uint64(0), a), domain.mask)


def truncate_share(v: np.ndarray, party: int, domain: ShareDomain) -> np.ndarray:
    """Local share truncation by ``f`` bits.

    Party 0 shifts its share arithmetically, party 1 shifts the negation of
    its share and negates back. The reconstructed result is off by at most
    one unit in the last place, except for a wraparound event whose
    probability is about ``|x| / 2^(m-1)``.
    """
    f = domain.frac_bits
    if party == 0:
        out = _signed(v, domain) >> f
    else:
        out = -(_signed(ring_neg(v, domain), domain) >> f)
    return out.astype(np.int64).view(np.uint64) & domain.mask


def random_ring(shape, domain: ShareDomain, rng: np.random.Generator) -> np.ndarray:
    # raw 64-bit draws are uniform over the full word, so masking keeps them uniform
    return np.bitwise_and(rng.bit_generator.random_raw(size=shape), domain.mask)


# ---------------------------------------------------------------------------
# Share pairs


@dataclass
class SharePair:
    """Both halves of an additive sharing (a simulation-side view)."""

    share_a: np.ndarray
    share_b: np.ndarray
    domain: ShareDomain

    def __post_init__(self):
        if np.shape(self.share_a) != np.shape(self.share_b):
            raise SharingError(
                f"share shapes differ: {np.shape(self.share_a)} vs {np.shape(self.share_b)}"
            )

    @property
    def shape(self) -> tuple:
        return np.shape(self.share_a)

    def part(self, party: int) -> np.ndarray:
        return self.share_a if party == 0 else self.share_b


def share_raw(v: np.ndarray, domain: ShareDomain, rng: np.random.Generator) -> SharePair:
    """Share an already-encoded ring tensor."""
    r = random_ring(np.shape(v), domain, rng)
    return SharePair(r, ring_sub(np.asarray(v, dtype=np.uint64), r, domain), domain)


def share(x, domain: ShareDomain, rng: np.random.Generator) -> SharePair:
    """Split a real tensor into two additive shares."""
    x = np.asarray(x, dtype=np.float64)
    if not np.isfinite(x).all():
        raise SharingError("cannot share non-finite values")
    if domain.is_ring:
        return share_raw(encode_fixed(x, domain), domain, rng)
    r = rng.normal(0.0, domain.float_scale, size=x.shape)
    return SharePair(r, x - r, domain)


def reconstruct_raw(p: SharePair) -> np.ndarray:
    if p.domain.is_ring:
        return ring_add(p.share_a, p.share_b, p.domain)
    return p.share_a + p.share_b


def reconstruct(p: SharePair) -> np.ndarray:
    """Add both shares; ring results are decoded back to reals."""
    if np.shape(p.share_a) != np.shape(p.share_b):
        raise SharingError("share shapes differ")
    return combine(p.share_a, p.share_b, p.domain)


def combine(a, b, domain: ShareDomain) -> np.ndarray:
    """Reconstruct from two loose share halves."""
    if np.shape(a) != np.shape(b):
        raise SharingError(f"share shapes differ: {np.shape(a)} vs {np.shape(b)}")
    if domain.is_ring:
        return decode_fixed(ring_add(a, b, domain), domain)
    return a + b


def _check_compatible(x: SharePair, y: SharePair):
    if x.domain != y.domain:
        raise SharingError("share domains differ")
    if x.shape != y.shape:
        raise SharingError(f"shapes differ: {x.shape} vs {y.shape}")


def add_shared(x: SharePair, y: SharePair) -> SharePair:
    _check_compatible(x, y)
    d = x.domain
    if d.is_ring:
        return SharePair(ring_add(x.share_a, y.share_a, d), ring_add(x.share_b, y.share_b, d), d)
    return SharePair(x.share_a + y.share_a, x.share_b + y.share_b, d)


def sub_shared(x: SharePair, y: SharePair) -> SharePair:
    _check_compatible(x, y)
    d = x.domain
    if d.is_ring:
        return SharePair(ring_sub(x.share_a, y.share_a, d), ring_sub(x.share_b, y.share_b, d), d)
    return SharePair(x.share_a - y.share_a, x.share_b - y.share_b, d)


def add_local(a, b, domain: ShareDomain):
    return ring_add(a, b, domain) if domain.is_ring else a + b


def sub_local(a, b, domain: ShareDomain):
    return ring_sub(a, b, domain) if domain.is_ring else a - b


def lift_public(x, domain: ShareDomain) -> np.ndarray:
    """Represent a public real value in the share domain."""
    return encode_fixed(x, domain) if domain.is_ring else np.asarray(x, dtype=np.float64)


def scale_local(v, c: float, party: int, domain: ShareDomain):
    """Multiply one share by a public real constant."""
    if domain.is_ring:
        with np.errstate(over="ignore"):
            prod = (v * encode_fixed(c, domain)) & domain.mask
        return truncate_share(prod, party, domain)
    return c * v


# ---------------------------------------------------------------------------
# Beaver triples


@dataclass
class TripleHalf:
    """One party's portion of a Beaver triple. Single use."""

    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    mode: str
    domain: ShareDomain
    used: bool = False

    def take(self) -> "TripleHalf":
        if self.used:
            raise TripleReuseError("Beaver triple already consumed")
        self.used = True
        return self


@dataclass
class BeaverTriple:
    a_shares: SharePair
    b_shares: SharePair
    c_shares: SharePair
    mode: str
    _halves: list = field(default_factory=list, repr=False)

    def __post_init__(self):
        d = self.a_shares.domain
        self._halves = [
            TripleHalf(self.a_shares.part(i), self.b_shares.part(i), self.c_shares.part(i),
                       self.mode, d)
            for i in (0, 1)
        ]

    @property
    def domain(self) -> ShareDomain:
        return self.a_shares.domain

    def half(self, party: int) -> TripleHalf:
        return self._halves[party]

    @property
    def used(self) -> bool:
        return any(h.used for h in self._halves)


def _product(a, b, mode, domain):
    with np.errstate(over="ignore"):
        out = a @ b if mode == MATMUL else a * b
    return out & domain.mask if domain.is_ring else out


def _check_shapes(shape_a, shape_b, mode):
    shape_a, shape_b = tuple(shape_a), tuple(shape_b)
    if mode == MATMUL:
        if len(shape_a) != 2 or len(shape_b) != 2 or shape_a[1] != shape_b[0]:
            raise SharingError(f"incompatible matmul shapes {shape_a} x {shape_b}")
    elif mode == HADAMARD:
        if shape_a != shape_b:
            raise SharingError(f"incompatible hadamard shapes {shape_a} vs {shape_b}")
    else:
        raise SharingError(f"unknown triple mode {mode!r}")


def gen_beaver_triple(shape_a, shape_b, mode: str, domain: ShareDomain,
                      rng: np.random.Generator) -> BeaverTriple:
    """Trusted-dealer triple: random ``a``, ``b`` and shares of ``c = a * b``.

    In the ring domain ``c`` is the exact ring product; the ``2f``-bit scale
    is handled by truncation after the shared product.
    """
    _check_shapes(shape_a, shape_b, mode)
    if domain.is_ring:
        a = random_ring(shape_a, domain, rng)
        b = random_ring(shape_b, domain, rng)
        c = _product(a, b, mode, domain)
        return BeaverTriple(share_raw(a, domain, rng), share_raw(b, domain, rng),
                            share_raw(c, domain, rng), mode)
    a = rng.standard_normal(shape_a)
    b = rng.standard_normal(shape_b)
    c = _product(a, b, mode, domain)
    return BeaverTriple(share(a, domain, rng), share(b, domain, rng), share(c, domain, rng), mode)


def beaver_mask(x_i, y_i, half: TripleHalf):
    """Local step 1: masked differences ``x_i - a_i`` and ``y_i - b_i`` to open."""
    d = half.domain
    if np.shape(x_i) != np.shape(half.a) or np.shape(y_i) != np.shape(half.b):
        raise SharingError(
            f"triple shapes {np.shape(half.a)}, {np.shape(half.b)} do not match operands "
            f"{np.shape(x_i)}, {np.shape(y_i)}"
        )
    return sub_local(x_i, half.a, d), sub_local(y_i, half.b, d)


def beaver_finish(party: int, e, f, half: TripleHalf):
    """Local step 2: this party's share of ``x * y`` given the opened ``e``, ``f``."""
    d = half.domain
    half.take()
    mode = half.mode
    z = add_local(half.c, _product(e, half.b, mode, d), d)
    z = add_local(z, _product(half.a, f, mode, d), d)
    if party == 0:
        z = add_local(z, _product(e, f, mode, d), d)
    if d.is_ring:
        z = truncate_share(z, party, d)
    return z


def matmul_shared(x: SharePair, w: SharePair, triple: BeaverTriple,
                  transcript: list | None = None) -> SharePair:
    """Shared product ``x @ w`` (or elementwise, per the triple's mode).

    Both parties are simulated here; ``transcript`` receives the opened
    differences ``(x - a, w - b)``.
    """
    if x.domain != w.domain or x.domain != triple.domain:
        raise SharingError("operand and triple domains differ")
    if triple.used:
        raise TripleReuseError("Beaver triple already consumed")
    d = x.domain
    h0, h1 = triple.half(0), triple.half(1)
    e0, f0 = beaver_mask(x.share_a, w.share_a, h0)
    e1, f1 = beaver_mask(x.share_b, w.share_b, h1)
    e = add_local(e0, e1, d)
    f = add_local(f0, f1, d)
    if transcript is not None:
        transcript.append((e, f))
    return SharePair(beaver_finish(0, e, f, h0), beaver_finish(1, e, f, h1), d)
