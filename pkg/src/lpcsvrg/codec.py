"""Low-precision (delta, b) representation of gradient vectors.

A message is a vector of signed integer codes plus one scale factor ``delta``.
Code ``c`` decodes to ``c * delta``; a ``b``-bit message can hold codes in
``[-2**(b-1), 2**(b-1) - 1]``, so the codebook is asymmetric by one step.

Quantization is stochastic rounding onto that grid. Coordinates that fall
outside the codebook (possible when the clipping parameter ``lam < 1``) are
clamped to the nearest endpoint and counted.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import CodeOverflow, DimMismatch, ScaleMismatch

# Slack, in ulps of the largest code magnitude, within which a scaled
# coordinate is treated as lying exactly on a grid point.
_SNAP_ULPS = 16
_HEADER = struct.Struct("<fHI")


def code_range(bits: int) -> tuple[int, int]:
    """Smallest and largest code representable with ``bits`` bits."""
    half = 1 << (bits - 1)
    return -half, half - 1


def levels_to_bits(levels: int) -> int:
    """Convert a number of positive codebook points into a bit width.

    ``levels = 2**(b-1) - 1``, so 1 -> 2, 3 -> 3, 7 -> 4, 127 -> 8.
    """
    levels = int(levels)
    if levels < 1 or (levels + 1) & levels:
        raise ValueError(f"levels must be of the form 2**k - 1 with k >= 1, got {levels}")
    return (levels + 1).bit_length()


def bits_to_levels(bits: int) -> int:
    return (1 << (bits - 1)) - 1


@dataclass(frozen=True)
class QuantizerConfig:
    """Bit width, clipping parameter and random-stream identity.

    ``lam`` shrinks the scale factor below ``max|u| / levels``; ``lam = 1``
    gives the unbiased quantizer.
    """

    bits: int
    lam: float = 1.0
    stream: int = 0

    def __post_init__(self):
        if int(self.bits) != self.bits or self.bits < 2:
            raise ValueError(f"bits must be an integer >= 2, got {self.bits}")
        if not 0.0 < self.lam <= 1.0:
            raise ValueError(f"lambda must satisfy λ ∈ (0,1], got {self.lam}")

    @classmethod
    def from_levels(cls, levels, lam=1.0, stream=0):
        return cls(levels_to_bits(levels), lam, stream)

    @property
    def levels(self) -> int:
        return bits_to_levels(self.bits)


@dataclass(frozen=True, eq=False)
class LowPrecisionTensor:
    codes: np.ndarray
    delta: float
    bits: int

    def __post_init__(self):
        codes = np.asarray(self.codes)
        if codes.ndim != 1 or codes.size == 0:
            raise ValueError("codes must be a non-empty 1-D sequence")
        if not np.issubdtype(codes.dtype, np.integer):
            if not np.array_equal(codes, np.round(codes)):
                raise ValueError("codes must be integers")
        codes = codes.astype(np.int64)
        lo, hi = code_range(self.bits)
        if codes.min() < lo or codes.max() > hi:
            raise ValueError(f"codes outside the {self.bits}-bit range [{lo}, {hi}]")
        if self.delta < 0:
            raise ValueError("delta must be non-negative")
        if self.delta == 0 and codes.any():
            raise ValueError("delta = 0 requires all-zero codes")
        codes.setflags(write=False)
        object.__setattr__(self, "codes", codes)
        object.__setattr__(self, "delta", float(self.delta))
        object.__setattr__(self, "bits", int(self.bits))

    @property
    def dim(self) -> int:
        return self.codes.size

    def __eq__(self, other):
        if not isinstance(other, LowPrecisionTensor):
            return NotImplemented
        return (
            self.bits == other.bits
            and self.delta == other.delta
            and np.array_equal(self.codes, other.codes)
        )

    def __repr__(self):
        return f"LowPrecisionTensor(dim={self.dim}, bits={self.bits}, delta={self.delta!r})"


@dataclass(frozen=True)
class QuantizeStats:
    clipped_count: int
    max_abs: float


def scale_factors(u, bits, lam):
    """Scale factor ``lam * max|u| / (2**(b-1) - 1)`` along the last axis."""
    u = np.asarray(u, dtype=np.float64)
    return lam * np.abs(u).max(axis=-1) / bits_to_levels(bits)


def scale_factor(u, cfg: QuantizerConfig) -> float:
    u = np.asarray(u, dtype=np.float64)
    if u.ndim != 1 or u.size == 0:
        raise ValueError("u must be a non-empty vector")
    return float(scale_factors(u, cfg.bits, cfg.lam))


def round_to_codes(u, delta, bits, uniforms):
    """Stochastically round ``u / delta`` onto the ``bits``-bit code grid.

    Works on arrays of shape ``(..., d)``; ``delta`` has shape ``(...)`` and
    ``uniforms`` matches ``u``. Coordinate ``j`` uses ``uniforms[..., j]`` and
    rounds up iff that draw is below the fractional part, so the expected
    decoded value equals the input for every in-hull coordinate.

    Returns ``(codes, clipped)`` where ``clipped`` counts, per row, the
    coordinates that fell outside the codebook and were clamped.
    """
    u = np.asarray(u, dtype=np.float64)
    delta = np.asarray(delta, dtype=np.float64)[..., None]
    lo_code, hi_code = code_range(bits)
    if np.all(delta > 0):
        s = u / delta
    else:
        live = delta > 0
        with np.errstate(divide="ignore", invalid="ignore"):
            s = np.where(live, u / np.where(live, delta, 1.0), 0.0)
    # in-place passes: this is the hot loop of every exchange and benchmark
    nearest = np.rint(s)
    gap = s - nearest
    np.abs(gap, out=gap)
    np.copyto(s, nearest, where=gap <= _SNAP_ULPS * np.finfo(np.float64).eps * -lo_code)
    outside = (s > hi_code) | (s < lo_code)
    if outside.any():
        clipped = np.count_nonzero(outside, axis=-1)
    else:
        clipped = np.zeros(s.shape[:-1], dtype=np.int64)
    np.clip(s, lo_code, hi_code, out=s)
    floor = np.floor(s)
    s -= floor
    codes = floor.astype(np.int64)
    codes += uniforms < s
    return codes, clipped


def quantize(u, cfg: QuantizerConfig, rng, delta=None):
    """Quantize ``u`` with ``cfg``; ``rng`` supplies one uniform per coordinate.

    ``delta`` overrides the scale factor, as the parameter-server schemes do
    once workers have agreed on a shared one.
    """
    u = np.asarray(u, dtype=np.float64)
    if u.ndim != 1 or u.size == 0:
        raise ValueError("u must be a non-empty vector")
    max_abs = float(np.abs(u).max())
    if delta is None:
        delta = cfg.lam * max_abs / cfg.levels
    uniforms = rng.random(u.size) if isinstance(rng, np.random.Generator) else np.asarray(rng)
    codes, clipped = round_to_codes(u, delta, cfg.bits, uniforms)
    tensor = LowPrecisionTensor(codes, float(delta), cfg.bits)
    return tensor, QuantizeStats(int(clipped), max_abs)


def decode(t: LowPrecisionTensor) -> np.ndarray:
    return t.codes * t.delta


def add_lp(a: LowPrecisionTensor, b: LowPrecisionTensor, overflow_bits: int) -> LowPrecisionTensor:
    """Codewise sum of two messages sharing a scale factor."""
    if a.dim != b.dim:
        raise DimMismatch(f"dims differ: {a.dim} vs {b.dim}")
    if a.delta != b.delta:
        raise ScaleMismatch(f"scale factors differ: {a.delta!r} vs {b.delta!r}")
    bits = max(a.bits, b.bits) + int(overflow_bits)
    codes = a.codes + b.codes
    lo, hi = code_range(bits)
    if codes.min() < lo or codes.max() > hi:
        raise CodeOverflow(f"summed codes exceed the {bits}-bit range [{lo}, {hi}]")
    return LowPrecisionTensor(codes, a.delta, bits)


# -- wire format -------------------------------------------------------------


def pack_codes(codes, bits) -> bytes:
    """Pack codes ``bits`` bits each, two's complement, LSB-first."""
    codes = np.asarray(codes, dtype=np.int64)
    mask = (1 << bits) - 1
    raw = (codes & mask).astype(np.uint64)
    planes = (raw[:, None] >> np.arange(bits, dtype=np.uint64)) & np.uint64(1)
    return np.packbits(planes.astype(np.uint8).ravel(), bitorder="little").tobytes()


def unpack_codes(buf, bits, dim) -> np.ndarray:
    flat = np.unpackbits(np.frombuffer(buf, dtype=np.uint8), bitorder="little")
    if flat.size < bits * dim:
        raise ValueError("buffer too short for the declared dimension")
    planes = flat[: bits * dim].reshape(dim, bits).astype(np.int64)
    raw = planes @ (np.int64(1) << np.arange(bits, dtype=np.int64))
    sign = np.int64(1) << (bits - 1)
    return np.where(raw >= sign, raw - (np.int64(1) << bits), raw)


def pack(t: LowPrecisionTensor) -> bytes:
    """Serialize as float32 delta, uint16 bits, uint32 dim, then packed codes.

    ``delta`` is narrowed to float32 on the wire.
    """
    return _HEADER.pack(t.delta, t.bits, t.dim) + pack_codes(t.codes, t.bits)


def unpack(buf) -> LowPrecisionTensor:
    delta, bits, dim = _HEADER.unpack_from(buf)
    codes = unpack_codes(buf[_HEADER.size :], bits, dim)
    return LowPrecisionTensor(codes, delta, bits)


def packed_size_bits(bits, dim) -> int:
    """Nominal message size: one 32-bit float plus ``bits * dim``."""
    return 32 + bits * dim
