"""Gradient exchange schemes and exact bit accounting.

Three ways to combine the workers' quantized gradients:

``BROADCAST``
    every worker sends its own ``(delta_i, codes_i)`` to every peer; each
    receiver decodes and averages.
``PS_NO_REQUANT``
    workers first agree on ``delta = max_i delta_i`` through a server (two
    floats per worker), quantize with it, the server adds the codes with
    ``ceil(log2 N)`` extra bits and sends the sum back.
``PS_REQUANT``
    as above, but the server stochastically re-quantizes the average back to
    ``b`` bits with the same ``delta`` before the downlink.
"""

from __future__ import annotations

import csv
import enum
import io
from dataclasses import dataclass, field

import numpy as np

from .codec import QuantizerConfig, code_range, round_to_codes, scale_factors
from .entropy import DELTA_BITS, entropy_bits
from .errors import CodeOverflow, DimMismatch

FLOAT_BITS = 32


class CommScheme(str, enum.Enum):
    BROADCAST = "broadcast"
    PS_NO_REQUANT = "ps"
    PS_REQUANT = "ps-requant"

    @classmethod
    def parse(cls, value) -> "CommScheme":
        if isinstance(value, cls):
            return value
        aliases = {"a": cls.BROADCAST, "b": cls.PS_NO_REQUANT, "c": cls.PS_REQUANT}
        key = str(value).strip().lower()
        if key in aliases:
            return aliases[key]
        for member in cls:
            if key in (member.value, member.name.lower()):
                return member
        raise ValueError(f"unknown communication scheme {value!r}")


def overflow_bits(N: int) -> int:
    """``ceil(log2 N)``, the headroom needed to add ``N`` codes."""
    return (int(N) - 1).bit_length()


def bits_nominal(scheme, N, b, d) -> int:
    """Bits moved by one gradient exchange, per the closed-form cost table."""
    scheme = CommScheme.parse(scheme)
    if scheme is CommScheme.BROADCAST:
        return (32 + b * d) * N * (N - 1)
    if scheme is CommScheme.PS_NO_REQUANT:
        return N * (64 + 2 * b * d + d * overflow_bits(N))
    return N * (64 + 2 * b * d)


def full_precision_bits(scheme, N, d) -> int:
    """Bits for one exchange of 32-bit gradients over the same topology.

    Parameter-server rounds count an upload and a download of ``32 d`` bits
    per worker.
    """
    scheme = CommScheme.parse(scheme)
    if scheme is CommScheme.BROADCAST:
        return FLOAT_BITS * d * N * (N - 1)
    return 2 * FLOAT_BITS * d * N


def full_gradient_bits(scheme, N, d) -> int:
    """Cost of the once-per-epoch full-precision full-gradient round."""
    return full_precision_bits(scheme, N, d)


def reduction_factor(scheme, N, b, d) -> float:
    """Full-precision bits over low-precision bits for one exchange.

    Broadcast costs scale with ``N (N - 1)`` on both sides, which cancels, so
    the factor is defined (``32 / (32/d + b)``) even for a single worker.
    """
    scheme = CommScheme.parse(scheme)
    if scheme is CommScheme.BROADCAST:
        return FLOAT_BITS * d / (32 + b * d)
    return full_precision_bits(scheme, N, d) / bits_nominal(scheme, N, b, d)


# -- ledger ------------------------------------------------------------------

LEDGER_COLUMNS = ("round", "scheme", "nominal_bits", "measured_bits", "clipped_count_max")


@dataclass(frozen=True)
class LedgerRound:
    round: int
    scheme: str
    nominal_bits: int
    measured_bits: int | None
    clipped_count_max: int


@dataclass
class BitLedger:
    """Per-round record of transmitted bits.

    ``mode`` picks which column is summed: ``"nominal"`` (closed-form sizes)
    or ``"entropy"`` (Huffman-measured sizes). Full-gradient rounds are kept
    apart in ``full_grad_bits``.
    """

    mode: str = "nominal"
    rounds: list = field(default_factory=list)
    full_grad_bits: int = 0

    def __post_init__(self):
        if self.mode not in ("nominal", "entropy"):
            raise ValueError(f"ledger mode must be 'nominal' or 'entropy', got {self.mode!r}")

    def charge(self, scheme, nominal, measured=None, clipped=0):
        rec = LedgerRound(len(self.rounds), CommScheme.parse(scheme).value, int(nominal),
                          None if measured is None else int(measured), int(clipped))
        self.rounds.append(rec)
        return rec

    def charge_full_gradient(self, bits):
        self.full_grad_bits += int(bits)

    @property
    def per_round_bits(self) -> list:
        if self.mode == "entropy":
            return [r.nominal_bits if r.measured_bits is None else r.measured_bits for r in self.rounds]
        return [r.nominal_bits for r in self.rounds]

    @property
    def cumulative_bits(self) -> int:
        return sum(self.per_round_bits)

    def to_csv(self, fh=None) -> str | None:
        out = io.StringIO() if fh is None else fh
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(LEDGER_COLUMNS)
        for r in self.rounds:
            writer.writerow([r.round, r.scheme, r.nominal_bits,
                             "" if r.measured_bits is None else r.measured_bits, r.clipped_count_max])
        return out.getvalue() if fh is None else None

    @classmethod
    def from_csv(cls, text, mode="nominal") -> "BitLedger":
        ledger = cls(mode=mode)
        for row in csv.DictReader(io.StringIO(text)):
            ledger.rounds.append(LedgerRound(
                int(row["round"]), row["scheme"], int(row["nominal_bits"]),
                int(row["measured_bits"]) if row["measured_bits"] else None,
                int(row["clipped_count_max"]),
            ))
        return ledger


# -- aggregation ---------------------------------------------------------------


@dataclass
class Aggregate:
    """Outcome of one exchange; array fields may carry leading batch axes."""

    value: np.ndarray          # (..., d) averaged gradient every worker receives
    deltas: np.ndarray         # (..., N) scale factor each worker quantized with
    clipped: np.ndarray        # (..., N) clamped coordinates per worker
    codes: np.ndarray          # (..., N, d) uplink codes
    server_codes: np.ndarray | None = None  # (..., d) downlink codes for PS schemes


def aggregate(U, scheme, bits, lam, worker_uniforms, server_uniforms=None) -> Aggregate:
    """Quantize and combine worker gradients ``U`` of shape ``(..., N, d)``.

    Vectorized over any leading axes so Monte-Carlo probes reuse the exact
    arithmetic of a single exchange.
    """
    scheme = CommScheme.parse(scheme)
    U = np.asarray(U, dtype=np.float64)
    N = U.shape[-2]
    own = scale_factors(U, bits, lam)
    if scheme is CommScheme.BROADCAST:
        codes, clipped = round_to_codes(U, own, bits, worker_uniforms)
        value = (codes * own[..., None]).sum(axis=-2) / N
        return Aggregate(value, own, clipped, codes)

    shared = own.max(axis=-1)
    deltas = np.broadcast_to(shared[..., None], own.shape)
    codes, clipped = round_to_codes(U, deltas, bits, worker_uniforms)
    summed = codes.sum(axis=-2)
    lo, hi = code_range(bits + overflow_bits(N))
    if summed.size and (summed.min() < lo or summed.max() > hi):
        raise CodeOverflow("summed codes exceed b + ceil(log2 N) bits")
    if scheme is CommScheme.PS_NO_REQUANT:
        return Aggregate(summed * shared[..., None] / N, deltas, clipped, codes, summed)

    if server_uniforms is None:
        raise ValueError("re-quantizing scheme needs server uniforms")
    # the average lies inside the codebook hull, so this rounding is unbiased
    requant, _ = round_to_codes(summed / N, np.ones(shared.shape), bits, server_uniforms)
    return Aggregate(requant * shared[..., None], deltas, clipped, codes, requant)


def _measured_bits(scheme, agg: Aggregate, bits, N) -> int:
    up = [sum(entropy_bits(c, bits)) for c in agg.codes]
    if scheme is CommScheme.BROADCAST:
        return sum((DELTA_BITS + u) * (N - 1) for u in up)
    down_bits = bits + overflow_bits(N) if scheme is CommScheme.PS_NO_REQUANT else bits
    down = sum(entropy_bits(agg.server_codes, down_bits))
    return 2 * FLOAT_BITS * N + sum(up) + N * down


def exchange(local, scheme, cfg: QuantizerConfig | None, ledger: BitLedger | None = None,
             rngs=None, server_rng=None, details=False):
    """One synchronous gradient exchange; every worker receives the result.

    ``cfg=None`` sends full-precision floats. ``rngs`` holds one generator per
    worker (one uniform per coordinate is drawn from each); ``server_rng``
    feeds the re-quantizing scheme. With ``details=True`` the
    :class:`Aggregate` is returned instead of just the averaged vector.
    """
    scheme = CommScheme.parse(scheme)
    U = [np.asarray(u, dtype=np.float64) for u in local]
    if not U:
        raise ValueError("need at least one worker vector")
    d = U[0].size
    if any(u.shape != (d,) for u in U):
        raise DimMismatch(f"worker vectors have shapes {[u.shape for u in U]}")
    U = np.stack(U)
    N = U.shape[0]

    if cfg is None:
        value = U.sum(axis=0) / N
        if ledger is not None:
            bits = full_precision_bits(scheme, N, d)
            ledger.charge(scheme, bits, bits if ledger.mode == "entropy" else None)
        agg = Aggregate(value, np.zeros(N), np.zeros(N, dtype=np.int64), np.zeros((N, d), np.int64))
        return agg if details else value

    if rngs is None or len(rngs) != N:
        raise ValueError("exchange needs one random generator per worker")
    worker_uniforms = np.stack([rng.random(d) for rng in rngs])
    server_uniforms = None
    if scheme is CommScheme.PS_REQUANT:
        if server_rng is None:
            raise ValueError("re-quantizing scheme needs a server generator")
        server_uniforms = server_rng.random(d)
    agg = aggregate(U, scheme, cfg.bits, cfg.lam, worker_uniforms, server_uniforms)
    if ledger is not None:
        measured = _measured_bits(scheme, agg, cfg.bits, N) if ledger.mode == "entropy" else None
        ledger.charge(scheme, bits_nominal(scheme, N, cfg.bits, d), measured, int(agg.clipped.max()))
    return agg if details else agg.value
