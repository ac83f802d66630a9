"""Per-iteration measurements and their CSV form."""

from __future__ import annotations

import csv
import dataclasses
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import NotReached


@dataclass(frozen=True)
class MetricsRecord:
    """One measurement of the current model.

    ``iteration`` counts completed inner steps (0 is the starting point).
    ``cum_bits`` covers the per-step gradient exchanges; full-gradient rounds
    are tracked separately in ``full_grad_bits``. ``wall_ns`` is excluded
    from equality and from the CSV so that reruns compare bit-for-bit.
    """

    epoch: int
    inner: int
    iteration: int
    loss: float
    grad_map_sq: float
    cum_bits: int
    full_grad_bits: int = 0
    d_lambda_max: int = 0
    zeta: float | None = None
    grad_evals: int = 0
    stoch_grad_evals: int = 0
    wall_ns: int = field(default=0, compare=False)


CSV_COLUMNS = tuple(f.name for f in dataclasses.fields(MetricsRecord) if f.name != "wall_ns")
_INT_COLUMNS = {"epoch", "inner", "iteration", "cum_bits", "full_grad_bits", "d_lambda_max",
                "grad_evals", "stoch_grad_evals"}


def _fmt(value):
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def to_csv(records, fh=None):
    """Write records with a fixed header; floats use their shortest exact repr."""
    out = io.StringIO() if fh is None else fh
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for r in records:
        writer.writerow([_fmt(getattr(r, c)) for c in CSV_COLUMNS])
    return out.getvalue() if fh is None else None


def from_csv(text) -> list:
    records = []
    for row in csv.DictReader(io.StringIO(text)):
        kw = {}
        for c in CSV_COLUMNS:
            raw = row[c]
            if c in _INT_COLUMNS:
                kw[c] = int(raw)
            else:
                kw[c] = None if raw == "" else float(raw)
        records.append(MetricsRecord(**kw))
    return records


def histogram(u, bins):
    """Equal-width histogram over ``[min(u), max(u)]``; last bin is closed."""
    if bins < 1:
        raise ValueError("bins must be >= 1")
    counts, edges = np.histogram(np.asarray(u, dtype=np.float64), bins=int(bins))
    return edges, counts


def bits_to_loss(records, threshold) -> int:
    """``cum_bits`` at the first record whose loss is at or below ``threshold``."""
    records = list(records)
    if not records:
        raise ValueError("empty metrics stream")
    for r in records:
        if r.loss <= threshold:
            return r.cum_bits
    raise NotReached(f"loss never reached {threshold}")


def first_reaching(records, threshold):
    """First record with ``loss <= threshold``, or ``None``."""
    for r in records:
        if not math.isnan(r.loss) and r.loss <= threshold:
            return r
    return None
