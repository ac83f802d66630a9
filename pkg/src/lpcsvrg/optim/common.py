"""Bookkeeping shared by the optimizer loops."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from ..comm import full_gradient_bits
from ..metrics import MetricsRecord, histogram
from ..problem import CompositeProblem, gradient_mapping
from ..simnet import ClusterState, barrier_step
from .theory import ZetaDiagnostic, variance_coefficient


@dataclass
class Timing:
    """Wall-clock split; transmission time is modeled from the bit ledger."""

    compute_ns: int = 0
    codec_ns: int = 0

    def transmission_s(self, bits, bandwidth_bps) -> float:
        return bits / bandwidth_bps


@dataclass
class RunResult:
    x_out: np.ndarray
    x_last: np.ndarray
    records: list
    ledger: object
    d_lambda_max: int = 0
    zeta: ZetaDiagnostic | None = None
    output_index: int | None = None
    params: dict = field(default_factory=dict)
    histograms: list = field(default_factory=list)
    timing: Timing = field(default_factory=Timing)


def cooperative_full_grad(p: CompositeProblem, cluster: ClusterState, x) -> np.ndarray:
    """Each worker sums gradients over its contiguous shard; shards are combined in worker order."""
    n, N = p.n, cluster.N
    parts = barrier_step(cluster, lambda w: p.shard_grad_sum(w.id * n // N, (w.id + 1) * n // N, x))
    total = parts[0]
    for part in parts[1:]:
        total = total + part
    cluster.ledger.charge_full_gradient(full_gradient_bits(cluster.scheme, N, p.d))
    return total / n


class Recorder:
    """Turns run state into :class:`MetricsRecord` rows.

    The loss and gradient mapping need a full pass over the data, so they are
    evaluated only every ``every`` inner iterations and at epoch ends.
    """

    def __init__(self, p, cluster, metric_eta, every=1, quantizer=None, B=1, hist_every=None,
                 hist_bins=50):
        self.p = p
        self.cluster = cluster
        self.metric_eta = metric_eta
        self.every = every
        self.quantizer = quantizer
        self.B = B
        self.hist_every = hist_every
        self.hist_bins = hist_bins
        self.records = []
        self.histograms = []
        self.d_lambda_max = 0
        self.grad_evals = 0
        self.stoch_grad_evals = 0
        self.timing = Timing()
        self._t0 = time.perf_counter_ns()

    def zeta(self) -> ZetaDiagnostic:
        q = self.quantizer
        if q is None:
            z = variance_coefficient(self.p.d, None, 1.0, 0, self.cluster.N, self.B)
            return ZetaDiagnostic(z, 5 * z / 3 + 1 / (2 * self.B))
        return ZetaDiagnostic.compute(self.p.d, q.bits, q.lam, self.d_lambda_max, self.cluster.N, self.B)

    def full_pass(self):
        self.grad_evals += self.p.n

    def step(self, clipped_max=0, stoch=0):
        self.d_lambda_max = max(self.d_lambda_max, int(clipped_max))
        self.stoch_grad_evals += stoch
        self.grad_evals += stoch

    def maybe_histogram(self, iteration, u):
        if self.hist_every and iteration % self.hist_every == 0:
            edges, counts = histogram(u, self.hist_bins)
            self.histograms.append((iteration, edges, counts))

    def record(self, epoch, inner, iteration, x, force=False):
        if not force and self.every and iteration % self.every:
            return None
        ledger = self.cluster.ledger
        g = gradient_mapping(self.p, x, self.metric_eta)
        rec = MetricsRecord(
            epoch=epoch, inner=inner, iteration=iteration,
            loss=float(self.p.loss(x)), grad_map_sq=float(g @ g),
            cum_bits=ledger.cumulative_bits, full_grad_bits=ledger.full_grad_bits,
            d_lambda_max=self.d_lambda_max, zeta=float(self.zeta().zeta),
            grad_evals=self.grad_evals, stoch_grad_evals=self.stoch_grad_evals,
            wall_ns=time.perf_counter_ns() - self._t0,
        )
        if self.records and self.records[-1].iteration == iteration:
            return self.records[-1]
        self.records.append(rec)
        return rec
