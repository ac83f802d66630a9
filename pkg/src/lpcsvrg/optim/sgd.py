"""Distributed proximal mini-batch SGD, full precision or quantized."""

from __future__ import annotations

import time

from ..comm import exchange
from ..problem import CompositeProblem, prox, sample_batch
from ..simnet import ClusterState, barrier_step, check_consistent
from .common import Recorder, RunResult
from .config import SgdConfig


def run_sgd(p: CompositeProblem, cluster: ClusterState, cfg: SgdConfig, x0=None, record_every=1,
            histogram_every=None, check=True) -> RunResult:
    """``T`` steps of ``x <- prox(x - eta_k * mean_i g_i)``.

    With a quantizer at ``lam = 1`` the exchanged gradient stays unbiased,
    which is the QSGD-style baseline.
    """
    if x0 is not None:
        cluster.reset(x0)
    n, B, N = p.n, cfg.B, cluster.N
    workers = cluster.workers
    eta0 = cfg.schedule(0)
    rec = Recorder(p, cluster, eta0 if eta0 > 0 else 1.0 / p.L, record_every, cfg.quantizer, B,
                   histogram_every)
    rec.record(0, 0, 0, workers[0].x, force=True)
    for k in range(cfg.T):
        eta = cfg.schedule(k)

        def local(w, k=k):
            return p.batch_grad(sample_batch(w.batch.at(k), n, B), w.x)

        t0 = time.perf_counter_ns()
        gs = barrier_step(cluster, local)
        t1 = time.perf_counter_ns()
        agg = exchange(gs, cluster.scheme, cfg.quantizer, cluster.ledger,
                       rngs=[w.quant.at(k) for w in workers], server_rng=cluster.server.at(k),
                       details=True)
        t2 = time.perf_counter_ns()
        if eta > 0:
            v = agg.value
            barrier_step(cluster, lambda w: setattr(w, "x", prox(p.h, eta, w.x - eta * v)))
        rec.timing.compute_ns += t1 - t0 + time.perf_counter_ns() - t2
        rec.timing.codec_ns += t2 - t1
        if check:
            check_consistent(cluster, ("x",))
        rec.step(agg.clipped.max(), B * N)
        rec.maybe_histogram(k, gs[0])
        rec.record(0, k + 1, k + 1, workers[0].x, force=k == cfg.T - 1)
    return RunResult(
        x_out=workers[0].x.copy(), x_last=workers[0].x.copy(), records=rec.records,
        ledger=cluster.ledger, d_lambda_max=rec.d_lambda_max, zeta=rec.zeta(),
        params={"eta0": eta0}, histograms=rec.histograms, timing=rec.timing,
    )
