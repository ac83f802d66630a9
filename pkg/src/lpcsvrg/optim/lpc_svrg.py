"""Distributed prox-SVRG with low-precision, optionally clipped gradient exchange."""

from __future__ import annotations

import time

from ..comm import exchange
from ..problem import CompositeProblem, batch_grad_diff, prox, sample_batch
from ..simnet import ClusterState, barrier_step, check_consistent
from .common import Recorder, RunResult, cooperative_full_grad
from .config import LpcSvrgConfig
from .theory import lpc_step_constraint


def run_lpc_svrg(p: CompositeProblem, cluster: ClusterState, cfg: LpcSvrgConfig, x0=None,
                 record_every=1, histogram_every=None, check=True) -> RunResult:
    """Run ``cfg.S`` epochs of ``m`` inner steps on every worker in lockstep.

    Inner step ``k`` draws worker ``i``'s batch from its batch stream at
    counter ``k`` and its rounding uniforms from its quantization stream at
    ``k``, so the trajectory depends only on the master seed. The returned
    ``x_out`` is an inner iterate chosen uniformly with the output stream.
    """
    if x0 is not None:
        cluster.reset(x0)
    n, B, N = p.n, cfg.B, cluster.N
    m = cfg.inner(n)
    eta = cfg.step(p.L)
    workers = cluster.workers
    rec = Recorder(p, cluster, eta, record_every, cfg.quantizer, B, histogram_every)
    out_idx = int(cluster.output.at(0).integers(cfg.S * m))
    x_out = None

    rec.record(0, 0, 0, workers[0].x, force=True)
    for s in range(cfg.S):
        barrier_step(cluster, lambda w: setattr(w, "x", w.x_tilde.copy()))
        g_tilde = cooperative_full_grad(p, cluster, workers[0].x_tilde)
        rec.full_pass()
        for t in range(m):
            k = s * m + t
            if k == out_idx:
                x_out = workers[0].x.copy()

            def local(w, k=k):
                batch = sample_batch(w.batch.at(k), n, B)
                return batch_grad_diff(p, batch, w.x, w.x_tilde)

            t0 = time.perf_counter_ns()
            us = barrier_step(cluster, local)
            t1 = time.perf_counter_ns()
            agg = exchange(us, cluster.scheme, cfg.quantizer, cluster.ledger,
                           rngs=[w.quant.at(k) for w in workers], server_rng=cluster.server.at(k),
                           details=True)
            t2 = time.perf_counter_ns()
            v = agg.value + g_tilde

            def update(w):
                w.x = prox(p.h, eta, w.x - eta * v)

            barrier_step(cluster, update)
            rec.timing.compute_ns += t1 - t0 + time.perf_counter_ns() - t2
            rec.timing.codec_ns += t2 - t1
            if check:
                check_consistent(cluster, ("x",))
            rec.step(agg.clipped.max(), 2 * B * N)
            rec.maybe_histogram(k, us[0])
            rec.record(s, t + 1, k + 1, workers[0].x, force=t == m - 1)
        barrier_step(cluster, lambda w: setattr(w, "x_tilde", w.x.copy()))
        if check:
            check_consistent(cluster, ("x", "x_tilde"))

    q = cfg.quantizer
    rho = eta * p.L
    lhs = lpc_step_constraint(m, rho, p.d, None if q is None else q.bits, 1.0 if q is None else q.lam,
                              rec.d_lambda_max, N, B, cluster.scheme)
    params = {"eta": eta, "m": m, "rho": rho, "output_index": out_idx,
              "step_constraint": lhs, "step_constraint_ok": bool(lhs <= 1.0 and rho < 0.5)}
    return RunResult(
        x_out=x_out, x_last=workers[0].x.copy(), records=rec.records, ledger=cluster.ledger,
        d_lambda_max=rec.d_lambda_max, zeta=rec.zeta(), output_index=out_idx, params=params,
        histograms=rec.histograms, timing=rec.timing,
    )

