"""Accelerated low-precision SVRG with Katyusha coupling and double sampling.

Each step couples ``x = tau1 z + tau2 x_ref + (1 - tau1 - tau2) y``. The
quantized, exchanged gradient ``v`` drives the short ``y`` step; a second
batch ``J`` drawn from the shared stream (so identical on every worker)
gives the full-precision ``v_hat`` for the long ``z`` step, at no
communication cost.
"""

from __future__ import annotations

import math
import time
import warnings

import numpy as np

from ..comm import exchange
from ..errors import ConfigInvalid
from ..problem import CompositeProblem, batch_grad_diff, prox, sample_batch
from ..simnet import ClusterState, barrier_step, check_consistent
from .common import Recorder, RunResult, cooperative_full_grad
from .config import AlpcConfig
from .theory import ZetaDiagnostic


def resolve_tau2(cfg: AlpcConfig, d, N) -> float:
    if cfg.tau2 == "half":
        return 0.5
    if cfg.tau2 == "theorem":
        q = cfg.quantizer
        if q is None:
            z = 1.0 / (N * cfg.B)
            implied = 5 * z / 3 + 1 / (2 * cfg.B)
        else:
            implied = ZetaDiagnostic.compute(d, q.bits, q.lam, 0, N, cfg.B).tau2_implied
        if implied > 0.5:
            warnings.warn(f"theorem momentum weight {implied:.4g} exceeds 1/2; clamped to 1/2",
                          stacklevel=3)
            return 0.5
        return implied
    return float(cfg.tau2)


def inner_length(p: CompositeProblem, cfg: AlpcConfig) -> int:
    """``cfg.m``, else ``ceil(n/B)`` capped at ``3L/(2 sigma)`` in strongly convex mode."""
    if cfg.m is not None:
        return cfg.m
    m = math.ceil(p.n / cfg.B)
    if cfg.mode == "strongly_convex" and p.sigma > 0:
        m = max(1, min(m, math.floor(1.5 * p.L / p.sigma)))
    return m


def epoch_params(cfg: AlpcConfig, s, m, L, sigma):
    """``(tau1, alpha)`` for epoch ``s``."""
    if cfg.tau1 is not None:
        tau1 = cfg.tau1
    elif cfg.mode == "strongly_convex":
        tau1 = math.sqrt(m * sigma / (6 * L))
    else:
        tau1 = 2.0 / (s + 4)
    if cfg.alpha is not None:
        alpha = cfg.alpha
    elif cfg.lr is not None:
        alpha = cfg.lr / tau1
    else:
        alpha = 1.0 / (6 * tau1 * L)
    return tau1, alpha


def run_alpc_svrg(p: CompositeProblem, cluster: ClusterState, cfg: AlpcConfig, x0=None,
                  record_every=1, histogram_every=None, check=True) -> RunResult:
    """Run the accelerated loop; the output is the final reference point.

    Records report the loss at ``y``, the point produced by the short
    quantized-gradient step.
    """
    L, sigma = p.L, p.sigma
    if cfg.mode == "strongly_convex" and sigma <= 0:
        raise ConfigInvalid("mode", "strongly convex mode needs a strongly convex regularizer (sigma > 0)")
    if x0 is not None:
        cluster.reset(x0)
    n, B, N = p.n, cfg.B, cluster.N
    m = inner_length(p, cfg)
    if cfg.mode == "strongly_convex" and m > 1.5 * L / sigma:
        warnings.warn(f"m = {m} exceeds 3L/(2 sigma) = {1.5 * L / sigma:.4g}", stacklevel=2)
    tau2 = resolve_tau2(cfg, p.d, N)
    y_eta = 1.0 / (4 * L)
    rule = cfg.reference_rule
    if rule == "auto":
        rule = "weighted" if cfg.mode == "strongly_convex" else "mean"

    workers = cluster.workers
    rec = Recorder(p, cluster, y_eta, record_every, cfg.quantizer, B, histogram_every)
    rec.record(0, 0, 0, workers[0].y, force=True)
    taus = []
    for s in range(cfg.S):
        tau1, alpha = epoch_params(cfg, s, m, L, sigma)
        if tau1 + tau2 > 1.0 + 1e-12:
            if cfg.tau1 is not None:
                raise ConfigInvalid("tau1", f"coupling weights need tau1 + tau2 <= 1, got {tau1:.4g} + {tau2:.4g}")
            if s == 0:
                warnings.warn(f"tau1 = {tau1:.4g} clamped to 1 - tau2 = {1 - tau2:.4g}", stacklevel=2)
            tau1 = 1.0 - tau2
            if cfg.alpha is None:
                alpha = cfg.lr / tau1 if cfg.lr is not None else 1.0 / (6 * tau1 * L)
        taus.append((tau1, alpha))
        g_tilde = cooperative_full_grad(p, cluster, workers[0].x_tilde)
        rec.full_pass()
        growth = 1.0 + alpha * sigma if rule == "weighted" else 1.0
        acc = np.zeros(p.d)
        wsum = 0.0
        for t in range(m):
            k = s * m + t

            def couple(w):
                w.x = tau1 * w.z + tau2 * w.x_tilde + (1.0 - tau1 - tau2) * w.y

            def local(w, k=k):
                batch = sample_batch(w.batch.at(k), n, B)
                return batch_grad_diff(p, batch, w.x, w.x_tilde)

            t0 = time.perf_counter_ns()
            barrier_step(cluster, couple)
            us = barrier_step(cluster, local)
            t1 = time.perf_counter_ns()
            agg = exchange(us, cluster.scheme, cfg.quantizer, cluster.ledger,
                           rngs=[w.quant.at(k) for w in workers], server_rng=cluster.server.at(k),
                           details=True)
            t2 = time.perf_counter_ns()
            v = agg.value + g_tilde

            def update(w, k=k):
                J = sample_batch(w.shared.at(k), n, B)
                v_hat = batch_grad_diff(p, J, w.x, w.x_tilde) + g_tilde
                w.y = prox(p.h, y_eta, w.x - y_eta * v)
                w.z = prox(p.h, alpha, w.z - alpha * v_hat)

            barrier_step(cluster, update)
            rec.timing.compute_ns += t1 - t0 + time.perf_counter_ns() - t2
            rec.timing.codec_ns += t2 - t1
            if check:
                check_consistent(cluster, ("x", "y", "z"))
            # weights (1 + alpha sigma)^t, rescaled by the largest so they stay finite
            wt = growth ** (t - (m - 1))
            acc += wt * workers[0].y
            wsum += wt
            rec.step(agg.clipped.max(), 4 * B * N)
            rec.maybe_histogram(k, us[0])
            rec.record(s, t + 1, k + 1, workers[0].y, force=t == m - 1)
        ref = workers[0].y.copy() if rule == "last" else acc / wsum
        barrier_step(cluster, lambda w: setattr(w, "x_tilde", ref.copy()))
        if check:
            check_consistent(cluster)

    params = {"m": m, "tau2": tau2, "y_eta": y_eta, "reference_rule": rule,
              "tau1": [t for t, _ in taus], "alpha": [a for _, a in taus]}
    return RunResult(
        x_out=workers[0].x_tilde.copy(), x_last=workers[0].y.copy(), records=rec.records,
        ledger=cluster.ledger, d_lambda_max=rec.d_lambda_max, zeta=rec.zeta(), params=params,
        histograms=rec.histograms, timing=rec.timing,
    )
