"""Monte-Carlo check of the gradient-variance bound."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..codec import QuantizerConfig
from ..comm import CommScheme, aggregate
from ..problem import CompositeProblem
from ..simnet import Purpose, Stream
from .theory import gradient_variance_bound


@dataclass(frozen=True)
class ProbeRow:
    measured: float   # mean of |v - grad f(x)|^2 over the draws
    stderr: float     # Monte-Carlo standard error of ``measured``
    bound: float
    d_lambda: int     # largest clipped count seen in any message

    @property
    def ratio(self) -> float:
        if self.bound == 0:
            return 0.0 if self.measured == 0 else float("inf")
        return self.measured / self.bound

    def within(self, k=3.0) -> bool:
        """``measured <= bound + k * stderr``."""
        return self.measured <= self.bound + k * self.stderr


def variance_probe(p: CompositeProblem, points, N, B, quantizer: QuantizerConfig | None,
                   scheme=CommScheme.BROADCAST, draws=10_000, seed=0, chunk=2_000) -> list:
    """Estimate ``E|v - grad f(x)|^2`` at each ``(x, x_ref)`` in ``points``.

    Each draw samples fresh batches for all ``N`` workers and fresh rounding
    uniforms, then runs the same aggregation as a real exchange. Streams are
    keyed by ``(seed, point index)`` and the server uniforms are always
    drawn, so two schemes probed with the same seed see the same batches and
    worker uniforms.
    """
    scheme = CommScheme.parse(scheme)
    rows = []
    for j, (x, x_ref) in enumerate(points):
        x = np.asarray(x, dtype=np.float64)
        x_ref = np.asarray(x_ref, dtype=np.float64)
        g_ref = p.full_grad(x_ref)
        g = p.full_grad(x)
        stream = Stream.derive(seed, Purpose.PROBE, j)
        errs = []
        d_lam = 0
        for c, lo in enumerate(range(0, draws, chunk)):
            M = min(chunk, draws - lo)
            rng = stream.at(c)
            idx = rng.integers(0, p.n, size=(M, N, B))
            worker_u = rng.random((M, N, p.d))
            server_u = rng.random((M, p.d))
            U = (p.sample_grads(idx, x) - p.sample_grads(idx, x_ref)).mean(axis=-2)
            if quantizer is None:
                value = U.mean(axis=-2)
            else:
                agg = aggregate(U, scheme, quantizer.bits, quantizer.lam, worker_u, server_u)
                value = agg.value
                d_lam = max(d_lam, int(agg.clipped.max()))
            diff = value + g_ref - g
            errs.append(np.einsum("ij,ij->i", diff, diff))
        errs = np.concatenate(errs)
        dist_sq = float((x - x_ref) @ (x - x_ref))
        bits = None if quantizer is None else quantizer.bits
        lam = 1.0 if quantizer is None else quantizer.lam
        bound = gradient_variance_bound(p.L, dist_sq, p.d, bits, lam, d_lam, N, B, scheme)
        rows.append(ProbeRow(float(errs.mean()), float(errs.std(ddof=1) / np.sqrt(errs.size)),
                             float(bound), d_lam))
    return rows
