"""Composite objectives ``P(x) = (1/n) sum_i f_i(x) + h(x)``.

The smooth part is a finite sum with per-sample gradient oracles; the
nonsmooth part ``h`` only needs a closed-form proximal map.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .datasets import Dataset
from .errors import IndexOutOfRange


@dataclass(frozen=True)
class NonsmoothTerm:
    """``h(x)``: zero, ``mu*|x|_1``, ``(sigma/2)*|x|^2`` or a box indicator."""

    kind: str = "zero"
    mu: float = 0.0
    sigma: float = 0.0
    lo: float = -np.inf
    hi: float = np.inf

    def __post_init__(self):
        if self.kind not in ("zero", "l1", "l2sq", "box"):
            raise ValueError(f"unknown nonsmooth term {self.kind!r}")
        if self.mu < 0 or self.sigma < 0:
            raise ValueError("regularization weights must be non-negative")
        if self.lo > self.hi:
            raise ValueError("box requires lo <= hi")

    @classmethod
    def zero(cls):
        return cls("zero")

    @classmethod
    def l1(cls, mu):
        return cls("l1", mu=float(mu))

    @classmethod
    def l2sq(cls, sigma):
        return cls("l2sq", sigma=float(sigma))

    @classmethod
    def box(cls, lo, hi):
        return cls("box", lo=float(lo), hi=float(hi))

    @classmethod
    def from_dict(cls, spec):
        spec = dict(spec or {"kind": "zero"})
        kind = spec.pop("kind", "zero")
        return cls(kind, **{k: float(v) for k, v in spec.items()})

    def to_dict(self):
        out = {"kind": self.kind}
        if self.kind == "l1":
            out["mu"] = self.mu
        elif self.kind == "l2sq":
            out["sigma"] = self.sigma
        elif self.kind == "box":
            out.update(lo=self.lo, hi=self.hi)
        return out

    @property
    def strong_convexity(self) -> float:
        return self.sigma if self.kind == "l2sq" else 0.0

    def value(self, x) -> float:
        x = np.asarray(x, dtype=np.float64)
        if self.kind == "l1":
            return self.mu * float(np.abs(x).sum())
        if self.kind == "l2sq":
            return 0.5 * self.sigma * float(x @ x)
        if self.kind == "box":
            return 0.0 if np.all((x >= self.lo) & (x <= self.hi)) else np.inf
        return 0.0

    def prox(self, eta, v) -> np.ndarray:
        return prox(self, eta, v)


def prox(h: NonsmoothTerm, eta, v) -> np.ndarray:
    """``argmin_y h(y) + |y - v|^2 / (2 eta)`` in closed form."""
    if eta <= 0:
        raise ValueError("eta must be positive")
    v = np.asarray(v, dtype=np.float64)
    if h.kind == "l1":
        t = eta * h.mu
        return np.sign(v) * np.maximum(np.abs(v) - t, 0.0)
    if h.kind == "l2sq":
        return v / (1.0 + eta * h.sigma)
    if h.kind == "box":
        return np.clip(v, h.lo, h.hi)
    return v.copy()


class CompositeProblem:
    """Base class: subclasses provide per-sample gradients and losses.

    Attributes ``n``, ``d``, ``h`` and ``L`` (per-sample smoothness) are set by
    subclasses.
    """

    n: int
    d: int
    h: NonsmoothTerm
    L: float

    @property
    def sigma(self) -> float:
        return self.h.strong_convexity

    def _check(self, idx):
        idx = np.asarray(idx, dtype=np.int64)
        if idx.size == 0:
            raise ValueError("empty batch")
        if idx.min() < 0 or idx.max() >= self.n:
            raise IndexOutOfRange(f"batch indices must lie in [0, {self.n})")
        return idx

    def grad_sum(self, idx, x) -> np.ndarray:
        """``sum_{a in idx} grad f_a(x)``; repeated indices count repeatedly."""
        raise NotImplementedError

    def smooth_loss(self, x) -> float:
        raise NotImplementedError

    def shard_grad_sum(self, lo, hi, x) -> np.ndarray:
        """Gradient sum over the contiguous sample range ``[lo, hi)``."""
        if hi <= lo:
            return np.zeros(self.d)
        return self.grad_sum(np.arange(lo, hi), x)

    def sample_grads(self, idx, x) -> np.ndarray:
        """Per-sample gradients with shape ``idx.shape + (d,)``."""
        idx = np.asarray(idx)
        rows = [self.grad_sum(np.array([i]), x) for i in idx.ravel()]
        return np.array(rows).reshape(idx.shape + (self.d,))

    def batch_grad(self, idx, x) -> np.ndarray:
        idx = self._check(idx)
        return self.grad_sum(idx, x) / idx.size

    def full_grad(self, x) -> np.ndarray:
        return self.grad_sum(np.arange(self.n), x) / self.n

    def loss(self, x) -> float:
        return self.smooth_loss(x) + self.h.value(x)


class LeastSquaresProblem(CompositeProblem):
    """``f_i(x) = (a_i . x - b_i)^2 / 2`` with ``L = max_i |a_i|^2``."""

    def __init__(self, A, b, h: NonsmoothTerm | None = None):
        self.A = np.ascontiguousarray(A, dtype=np.float64)
        self.b = np.asarray(b, dtype=np.float64)
        if self.A.ndim != 2 or self.A.shape[0] != self.b.size:
            raise ValueError("A must be n x d with one target per row")
        self.n, self.d = self.A.shape
        self.h = h or NonsmoothTerm.zero()
        self.L = float(np.einsum("ij,ij->i", self.A, self.A).max())
        if self.L <= 0:
            raise ValueError("all-zero features give L = 0")

    @classmethod
    def from_dataset(cls, data: Dataset, h=None):
        return cls(data.features, data.targets, h)

    def grad_sum(self, idx, x):
        rows = self.A[idx]
        return rows.T @ (rows @ x - self.b[idx])

    def shard_grad_sum(self, lo, hi, x):
        rows = self.A[lo:hi]
        return rows.T @ (rows @ x - self.b[lo:hi])

    def sample_grads(self, idx, x):
        rows = self.A[idx]
        return rows * (rows @ x - self.b[idx])[..., None]

    def full_grad(self, x):
        return self.A.T @ (self.A @ x - self.b) / self.n

    def smooth_loss(self, x):
        r = self.A @ x - self.b
        return 0.5 * float(r @ r) / self.n

    def minimizer(self, tol=1e-12, max_iter=100_000):
        """Exact solve when ``h`` is zero or quadratic, else accelerated prox-gradient."""
        if self.h.kind == "zero":
            return np.linalg.lstsq(self.A, self.b, rcond=None)[0]
        H = self.A.T @ self.A / self.n
        rhs = self.A.T @ self.b / self.n
        if self.h.kind == "l2sq":
            return np.linalg.solve(H + self.h.sigma * np.eye(self.d), rhs)
        return _fista(lambda x: H @ x - rhs, self.h, np.linalg.eigvalsh(H)[-1], self.d, tol, max_iter)


class LogisticProblem(CompositeProblem):
    """``f_i(x) = log(1 + exp(-y_i a_i . x))`` for labels ``y_i`` in {-1, +1}."""

    def __init__(self, A, y, h: NonsmoothTerm | None = None):
        self.A = np.ascontiguousarray(A, dtype=np.float64)
        self.y = np.where(np.asarray(y, dtype=np.float64) > 0, 1.0, -1.0)
        self.n, self.d = self.A.shape
        self.h = h or NonsmoothTerm.zero()
        self.L = float(np.einsum("ij,ij->i", self.A, self.A).max()) / 4.0

    def grad_sum(self, idx, x):
        rows = self.A[idx]
        margin = self.y[idx] * (rows @ x)
        return rows.T @ (-self.y[idx] / (1.0 + np.exp(margin)))

    def smooth_loss(self, x):
        return float(np.logaddexp(0.0, -self.y * (self.A @ x)).mean())


def _fista(grad, h, lip, d, tol, max_iter):
    x = y = np.zeros(d)
    t = 1.0
    step = 1.0 / lip
    for _ in range(max_iter):
        x_new = prox(h, step, y - step * grad(y))
        t_new = 0.5 * (1 + np.sqrt(1 + 4 * t * t))
        y = x_new + (t - 1) / t_new * (x_new - x)
        if np.linalg.norm(x_new - x) <= tol * max(1.0, np.linalg.norm(x)):
            return x_new
        x, t = x_new, t_new
    return x


def gradient_mapping(p: CompositeProblem, x, eta) -> np.ndarray:
    """``(x - prox_{eta h}(x - eta grad f(x))) / eta``; equals ``grad f`` when h = 0."""
    if eta <= 0:
        raise ValueError("eta must be positive")
    x = np.asarray(x, dtype=np.float64)
    g = p.full_grad(x)
    if p.h.kind == "zero":
        return g
    return (x - prox(p.h, eta, x - eta * g)) / eta


def batch_grad_diff(p: CompositeProblem, batch, x, x_ref) -> np.ndarray:
    """``(1/B) sum_{a in batch} [grad f_a(x) - grad f_a(x_ref)]``."""
    batch = p._check(batch)
    return (p.grad_sum(batch, x) - p.grad_sum(batch, x_ref)) / batch.size


def sample_batch(rng: np.random.Generator, n, B) -> np.ndarray:
    """Uniform mini-batch of size ``B`` drawn with replacement."""
    return rng.integers(0, n, size=B)


def make_synthetic(d, n, noise=1.0, seed=0, h: NonsmoothTerm | None = None):
    """Gaussian least-squares instance with a planted solution.

    Rows and the ground truth are i.i.d. standard normal; targets are
    ``a_i . x_star + noise * eps_i``.
    """
    if d < 1 or n < 1:
        raise ValueError("n and d must be >= 1")
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((n, d))
    x_star = rng.standard_normal(d)
    targets = A @ x_star + noise * rng.standard_normal(n)
    data = Dataset(A, targets, {"kind": "synthetic", "d": d, "n": n, "noise": noise, "seed": seed},
                   x_star=x_star)
    return data, LeastSquaresProblem(A, targets, h)
