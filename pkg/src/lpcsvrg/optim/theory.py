"""Closed-form quantities used to set and check algorithm parameters.

``A = d lam^2 / (4 levels^2)`` is the in-hull quantization term, ``B = d_lam
(1 - lam)^2`` the clipping term and ``C = 1 / (N B)`` the mini-batch term.
With server re-quantization the in-hull term grows to ``3 d lam^2 / (8
levels^2)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..codec import bits_to_levels, round_to_codes, scale_factors
from ..comm import CommScheme


def coefficient_a(d, bits, lam, scheme=CommScheme.BROADCAST) -> float:
    if bits is None:
        return 0.0
    k = bits_to_levels(bits)
    if CommScheme.parse(scheme) is CommScheme.PS_REQUANT:
        return 3 * d * lam**2 / (8 * k**2)
    return d * lam**2 / (4 * k**2)


def coefficient_b(d_lambda, lam) -> float:
    return d_lambda * (1.0 - lam) ** 2


def variance_coefficient(d, bits, lam, d_lambda, N, B, scheme=CommScheme.BROADCAST) -> float:
    """``A + B + C``; ``bits=None`` means unquantized, leaving only ``C``."""
    if bits is None:
        return 1.0 / (N * B)
    return coefficient_a(d, bits, lam, scheme) + coefficient_b(d_lambda, lam) + 1.0 / (N * B)


def zeta(d, bits, lam, d_lambda, N, B) -> float:
    return variance_coefficient(d, bits, lam, d_lambda, N, B, CommScheme.BROADCAST)


@dataclass(frozen=True)
class ZetaDiagnostic:
    zeta: float
    tau2_implied: float

    @classmethod
    def compute(cls, d, bits, lam, d_lambda, N, B):
        z = zeta(d, bits, lam, d_lambda, N, B)
        return cls(z, 5.0 * z / 3.0 + 1.0 / (2 * B))


def gradient_variance_bound(L, dist_sq, d, bits, lam, d_lambda, N, B, scheme) -> float:
    """Upper bound on ``E|v - grad f(x)|^2`` given ``|x - x_ref|^2 = dist_sq``."""
    return 2.0 * L**2 * variance_coefficient(d, bits, lam, d_lambda, N, B, scheme) * dist_sq


def lpc_step_constraint(m, rho, d, bits, lam, d_lambda, N, B, scheme=CommScheme.BROADCAST) -> float:
    """Left side of ``8 m^2 rho^2 (A + B + C) + rho <= 1``."""
    return 8.0 * m**2 * rho**2 * variance_coefficient(d, bits, lam, d_lambda, N, B, scheme) + rho


def clipping_terms(U, bits, lam):
    """Measured ``(A, B, d_lambda)`` for gradient rows ``U`` of shape ``(r, d)``.

    ``d_lambda`` is the largest per-row count of coordinates that fall
    outside the codebook.
    """
    U = np.atleast_2d(np.asarray(U, dtype=np.float64))
    deltas = scale_factors(U, bits, lam)
    _, clipped = round_to_codes(U, deltas, bits, np.zeros(U.shape))
    d_lam = int(clipped.max())
    return coefficient_a(U.shape[-1], bits, lam), coefficient_b(d_lam, lam), d_lam
