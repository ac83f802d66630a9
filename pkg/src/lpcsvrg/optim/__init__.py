"""Optimizer loops, their configurations and theory-side diagnostics."""

from .alpc_svrg import run_alpc_svrg
from .common import RunResult, cooperative_full_grad
from .config import AlpcConfig, LpcSvrgConfig, SgdConfig, StepSchedule
from .lpc_svrg import run_lpc_svrg
from .probe import ProbeRow, variance_probe
from .sgd import run_sgd
from .theory import ZetaDiagnostic, clipping_terms, gradient_variance_bound, lpc_step_constraint, zeta

__all__ = [
    "AlpcConfig", "LpcSvrgConfig", "ProbeRow", "RunResult", "SgdConfig", "StepSchedule",
    "ZetaDiagnostic", "clipping_terms", "cooperative_full_grad", "gradient_variance_bound",
    "lpc_step_constraint", "run_alpc_svrg", "run_lpc_svrg", "run_sgd", "variance_probe", "zeta",
]
