"""Algorithm configurations."""

from __future__ import annotations

import math
import numbers
import warnings
from dataclasses import dataclass

from ..codec import QuantizerConfig
from ..errors import ConfigInvalid


def _positive_int(name, value, allow_none=False):
    if value is None and allow_none:
        return
    if not isinstance(value, numbers.Integral) or isinstance(value, bool) or value < 1:
        raise ConfigInvalid(name, f"must be a positive integer, got {value!r}")


@dataclass(frozen=True)
class LpcSvrgConfig:
    """Parameters of the quantized SVRG loop.

    Give either ``rho`` (step ``rho / L``) or ``eta`` directly. ``m`` defaults
    to ``ceil(n / B)``. ``quantizer=None`` bypasses quantization and sends
    32-bit floats, which is plain distributed prox-SVRG.
    """

    S: int
    B: int
    m: int | None = None
    rho: float | None = None
    eta: float | None = None
    quantizer: QuantizerConfig | None = None

    def __post_init__(self):
        _positive_int("S", self.S)
        _positive_int("B", self.B)
        _positive_int("m", self.m, allow_none=True)
        if (self.rho is None) == (self.eta is None):
            raise ConfigInvalid("rho", "give exactly one of rho or eta")
        if self.rho is not None:
            if self.rho <= 0:
                raise ConfigInvalid("rho", f"must be positive, got {self.rho}")
            if self.rho >= 0.5:
                warnings.warn(f"rho = {self.rho} violates rho < 1/2 required by the rate guarantee",
                              stacklevel=3)
        if self.eta is not None and self.eta <= 0:
            raise ConfigInvalid("eta", f"must be positive, got {self.eta}")

    def inner(self, n) -> int:
        return self.m or math.ceil(n / self.B)

    def step(self, L) -> float:
        return self.eta if self.eta is not None else self.rho / L


@dataclass(frozen=True)
class AlpcConfig:
    """Parameters of the accelerated loop with double sampling.

    ``mode`` is ``"strongly_convex"`` or ``"general_convex"``. ``tau1`` and
    ``alpha`` default to their theorem settings; ``lr`` instead sets
    ``alpha = lr / tau1``. ``tau2`` is a number, ``"half"`` (1/2) or
    ``"theorem"`` (``5 zeta / 3 + 1 / (2B)``, clamped to 1/2).
    ``reference_rule`` picks how the epoch reference point is formed:
    ``"weighted"``/``"mean"`` per mode (``"auto"``) or ``"last"``.
    """

    S: int
    B: int
    m: int | None = None
    mode: str = "strongly_convex"
    tau1: float | None = None
    tau2: float | str = "half"
    alpha: float | None = None
    lr: float | None = None
    quantizer: QuantizerConfig | None = None
    reference_rule: str = "auto"

    def __post_init__(self):
        _positive_int("S", self.S)
        _positive_int("B", self.B)
        _positive_int("m", self.m, allow_none=True)
        if self.mode not in ("strongly_convex", "general_convex"):
            raise ConfigInvalid("mode", f"must be strongly_convex or general_convex, got {self.mode!r}")
        if isinstance(self.tau2, str):
            if self.tau2 not in ("half", "theorem"):
                raise ConfigInvalid("tau2", f"must be a number, 'half' or 'theorem', got {self.tau2!r}")
        elif not 0 <= self.tau2 <= 0.5:
            raise ConfigInvalid("tau2", f"momentum weight must satisfy 0 <= τ₂ <= 1/2, got {self.tau2}")
        if self.tau1 is not None and not 0 < self.tau1 <= 1:
            raise ConfigInvalid("tau1", f"must lie in (0, 1], got {self.tau1}")
        if self.alpha is not None and self.lr is not None:
            raise ConfigInvalid("alpha", "give at most one of alpha or lr")
        for name in ("alpha", "lr"):
            v = getattr(self, name)
            if v is not None and v <= 0:
                raise ConfigInvalid(name, f"must be positive, got {v}")
        if self.reference_rule not in ("auto", "weighted", "mean", "last"):
            raise ConfigInvalid("reference_rule", f"unknown rule {self.reference_rule!r}")


@dataclass(frozen=True)
class StepSchedule:
    """``constant``: eta0; ``inv``: eta0 / (1 + k / decay); ``invsqrt``: eta0 / sqrt(1 + k / decay)."""

    eta0: float
    kind: str = "constant"
    decay: float = 1.0

    def __post_init__(self):
        if self.eta0 < 0:
            raise ConfigInvalid("lr", f"must be non-negative, got {self.eta0}")
        if self.kind not in ("constant", "inv", "invsqrt"):
            raise ConfigInvalid("schedule", f"unknown schedule {self.kind!r}")
        if self.decay <= 0:
            raise ConfigInvalid("decay", "must be positive")

    def __call__(self, k) -> float:
        if self.kind == "inv":
            return self.eta0 / (1.0 + k / self.decay)
        if self.kind == "invsqrt":
            return self.eta0 / math.sqrt(1.0 + k / self.decay)
        return self.eta0


@dataclass(frozen=True)
class SgdConfig:
    T: int
    B: int
    schedule: StepSchedule
    quantizer: QuantizerConfig | None = None

    def __post_init__(self):
        _positive_int("T", self.T)
        _positive_int("B", self.B)
