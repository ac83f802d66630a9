"""Deterministic simulator for distributed SVRG with low-precision, clipped gradients."""

from .codec import LowPrecisionTensor, QuantizerConfig, decode, pack, quantize, unpack
from .comm import BitLedger, CommScheme, bits_nominal, exchange, reduction_factor
from .datasets import Dataset, load_libsvm
from .metrics import MetricsRecord, bits_to_loss, histogram
from .problem import LeastSquaresProblem, NonsmoothTerm, gradient_mapping, make_synthetic, prox
from .simnet import barrier_step, spawn_cluster

__version__ = "0.1.0"

__all__ = [
    "BitLedger", "CommScheme", "Dataset", "LeastSquaresProblem", "LowPrecisionTensor",
    "MetricsRecord", "NonsmoothTerm", "QuantizerConfig", "barrier_step", "bits_nominal",
    "bits_to_loss", "decode", "exchange", "gradient_mapping", "histogram", "load_libsvm",
    "make_synthetic", "pack", "prox", "quantize", "reduction_factor", "spawn_cluster", "unpack",
]
