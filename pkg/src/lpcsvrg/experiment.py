"""Run configurations, problem construction and on-disk run artifacts.

A run directory holds ``metrics.csv`` (deterministic), ``ledger.csv``,
``manifest.json`` (everything needed to re-run) and ``timing.json``
(wall-clock, kept apart so that reruns compare bit-for-bit).
"""

from __future__ import annotations

import dataclasses
import json
import math
import sys
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .codec import QuantizerConfig, levels_to_bits
from .comm import CommScheme
from .datasets import Dataset, load_libsvm
from .errors import ConfigInvalid, DatasetUnavailable, EmptyDataset, ParseError
from .metrics import to_csv
from .optim import (AlpcConfig, LpcSvrgConfig, SgdConfig, StepSchedule, run_alpc_svrg, run_lpc_svrg,
                    run_sgd)
from .optim.alpc_svrg import inner_length, resolve_tau2
from .optim.theory import ZetaDiagnostic, lpc_step_constraint
from .problem import LeastSquaresProblem, LogisticProblem, NonsmoothTerm, make_synthetic
from .simnet import spawn_cluster

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

ALGORITHMS = ("lpc-svrg", "svrg", "alpc-svrg", "sgd", "qsgd")
QUANTIZED = ("lpc-svrg", "alpc-svrg", "qsgd")


@dataclass(frozen=True)
class DatasetSpec:
    kind: str = "synthetic"
    d: int = 8
    n: int = 100
    noise: float = 1.0
    seed: int = 0
    path: str | None = None

    @classmethod
    def from_mapping(cls, raw):
        raw = dict(raw or {})
        unknown = set(raw) - {f.name for f in dataclasses.fields(cls)}
        if unknown:
            raise ConfigInvalid("dataset", f"unknown keys {sorted(unknown)}")
        spec = cls(**raw)
        if spec.kind not in ("synthetic", "libsvm"):
            raise ConfigInvalid("dataset.kind", f"must be synthetic or libsvm, got {spec.kind!r}")
        if spec.kind == "libsvm" and not spec.path:
            raise ConfigInvalid("dataset.path", "libsvm datasets need a path")
        if spec.kind == "synthetic" and (int(spec.d) < 1 or int(spec.n) < 1):
            raise ConfigInvalid("dataset", "synthetic n and d must be >= 1")
        return spec


@dataclass(frozen=True)
class RunConfig:
    """One experiment. Keys mirror the TOML/JSON file; ``lambda`` maps to ``lam``.

    Precision is given as ``levels`` (positive codebook points, ``2^(b-1)-1``)
    or ``bits``; 0 bypasses quantization. Regularizers accept ``sigma_rel``, a strong-convexity weight
    relative to the smoothness constant ``L``.
    """

    algorithm: str
    dataset: DatasetSpec = field(default_factory=DatasetSpec)
    regularizer: dict = field(default_factory=lambda: {"kind": "zero"})
    loss: str = "least_squares"
    name: str | None = None
    N: int = 1
    S: int = 10
    m: int | None = None
    B: int = 1
    T: int = 100
    levels: int | None = None
    bits: int | None = None
    lam: float = 1.0
    scheme: str = "broadcast"
    rho: float | None = None
    eta: float | None = None
    lr: float | None = None
    schedule: str = "constant"
    decay: float = 1.0
    mode: str = "strongly_convex"
    tau1: float | None = None
    tau2: float | str = "half"
    alpha: float | None = None
    reference_rule: str = "auto"
    seed: int = 0
    output_dir: str | None = None
    record_every: int = 1
    histogram_every: int | None = None
    constraint_check: bool = False
    execution: str = "serial"
    ledger_mode: str = "nominal"
    bandwidth_bps: float = 1e9

    @classmethod
    def from_mapping(cls, raw) -> "RunConfig":
        raw = dict(raw)
        if "lambda" in raw:
            raw["lam"] = raw.pop("lambda")
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(raw) - names
        if unknown:
            raise ConfigInvalid(sorted(unknown)[0], "unknown configuration key")
        if "algorithm" not in raw:
            raise ConfigInvalid("algorithm", f"required, one of {ALGORITHMS}")
        raw["dataset"] = DatasetSpec.from_mapping(raw.get("dataset"))
        cfg = cls(**raw)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path) -> "RunConfig":
        """Read a TOML or JSON config, or the ``config`` section of a run manifest."""
        return cls.from_mapping(_config_section(read_mapping(path)))

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        out["lambda"] = out.pop("lam")
        return out

    def validate(self):
        if self.algorithm not in ALGORITHMS:
            raise ConfigInvalid("algorithm", f"must be one of {ALGORITHMS}, got {self.algorithm!r}")
        if self.loss not in ("least_squares", "logistic"):
            raise ConfigInvalid("loss", f"must be least_squares or logistic, got {self.loss!r}")
        for name in ("N", "S", "B", "T", "record_every"):
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, int) or v < 1:
                raise ConfigInvalid(name, f"must be a positive integer, got {v!r}")
        try:
            CommScheme.parse(self.scheme)
        except ValueError as exc:
            raise ConfigInvalid("scheme", str(exc)) from None
        if self.execution not in ("serial", "threads"):
            raise ConfigInvalid("execution", "must be serial or threads")
        if self.ledger_mode not in ("nominal", "entropy"):
            raise ConfigInvalid("ledger_mode", "must be nominal or entropy")
        if not (isinstance(self.lam, (int, float)) and 0 < self.lam <= 1):
            raise ConfigInvalid("lambda", f"must satisfy λ ∈ (0,1], got {self.lam}")
        if self.bandwidth_bps <= 0:
            raise ConfigInvalid("bandwidth_bps", "must be positive")
        try:
            NonsmoothTerm.from_dict({k: v for k, v in self.regularizer.items() if k != "sigma_rel"})
        except (TypeError, ValueError) as exc:
            raise ConfigInvalid("regularizer", str(exc)) from None
        self.quantizer()
        self.algorithm_config(n=1)

    def quantizer(self) -> QuantizerConfig | None:
        if self.algorithm not in QUANTIZED:
            return None
        if self.levels is not None and self.bits is not None:
            raise ConfigInvalid("levels", "give levels or bits, not both")
        if self.levels == 0 or self.bits == 0:
            return None  # explicit bypass: same loop, exact messages
        if self.levels is None and self.bits is None:
            if self.algorithm == "alpc-svrg":
                return None
            raise ConfigInvalid("levels", f"{self.algorithm} needs levels or bits")
        try:
            bits = levels_to_bits(self.levels) if self.levels is not None else int(self.bits)
            return QuantizerConfig(bits, float(self.lam))
        except ValueError as exc:
            raise ConfigInvalid("levels" if self.levels is not None else "bits", str(exc)) from None

    def algorithm_config(self, n):
        q = self.quantizer()
        if self.algorithm in ("lpc-svrg", "svrg"):
            rho = self.rho if self.rho is not None or self.eta is not None else 0.3
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                return LpcSvrgConfig(S=self.S, B=self.B, m=self.m, rho=rho, eta=self.eta, quantizer=q)
        if self.algorithm == "alpc-svrg":
            return AlpcConfig(S=self.S, B=self.B, m=self.m, mode=self.mode, tau1=self.tau1,
                              tau2=self.tau2, alpha=self.alpha, lr=self.lr, quantizer=q,
                              reference_rule=self.reference_rule)
        if self.lr is None:
            raise ConfigInvalid("lr", f"{self.algorithm} needs a learning rate")
        return SgdConfig(T=self.T, B=self.B, schedule=StepSchedule(self.lr, self.schedule, self.decay),
                         quantizer=q)

    def with_overrides(self, **kw) -> "RunConfig":
        kw = {k: v for k, v in kw.items() if v is not None}
        return dataclasses.replace(self, **kw) if kw else self


def read_mapping(path) -> dict:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigInvalid("config", f"cannot read {path}: {exc.strerror}") from None
    try:
        if path.suffix == ".json":
            return json.loads(text)
        return tomllib.loads(text)
    except (ValueError, tomllib.TOMLDecodeError) as exc:
        raise ConfigInvalid("config", f"cannot parse {path}: {exc}") from None


def _config_section(raw):
    return raw["config"] if "config" in raw and isinstance(raw["config"], dict) else raw


# -- problem construction ------------------------------------------------------


def load_dataset(spec: DatasetSpec) -> Dataset:
    if spec.kind == "synthetic":
        return make_synthetic(int(spec.d), int(spec.n), float(spec.noise), int(spec.seed))[0]
    try:
        return load_libsvm(spec.path)
    except FileNotFoundError:
        raise DatasetUnavailable(f"dataset file not found: {spec.path}") from None
    except (OSError, ParseError, EmptyDataset) as exc:
        raise DatasetUnavailable(f"{spec.path}: {exc}") from None


def build_problem(cfg: RunConfig, data: Dataset):
    kind = LogisticProblem if cfg.loss == "logistic" else LeastSquaresProblem
    reg = dict(cfg.regularizer)
    rel = reg.pop("sigma_rel", None)
    p = kind(data.features, data.targets)
    if rel is not None:
        reg["sigma"] = float(rel) * p.L
    return kind(data.features, data.targets, NonsmoothTerm.from_dict(reg))


# -- constraints ---------------------------------------------------------------


def constraint_report(cfg: RunConfig, p, d_lambda=0) -> list:
    """Theory-side parameter conditions evaluated at clipped count ``d_lambda``."""
    q = cfg.quantizer()
    bits, lam = (None, 1.0) if q is None else (q.bits, q.lam)
    out = []
    if cfg.algorithm in ("lpc-svrg", "svrg"):
        acfg = cfg.algorithm_config(p.n)
        m, rho = acfg.inner(p.n), acfg.step(p.L) * p.L
        lhs = lpc_step_constraint(m, rho, p.d, bits, lam, d_lambda, cfg.N, cfg.B, cfg.scheme)
        out.append({"field": "rho", "constraint": "rho < 1/2", "value": rho, "ok": rho < 0.5})
        out.append({"field": "rho", "constraint": "8 m^2 rho^2 (A+B+C) + rho <= 1", "value": lhs,
                    "ok": lhs <= 1.0})
    elif cfg.algorithm == "alpc-svrg":
        acfg = cfg.algorithm_config(p.n)
        m = inner_length(p, acfg)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            tau2 = resolve_tau2(acfg, p.d, cfg.N)
        if bits is None:
            z = 1.0 / (cfg.N * cfg.B)
            diag = ZetaDiagnostic(z, 5 * z / 3 + 1 / (2 * cfg.B))
        else:
            diag = ZetaDiagnostic.compute(p.d, bits, lam, d_lambda, cfg.N, cfg.B)
        out.append({"field": "tau2", "constraint": "5 zeta/3 + 1/(2B) <= 1/2",
                    "value": diag.tau2_implied, "ok": diag.tau2_implied <= 0.5})
        out.append({"field": "tau2", "constraint": "tau2 <= 1/2", "value": tau2, "ok": tau2 <= 0.5})
        if acfg.mode == "strongly_convex":
            cap = 1.5 * p.L / p.sigma if p.sigma > 0 else 0.0
            out.append({"field": "m", "constraint": "m <= 3L/(2 sigma)", "value": m, "ok": m <= cap})
    return out


def _violation(report):
    bad = [r for r in report if not r["ok"]]
    if bad:
        r = bad[0]
        raise ConfigInvalid(r["field"], f"violates {r['constraint']} (value {r['value']:.6g})")


# -- execution -----------------------------------------------------------------


@dataclass
class RunOutput:
    config: RunConfig
    result: object
    manifest: dict
    metrics_csv: str
    timing: dict


def execute(cfg: RunConfig, data: Dataset | None = None) -> RunOutput:
    """Validate, build and run one configuration entirely in memory."""
    cfg.validate()
    data = load_dataset(cfg.dataset) if data is None else data
    p = build_problem(cfg, data)
    pre = constraint_report(cfg, p)
    if cfg.constraint_check:
        _violation(pre)
    acfg = cfg.algorithm_config(p.n)
    runner = {"lpc-svrg": run_lpc_svrg, "svrg": run_lpc_svrg, "alpc-svrg": run_alpc_svrg,
              "sgd": run_sgd, "qsgd": run_sgd}[cfg.algorithm]
    cluster = spawn_cluster(cfg.N, p.d, cfg.scheme, cfg.seed, ledger_mode=cfg.ledger_mode,
                            execution=cfg.execution)
    with cluster, warnings.catch_warnings():
        warnings.simplefilter("ignore")
        result = runner(p, cluster, acfg, record_every=cfg.record_every,
                        histogram_every=cfg.histogram_every)
    post = constraint_report(cfg, p, result.d_lambda_max)
    q = cfg.quantizer()
    last = result.records[-1]
    manifest = {
        "version": __version__,
        "config": cfg.to_dict(),
        "seeds": {"master_seed": cfg.seed,
                  "dataset_seed": cfg.dataset.seed if cfg.dataset.kind == "synthetic" else None},
        "derived": {"bits": None if q is None else q.bits, "levels": None if q is None else q.levels,
                    "L": p.L, "sigma": p.sigma, "n": p.n, "d": p.d, **_jsonable(result.params)},
        "dataset": {"content_hash": data.content_hash(), "provenance": _jsonable(data.provenance)},
        "constraints": {"pre_run": _jsonable(pre), "post_run": _jsonable(post)},
        "result": {
            "final_loss": last.loss, "cum_bits": last.cum_bits, "full_grad_bits": last.full_grad_bits,
            "d_lambda_max": result.d_lambda_max, "zeta": result.zeta.zeta,
            "tau2_implied": result.zeta.tau2_implied, "output_index": result.output_index,
            "x_out_loss": float(p.loss(result.x_out)) if result.x_out is not None else None,
        },
    }
    bits_total = last.cum_bits + last.full_grad_bits
    timing = {
        "compute_s": result.timing.compute_ns / 1e9,
        "encode_decode_s": result.timing.codec_ns / 1e9,
        "transmission_s_modeled": bits_total / cfg.bandwidth_bps,
        "bandwidth_bps": cfg.bandwidth_bps,
        "note": "transmission time is modeled as bits / bandwidth, not measured",
    }
    return RunOutput(cfg, result, manifest, to_csv(result.records), timing)


GRID_FIELDS = ("rho", "eta", "lr", "alpha", "tau1", "tau2")


def grid_search(cfg: RunConfig, field_name, values, data: Dataset | None = None):
    """Run ``cfg`` once per value of ``field_name``; returns ``(runs, best_index)``.

    The best run has the lowest final loss; ties keep the earliest value.
    """
    if field_name not in GRID_FIELDS:
        raise ConfigInvalid("grid", f"can only search over {GRID_FIELDS}, got {field_name!r}")
    if not values:
        raise ConfigInvalid("grid", "needs at least one value")
    data = load_dataset(cfg.dataset) if data is None else data
    runs = []
    for v in values:
        kw = {field_name: v}
        if field_name in ("rho", "eta"):
            kw["eta" if field_name == "rho" else "rho"] = None
        c = dataclasses.replace(cfg, **kw)
        runs.append(execute(c, data))
    best = min(range(len(runs)), key=lambda i: runs[i].result.records[-1].loss)
    return runs, best


def write_run(out: RunOutput, directory) -> Path:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    (d / "metrics.csv").write_text(out.metrics_csv)
    (d / "ledger.csv").write_text(out.result.ledger.to_csv())
    (d / "manifest.json").write_text(json.dumps(out.manifest, indent=2, sort_keys=True) + "\n")
    (d / "timing.json").write_text(json.dumps(out.timing, indent=2) + "\n")
    if out.result.histograms:
        (d / "histograms.csv").write_text(histograms_csv(out.result.histograms))
    return d


def histograms_csv(histograms) -> str:
    lines = ["iteration,bin,lo,hi,count"]
    for it, edges, counts in histograms:
        for j, c in enumerate(counts):
            lines.append(f"{it},{j},{edges[j]!r},{edges[j + 1]!r},{int(c)}")
    return "\n".join(lines) + "\n"


def default_output_dir(cfg: RunConfig) -> Path:
    return Path(cfg.output_dir or f"runs/{cfg.name or cfg.algorithm}-seed{cfg.seed}")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.integer, np.bool_)):
        return obj.item()
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    return obj
