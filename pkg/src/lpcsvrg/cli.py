"""Command-line entry point: ``lpcsvrg <subcommand> ...``.

Exit codes: 0 success, 1 a check failed, 2 invalid configuration, 3 dataset
unavailable.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from pathlib import Path

import numpy as np

from .codec import QuantizerConfig, bits_to_levels, levels_to_bits, round_to_codes
from .comm import CommScheme
from .datasets import write_libsvm
from .errors import ConfigInvalid, DatasetUnavailable, NotReached
from .experiment import RunConfig, default_output_dir, execute, grid_search, read_mapping, write_run
from .metrics import CSV_COLUMNS, bits_to_loss
from .optim import variance_probe
from .problem import make_synthetic
from .simnet import Purpose, Stream

EXIT_OK, EXIT_CHECK, EXIT_CONFIG, EXIT_DATASET = 0, 1, 2, 3


def _fail(code, msg):
    print(f"error: {msg}", file=sys.stderr)
    return code


def _apply_globals(cfg: RunConfig, args) -> RunConfig:
    return cfg.with_overrides(seed=args.seed, execution="threads" if args.threads else None)


# -- run -----------------------------------------------------------------------


def parse_grid(text):
    """``FIELD=v1,v2,...`` -> ``(field, [floats])``."""
    name, sep, vals = text.partition("=")
    try:
        values = [float(v) for v in vals.split(",") if v.strip()]
    except ValueError:
        values = None
    if not sep or not values:
        raise ConfigInvalid("grid", f"expected FIELD=v1,v2,..., got {text!r}")
    return name.strip(), values


def cmd_run(args) -> int:
    try:
        cfg = _apply_globals(RunConfig.load(args.config), args)
        if args.grid:
            name, values = parse_grid(args.grid)
            runs, best = grid_search(cfg, name, values)
            out = runs[best]
        else:
            out = execute(cfg)
    except ConfigInvalid as exc:
        return _fail(EXIT_CONFIG, f"invalid config: {exc}")
    except DatasetUnavailable as exc:
        return _fail(EXIT_DATASET, str(exc))
    cfg = out.config
    target = Path(args.output_dir) if args.output_dir else default_output_dir(cfg)
    write_run(out, target)
    if args.grid:
        summary = []
        for v, r in zip(values, runs):
            write_run(r, target / "grid" / f"{name}={v:g}")
            summary.append({name: v, "final_loss": r.result.records[-1].loss})
            print(f"{name}={v:g}: final loss {r.result.records[-1].loss:.10g}")
        (target / "grid.json").write_text(json.dumps({"field": name, "best": values[best],
                                                      "runs": summary}, indent=2) + "\n")
    res = out.manifest["result"]
    print(f"{cfg.algorithm}: final loss {res['final_loss']:.10g}, "
          f"{res['cum_bits']} exchange bits (+{res['full_grad_bits']} full-gradient), "
          f"d_lambda max {res['d_lambda_max']} -> {target}")
    bad = [r for r in out.manifest["constraints"]["post_run"] if not r["ok"]]
    for r in bad:
        print(f"warning: {r['field']} violates {r['constraint']} (value {r['value']})", file=sys.stderr)
    if bad and cfg.constraint_check:
        return EXIT_CONFIG
    return EXIT_OK


# -- codec-bench ---------------------------------------------------------------


def codec_bench(u, bits, lam, trials, seed=0, delta=None):
    """Monte-Carlo ``E|Q(u) - u|^2`` against ``(d - d_lam) delta^2/4 + d_lam (1-lam)^2 |u|^2``.

    Returns ``(measured, stderr, bound, d_lambda, delta)``.
    """
    u = np.asarray(u, dtype=np.float64)
    K = bits_to_levels(bits)
    if delta is None:
        delta = lam * np.abs(u).max() / K
    rng = Stream.derive(seed, Purpose.PROBE).at(0)
    errs = np.empty(trials)
    d_lam = 0
    chunk = max(1, 2_000_000 // max(u.size, 1))
    for lo in range(0, trials, chunk):
        M = min(chunk, trials - lo)
        codes, clipped = round_to_codes(np.broadcast_to(u, (M, u.size)), np.full(M, delta), bits,
                                        rng.random((M, u.size)))
        errs[lo:lo + M] = ((codes * delta - u) ** 2).sum(axis=-1)
        d_lam = max(d_lam, int(clipped.max()))
    bound = (u.size - d_lam) * delta**2 / 4 + d_lam * (1 - lam) ** 2 * float(u @ u)
    return float(errs.mean()), float(errs.std(ddof=1) / np.sqrt(trials)), float(bound), d_lam, float(delta)


def cmd_codec_bench(args) -> int:
    if args.trials < 1000:
        return _fail(EXIT_CONFIG, "invalid config: trials: must be >= 1000")
    try:
        bits = levels_to_bits(args.levels) if args.levels else args.bits
        for lam in args.lam:
            QuantizerConfig(bits, lam)
    except ValueError as exc:
        return _fail(EXIT_CONFIG, f"invalid config: {exc}")
    if args.vector:
        u = np.array([float(v) for v in args.vector.split(",")])
    else:
        u = np.random.default_rng(args.seed or 0).standard_normal(args.d)
    failed = False
    print("lambda,d,bits,delta,d_lambda,measured,stderr,bound,ratio,ok")
    for lam in args.lam:
        meas, se, bound, d_lam, delta = codec_bench(u, bits, lam, args.trials, args.seed or 0, args.delta)
        ok = meas <= bound + 4 * se
        failed |= not ok
        ratio = meas / bound if bound > 0 else float("nan")
        print(f"{lam},{u.size},{bits},{delta:.6g},{d_lam},{meas:.6g},{se:.3g},{bound:.6g},{ratio:.4f},{ok}")
    return EXIT_CHECK if failed else EXIT_OK


# -- variance-probe ------------------------------------------------------------


def cmd_variance_probe(args) -> int:
    try:
        q = QuantizerConfig(levels_to_bits(args.levels), args.lam) if args.levels else None
        scheme = CommScheme.parse(args.scheme)
    except ValueError as exc:
        return _fail(EXIT_CONFIG, f"invalid config: {exc}")
    seed = args.seed or 0
    _, p = make_synthetic(args.d, args.n, 1.0, seed)
    rng = np.random.default_rng(seed)
    points = [(rng.standard_normal(args.d), rng.standard_normal(args.d)) for _ in range(args.points)]
    rows = variance_probe(p, points, args.N, args.B, q, scheme, draws=args.draws, seed=seed)
    print("point,measured,stderr,bound,ratio,d_lambda,ok")
    failed = False
    for j, r in enumerate(rows):
        ok = r.within(3.0)
        failed |= not ok
        print(f"{j},{r.measured:.6g},{r.stderr:.3g},{r.bound:.6g},{r.ratio:.4f},{r.d_lambda},{ok}")
    return EXIT_CHECK if failed else EXIT_OK


# -- compare -------------------------------------------------------------------


def load_config_set(paths) -> list:
    """Each file is one config, or holds a ``runs`` list merged over its top-level keys."""
    raws = []
    for path in paths:
        raw = read_mapping(path)
        runs = raw.pop("runs", None)
        if runs is None:
            raws.append(raw.get("config", raw))
        else:
            for r in runs:
                merged = {**raw, **r}
                if isinstance(raw.get("dataset"), dict) and isinstance(r.get("dataset"), dict):
                    merged["dataset"] = {**raw["dataset"], **r["dataset"]}
                raws.append(merged)
    return [RunConfig.from_mapping(r) for r in raws]


def cmd_compare(args) -> int:
    try:
        cfgs = [_apply_globals(c, args) for c in load_config_set(args.configs)]
        if len(cfgs) < 2:
            raise ConfigInvalid("runs", "compare needs at least two run configs")
        if len({(c.dataset, c.seed) for c in cfgs}) != 1:
            raise ConfigInvalid("dataset", "compared runs must share dataset and seed")
    except ConfigInvalid as exc:
        return _fail(EXIT_CONFIG, f"invalid config: {exc}")
    out_dir = Path(args.output_dir or "runs/compare")
    out_dir.mkdir(parents=True, exist_ok=True)
    combined = out_dir / "combined.csv"
    ids, results, seen = [], [], set()
    code = EXIT_OK
    with combined.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(("run_id",) + CSV_COLUMNS)
        for i, cfg in enumerate(cfgs):
            run_id = cfg.name or f"{i}-{cfg.algorithm}"
            if run_id in seen:
                run_id = f"{run_id}-{i}"
            seen.add(run_id)
            try:
                out = execute(cfg)
            except ConfigInvalid as exc:
                code = _fail(EXIT_CONFIG, f"{run_id}: invalid config: {exc}")
                break
            except DatasetUnavailable as exc:
                code = _fail(EXIT_DATASET, f"{run_id}: {exc}")
                break
            write_run(out, out_dir / run_id)
            body = list(csv.reader(io.StringIO(out.metrics_csv)))[1:]
            writer.writerows([run_id] + row for row in body)
            fh.flush()
            ids.append(run_id)
            results.append(out.result.records)
    threshold = args.threshold
    if threshold is None and results:
        threshold = max(r[-1].loss for r in results)
    summary = []
    for run_id, recs in zip(ids, results):
        try:
            reached = bits_to_loss(recs, threshold)
        except NotReached:
            reached = None
        summary.append({"run_id": run_id, "final_loss": recs[-1].loss, "cum_bits": recs[-1].cum_bits,
                        "full_grad_bits": recs[-1].full_grad_bits, "threshold": threshold,
                        "bits_to_loss": reached})
    (out_dir / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    for s in summary:
        print(f"{s['run_id']}: final loss {s['final_loss']:.10g}, bits to loss {s['bits_to_loss']}")
    return code


# -- gen-data / histogram ------------------------------------------------------


def cmd_gen_data(args) -> int:
    data, _ = make_synthetic(args.d, args.n, args.noise, args.seed or 0)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_libsvm(data, out)
    print(f"wrote {data.n} x {data.d} to {out} (sha256 {data.content_hash()[:16]})")
    return EXIT_OK


def cmd_histogram(args) -> int:
    try:
        cfg = _apply_globals(RunConfig.load(args.config), args)
        cfg = cfg.with_overrides(histogram_every=args.every)
        out = execute(cfg)
    except ConfigInvalid as exc:
        return _fail(EXIT_CONFIG, f"invalid config: {exc}")
    except DatasetUnavailable as exc:
        return _fail(EXIT_DATASET, str(exc))
    target = Path(args.output_dir) if args.output_dir else default_output_dir(cfg)
    write_run(out, target)
    print(f"{len(out.result.histograms)} gradient histograms -> {target / 'histograms.csv'}")
    return EXIT_OK


# -- parser --------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    def global_flags(default):
        g = argparse.ArgumentParser(add_help=False)
        g.add_argument("--seed", type=int, default=default, help="override the master seed")
        g.add_argument("--threads", action="store_true", default=default or False,
                       help="run each worker on its own thread")
        g.add_argument("--output-dir", default=default, help="where run artifacts are written")
        return g

    # flags may come before or after the subcommand; the subcommand copy must not reset them
    ap = argparse.ArgumentParser(prog="lpcsvrg", description=__doc__.splitlines()[0],
                                 parents=[global_flags(None)])
    glob = global_flags(argparse.SUPPRESS)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", parents=[glob], help="run one configuration")
    p.add_argument("config", help="TOML/JSON config or a run manifest")
    p.add_argument("--grid", metavar="FIELD=V1,V2,...",
                   help="step-size search (rho, eta, lr, alpha, tau1 or tau2); keeps the lowest final loss")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("codec-bench", parents=[glob], help="Monte-Carlo check of the quantizer variance bound")
    prec = p.add_mutually_exclusive_group()
    prec.add_argument("--levels", type=int)
    prec.add_argument("--bits", type=int, default=3)
    p.add_argument("--lam", type=float, nargs="+", default=[1.0])
    p.add_argument("--d", type=int, default=64)
    p.add_argument("--trials", type=int, default=10_000)
    p.add_argument("--vector", help="comma-separated input vector instead of a Gaussian one")
    p.add_argument("--delta", type=float, help="fixed scale factor instead of lam*|u|_inf/levels")
    p.set_defaults(func=cmd_codec_bench)

    p = sub.add_parser("variance-probe", parents=[glob], help="check the gradient-variance bound")
    p.add_argument("--d", type=int, default=16)
    p.add_argument("--n", type=int, default=200)
    p.add_argument("--N", type=int, default=2)
    p.add_argument("--B", type=int, default=4)
    p.add_argument("--levels", type=int, default=3, help="0 bypasses quantization")
    p.add_argument("--lam", type=float, default=1.0)
    p.add_argument("--scheme", default="broadcast")
    p.add_argument("--points", type=int, default=20)
    p.add_argument("--draws", type=int, default=10_000)
    p.set_defaults(func=cmd_variance_probe)

    p = sub.add_parser("compare", parents=[glob], help="paired-seed runs and a combined CSV")
    p.add_argument("configs", nargs="*")
    p.add_argument("--threshold", type=float, default=None,
                   help="loss for bits-to-loss (default: the worst final loss)")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("gen-data", parents=[glob], help="write a synthetic least-squares set as LIBSVM")
    p.add_argument("--d", type=int, default=512)
    p.add_argument("--n", type=int, default=10_000)
    p.add_argument("--noise", type=float, default=1.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("histogram", parents=[glob], help="run a config and export gradient histograms")
    p.add_argument("config")
    p.add_argument("--every", type=int, default=100)
    p.set_defaults(func=cmd_histogram)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
