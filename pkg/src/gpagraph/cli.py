"""Command-line entry point: ``gpagraph <command> [flags]``.

Commands: grow, rho, run, table1, sweep, fit, selftest. Output directories
default to ``$GPAGRAPH_OUTPUT_DIR`` (or ``results``). Failures print one
JSON line ``{"error_class": ..., "message": ...}`` on stderr and exit with
the class's code; flag errors exit 2.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import experiments as ex
from . import stats
from .errors import ConfigError, GpaError
from .geometry import AttractivenessSpec, DensitySpec, DomainSpec, RngStream
from .growth import ModelSpec, graph_csv_text, run_growth

OUTPUT_ENV = "GPAGRAPH_OUTPUT_DIR"


def _out_root() -> Path:
    return Path(os.environ.get(OUTPUT_ENV, "results"))


def _values(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _attr(text: str) -> AttractivenessSpec:
    try:
        return AttractivenessSpec.parse(text)
    except ConfigError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _positive_int(text: str) -> int:
    try:
        v = int(float(text))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if v < 1 or v != float(text):
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text!r}")
    return v


def _add_model_flags(p, n_required=True):
    p.add_argument("--model", choices=["ong", "gpa"], default="ong", help="growth rule (config: model.kind)")
    p.add_argument("--f", type=_attr, default=None, metavar="SPEC",
                   help="attractiveness for gpa: constant, power:S or gamma:G (config: model.F)")
    p.add_argument("--d", type=_positive_int, default=2, help="dimension (config: domain.dimension)")
    p.add_argument("--domain", choices=["torus", "unit_cube"], default="torus", help="(config: domain.kind)")
    p.add_argument("--n", type=_positive_int, required=n_required, default=None,
                   help="number of arrivals, graph has n+1 vertices (config: n)")
    p.add_argument("--backend", choices=["auto", "grid", "linear_scan"], default="auto",
                   help="nearest-neighbour index (config: engine.backend)")
    p.add_argument("--sampler", choices=["auto", "scan", "tree"], default="auto",
                   help="GPA attachment sampler (config: engine.sampler)")


def _add_run_flags(p):
    p.add_argument("--reps", type=_positive_int, default=10, help="replicates (config: replicates)")
    p.add_argument("--seed", type=int, default=0, help="base seed (config: base_seed)")
    p.add_argument("--checkpoints", type=_values, default=[], help="comma-separated n values (config: checkpoints)")
    p.add_argument("--out", default=None, help=f"output directory (config: output; default under ${OUTPUT_ENV})")
    p.add_argument("--threads", type=_positive_int, default=1, help="replicate pool size; never changes results")


def _model(args) -> ModelSpec:
    if args.model == "gpa":
        if args.f is None:
            raise ConfigError("--model gpa needs --f")
        return ModelSpec("GPA", args.f)
    return ModelSpec("ONG")


def _config_from_flags(args, default_name) -> ex.ExperimentConfig:
    if args.n is None:
        raise ConfigError("--n is required unless --config is given")
    out = args.out or str(_out_root() / default_name)
    return ex.ExperimentConfig(
        model=_model(args), domain=DomainSpec(args.domain, args.d), density=DensitySpec(),
        n=args.n, replicates=args.reps, base_seed=args.seed,
        checkpoints=tuple(int(c) for c in args.checkpoints if int(c) < args.n), output=out,
        backend=args.backend, sampler=args.sampler)


def _fmt(x, w=8, p=4):
    return f"{x:{w}.{p}f}" if x is not None and np.isfinite(x) else " " * (w - 3) + "nan"


def _print_tail(res: ex.RunResult, kmax=10, file=None):
    file = file or sys.stdout
    c = res.final
    t = c.tail
    print(f"# n={c.n} replicates={t.replicates} model={res.config.model.label()} "
          f"d={res.config.domain.dimension}", file=file)
    print(f"{'k':>3} {'rho_hat':>9} {'se':>9} {'pmf':>9} {'se':>9}", file=file)
    K = min(kmax, len(t.tail_mean))
    for k in range(K):
        print(f"{k + 1:>3} {_fmt(t.tail_mean[k], 9)} {_fmt(t.tail_se[k], 9, 5)} "
              f"{_fmt(t.pmf_mean[k], 9)} {_fmt(t.pmf_se[k], 9, 5)}", file=file)
    fit = c.fits.get("exponential_rate", {})
    if "rate" in fit:
        print(f"# mu_hat={fit['rate']:.4f} window k={fit['k_min']}..{fit['k_max']} r2={fit['r2']:.4f}", file=file)
    if res.config.model.is_gpa:
        print(f"# mismatch m_n={c.mismatch_mean:.4f} (se {c.mismatch_se:.4f})", file=file)


# ---------------------------------------------------------------- commands

def cmd_grow(args) -> int:
    model = _model(args)
    st = run_growth(model, args.n, DensitySpec(), DomainSpec(args.domain, args.d),
                    RngStream(args.seed, args.stream), backend=args.backend, sampler=args.sampler)
    text = graph_csv_text(st)
    if args.out in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        with open(args.out, "w", newline="") as fh:
            fh.write(text)
    return 0


def _experiment(args, default_name) -> ex.RunResult:
    if args.config:
        cfg = ex.load_config(args.config, output=args.out)
        if cfg.output is None:
            cfg = dataclasses.replace(cfg, output=str(_out_root() / default_name))
    else:
        cfg = _config_from_flags(args, default_name)
    res = ex.run_experiment(cfg, threads=args.threads)
    print(f"wrote {cfg.output}/{ex.RESULT_FILE} ({res.wall_clock:.1f}s)", file=sys.stderr)
    for f in res.failures:
        print(json.dumps(f, sort_keys=True), file=sys.stderr)
    return res


def cmd_rho(args) -> int:
    if args.model != "ong" and not args.config:
        raise ConfigError("rho estimates the ONG tail; use `run` for GPA")
    res = _experiment(args, f"rho_d{args.d}")
    _print_tail(res)
    return 0


def cmd_run(args) -> int:
    res = _experiment(args, "run")
    _print_tail(res)
    return 0


def cmd_table1(args) -> int:
    ds = [int(v) for v in args.d]
    rows = []
    for d in ds:
        out = str(Path(args.out or _out_root()) / f"table1_{args.profile}_d{d}")
        cfg = ex.table1_config(d, args.profile, base_seed=args.seed, output=out)
        res = ex.run_experiment(cfg, threads=args.threads)
        print(f"d={d}: {cfg.replicates} x n={cfg.n} in {res.wall_clock:.1f}s -> {out}", file=sys.stderr)
        rows.append((d, res.final.tail))
    K = 10
    head = f"{'d':>4} " + " ".join(f"{'k=' + str(k):>7}" for k in range(1, K + 1))
    print(head)
    for d, t in rows:
        pm = np.pad(t.pmf_mean, (0, max(0, K - len(t.pmf_mean))))[:K]
        se = np.pad(t.pmf_se, (0, max(0, K - len(t.pmf_se))))[:K]
        print(f"{d:>4} " + " ".join(f"{v:7.4f}" for v in pm))
        print(f"{'se':>4} " + " ".join(f"{v:7.4f}" for v in se))
        if d in ex.TABLE1_ROWS:
            print(f"{'ref':>4} " + " ".join(f"{v:7.4f}" for v in ex.TABLE1_ROWS[d]))
    return 0


def cmd_sweep(args) -> int:
    if args.config:
        sw = ex.load_sweep(args.config, output=args.out)
        if args.param:
            sw = ex.SweepSpec(sw.base, args.param, tuple(args.values or sw.values))
    else:
        if not args.param or args.values is None:
            raise ConfigError("sweep needs --param and --values (or --config)")
        if args.param in ("s", "gamma"):
            args.model = "gpa"
            args.f = args.f or AttractivenessSpec("power_law" if args.param == "s" else "gamma",
                                                  2.0 if args.param == "gamma" else 1.0)
        base = _config_from_flags(args, f"sweep_{args.param}")
        vals = args.values
        if args.param in ("d", "n"):
            vals = [int(v) for v in vals]
        sw = ex.SweepSpec(base, args.param, tuple(vals))
    results = ex.run_sweep(sw, threads=args.threads)
    print(f"{'value':>8} {'m_n':>8} {'maxdeg':>7}  output")
    bad = 0
    for v, r in zip(sw.values, results):
        if r.error:
            bad += 1
            print(f"{v:>8g} failed: {r.error}")
        else:
            print(f"{v:>8g} {_fmt(r.final.mismatch_mean)} {r.final.max_degree:>7d}  {r.config.output}")
    return 0 if bad == 0 else 1


FIT_FUNCS = {
    "mu": stats.fit_exponential_rate,
    "stretched": stats.fit_stretched_exponential,
    "powerlaw": stats.fit_power_law_tail,
}


def cmd_fit(args) -> int:
    doc = ex.load_result(args.input)
    cps = doc["checkpoints"]
    cp = cps[-1] if args.checkpoint is None else next((c for c in cps if c["n"] == args.checkpoint), None)
    if cp is None:
        raise ConfigError(f"no checkpoint n={args.checkpoint} in {args.input}")
    est = stats.TailEstimate.from_dict(cp["tail"])
    k_range = (args.kmin, args.kmax) if args.kmin is not None or args.kmax is not None else None
    if k_range is not None:
        k_range = (args.kmin or 1, args.kmax or len(est.tail_mean))
    fit = FIT_FUNCS[args.kind](est, args.min_count, k_range)
    print(json.dumps(fit.to_dict(), sort_keys=True))
    return 0


def cmd_selftest(args) -> int:
    from .selftest import run_selftest
    return run_selftest(verbose=not args.quiet)


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gpagraph", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("grow", help="grow one graph and write its CSV")
    _add_model_flags(g)
    g.add_argument("--seed", type=int, default=0, help="seed (config: base_seed)")
    g.add_argument("--stream", type=int, default=0, help="stream id, i.e. replicate index")
    g.add_argument("--out", default=None, help="CSV path, '-' or omitted for stdout")
    g.set_defaults(func=cmd_grow)

    for name, fn, helptext in (("rho", cmd_rho, "estimate ONG degree-tail proportions over replicates"),
                               ("run", cmd_run, "run any experiment config (ONG or GPA)")):
        r = sub.add_parser(name, help=helptext)
        _add_model_flags(r, n_required=False)
        _add_run_flags(r)
        r.add_argument("--config", default=None, help="TOML experiment config; flags above are then ignored")
        r.set_defaults(func=fn)

    t = sub.add_parser("table1", help="ONG degree pmf for k=1..10 at desk or full scale")
    t.add_argument("--d", action="append", required=True, help="dimension; repeat for several rows")
    t.add_argument("--profile", choices=ex.PROFILES, default="desk",
                   help="desk: 100 reps, n=2e4 (n=1e4 with linear scan for d>3); full: 500 reps, n=1e5")
    t.add_argument("--seed", type=int, default=1, help="base seed (config: base_seed)")
    t.add_argument("--out", default=None, help="parent directory; each d gets its own subdirectory (config: output)")
    t.add_argument("--threads", type=_positive_int, default=1, help="replicate pool size")
    t.set_defaults(func=cmd_table1)

    s = sub.add_parser("sweep", help="one experiment per value of s, gamma, d or n")
    _add_model_flags(s, n_required=False)
    _add_run_flags(s)
    s.add_argument("--param", choices=ex.SWEEP_PARAMS, default=None, help="swept field (config: sweep.param)")
    s.add_argument("--values", type=_values, default=None, help="comma-separated values (config: sweep.values)")
    s.add_argument("--config", default=None, help="TOML config with a [sweep] table")
    s.set_defaults(func=cmd_sweep)

    f = sub.add_parser("fit", help="fit a tail rate to a stored result")
    f.add_argument("--kind", choices=sorted(FIT_FUNCS), required=True,
                   help="mu: exponential rate; stretched: stretched-exponential exponent; powerlaw: tail exponent")
    f.add_argument("--input", required=True, help="result.json or its directory")
    f.add_argument("--checkpoint", type=int, default=None, help="n of the checkpoint to fit (default: final)")
    f.add_argument("--min-count", type=float, default=10.0,
                   help="window keeps k with mean N(k) >= this (config: min_count)")
    f.add_argument("--kmin", type=int, default=None, help="explicit window start (overrides --min-count)")
    f.add_argument("--kmax", type=int, default=None, help="explicit window end (overrides --min-count)")
    f.set_defaults(func=cmd_fit)

    c = sub.add_parser("selftest", help="run the structural invariant suite")
    c.add_argument("--quiet", action="store_true")
    c.set_defaults(func=cmd_selftest)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return int(args.func(args))
    except GpaError as exc:
        print(json.dumps({"error_class": exc.error_class, "message": str(exc)}), file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(json.dumps({"error_class": "io_error", "message": str(exc)}), file=sys.stderr)
        return 5


if __name__ == "__main__":
    sys.exit(main())
