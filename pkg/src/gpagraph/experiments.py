"""Seeded replicate runs, parameter sweeps and result persistence.

Replicate ``r`` of a config uses ``RngStream(base_seed, r)``. Each replicate
grows one graph to ``n`` and reads off every checkpoint as a prefix, so a
checkpoint tail is exactly what a fresh run of that size would give.
Aggregation uses integer sums and runs after all replicates are back, so
neither the pool size nor completion order changes any output byte.

Config files are TOML::

    n = 100000
    replicates = 500
    base_seed = 1
    checkpoints = [1000, 10000]
    output = "results/ong_d2"

    [model]
    kind = "ONG"            # or "GPA" with a [model.F] table
    [domain]
    kind = "torus"
    dimension = 2
    [density]
    kind = "uniform"
    [engine]
    backend = "auto"
    sampler = "auto"

A ``[sweep]`` table (``param``, ``values``) turns the file into a sweep.
"""
from __future__ import annotations

import dataclasses
import json
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from . import attach_tree as at
from . import stats
from .errors import CoincidentPointError, ConfigError, FitError
from .geometry import AttractivenessSpec, DensitySpec, DomainSpec, RngStream
from .growth import ModelSpec, degrees_from_parents, resolve_sampler, run_growth
from .spatial_index import GRID_MAX_DIM, auto_backend

SWEEP_PARAMS = ("s", "gamma", "d", "n")
RESULT_FILE = "result.json"


# ---------------------------------------------------------------- config

_TABLE_KEYS = {
    "model": {"kind", "F"},
    "domain": {"kind", "dimension"},
    "density": {"kind", "resolution", "weights"},
    "engine": {"backend", "sampler", "tree_depth", "tau", "loose"},
    "sweep": {"param", "values"},
}


@dataclass(frozen=True)
class ExperimentConfig:
    model: ModelSpec
    domain: DomainSpec
    density: DensitySpec = DensitySpec()
    n: int = 10_000
    replicates: int = 10
    base_seed: int = 0
    checkpoints: tuple = ()
    output: str | None = None
    backend: str = "auto"
    sampler: str = "auto"
    tree_depth: int | None = None
    tau: float = at.DEFAULT_TAU
    loose: float = at.DEFAULT_LOOSE
    min_count: float = 10.0

    def __post_init__(self):
        if int(self.replicates) != self.replicates or self.replicates < 1:
            raise ConfigError("replicates must be >= 1")
        if int(self.n) != self.n or self.n < 2:
            raise ConfigError("n must be an integer >= 2")
        if not 0 <= int(self.base_seed) < 2**64:
            raise ConfigError("base_seed must be a 64-bit unsigned integer")
        cps = tuple(int(c) for c in self.checkpoints)
        if any(c < 1 or c > self.n for c in cps) or any(b <= a for a, b in zip(cps, cps[1:])):
            raise ConfigError("checkpoints must be increasing values in [1, n]")
        object.__setattr__(self, "checkpoints", cps)
        self.density.check_domain(self.domain)
        if self.backend not in ("auto", "grid", "linear_scan"):
            raise ConfigError(f"unknown backend {self.backend!r}")
        if self.backend == "grid" and self.domain.dimension > GRID_MAX_DIM:
            raise ConfigError(f"grid backend supports d <= {GRID_MAX_DIM}")
        resolve_sampler(self.model, self.domain, self.sampler)
        if not (self.tau > 0 and 0 < self.loose <= 1):
            raise ConfigError("need tau > 0 and 0 < loose <= 1")
        if self.min_count <= 0:
            raise ConfigError("min_count must be positive")

    @property
    def all_checkpoints(self) -> tuple:
        return tuple(sorted(set(self.checkpoints) | {self.n}))

    def resolved(self) -> "ExperimentConfig":
        """Copy with every 'auto' setting replaced by what will actually run."""
        d = self.domain.dimension
        backend = auto_backend(d) if self.backend == "auto" else self.backend
        sampler = resolve_sampler(self.model, self.domain, self.sampler)
        depth = self.tree_depth
        if sampler == "tree" and depth is None:
            depth = at.default_depth(d)
        return dataclasses.replace(self, backend=backend, sampler=sampler, tree_depth=depth)

    def to_dict(self) -> dict:
        """Full echo of the settings that determine the output."""
        r = self.resolved()
        return {
            "model": r.model.to_dict(), "domain": r.domain.to_dict(), "density": r.density.to_dict(),
            "n": r.n, "replicates": r.replicates, "base_seed": r.base_seed,
            "checkpoints": list(r.all_checkpoints),
            "engine": {"backend": r.backend, "sampler": r.sampler, "tree_depth": r.tree_depth,
                       "tau": float(r.tau), "loose": float(r.loose)},
            "min_count": float(r.min_count),
        }

    @classmethod
    def from_dict(cls, d: dict, output: str | None = None) -> "ExperimentConfig":
        known = {"model", "domain", "density", "n", "replicates", "base_seed", "checkpoints",
                 "output", "engine", "min_count", "sweep", "threads"}
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown config keys: {sorted(extra)}")
        for table, allowed in _TABLE_KEYS.items():
            sub = d.get(table, {})
            if not isinstance(sub, dict):
                raise ConfigError(f"[{table}] must be a table")
            bad = set(sub) - allowed
            if bad:
                raise ConfigError(f"unknown keys in [{table}]: {sorted(bad)}")
        try:
            m = d["model"]
            F = m.get("F")
            model = ModelSpec(m["kind"], AttractivenessSpec(F["kind"], F.get("param", 0.0)) if F else None)
            dom = DomainSpec(d["domain"]["kind"], int(d["domain"]["dimension"]))
            den = d.get("density", {"kind": "uniform"})
            density = DensitySpec(den["kind"], tuple(den.get("resolution", ())),
                                  tuple(np.asarray(den.get("weights", ()), dtype=float).ravel()))
            eng = d.get("engine", {})
            n = int(d["n"])
            cps = d.get("checkpoints", [])
            return cls(
                model=model, domain=dom, density=density, n=n,
                replicates=int(d["replicates"]), base_seed=int(d["base_seed"]),
                checkpoints=tuple(c for c in cps if c != n),
                output=output if output is not None else d.get("output"),
                backend=eng.get("backend", "auto"), sampler=eng.get("sampler", "auto"),
                tree_depth=eng.get("tree_depth"), tau=float(eng.get("tau", at.DEFAULT_TAU)),
                loose=float(eng.get("loose", at.DEFAULT_LOOSE)),
                min_count=float(d.get("min_count", 10.0)),
            )
        except KeyError as exc:
            raise ConfigError(f"missing config key {exc.args[0]!r}") from None
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"bad config value: {exc}") from None


def load_toml(path) -> dict:
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def load_config(path, output: str | None = None) -> ExperimentConfig:
    return ExperimentConfig.from_dict(load_toml(path), output)


@dataclass(frozen=True)
class SweepSpec:
    base: ExperimentConfig
    param: str
    values: tuple = ()

    def __post_init__(self):
        if self.param not in SWEEP_PARAMS:
            raise ConfigError(f"sweep parameter must be one of {SWEEP_PARAMS}, got {self.param!r}")
        object.__setattr__(self, "values", tuple(self.values))
        for v in self.values:
            self.config_for(v)

    def config_for(self, value) -> ExperimentConfig:
        b = self.base
        out = str(Path(b.output) / f"{self.param}={value:g}") if b.output else None
        if self.param == "s":
            return dataclasses.replace(b, model=ModelSpec("GPA", AttractivenessSpec("power_law", value)), output=out)
        if self.param == "gamma":
            return dataclasses.replace(b, model=ModelSpec("GPA", AttractivenessSpec("gamma", value)), output=out)
        if self.param == "d":
            if int(value) != value:
                raise ConfigError(f"dimension must be an integer, got {value}")
            return dataclasses.replace(b, domain=DomainSpec(b.domain.kind, int(value)), output=out)
        if int(value) != value:
            raise ConfigError(f"n must be an integer, got {value}")
        n = int(value)
        return dataclasses.replace(b, n=n, checkpoints=tuple(c for c in b.checkpoints if c < n), output=out)


def load_sweep(path, output: str | None = None) -> SweepSpec:
    raw = load_toml(path)
    sw = raw.get("sweep")
    if not sw:
        raise ConfigError(f"{path}: no [sweep] table")
    base = ExperimentConfig.from_dict(raw, output)
    return SweepSpec(base, sw.get("param", ""), tuple(sw.get("values", ())))


# ---------------------------------------------------------------- replicate worker

def _replicate(cfg: ExperimentConfig, stream_id: int) -> dict:
    """Grow one replicate and reduce it to per-checkpoint summaries."""
    rng = RngStream(cfg.base_seed, stream_id)
    t0 = time.perf_counter()
    try:
        st = run_growth(cfg.model, cfg.n, cfg.density, cfg.domain, rng, backend=cfg.backend,
                        sampler=cfg.sampler, tree_depth=cfg.tree_depth, tau=cfg.tau, loose=cfg.loose)
    except CoincidentPointError as exc:
        return {"stream_id": stream_id, "ok": False, "step": exc.step, "message": str(exc),
                "seconds": time.perf_counter() - t0}
    mism = np.cumsum(st.mismatch.astype(np.int64))
    per = {}
    violations = []
    for c in cfg.all_checkpoints:
        deg = degrees_from_parents(st.parent[: c + 1])
        tail = stats.DegreeTail.from_degrees(deg, c)
        try:
            tail.check_invariants()
        except AssertionError as exc:
            violations.append(f"stream {stream_id}, n={c}: {exc}")
        per[c] = (tail, int(mism[c]), int(deg.max()))
    return {"stream_id": stream_id, "ok": True, "per": per, "violations": violations,
            "seconds": time.perf_counter() - t0}


# ---------------------------------------------------------------- results

@dataclass
class CheckpointResult:
    n: int
    tail: stats.TailEstimate | None
    mismatch_mean: float
    mismatch_se: float
    mismatch_per_replicate: list
    max_degree_per_replicate: list
    fits: dict

    @property
    def max_degree(self) -> int:
        return max(self.max_degree_per_replicate) if self.max_degree_per_replicate else 0

    def to_dict(self, trivially_zero: bool) -> dict:
        nan2none = lambda x: None if x is None or not math.isfinite(x) else float(x)
        return {
            "n": self.n,
            "tail": self.tail.to_dict() if self.tail is not None else None,
            "mismatch": {"mean": nan2none(self.mismatch_mean), "stderr": nan2none(self.mismatch_se),
                         "per_replicate": [float(x) for x in self.mismatch_per_replicate],
                         "trivially_zero": trivially_zero},
            "max_degree": {"max": self.max_degree, "per_replicate": list(self.max_degree_per_replicate),
                           "max_over_log_n": self.max_degree / math.log(self.n) if self.n > 1 else None},
            "fits": self.fits,
        }


@dataclass
class RunResult:
    config: ExperimentConfig
    checkpoints: list = field(default_factory=list)
    replicate_seeds: list = field(default_factory=list)
    failures: list = field(default_factory=list)
    invariant_violations: list = field(default_factory=list)
    wall_clock: float = 0.0
    replicate_seconds: list = field(default_factory=list)
    error: str | None = None

    def at(self, n: int) -> CheckpointResult:
        for c in self.checkpoints:
            if c.n == n:
                return c
        raise KeyError(f"no checkpoint n={n}")

    @property
    def final(self) -> CheckpointResult:
        return self.checkpoints[-1]

    def to_dict(self) -> dict:
        """Everything that is a pure function of the config (no timings)."""
        tz = not self.config.model.is_gpa
        return {
            "config": self.config.to_dict(),
            "checkpoints": [c.to_dict(tz) for c in self.checkpoints],
            "replicate_seeds": self.replicate_seeds,
            "failures": self.failures,
            "invariant_violations": self.invariant_violations,
            "error": self.error,
        }

    def json_text(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1, allow_nan=False) + "\n"

    def write(self, directory) -> list[Path]:
        """Persist result.json plus CSV exports; returns the written paths."""
        out = Path(directory)
        out.mkdir(parents=True, exist_ok=True)
        files = {RESULT_FILE: self.json_text()}
        for c in self.checkpoints:
            if c.tail is None:
                continue
            files[f"tail_n{c.n}.csv"] = c.tail.csv_text("tail")
            files[f"pmf_n{c.n}.csv"] = c.tail.csv_text("pmf")
            for kind, fit in c.fits.items():
                if "error" not in fit:
                    files[f"fit_{kind}_n{c.n}.csv"] = stats.RateFit(**fit).csv_text()
        written = []
        for name, text in files.items():
            p = out / name
            with open(p, "w", newline="") as fh:
                fh.write(text)
            written.append(p)
        return written


def _fits(est: stats.TailEstimate, min_count: float) -> dict:
    out = {}
    for kind, fn in (("exponential_rate", stats.fit_exponential_rate),
                     ("stretched_exponential", stats.fit_stretched_exponential),
                     ("power_law_tail", stats.fit_power_law_tail)):
        try:
            out[kind] = fn(est, min_count).to_dict()
        except FitError as exc:
            out[kind] = {"error": str(exc)}
    return out


def _mean_se(xs):
    a = np.asarray(xs, dtype=np.float64)
    if a.size == 0:
        return math.nan, math.nan
    if a.size == 1:
        return float(a[0]), math.nan
    # sort first: the float sum then ignores completion order
    a = np.sort(a)
    return float(a.mean()), float(a.std(ddof=1) / math.sqrt(a.size))


def _pool_map(fn, cfg, ids, threads):
    if threads <= 1 or len(ids) <= 1:
        return [fn(cfg, i) for i in ids]
    with ProcessPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(fn, [cfg] * len(ids), ids))


def run_experiment(config: ExperimentConfig, threads: int = 1, write: bool = True) -> RunResult:
    """Run all replicates of ``config``, aggregate, and persist to ``config.output``."""
    cfg = config.resolved()
    t0 = time.perf_counter()
    reps = _pool_map(_replicate, cfg, list(range(cfg.replicates)), threads)
    reps.sort(key=lambda r: r["stream_id"])
    good = [r for r in reps if r["ok"]]
    res = RunResult(config=cfg, replicate_seeds=[[cfg.base_seed, r["stream_id"]] for r in reps])
    res.failures = [{"seed": cfg.base_seed, "stream_id": r["stream_id"], "step": r["step"],
                     "error_class": CoincidentPointError.error_class, "message": r["message"]}
                    for r in reps if not r["ok"]]
    res.replicate_seconds = [r["seconds"] for r in reps]
    for r in good:
        res.invariant_violations.extend(r["violations"])
    for c in cfg.all_checkpoints:
        tails = [r["per"][c][0] for r in good]
        est = stats.aggregate_tail(tails, min_replicates=1) if tails else None
        mm = [r["per"][c][1] / c for r in good]
        md = [r["per"][c][2] for r in good]
        m_mean, m_se = _mean_se(mm)
        fits = _fits(est, cfg.min_count) if est is not None else {}
        res.checkpoints.append(CheckpointResult(c, est, m_mean, m_se, mm, md, fits))
    res.wall_clock = time.perf_counter() - t0
    if write and cfg.output:
        res.write(cfg.output)
    return res


def run_sweep(sweep: SweepSpec, threads: int = 1, write: bool = True) -> list[RunResult]:
    """One RunResult per swept value; a failing value yields a result with
    ``error`` set and does not stop the others."""
    results = []
    for v in sweep.values:
        try:
            cfg = sweep.config_for(v)
            results.append(run_experiment(cfg, threads=threads, write=write))
        except Exception as exc:  # isolate per-value failures
            cls = getattr(exc, "error_class", type(exc).__name__)
            results.append(RunResult(config=sweep.base, error=f"{cls}: {exc}"))
    if write and sweep.base.output and results:
        summary = []
        for v, r in zip(sweep.values, results):
            row = {"param": sweep.param, "value": v, "error": r.error}
            if r.error is None:
                row["output"] = r.config.output
                row["mismatch_final"] = r.final.mismatch_mean if r.config.model.is_gpa else 0.0
                row["mismatch_trajectory"] = [[c.n, c.mismatch_mean] for c in r.checkpoints]
            summary.append(row)
        Path(sweep.base.output).mkdir(parents=True, exist_ok=True)
        with open(Path(sweep.base.output) / "sweep.json", "w") as fh:
            fh.write(json.dumps(summary, sort_keys=True, indent=1) + "\n")
    return results


def load_result(path) -> dict:
    p = Path(path)
    if p.is_dir():
        p = p / RESULT_FILE
    with open(p) as fh:
        return json.load(fh)


# ---------------------------------------------------------------- ONG degree-table profiles

TABLE1_ROWS = {
    1: (0.4728, 0.2675, 0.1394, 0.0670, 0.0304, 0.0132, 0.0056, 0.0024, 0.0001, 0.0000),
    2: (0.4777, 0.2636, 0.1369, 0.0668, 0.0308, 0.0137, 0.0060, 0.0026, 0.0001, 0.0000),
    100: (0.4999, 0.2501, 0.1250, 0.0625, 0.0312, 0.0156, 0.0078, 0.0039, 0.0002, 0.0001),
}

PROFILES = ("desk", "full")


def table1_config(d: int, profile: str = "desk", base_seed: int = 1, output: str | None = None
                  ) -> ExperimentConfig:
    """ONG on the d-torus with uniform sites, at desk or full scale.

    full: 500 replicates of n = 1e5. desk: 100 replicates of n = 2e4, or
    n = 1e4 with the linear scan when d > 3.
    """
    if profile not in PROFILES:
        raise ConfigError(f"profile must be one of {PROFILES}")
    if profile == "full":
        n, reps = 100_000, 500
    elif d > GRID_MAX_DIM:
        n, reps = 10_000, 100
    else:
        n, reps = 20_000, 100
    return ExperimentConfig(ModelSpec("ONG"), DomainSpec("torus", d), DensitySpec(), n=n, replicates=reps,
                            base_seed=base_seed, output=output)


def default_threads() -> int:
    return max(1, len(os.sched_getaffinity(0)) if hasattr(os, "sched_getaffinity") else os.cpu_count() or 1)
