"""Degree-sequence statistics, replicate aggregation and tail-rate fits.

Conventions: ``N_n(k)`` is the number of vertices of degree >= k after n
arrivals (n + 1 vertices); tail proportions are ``N_n(k) / (n + 1)`` and
pmf entries the proportion with degree exactly ``k``. Replicate means are
formed from exact integer sums, so aggregation does not depend on the
order in which replicates finished.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import FitError
from .growth import GraphState


@dataclass
class DegreeTail:
    n: int
    counts: np.ndarray      # counts[k-1] = N_n(k), k = 1..max degree
    exact: np.ndarray       # exact[k-1] = #{deg == k}

    @classmethod
    def from_degrees(cls, degree, n: int | None = None) -> "DegreeTail":
        degree = np.asarray(degree, dtype=np.int64)
        n = len(degree) - 1 if n is None else n
        hist = np.bincount(degree)[1:] if degree.size else np.zeros(0, dtype=np.int64)
        counts = np.cumsum(hist[::-1])[::-1].astype(np.int64)
        return cls(n, counts, hist.astype(np.int64))

    @property
    def kmax(self) -> int:
        return len(self.counts)

    @property
    def pmf(self) -> np.ndarray:
        return self.exact / (self.n + 1)

    @property
    def tail(self) -> np.ndarray:
        return self.counts / (self.n + 1)

    def N(self, k: int) -> int:
        return int(self.counts[k - 1]) if 1 <= k <= self.kmax else 0

    def check_invariants(self):
        n, c = self.n, self.counts
        assert self.N(1) == n + 1, f"N(1) = {self.N(1)} != n + 1 = {n + 1}"
        assert np.all(np.diff(c) <= 0), "N(k) not nonincreasing"
        assert int(c.sum()) == 2 * n, f"sum_k N(k) = {int(c.sum())} != 2n = {2 * n}"
        k = np.arange(1, self.kmax + 1)
        assert np.all(c * k <= 2 * n), "Markov bound N(k) <= 2n/k violated"


def degree_tail(state: GraphState) -> DegreeTail:
    if state.num_vertices < 2:
        raise ValueError("degree_tail needs at least two vertices")
    return DegreeTail.from_degrees(state.degree, state.n)


@dataclass
class TailEstimate:
    """Replicate means and standard errors of tail proportions and pmf."""

    n: int
    replicates: int
    tail_mean: np.ndarray
    tail_se: np.ndarray
    pmf_mean: np.ndarray
    pmf_se: np.ndarray
    mean_count: np.ndarray = None

    def __post_init__(self):
        if self.mean_count is None:
            self.mean_count = self.tail_mean * (self.n + 1)

    @property
    def k(self) -> np.ndarray:
        return np.arange(1, len(self.tail_mean) + 1)

    @classmethod
    def from_tail(cls, tail, n: int = 10**9, replicates: int = 1) -> "TailEstimate":
        """Wrap a given tail sequence (k = 1, 2, ...) with zero standard errors."""
        tail = np.asarray(tail, dtype=np.float64)
        pmf = tail - np.append(tail[1:], 0.0)
        z = np.zeros_like(tail)
        return cls(n, replicates, tail, z, pmf, z.copy())

    def csv_text(self, which: str = "tail") -> str:
        mean, se = (self.tail_mean, self.tail_se) if which == "tail" else (self.pmf_mean, self.pmf_se)
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["k", "mean", "stderr"])
        for k, m, s in zip(self.k, mean, se):
            w.writerow([int(k), repr(float(m)), repr(float(s))])
        return buf.getvalue()

    def to_dict(self):
        return {
            "n": self.n, "replicates": self.replicates,
            "tail_mean": _floats(self.tail_mean), "tail_se": _floats(self.tail_se),
            "pmf_mean": _floats(self.pmf_mean), "pmf_se": _floats(self.pmf_se),
        }

    @classmethod
    def from_dict(cls, d):
        arr = lambda key: np.array([np.nan if v is None else v for v in d[key]], dtype=np.float64)
        return cls(d["n"], d["replicates"], arr("tail_mean"), arr("tail_se"), arr("pmf_mean"), arr("pmf_se"))


def _floats(a):
    return [None if not math.isfinite(x) else float(x) for x in np.asarray(a, dtype=np.float64)]


def _mean_se(rows: np.ndarray, scale: float):
    """Mean and standard error of integer rows (replicates x k), divided by
    ``scale``, from exact integer moments."""
    R = rows.shape[0]
    s1 = rows.sum(axis=0, dtype=np.int64)
    s2 = (rows.astype(object) ** 2).sum(axis=0)
    mean = s1 / (R * scale)
    if R < 2:
        return mean, np.full(mean.shape, np.nan)
    num = np.array([R * int(b) - int(a) * int(a) for a, b in zip(s1, s2)], dtype=np.float64)
    var = num / (R * (R - 1))
    se = np.sqrt(np.maximum(var, 0.0) / R) / scale
    return mean, se


def aggregate_tail(tails: list[DegreeTail], min_replicates: int = 2) -> TailEstimate:
    if len(tails) < min_replicates:
        raise ValueError(f"aggregate_tail needs at least {min_replicates} replicates")
    ns = {t.n for t in tails}
    if len(ns) != 1:
        raise ValueError(f"replicates have different n: {sorted(ns)}")
    n = ns.pop()
    K = max(t.kmax for t in tails)
    counts = np.zeros((len(tails), K), dtype=np.int64)
    exact = np.zeros((len(tails), K), dtype=np.int64)
    for i, t in enumerate(tails):
        counts[i, : t.kmax] = t.counts
        exact[i, : t.kmax] = t.exact
    tm, tse = _mean_se(counts, n + 1)
    pm, pse = _mean_se(exact, n + 1)
    mc = counts.sum(axis=0) / len(tails)
    return TailEstimate(n, len(tails), tm, tse, pm, pse, mc)


# ---------------------------------------------------------------- fits

FIT_KINDS = ("exponential_rate", "stretched_exponential", "power_law_tail")


@dataclass
class RateFit:
    kind: str
    rate: float
    intercept: float
    k_min: int
    k_max: int
    r2: float
    points: int
    min_count: float = 10.0

    def to_dict(self):
        return {k: (float(v) if isinstance(v, (float, np.floating)) else v) for k, v in self.__dict__.items()}

    def csv_text(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        keys = list(self.__dict__)
        w.writerow(keys)
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in self.__dict__.values()])
        return buf.getvalue()


def _lsq(x, y):
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    xm, ym = x.mean(), y.mean()
    sxx = np.sum((x - xm) ** 2)
    slope = np.sum((x - xm) * (y - ym)) / sxx
    icpt = ym - slope * xm
    resid = y - (icpt + slope * x)
    syy = np.sum((y - ym) ** 2)
    r2 = 1.0 - np.sum(resid**2) / syy if syy > 0 else 1.0
    return float(slope), float(icpt), float(r2)


def _window(est: TailEstimate, min_count, k_range, need_below_one):
    k = est.k
    q = est.tail_mean
    ok = (q > 0) & np.isfinite(q)
    if need_below_one:
        ok &= q < 1
    if k_range is not None:
        lo, hi = k_range
        ok &= (k >= lo) & (k <= hi)
    else:
        ok &= est.mean_count >= min_count
    return k[ok], q[ok]


def fit_exponential_rate(est: TailEstimate, min_count: float = 10.0, k_range=None) -> RateFit:
    """Least-squares slope of ``-log rho_k`` against ``k``.

    The window is every k whose replicate-mean count ``N_n(k)`` is at least
    ``min_count`` (or ``k_range`` if given).
    """
    k, q = _window(est, min_count, k_range, need_below_one=False)
    if k.size < 3:
        raise FitError(f"exponential fit needs >= 3 usable k, got {k.size}")
    slope, icpt, r2 = _lsq(k, -np.log(q))
    return RateFit("exponential_rate", slope, icpt, int(k[0]), int(k[-1]), r2, int(k.size), min_count)


def fit_stretched_exponential(est: TailEstimate, min_count: float = 10.0, k_range=None) -> RateFit:
    """Least-squares slope of ``log(-log q_k)`` against ``log k`` over k with
    ``0 < q_k < 1``; q_k = C exp(-k^g) gives slope g when C = 1."""
    k, q = _window(est, min_count, k_range, need_below_one=True)
    if k.size < 4:
        raise FitError(f"stretched-exponential fit needs >= 4 usable k, got {k.size}")
    slope, icpt, r2 = _lsq(np.log(k), np.log(-np.log(q)))
    return RateFit("stretched_exponential", slope, icpt, int(k[0]), int(k[-1]), r2, int(k.size), min_count)


def fit_power_law_tail(est: TailEstimate, min_count: float = 10.0, k_range=None) -> RateFit:
    """Exponent a in q_k ~ C k^-a: minus the log-log slope of the tail."""
    k, q = _window(est, min_count, k_range, need_below_one=False)
    if k.size < 3:
        raise FitError(f"power-law tail fit needs >= 3 usable k, got {k.size}")
    slope, icpt, r2 = _lsq(np.log(k), np.log(q))
    return RateFit("power_law_tail", -slope, icpt, int(k[0]), int(k[-1]), r2, int(k.size), min_count)


def exponential_rate_bracket(d: int) -> tuple[float, float]:
    """Lower and upper limits for the ONG exponential tail rate in dimension d."""
    return 0.5 * math.log1p(1.0 / (4.0**d - 1.0)), 1.0


# ---------------------------------------------------------------- mismatch, max degree

@dataclass
class MismatchStats:
    n: int
    fraction: float
    trivially_zero: bool = False
    trajectory: list = field(default_factory=list)   # [(n_c, m_{n_c}), ...]

    def to_dict(self):
        return {"n": self.n, "fraction": self.fraction, "trivially_zero": self.trivially_zero,
                "trajectory": [[int(a), float(b)] for a, b in self.trajectory]}


def mismatch_counts(state: GraphState) -> np.ndarray:
    """Cumulative count of arrivals 1..i not joined to their nearest predecessor."""
    return np.cumsum(state.mismatch.astype(np.int64))


def mismatch_fraction(state: GraphState, checkpoints=()) -> MismatchStats:
    if not state.model.is_gpa:
        return MismatchStats(state.n, 0.0, True, [(c, 0.0) for c in checkpoints])
    cum = mismatch_counts(state)
    traj = [(int(c), float(cum[c] / c)) for c in checkpoints if 1 <= c <= state.n]
    return MismatchStats(state.n, float(cum[state.n] / state.n), False, traj)


@dataclass
class MaxDegreeRecord:
    n: int
    max_degree: int

    def ong_ratio(self) -> float:
        """max degree / log n."""
        return self.max_degree / math.log(self.n) if self.n > 1 else math.inf

    def gpa_ratio(self, nu: float) -> float:
        """log(max degree) / (log n)^nu."""
        return math.log(self.max_degree) / math.log(self.n) ** nu if self.n > 1 else math.inf


def max_degree_growth(states) -> list[MaxDegreeRecord]:
    recs = [MaxDegreeRecord(int(s.n), int(s.degree.max())) for s in states]
    return sorted(recs, key=lambda r: r.n)


def total_variation(p, q) -> float:
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    K = max(p.size, q.size)
    p = np.pad(p, (0, K - p.size))
    q = np.pad(q, (0, K - q.size))
    return 0.5 * float(np.abs(p - q).sum())
