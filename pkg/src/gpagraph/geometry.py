"""Domains, densities, seeded random streams, distances and attractiveness.

Points live in [0, 1]^d. The ``unit_cube`` domain uses the plain Euclidean
metric, the ``torus`` domain the minimum-image metric on the flat torus.
Attractiveness is only ever handled as ``log F(r)``; ``F_gamma(r)`` is far
outside double range for small ``r``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numba as nb
import numpy as np

from .errors import CoincidentPointError, ConfigError

DOMAIN_KINDS = ("unit_cube", "torus")
DENSITY_KINDS = ("uniform", "grid_piecewise_constant")

# integer codes used inside compiled kernels
F_CONSTANT, F_POWER, F_GAMMA = 0, 1, 2
_F_CODES = {"constant": F_CONSTANT, "power_law": F_POWER, "gamma": F_GAMMA}


@dataclass(frozen=True)
class DomainSpec:
    kind: str = "torus"
    dimension: int = 2

    def __post_init__(self):
        if self.kind not in DOMAIN_KINDS:
            raise ConfigError(f"unknown domain kind {self.kind!r}")
        if int(self.dimension) != self.dimension or self.dimension < 1:
            raise ConfigError(f"dimension must be a positive integer, got {self.dimension!r}")

    @property
    def torus(self) -> bool:
        return self.kind == "torus"

    @property
    def diameter(self) -> float:
        return math.sqrt(self.dimension) * (0.5 if self.torus else 1.0)

    def to_dict(self):
        return {"kind": self.kind, "dimension": self.dimension}


@dataclass(frozen=True)
class DensitySpec:
    """Uniform density, or a piecewise-constant density on an axis-aligned grid.

    For the grid kind, ``weights`` has shape ``resolution`` and cell ``c``
    receives probability mass ``weights[c] / weights.sum()``.
    """

    kind: str = "uniform"
    resolution: tuple = ()
    weights: tuple = ()
    _cdf: np.ndarray = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.kind not in DENSITY_KINDS:
            raise ConfigError(f"unknown density kind {self.kind!r}")
        if self.kind == "uniform":
            return
        res = tuple(int(r) for r in self.resolution)
        w = np.asarray(self.weights, dtype=np.float64).ravel()
        if not res or min(res) < 1:
            raise ConfigError("grid density needs a positive resolution per axis")
        if w.size != int(np.prod(res)):
            raise ConfigError(f"grid density needs {int(np.prod(res))} weights, got {w.size}")
        if not np.all(np.isfinite(w)) or w.min() <= 0.0:
            raise ConfigError("grid density weights must be finite and strictly positive")
        object.__setattr__(self, "resolution", res)
        object.__setattr__(self, "weights", tuple(float(x) for x in w))
        cdf = np.cumsum(w)
        cdf /= cdf[-1]
        object.__setattr__(self, "_cdf", cdf)

    @property
    def dimension(self):
        return None if self.kind == "uniform" else len(self.resolution)

    def bounds(self):
        """(inf f, sup f) on [0,1]^d."""
        if self.kind == "uniform":
            return 1.0, 1.0
        w = np.asarray(self.weights)
        dens = w / w.mean()
        return float(dens.min()), float(dens.max())

    def check_domain(self, domain: DomainSpec):
        if self.kind != "uniform" and self.dimension != domain.dimension:
            raise ConfigError(
                f"density is {self.dimension}-dimensional but domain has d={domain.dimension}")

    def to_dict(self):
        if self.kind == "uniform":
            return {"kind": "uniform"}
        return {"kind": self.kind, "resolution": list(self.resolution), "weights": list(self.weights)}


@dataclass(frozen=True)
class AttractivenessSpec:
    """Distance-decay factor F of the attachment rule.

    ``constant``: F = 1; ``power_law``: F(r) = r^-s; ``gamma``:
    F(r) = exp(log+(1/r)^gamma) with log+ x = max(0, log x).
    """

    kind: str = "constant"
    param: float = 0.0

    def __post_init__(self):
        if self.kind not in _F_CODES:
            raise ConfigError(f"unknown attractiveness kind {self.kind!r}")
        p = float(self.param)
        if self.kind == "power_law" and not (p > 0 and math.isfinite(p)):
            raise ConfigError(f"power_law needs s > 0, got {self.param!r}")
        if self.kind == "gamma" and not (p > 1 and math.isfinite(p)):
            raise ConfigError(f"gamma needs gamma > 1, got {self.param!r}")
        if self.kind == "constant":
            p = 0.0
        object.__setattr__(self, "param", p)

    @property
    def code(self) -> int:
        return _F_CODES[self.kind]

    @classmethod
    def parse(cls, text: str) -> "AttractivenessSpec":
        """Parse ``constant``, ``power:2``/``s:2`` or ``gamma:2``."""
        name, _, value = text.strip().partition(":")
        name = {"power": "power_law", "s": "power_law", "const": "constant"}.get(name, name)
        if name == "constant":
            return cls("constant")
        if not value:
            raise ConfigError(f"attractiveness {text!r} needs a parameter, e.g. gamma:2")
        try:
            return cls(name, float(value))
        except ValueError as exc:
            raise ConfigError(f"bad attractiveness {text!r}: {exc}") from None

    def label(self) -> str:
        if self.kind == "constant":
            return "constant"
        return f"{'power' if self.kind == 'power_law' else 'gamma'}:{self.param:g}"

    def to_dict(self):
        return {"kind": self.kind, "param": self.param}


class RngStream:
    """Seeded random stream for one replicate.

    Two independent PCG64 generators are derived from ``(seed, stream_id)``:
    ``points`` feeds site locations and ``attach`` feeds attachment draws.
    Keeping them apart makes every run a prefix of any longer run with the
    same stream.
    """

    def __init__(self, seed: int, stream_id: int = 0):
        if seed < 0 or seed >= 2**64:
            raise ConfigError("seed must be a 64-bit unsigned integer")
        self.seed = int(seed)
        self.stream_id = int(stream_id)
        ss = np.random.SeedSequence(self.seed, spawn_key=(self.stream_id,))
        pts, att = ss.spawn(2)
        self.points = np.random.Generator(np.random.PCG64(pts))
        self.attach = np.random.Generator(np.random.PCG64(att))

    def __repr__(self):
        return f"RngStream(seed={self.seed}, stream_id={self.stream_id})"


def sample_points(density: DensitySpec, domain: DomainSpec, rng: RngStream, count: int) -> np.ndarray:
    """Draw ``count`` i.i.d. sites, shape (count, d).

    Calling this repeatedly yields the same sequence as one larger call.
    """
    density.check_domain(domain)
    d = domain.dimension
    if density.kind == "uniform":
        return rng.points.random((count, d))
    u = rng.points.random((count, d + 1))
    cell = np.searchsorted(density._cdf, u[:, 0], side="right")
    np.minimum(cell, density._cdf.size - 1, out=cell)
    res = np.asarray(density.resolution)
    idx = np.stack(np.unravel_index(cell, density.resolution), axis=1)
    pts = (idx + u[:, 1:]) / res
    # (idx + u)/res can round up to exactly 1.0 at the top cell
    np.minimum(pts, np.nextafter(1.0, 0.0), out=pts)
    return pts


def sample_point(density: DensitySpec, domain: DomainSpec, rng: RngStream) -> np.ndarray:
    return sample_points(density, domain, rng, 1)[0]


@nb.njit(cache=True, inline="always")
def dist2_rows(pts, i, q, torus):
    """Squared distance between row ``i`` of ``pts`` and ``q``."""
    s = 0.0
    for j in range(q.shape[0]):
        a = abs(pts[i, j] - q[j])
        if torus and a > 0.5:
            a = 1.0 - a
        s += a * a
    return s


@nb.njit(cache=True)
def _dist2(a, b, torus):
    s = 0.0
    for j in range(a.shape[0]):
        t = abs(a[j] - b[j])
        if torus and t > 0.5:
            t = 1.0 - t
        s += t * t
    return s


@nb.njit(cache=True, inline="always")
def log_f(code, param, r):
    """log F(r) for r > 0; caller guarantees r > 0."""
    if code == F_CONSTANT:
        return 0.0
    if code == F_POWER:
        return -param * math.log(r)
    t = -math.log(r)
    if t <= 0.0:
        return 0.0
    if param == 2.0:
        return t * t
    return t**param


@nb.njit(cache=True)
def _log_f_scalar(code, param, r):
    return log_f(code, param, r)


def as_point(p, domain: DomainSpec) -> np.ndarray:
    a = np.atleast_1d(np.asarray(p, dtype=np.float64))
    if a.shape != (domain.dimension,):
        raise ValueError(f"expected a point of dimension {domain.dimension}, got shape {a.shape}")
    return a


def distance(domain: DomainSpec, a, b) -> float:
    a = as_point(a, domain)
    b = as_point(b, domain)
    return math.sqrt(_dist2(a, b, domain.torus))


def log_attractiveness(F: AttractivenessSpec, r: float) -> float:
    if r < 0 or math.isnan(r):
        raise ValueError(f"distance must be nonnegative, got {r}")
    if r == 0.0:
        raise CoincidentPointError("coincident points: attractiveness undefined at r = 0")
    return float(_log_f_scalar(F.code, F.param, float(r)))
