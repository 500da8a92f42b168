"""Growing on-line nearest-neighbour (ONG) and geometric preferential
attachment (GPA) graphs.

Vertex ``i >= 1`` arrives at site ``X_i`` and is joined to one earlier
vertex: its nearest predecessor for the ONG, or ``v`` with probability
proportional to ``deg(v) * F(|X_v - X_i|)`` for the GPA. The GPA starts
from vertices 0 and 1 joined by a single edge.

Two GPA samplers produce the same law:

``scan``
    Log weights for all predecessors, then one uniform inverted against the
    max-shifted, Kahan-summed cumulative sum in ascending id order. O(n) per
    arrival; the per-step reference.
``tree``
    Exact rejection sampling on a dyadic cell pyramid (see
    :mod:`gpagraph.attach_tree`). Polylogarithmic per arrival; d <= 3.

Both are deterministic functions of the seed, but they consume uniforms
differently, so their graphs differ sample by sample.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numba as nb
import numpy as np

from . import attach_tree as at
from .errors import CoincidentPointError, ConfigError
from .geometry import (AttractivenessSpec, DensitySpec, DomainSpec, RngStream, as_point,
                       log_f, sample_points)
from .spatial_index import (BLOCK_MIN_DIM, GRID_MAX_DIM, OnlineIndex, auto_backend, grid_cells_per_axis,
                            grid_insert, grid_query, nearest_predecessors, scan_query)

SAMPLERS = ("scan", "tree")
UNIFORM_CHUNK = 1 << 16

__all__ = [
    "AttractivenessSpec", "ModelSpec", "GraphState", "init_graph", "attachment_log_weights",
    "sample_attachment", "grow_step", "run_growth", "write_graph_csv",
]


@dataclass(frozen=True)
class ModelSpec:
    kind: str = "ONG"
    F: AttractivenessSpec | None = None

    def __post_init__(self):
        kind = self.kind.upper()
        if kind not in ("ONG", "GPA"):
            raise ConfigError(f"model must be ONG or GPA, got {self.kind!r}")
        object.__setattr__(self, "kind", kind)
        if kind == "GPA" and self.F is None:
            raise ConfigError("GPA model needs an attractiveness function")
        if kind == "ONG":
            object.__setattr__(self, "F", None)

    @property
    def is_gpa(self):
        return self.kind == "GPA"

    def label(self):
        return "ong" if self.kind == "ONG" else f"gpa[{self.F.label()}]"

    def to_dict(self):
        out = {"kind": self.kind}
        if self.F is not None:
            out["F"] = self.F.to_dict()
        return out


@dataclass
class GraphState:
    """A grown graph on vertices 0..n (n edges).

    ``parent[i]`` is the endpoint vertex ``i`` attached to, ``nn_parent[i]``
    its nearest predecessor; both are -1 for vertex 0.
    """

    positions: np.ndarray
    degree: np.ndarray
    parent: np.ndarray
    nn_parent: np.ndarray
    domain: DomainSpec
    model: ModelSpec = field(default_factory=ModelSpec)

    @property
    def n(self) -> int:
        return len(self.degree) - 1

    @property
    def num_vertices(self) -> int:
        return len(self.degree)

    @property
    def mismatch(self) -> np.ndarray:
        out = self.parent != self.nn_parent
        out[0] = False
        return out

    def prefix(self, n: int) -> "GraphState":
        """The graph after ``n`` arrivals (vertices 0..n)."""
        if not 1 <= n <= self.n:
            raise ValueError(f"prefix n must lie in [1, {self.n}]")
        parent = self.parent[: n + 1].copy()
        return GraphState(self.positions[: n + 1].copy(), degrees_from_parents(parent), parent,
                          self.nn_parent[: n + 1].copy(), self.domain, self.model)

    def check_invariants(self):
        n = self.n
        assert int(self.degree.sum()) == 2 * n, "degree sum != 2n"
        assert n == 0 or self.degree.min() >= 1, "isolated vertex"
        idx = np.arange(1, n + 1)
        assert np.all(self.parent[1:] < idx) and np.all(self.parent[1:] >= 0)
        assert np.all(self.nn_parent[1:] < idx) and np.all(self.nn_parent[1:] >= 0)
        assert np.array_equal(degrees_from_parents(self.parent), self.degree)
        if not self.model.is_gpa:
            assert np.array_equal(self.parent, self.nn_parent)


def degrees_from_parents(parent: np.ndarray) -> np.ndarray:
    deg = np.bincount(parent[1:], minlength=len(parent)).astype(np.int64)
    deg[1:] += 1
    return deg


def init_graph(p0, p1, domain: DomainSpec, model: ModelSpec | None = None) -> GraphState:
    p0 = as_point(p0, domain)
    p1 = as_point(p1, domain)
    if np.array_equal(p0, p1):
        raise CoincidentPointError("initial sites coincide")
    return GraphState(
        positions=np.stack([p0, p1]),
        degree=np.array([1, 1], dtype=np.int64),
        parent=np.array([-1, 0], dtype=np.int64),
        nn_parent=np.array([-1, 0], dtype=np.int64),
        domain=domain,
        model=model or ModelSpec(),
    )


# ---------------------------------------------------------------- kernels

@nb.njit(cache=True)
def _log_weights(pts, logdeg, count, x, code, param, torus, out):
    """out[v] = log deg(v) + log F(|X_v - x|); returns the first coincident
    vertex id or -1."""
    d = x.shape[0]
    for v in range(count):
        r2 = 0.0
        for j in range(d):
            a = abs(pts[v, j] - x[j])
            if torus and a > 0.5:
                a = 1.0 - a
            r2 += a * a
        if r2 == 0.0:
            return v
        out[v] = logdeg[v] + log_f(code, param, math.sqrt(r2))
    return -1


@nb.njit(cache=True)
def _nearest(pts, head, nxt, m, count, x, torus, use_grid):
    if use_grid:
        i0, b0, _, _ = grid_query(pts, head, nxt, m, count, x, torus, 1)
    else:
        i0, b0, _, _ = scan_query(pts, count, x, torus, 1)
    return i0, b0


@nb.njit(cache=True)
def _ong_kernel(pts, n, deg, parent, nnp, head, nxt, m, torus, use_grid):
    """Grow vertices 2..n. Returns -1 or the step with a coincident point."""
    for i in range(2, n + 1):
        x = pts[i]
        j, b = _nearest(pts, head, nxt, m, i, x, torus, use_grid)
        if b == 0.0:
            return i
        parent[i] = j
        nnp[i] = j
        deg[j] += 1
        deg[i] = 1
        if use_grid:
            grid_insert(pts, head, nxt, m, i)
    return -1


@nb.njit(cache=True)
def _gpa_scan_kernel(pts, start, n, deg, logdeg, parent, nnp, head, nxt, m, torus, use_grid,
                     code, param, w, ubuf, upos):
    """Grow vertices start..n with the O(n) scan sampler, one uniform each.
    Returns (status, step, upos)."""
    for i in range(start, n + 1):
        if upos >= ubuf.shape[0]:
            return at.NEED_UNIFORMS, i, upos
        x = pts[i]
        j, b = _nearest(pts, head, nxt, m, i, x, torus, use_grid)
        if b == 0.0:
            return at.COINCIDENT, i, upos
        _log_weights(pts, logdeg, i, x, code, param, torus, w)
        v = at.sample_log_weights(w, i, ubuf[upos])
        upos += 1
        parent[i] = v
        nnp[i] = j
        deg[v] += 1
        logdeg[v] = math.log(deg[v])
        deg[i] = 1
        logdeg[i] = 0.0
        if use_grid:
            grid_insert(pts, head, nxt, m, i)
    return at.OK, n + 1, upos


@nb.njit(cache=True)
def _gpa_tree_kernel(pts, start, n, deg, parent, nnp, head, nxt, m, torus, use_grid,
                     code, param, sums, offsets, thead, tnxt, depth, tau, log_loose,
                     it_w, it_ref, it_lvl, it_lb, stack, ubuf, upos):
    for i in range(start, n + 1):
        x = pts[i]
        j, b = _nearest(pts, head, nxt, m, i, x, torus, use_grid)
        if b == 0.0:
            return at.COINCIDENT, i, upos
        log_keep = math.log(deg[j]) + log_f(code, param, math.sqrt(b)) + log_loose
        status, v, upos2, it_w, it_ref, it_lvl, it_lb = at.tree_sample(
            x, pts, deg, sums, offsets, thead, tnxt, depth, code, param, torus, tau, log_keep,
            it_w, it_ref, it_lvl, it_lb, stack, ubuf, upos)
        if status != at.OK:
            return status, i, upos
        upos = upos2
        parent[i] = v
        nnp[i] = j
        deg[v] += 1
        at.pyramid_add(sums, offsets, depth, pts[v], 1)
        deg[i] = 1
        at.pyramid_insert(sums, offsets, thead, tnxt, depth, pts, i, 1)
        if use_grid:
            grid_insert(pts, head, nxt, m, i)
    return at.OK, n + 1, upos


# ---------------------------------------------------------------- per-step API

def attachment_log_weights(state: GraphState, F: AttractivenessSpec, x, domain: DomainSpec | None = None
                           ) -> np.ndarray:
    """Log attachment weights ``log deg(v) + log F(|X_v - x|)`` for every vertex.

    ``logsumexp`` of the result is ``log D_n(x)``.
    """
    domain = domain or state.domain
    x = as_point(x, domain)
    out = np.empty(state.num_vertices)
    bad = _log_weights(state.positions, np.log(state.degree.astype(np.float64)), state.num_vertices,
                       x, F.code, F.param, domain.torus, out)
    if bad >= 0:
        raise CoincidentPointError(f"new site coincides with vertex {bad}")
    return out


def sample_attachment(log_weights, rng: RngStream | np.random.Generator) -> int:
    """Draw an index with probability ``exp(w_v - logsumexp(w))``, using one
    uniform from the attachment stream."""
    w = np.ascontiguousarray(log_weights, dtype=np.float64)
    if w.size == 0 or not np.any(w > -np.inf):
        raise ValueError("all attachment weights are -inf")
    gen = rng.attach if isinstance(rng, RngStream) else rng
    v = at.sample_log_weights(w, w.size, gen.random())
    return int(v)


def grow_step(state: GraphState, model: ModelSpec, x, index: OnlineIndex, rng: RngStream) -> GraphState:
    """Add one vertex at ``x``; ``index`` must hold exactly the current sites.

    GPA draws use the scan sampler, so a loop of ``grow_step`` reproduces
    ``run_growth(..., sampler="scan")`` exactly.
    """
    x = as_point(x, state.domain)
    if len(index) != state.num_vertices:
        raise ValueError("index is out of sync with the graph")
    nn = index.nearest(x)
    if nn.dist == 0.0:
        raise CoincidentPointError(f"new site coincides with vertex {nn.id}", seed=rng.seed,
                                   stream_id=rng.stream_id, step=state.num_vertices)
    if model.is_gpa:
        v = sample_attachment(attachment_log_weights(state, model.F, x), rng)
    else:
        v = nn.id
    state.positions = np.vstack([state.positions, x])
    state.degree = np.append(state.degree, 1)
    state.degree[v] += 1
    state.parent = np.append(state.parent, v)
    state.nn_parent = np.append(state.nn_parent, nn.id)
    state.model = model
    index.insert(x)
    return state


# ---------------------------------------------------------------- full runs

def resolve_sampler(model: ModelSpec, domain: DomainSpec, sampler: str = "auto") -> str:
    if not model.is_gpa:
        return "none"
    if sampler == "auto":
        return "tree" if domain.dimension <= 3 else "scan"
    if sampler not in SAMPLERS:
        raise ConfigError(f"unknown sampler {sampler!r}")
    if sampler == "tree" and domain.dimension > 3:
        raise ConfigError("tree sampler supports d <= 3")
    return sampler


class _Uniforms:
    """Chunked view of the attachment stream that kernels can resume on."""

    def __init__(self, gen: np.random.Generator):
        self.gen = gen
        self.buf = gen.random(UNIFORM_CHUNK)
        self.pos = 0

    def refill(self, keep_from: int):
        self.buf = np.concatenate([self.buf[keep_from:], self.gen.random(UNIFORM_CHUNK)])
        self.pos = 0


def run_growth(model: ModelSpec, n: int, density: DensitySpec, domain: DomainSpec, rng: RngStream,
               backend: str = "auto", sampler: str = "auto", tree_depth: int | None = None,
               tau: float = at.DEFAULT_TAU, loose: float = at.DEFAULT_LOOSE) -> GraphState:
    """Grow a graph with n edges (vertices 0..n).

    The result is a deterministic function of the arguments and of
    ``(rng.seed, rng.stream_id)``; backend never changes it, and a run is a
    prefix of any longer run with the same settings.
    """
    if n < 1:
        raise ConfigError("n must be >= 1")
    density.check_domain(domain)
    d = domain.dimension
    if backend == "auto":
        backend = auto_backend(d)
    if backend == "grid" and d > GRID_MAX_DIM:
        raise ConfigError(f"grid backend supports d <= {GRID_MAX_DIM}")
    sampler = resolve_sampler(model, domain, sampler)
    pts = np.ascontiguousarray(sample_points(density, domain, rng, n + 1))
    if np.array_equal(pts[0], pts[1]):
        raise CoincidentPointError("initial sites coincide", seed=rng.seed, stream_id=rng.stream_id, step=1)

    N = n + 1
    deg = np.zeros(N, dtype=np.int64)
    parent = np.full(N, -1, dtype=np.int64)
    nnp = np.full(N, -1, dtype=np.int64)
    deg[0] = deg[1] = 1
    parent[1] = nnp[1] = 0

    use_grid = backend == "grid"
    m = grid_cells_per_axis(N, d) if use_grid else 1
    head = np.full(m**d if use_grid else 1, -1, dtype=np.int64)
    nxt = np.full(N, -1, dtype=np.int64)
    if use_grid:
        grid_insert(pts, head, nxt, m, 0)
        grid_insert(pts, head, nxt, m, 1)
    torus = domain.torus

    def fail(step):
        raise CoincidentPointError(f"coincident site at arrival {step}", seed=rng.seed,
                                   stream_id=rng.stream_id, step=int(step))

    if not model.is_gpa and not use_grid and d >= BLOCK_MIN_DIM:
        # ONG only needs each site's nearest predecessor, and all sites are
        # known up front, so the scan can run in cache-friendly tiles
        d2 = np.empty(N)
        nearest_predecessors(pts, 2, N, torus, nnp, d2)
        zero = np.flatnonzero(d2[2:] == 0.0)
        if zero.size:
            fail(int(zero[0]) + 2)
        parent[2:] = nnp[2:]
        deg[:] = degrees_from_parents(parent)
    elif not model.is_gpa:
        bad = _ong_kernel(pts, n, deg, parent, nnp, head, nxt, m, torus, use_grid)
        if bad >= 0:
            fail(bad)
    else:
        F = model.F
        uni = _Uniforms(rng.attach)
        start = 2
        if sampler == "scan":
            logdeg = np.zeros(N)
            w = np.empty(N)
            while start <= n:
                status, step, upos = _gpa_scan_kernel(pts, start, n, deg, logdeg, parent, nnp, head, nxt, m,
                                                      torus, use_grid, F.code, F.param, w, uni.buf, uni.pos)
                if status == at.COINCIDENT:
                    fail(step)
                if status == at.NEED_UNIFORMS:
                    uni.refill(upos)
                start, uni.pos = step, (0 if status == at.NEED_UNIFORMS else upos)
        else:
            pyr = at.CellPyramid(d, torus, tree_depth, capacity=N)
            for v in (0, 1):
                at.pyramid_insert(pyr.sums, pyr.offsets, pyr.head, pyr.nxt, pyr.depth, pts, v, 1)
            ws = at.new_workspace(d, pyr.depth)
            while start <= n:
                status, step, upos = _gpa_tree_kernel(
                    pts, start, n, deg, parent, nnp, head, nxt, m, torus, use_grid, F.code, F.param,
                    pyr.sums, pyr.offsets, pyr.head, pyr.nxt, pyr.depth, float(tau), math.log(loose), *ws, uni.buf, uni.pos)
                if status == at.COINCIDENT:
                    fail(step)
                if status == at.NEED_UNIFORMS:
                    uni.refill(upos)
                    upos = 0
                start, uni.pos = step, upos
    return GraphState(pts, deg, parent, nnp, domain, model)


# ---------------------------------------------------------------- export

def graph_csv_text(state: GraphState) -> str:
    d = state.domain.dimension
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["id"] + [f"x_{j}" for j in range(d)] + ["degree", "parent", "nn_parent", "mismatch"])
    mm = state.mismatch
    for i in range(state.num_vertices):
        w.writerow([i] + [repr(float(c)) for c in state.positions[i]]
                   + [int(state.degree[i]), int(state.parent[i]), int(state.nn_parent[i]), int(mm[i])])
    return buf.getvalue()


def write_graph_csv(state: GraphState, path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(graph_csv_text(state))
