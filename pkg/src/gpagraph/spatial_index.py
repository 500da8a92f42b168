"""Incremental exact nearest-predecessor index.

Two backends share one squared-distance routine, so their answers agree
bit for bit:

* ``grid``: uniform bucket grid with about one point per cell and an
  expanding Chebyshev-shell search. Used for d <= 3.
* ``linear_scan``: brute force over every stored point, with early exit
  once a partial sum exceeds the current best. Used for larger d and as
  the oracle for the grid. For d >= 8 it sums coordinates in blocks, so
  its distances can differ from the grid routine in the last bit; the
  grid is never used there.

Ties are broken by the smallest id.
"""
from __future__ import annotations

import math
from typing import NamedTuple

import numba as nb
import numpy as np

from .errors import EmptyIndexError
from .geometry import DomainSpec, as_point, dist2_rows

BACKENDS = ("grid", "linear_scan")
GRID_MAX_DIM = 3
# from this dimension on the linear scan sums coordinates in blocks of eight
BLOCK_MIN_DIM = 8


class NeighborResult(NamedTuple):
    id: int
    dist: float


def auto_backend(dimension: int) -> str:
    return "grid" if dimension <= GRID_MAX_DIM else "linear_scan"


def grid_cells_per_axis(n_expected: int, dimension: int) -> int:
    return max(1, int(round(max(n_expected, 1) ** (1.0 / dimension))))


@nb.njit(cache=True, inline="always")
def _better(d2, i, bd2, bi):
    return d2 < bd2 or (d2 == bd2 and i < bi)


@nb.njit(cache=True, inline="always")
def _cell_coord(x, m):
    c = int(x * m)
    return m - 1 if c >= m else c


@nb.njit(cache=True)
def _cell_of(q, m):
    c = 0
    for j in range(q.shape[0]):
        c = c * m + _cell_coord(q[j], m)
    return c


@nb.njit(cache=True)
def grid_insert(pts, head, nxt, m, i):
    c = _cell_of(pts[i], m)
    nxt[i] = head[c]
    head[c] = i


@nb.njit(cache=True, inline="always")
def _offer(d2, i, b0, i0, b1, i1, k):
    # keep the k (1 or 2) lexicographically smallest (d2, id) pairs
    if _better(d2, i, b0, i0):
        if k == 2:
            b1 = b0
            i1 = i0
        return d2, i, b1, i1
    if k == 2 and _better(d2, i, b1, i1):
        return b0, i0, d2, i
    return b0, i0, b1, i1


@nb.njit(cache=True, inline="always")
def _coord_sq(a, b, torus):
    t = abs(a - b)
    if torus:
        t = min(t, 1.0 - t)
    return t * t


@nb.njit(cache=True, inline="always")
def _dist2_blocked(a, b, torus, bound):
    """Squared distance summed eight coordinates at a time as a balanced
    tree. Stops early with a partial sum once it exceeds ``bound``."""
    d = b.shape[0]
    dfull = d - d % 8
    s = 0.0
    j = 0
    while j < dfull:
        c0 = _coord_sq(a[j], b[j], torus) + _coord_sq(a[j + 1], b[j + 1], torus)
        c1 = _coord_sq(a[j + 2], b[j + 2], torus) + _coord_sq(a[j + 3], b[j + 3], torus)
        c2 = _coord_sq(a[j + 4], b[j + 4], torus) + _coord_sq(a[j + 5], b[j + 5], torus)
        c3 = _coord_sq(a[j + 6], b[j + 6], torus) + _coord_sq(a[j + 7], b[j + 7], torus)
        s += (c0 + c1) + (c2 + c3)
        j += 8
        if s > bound:
            return s
    while j < d:
        s += _coord_sq(a[j], b[j], torus)
        j += 1
    return s


@nb.njit(cache=True)
def _scan_query_blocked(pts, count, q, torus, k):
    # the serial dependency is one add per eight coordinates
    b0 = np.inf
    b1 = np.inf
    i0 = -1
    i1 = -1
    for i in range(count):
        bound = b1 if k == 2 else b0
        s = _dist2_blocked(pts[i], q, torus, bound)
        if s > bound:
            continue
        b0, i0, b1, i1 = _offer(s, i, b0, i0, b1, i1, k)
    return i0, b0, i1, b1


@nb.njit(cache=True)
def nearest_predecessors(pts, start, stop, torus, idx, d2):
    """For every i in [start, stop), the nearest of rows 0..i-1 (ties to the
    smallest id), written to ``idx[i]`` and ``d2[i]``.

    Same answers as calling ``scan_query`` for each i, for d >=
    BLOCK_MIN_DIM. Queries are handled in tiles so each candidate row is
    read once per tile rather than once per query.
    """
    tile = 32
    for q0 in range(start, stop, tile):
        q1 = min(q0 + tile, stop)
        for qi in range(q0, q1):
            idx[qi] = -1
            d2[qi] = np.inf
        for j in range(q1 - 1):
            a = pts[j]
            for qi in range(max(q0, j + 1), q1):
                s = _dist2_blocked(a, pts[qi], torus, d2[qi])
                if s < d2[qi]:
                    d2[qi] = s
                    idx[qi] = j


@nb.njit(cache=True)
def scan_query(pts, count, q, torus, k):
    """Brute-force k-nearest (k in {1, 2}) among ids 0..count-1."""
    b0 = np.inf
    b1 = np.inf
    i0 = -1
    i1 = -1
    d = q.shape[0]
    if d >= BLOCK_MIN_DIM:
        return _scan_query_blocked(pts, count, q, torus, k)
    for i in range(count):
        bound = b1 if k == 2 else b0
        s = 0.0
        j = 0
        while j < d:
            a = abs(pts[i, j] - q[j])
            if torus and a > 0.5:
                a = 1.0 - a
            s += a * a
            j += 1
            if s > bound:
                break
        if s > bound:
            continue
        b0, i0, b1, i1 = _offer(s, i, b0, i0, b1, i1, k)
    return i0, b0, i1, b1


@nb.njit(cache=True)
def _scan_bucket(pts, head, nxt, cell, q, torus, k, b0, i0, b1, i1):
    i = head[cell]
    while i >= 0:
        d2 = dist2_rows(pts, i, q, torus)
        b0, i0, b1, i1 = _offer(d2, i, b0, i0, b1, i1, k)
        i = nxt[i]
    return b0, i0, b1, i1


@nb.njit(cache=True)
def _wrap(c, m, torus):
    if torus:
        c = c % m
        return c if c >= 0 else c + m
    return c if 0 <= c < m else -1


@nb.njit(cache=True)
def grid_query(pts, head, nxt, m, count, q, torus, k):
    """k-nearest (k in {1, 2}) via expanding Chebyshev shells of cells."""
    d = q.shape[0]
    h = 1.0 / m
    cq = np.zeros(3, dtype=np.int64)
    bmin = 0.5
    reach = 0
    for j in range(d):
        cq[j] = _cell_coord(q[j], m)
        f = q[j] * m - cq[j]
        bmin = min(bmin, f, 1.0 - f)
        reach = max(reach, cq[j], m - 1 - cq[j])
    if bmin < 0.0:
        bmin = 0.0
    b0 = np.inf
    b1 = np.inf
    i0 = -1
    i1 = -1
    L = 0
    while True:
        if (torus and 2 * L + 1 > m) or (2 * L + 1) ** d > 4 * count + 16:
            # shell wraps onto itself, or the grid is still sparse
            return scan_query(pts, count, q, torus, k)
        if not torus and L > reach:
            break
        r1 = L if d >= 2 else 0
        o0 = -L
        while o0 <= L:
            c0 = _wrap(cq[0] + o0, m, torus)
            if c0 >= 0:
                if d == 1:
                    b0, i0, b1, i1 = _scan_bucket(pts, head, nxt, c0, q, torus, k, b0, i0, b1, i1)
                else:
                    face0 = abs(o0) == L
                    o1 = -r1
                    while o1 <= r1:
                        c1 = _wrap(cq[1] + o1, m, torus)
                        if c1 >= 0:
                            face01 = face0 or abs(o1) == L
                            if d == 2:
                                b0, i0, b1, i1 = _scan_bucket(pts, head, nxt, c0 * m + c1, q, torus, k,
                                                              b0, i0, b1, i1)
                            else:
                                o2 = -L
                                while o2 <= L:
                                    c2 = _wrap(cq[2] + o2, m, torus)
                                    if c2 >= 0:
                                        b0, i0, b1, i1 = _scan_bucket(pts, head, nxt, (c0 * m + c1) * m + c2,
                                                                      q, torus, k, b0, i0, b1, i1)
                                    o2 += 1 if (face01 or L == 0) else 2 * L
                        # inner rows of a 2-d shell only touch the two end cells
                        o1 += 1 if (face0 or d == 3 or L == 0) else 2 * L
            o0 += 1 if (d >= 2 or L == 0) else 2 * L
        gap = (L + bmin) * h
        kth = b1 if k == 2 else b0
        if kth < gap * gap * (1.0 - 1e-9):
            break
        L += 1
    return i0, b0, i1, b1


@nb.njit(cache=True)
def scan_range_count(pts, count, q, torus, r2):
    c = 0
    for i in range(count):
        if dist2_rows(pts, i, q, torus) <= r2:
            c += 1
    return c


@nb.njit(cache=True)
def grid_range_count(pts, head, nxt, m, count, q, radius, torus):
    d = q.shape[0]
    r2 = radius * radius
    K = int(math.ceil(radius * m)) + 1
    if K >= m or (torus and 2 * K + 1 > m):
        return scan_range_count(pts, count, q, torus, r2)
    cq = np.zeros(3, dtype=np.int64)
    for j in range(d):
        cq[j] = _cell_coord(q[j], m)
    R1 = K if d >= 2 else 0
    R2 = K if d >= 3 else 0
    c = 0
    for o0 in range(-K, K + 1):
        c0 = _wrap(cq[0] + o0, m, torus)
        if c0 < 0:
            continue
        for o1 in range(-R1, R1 + 1):
            c1 = _wrap(cq[1] + o1, m, torus) if d >= 2 else 0
            if c1 < 0:
                continue
            for o2 in range(-R2, R2 + 1):
                c2 = _wrap(cq[2] + o2, m, torus) if d >= 3 else 0
                if c2 < 0:
                    continue
                cell = c0
                if d >= 2:
                    cell = cell * m + c1
                if d >= 3:
                    cell = cell * m + c2
                i = head[cell]
                while i >= 0:
                    if dist2_rows(pts, i, q, torus) <= r2:
                        c += 1
                    i = nxt[i]
    return c


class OnlineIndex:
    """Insert-only point index with exact nearest / second-nearest queries.

    >>> idx = OnlineIndex(DomainSpec("unit_cube", 1), backend="linear_scan")
    >>> idx.insert([0.1]), idx.insert([0.8])
    (0, 1)
    >>> idx.nearest([0.75]).id
    1
    """

    def __init__(self, domain: DomainSpec, backend: str = "auto", n_expected: int = 1024,
                 cells_per_axis: int | None = None):
        if backend == "auto":
            backend = auto_backend(domain.dimension)
        if backend not in BACKENDS:
            raise ValueError(f"unknown backend {backend!r}")
        if backend == "grid" and domain.dimension > GRID_MAX_DIM:
            raise ValueError(f"grid backend supports d <= {GRID_MAX_DIM}")
        self.domain = domain
        self.backend = backend
        self.count = 0
        cap = max(16, int(n_expected))
        self._pts = np.empty((cap, domain.dimension), dtype=np.float64)
        self._nxt = np.full(cap, -1, dtype=np.int64)
        if backend == "grid":
            self.m = cells_per_axis or grid_cells_per_axis(n_expected, domain.dimension)
            self._head = np.full(self.m**domain.dimension, -1, dtype=np.int64)
        else:
            self.m = 0
            self._head = np.empty(0, dtype=np.int64)

    def __len__(self):
        return self.count

    @property
    def points(self) -> np.ndarray:
        return self._pts[: self.count]

    def point(self, i: int) -> np.ndarray:
        if not 0 <= i < self.count:
            raise IndexError(i)
        return self._pts[i].copy()

    def insert(self, p) -> int:
        p = as_point(p, self.domain)
        if np.any(p < 0.0) or np.any(p > 1.0):
            raise ValueError("point outside [0,1]^d")
        if self.count == self._pts.shape[0]:
            cap = 2 * self.count
            self._pts = np.concatenate([self._pts, np.empty_like(self._pts)])[:cap]
            self._nxt = np.concatenate([self._nxt, np.full(self.count, -1, dtype=np.int64)])
        i = self.count
        self._pts[i] = p
        if self.backend == "grid":
            grid_insert(self._pts, self._head, self._nxt, self.m, i)
        self.count += 1
        return i

    def _query(self, q, k):
        q = as_point(q, self.domain)
        if self.backend == "grid":
            return grid_query(self._pts, self._head, self._nxt, self.m, self.count, q,
                              self.domain.torus, k)
        return scan_query(self._pts, self.count, q, self.domain.torus, k)

    def nearest(self, q) -> NeighborResult:
        if self.count == 0:
            raise EmptyIndexError("nearest() on an empty index")
        i0, b0, _, _ = self._query(q, 1)
        return NeighborResult(int(i0), math.sqrt(b0))

    def two_nearest(self, q) -> tuple[NeighborResult, NeighborResult]:
        if self.count < 2:
            raise EmptyIndexError("two_nearest() needs at least two stored points")
        i0, b0, i1, b1 = self._query(q, 2)
        return NeighborResult(int(i0), math.sqrt(b0)), NeighborResult(int(i1), math.sqrt(b1))

    def range_count(self, center, radius: float) -> int:
        if radius < 0:
            raise ValueError("radius must be nonnegative")
        q = as_point(center, self.domain)
        if self.backend == "grid":
            return int(grid_range_count(self._pts, self._head, self._nxt, self.m, self.count, q,
                                        float(radius), self.domain.torus))
        return int(scan_range_count(self._pts, self.count, q, self.domain.torus, float(radius) ** 2))
