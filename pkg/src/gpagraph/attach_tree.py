"""Exact sub-linear attachment sampling on a dyadic cell pyramid.

Attachment picks vertex ``v`` with probability proportional to
``deg(v) * F(|X_v - x|)``. Scanning every vertex costs O(n) per arrival, so
this module keeps, for every dyadic cell at every level, the total degree
of the vertices inside it. For a new site ``x`` the pyramid is split into

* far cells on which ``log F`` varies by at most ``tau``; they enter as one
  proposal of weight ``S_cell * F(dmin(x, cell))``, an upper bound on their
  true mass, and
* leaf cells near ``x``, whose vertices enter with their exact weight.

A proposal is drawn by log-sum-exp inversion. A far cell is resolved to a
vertex by degree-proportional descent and accepted with probability
``F(r) / F(dmin) >= exp(-tau)``; on rejection the proposal is redrawn. The
accepted vertex has exactly the attachment law.

The pyramid depth is fixed up front (not derived from n) so that a run is a
prefix of any longer run on the same stream.
"""
from __future__ import annotations

import math

import numba as nb
import numpy as np

from .geometry import F_CONSTANT, log_f

DEFAULT_LEAVES_LOG2 = 16
DEFAULT_TAU = 2.0
# a loose cell is kept whole when its bound mass is below this fraction of
# the nearest neighbour's exact weight
DEFAULT_LOOSE = 1e-3

# kernel status codes
OK = 0
NEED_UNIFORMS = 1
COINCIDENT = 2


def default_depth(dimension: int) -> int:
    return max(1, DEFAULT_LEAVES_LOG2 // dimension)


class CellPyramid:
    """Degree sums per dyadic cell, levels 0..depth, plus leaf vertex lists."""

    def __init__(self, dimension: int, torus: bool, depth: int | None = None, capacity: int = 1024):
        if dimension > 3:
            raise ValueError("the cell pyramid supports d <= 3")
        self.d = dimension
        self.torus = torus
        self.depth = default_depth(dimension) if depth is None else int(depth)
        sizes = [2 ** (lvl * dimension) for lvl in range(self.depth + 1)]
        self.offsets = np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64)
        self.sums = np.zeros(int(self.offsets[-1]), dtype=np.int64)
        self.head = np.full(sizes[-1], -1, dtype=np.int64)
        self.nxt = np.full(capacity, -1, dtype=np.int64)

    def ensure_capacity(self, n):
        if self.nxt.size < n:
            self.nxt = np.concatenate([self.nxt, np.full(n - self.nxt.size, -1, dtype=np.int64)])


@nb.njit(cache=True, inline="always")
def _coord(x, M):
    c = int(x * M)
    return M - 1 if c >= M else c


@nb.njit(cache=True)
def _cell_index(p, lvl, d):
    M = 1 << lvl
    c = 0
    for j in range(d):
        c = c * M + _coord(p[j], M)
    return c


@nb.njit(cache=True)
def pyramid_add(sums, offsets, depth, p, amount):
    d = p.shape[0]
    for lvl in range(depth + 1):
        sums[offsets[lvl] + _cell_index(p, lvl, d)] += amount


@nb.njit(cache=True)
def pyramid_insert(sums, offsets, head, nxt, depth, pts, v, degree):
    p = pts[v]
    pyramid_add(sums, offsets, depth, p, degree)
    leaf = _cell_index(p, depth, p.shape[0])
    nxt[v] = head[leaf]
    head[leaf] = v


@nb.njit(cache=True, inline="always")
def _circ(u):
    u = u - math.floor(u)
    return u if u <= 0.5 else 1.0 - u


@nb.njit(cache=True)
def _box_dist(x, c, lvl, d, torus):
    """(dmin, dmax) from x to the level-``lvl`` cell with integer coords c."""
    h = 1.0 / (1 << lvl)
    lo2 = 0.0
    hi2 = 0.0
    for j in range(d):
        a = c[j] * h
        b = a + h
        xj = x[j]
        if torus:
            if lvl == 0:
                dlo = 0.0
                dhi = 0.5
            else:
                s = (a - xj) - math.floor(a - xj)
                e = s + h
                if s == 0.0 or e >= 1.0:
                    dlo = 0.0
                else:
                    dlo = min(s, 1.0 - e)
                if (s <= 0.5 <= e) or (s <= 1.5 <= e):
                    dhi = 0.5
                else:
                    dhi = max(_circ(s), _circ(e))
        else:
            if xj < a:
                dlo = a - xj
                dhi = b - xj
            elif xj > b:
                dlo = xj - b
                dhi = xj - a
            else:
                dlo = 0.0
                dhi = max(xj - a, b - xj)
        lo2 += dlo * dlo
        hi2 += dhi * dhi
    # shrink so that dmin never exceeds a computed point distance by rounding
    return math.sqrt(lo2) * (1.0 - 1e-12), math.sqrt(hi2)


@nb.njit(cache=True, inline="always")
def _log_f_bound(code, param, r):
    if code == F_CONSTANT:
        return 0.0
    if r <= 0.0:
        return np.inf
    return log_f(code, param, r)


@nb.njit(cache=True)
def sample_log_weights(w, count, u):
    """Invert one uniform against the max-shifted, Kahan-summed cumulative
    distribution of ``w[:count]`` in index order. Returns -1 if every weight
    is -inf."""
    m = -np.inf
    for i in range(count):
        if w[i] > m:
            m = w[i]
    if m == -np.inf:
        return -1
    total = 0.0
    comp = 0.0
    for i in range(count):
        y = math.exp(w[i] - m) - comp
        t = total + y
        comp = (t - total) - y
        total = t
    target = u * total
    acc = 0.0
    comp = 0.0
    last = -1
    for i in range(count):
        e = math.exp(w[i] - m)
        if e > 0.0:
            last = i
        y = e - comp
        t = acc + y
        comp = (t - acc) - y
        acc = t
        if acc > target and e > 0.0:
            return i
    return last


@nb.njit(cache=True)
def _grow_items(a, n):
    b = np.empty(n, dtype=a.dtype)
    b[: a.shape[0]] = a
    return b


@nb.njit(cache=True)
def build_proposals(x, pts, deg, sums, offsets, head, nxt, depth, code, param, torus, tau,
                    log_keep, it_w, it_ref, it_lvl, it_lb, stack):
    """Decompose the pyramid around ``x`` into proposal items.

    Item ``k`` is a vertex (``it_lvl[k] == -1``, ``it_ref`` the vertex id) or
    a bounded cell (``it_lvl`` its level, ``it_ref`` its linear index,
    ``it_lb`` the log-F upper bound). A cell is split while log F varies
    by more than ``tau`` over it, unless its bound log-mass is below
    ``log_keep``; the leaf holding ``x`` is always enumerated.
    Returns (count, status, arrays...).
    """
    d = x.shape[0]
    nitems = 0
    sp = 0
    stack[0, 0] = 0
    stack[0, 1] = 0
    stack[0, 2] = 0
    stack[0, 3] = 0
    sp = 1
    c = np.zeros(3, dtype=np.int64)
    nchild = 1 << d
    while sp > 0:
        sp -= 1
        lvl = stack[sp, 0]
        c[0] = stack[sp, 1]
        c[1] = stack[sp, 2]
        c[2] = stack[sp, 3]
        M = 1 << lvl
        lin = 0
        for j in range(d):
            lin = lin * M + c[j]
        S = sums[offsets[lvl] + lin]
        if S == 0:
            continue
        if nitems + 64 >= it_w.shape[0]:
            cap = 2 * it_w.shape[0]
            it_w = _grow_items(it_w, cap)
            it_ref = _grow_items(it_ref, cap)
            it_lvl = _grow_items(it_lvl, cap)
            it_lb = _grow_items(it_lb, cap)
        dmin, dmax = _box_dist(x, c, lvl, d, torus)
        lb = _log_f_bound(code, param, dmin)
        if lb < np.inf:
            logS = math.log(S)
            if logS + lb <= log_keep or lb - _log_f_bound(code, param, dmax) <= tau:
                it_w[nitems] = logS + lb
                it_ref[nitems] = lin
                it_lvl[nitems] = lvl
                it_lb[nitems] = lb
                nitems += 1
                continue
        if lvl == depth:
            v = head[lin]
            while v >= 0:
                r2 = 0.0
                for j in range(d):
                    a = abs(pts[v, j] - x[j])
                    if torus and a > 0.5:
                        a = 1.0 - a
                    r2 += a * a
                if r2 == 0.0:
                    return nitems, COINCIDENT, it_w, it_ref, it_lvl, it_lb
                if nitems >= it_w.shape[0]:
                    cap = 2 * it_w.shape[0]
                    it_w = _grow_items(it_w, cap)
                    it_ref = _grow_items(it_ref, cap)
                    it_lvl = _grow_items(it_lvl, cap)
                    it_lb = _grow_items(it_lb, cap)
                it_w[nitems] = math.log(deg[v]) + log_f(code, param, math.sqrt(r2))
                it_ref[nitems] = v
                it_lvl[nitems] = -1
                it_lb[nitems] = 0.0
                nitems += 1
                v = nxt[v]
            continue
        # push children in reverse so they pop in natural order
        for ch in range(nchild - 1, -1, -1):
            stack[sp, 0] = lvl + 1
            for j in range(d):
                bit = (ch >> (d - 1 - j)) & 1
                stack[sp, 1 + j] = 2 * c[j] + bit
            for j in range(d, 3):
                stack[sp, 1 + j] = 0
            sp += 1
    return nitems, OK, it_w, it_ref, it_lvl, it_lb


@nb.njit(cache=True)
def _descend(lvl, lin, d, depth, sums, offsets, head, nxt, deg, ubuf, upos):
    """Degree-proportional vertex inside a cell. Returns (vertex, upos) or
    (-1, upos) if the uniform buffer ran out."""
    c = np.zeros(3, dtype=np.int64)
    M = 1 << lvl
    rem = lin
    for j in range(d - 1, -1, -1):
        c[j] = rem % M
        rem //= M
    nchild = 1 << d
    while lvl < depth:
        if upos >= ubuf.shape[0]:
            return -1, upos
        M2 = 1 << (lvl + 1)
        total = 0
        for ch in range(nchild):
            cl = 0
            for j in range(d):
                cl = cl * M2 + 2 * c[j] + ((ch >> (d - 1 - j)) & 1)
            total += sums[offsets[lvl + 1] + cl]
        target = ubuf[upos] * total
        upos += 1
        acc = 0
        pick = -1
        for ch in range(nchild):
            cl = 0
            for j in range(d):
                cl = cl * M2 + 2 * c[j] + ((ch >> (d - 1 - j)) & 1)
            s = sums[offsets[lvl + 1] + cl]
            if s > 0:
                pick = ch
                acc += s
                if acc > target:
                    break
        for j in range(d):
            c[j] = 2 * c[j] + ((pick >> (d - 1 - j)) & 1)
        lvl += 1
    M = 1 << depth
    leaf = 0
    for j in range(d):
        leaf = leaf * M + c[j]
    if upos >= ubuf.shape[0]:
        return -1, upos
    total = 0
    v = head[leaf]
    while v >= 0:
        total += deg[v]
        v = nxt[v]
    target = ubuf[upos] * total
    upos += 1
    acc = 0
    v = head[leaf]
    pick = -1
    while v >= 0:
        pick = v
        acc += deg[v]
        if acc > target:
            break
        v = nxt[v]
    return pick, upos


@nb.njit(cache=True)
def tree_sample(x, pts, deg, sums, offsets, head, nxt, depth, code, param, torus, tau,
                log_keep, it_w, it_ref, it_lvl, it_lb, stack, ubuf, upos):
    """One exact attachment draw. Returns (status, vertex, upos, workspace...)."""
    d = x.shape[0]
    nitems, status, it_w, it_ref, it_lvl, it_lb = build_proposals(
        x, pts, deg, sums, offsets, head, nxt, depth, code, param, torus, tau,
        log_keep, it_w, it_ref, it_lvl, it_lb, stack)
    if status != OK:
        return status, -1, upos, it_w, it_ref, it_lvl, it_lb
    while True:
        if upos >= ubuf.shape[0]:
            return NEED_UNIFORMS, -1, upos, it_w, it_ref, it_lvl, it_lb
        k = sample_log_weights(it_w, nitems, ubuf[upos])
        upos += 1
        if it_lvl[k] < 0:
            return OK, it_ref[k], upos, it_w, it_ref, it_lvl, it_lb
        v, upos = _descend(it_lvl[k], it_ref[k], d, depth, sums, offsets, head, nxt, deg, ubuf, upos)
        if v < 0 or upos >= ubuf.shape[0]:
            return NEED_UNIFORMS, -1, upos, it_w, it_ref, it_lvl, it_lb
        r2 = 0.0
        for j in range(d):
            a = abs(pts[v, j] - x[j])
            if torus and a > 0.5:
                a = 1.0 - a
            r2 += a * a
        if r2 == 0.0:
            return COINCIDENT, v, upos, it_w, it_ref, it_lvl, it_lb
        logratio = log_f(code, param, math.sqrt(r2)) - it_lb[k]
        u = ubuf[upos]
        upos += 1
        if logratio >= 0.0 or u < math.exp(logratio):
            return OK, v, upos, it_w, it_ref, it_lvl, it_lb


def new_workspace(dimension: int, depth: int, capacity: int = 4096):
    return (np.empty(capacity, dtype=np.float64), np.empty(capacity, dtype=np.int64),
            np.empty(capacity, dtype=np.int64), np.empty(capacity, dtype=np.float64),
            np.zeros(((depth + 2) * (1 << dimension) + 8, 4), dtype=np.int64))


@nb.njit(cache=True)
def _tree_draws(x, pts, deg, sums, offsets, head, nxt, depth, code, param, torus, tau, log_keep,
                it_w, it_ref, it_lvl, it_lb, stack, ubuf, upos, out, done):
    while done < out.shape[0]:
        status, v, upos2, it_w, it_ref, it_lvl, it_lb = tree_sample(
            x, pts, deg, sums, offsets, head, nxt, depth, code, param, torus, tau, log_keep,
            it_w, it_ref, it_lvl, it_lb, stack, ubuf, upos)
        if status != OK:
            return status, done, upos
        upos = upos2
        out[done] = v
        done += 1
    return OK, done, upos


def frozen_draws(positions, degree, x, F, torus: bool, count: int, gen: np.random.Generator,
                 depth: int | None = None, tau: float = DEFAULT_TAU, loose: float = DEFAULT_LOOSE
                 ) -> np.ndarray:
    """``count`` independent attachment draws for a fixed vertex set and site ``x``.

    Used to check the sampler against directly evaluated probabilities.
    """
    pts = np.ascontiguousarray(positions, dtype=np.float64)
    deg = np.ascontiguousarray(degree, dtype=np.int64)
    x = np.ascontiguousarray(x, dtype=np.float64)
    n, d = pts.shape
    pyr = CellPyramid(d, torus, depth, capacity=n)
    for v in range(n):
        pyramid_insert(pyr.sums, pyr.offsets, pyr.head, pyr.nxt, pyr.depth, pts, v, deg[v])
    diff = np.abs(pts - x)
    if torus:
        diff = np.minimum(diff, 1.0 - diff)
    r = np.sqrt((diff * diff).sum(axis=1))
    j = int(np.argmin(r))
    if r[j] == 0.0:
        raise ValueError("site coincides with a vertex")
    log_keep = math.log(deg[j]) + float(log_f(F.code, F.param, r[j])) + math.log(loose)
    ws = new_workspace(d, pyr.depth)
    out = np.empty(count, dtype=np.int64)
    done = 0
    ubuf = gen.random(1 << 16)
    upos = 0
    while done < count:
        status, done, upos = _tree_draws(x, pts, deg, pyr.sums, pyr.offsets, pyr.head, pyr.nxt, pyr.depth,
                                         F.code, F.param, torus, float(tau), log_keep, *ws, ubuf, upos,
                                         out, done)
        if status == COINCIDENT:
            raise ValueError("site coincides with a vertex")
        if status == NEED_UNIFORMS:
            # replay the unfinished draw on the same uniforms, extended
            ubuf = np.concatenate([ubuf[upos:], gen.random(1 << 16)])
            upos = 0
    return out
