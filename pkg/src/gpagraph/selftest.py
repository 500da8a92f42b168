"""Quick structural self-check of an installed build (``gpagraph selftest``)."""
from __future__ import annotations

import traceback

import numpy as np
from scipy import stats as sps

from . import attach_tree as at
from .geometry import AttractivenessSpec, DensitySpec, DomainSpec, RngStream
from .growth import ModelSpec, attachment_log_weights, init_graph, run_growth, sample_attachment
from .stats import degree_tail


def _check_graph(st):
    st.check_invariants()
    degree_tail(st).check_invariants()


def _ong_backends():
    for d in (1, 2, 3):
        for kind in ("torus", "unit_cube"):
            dom = DomainSpec(kind, d)
            a = run_growth(ModelSpec("ONG"), 3000, DensitySpec(), dom, RngStream(11, d), backend="grid")
            b = run_growth(ModelSpec("ONG"), 3000, DensitySpec(), dom, RngStream(11, d), backend="linear_scan")
            _check_graph(a)
            assert np.array_equal(a.parent, b.parent), f"grid and linear_scan disagree ({kind}, d={d})"


def _gpa_invariants():
    for spec in ("gamma:2", "power:2", "constant"):
        for sampler in ("scan", "tree"):
            m = ModelSpec("GPA", AttractivenessSpec.parse(spec))
            st = run_growth(m, 2000, DensitySpec(), DomainSpec("torus", 2), RngStream(3, 0), sampler=sampler)
            _check_graph(st)


def _determinism():
    m = ModelSpec("GPA", AttractivenessSpec.parse("gamma:2"))
    dom = DomainSpec("torus", 2)
    a = run_growth(m, 3000, DensitySpec(), dom, RngStream(5, 1))
    b = run_growth(m, 3000, DensitySpec(), dom, RngStream(5, 1))
    c = run_growth(m, 1000, DensitySpec(), dom, RngStream(5, 1))
    assert np.array_equal(a.parent, b.parent), "same seed, different graphs"
    assert np.array_equal(a.parent[:1001], c.parent), "shorter run is not a prefix"


def _sampler_law():
    rng = np.random.default_rng(2024)
    dom = DomainSpec("torus", 2)
    F = AttractivenessSpec("gamma", 1.5)
    st = init_graph(rng.random(2), rng.random(2), dom, ModelSpec("GPA", F))
    pos = rng.random((8, 2))
    deg = rng.integers(1, 6, size=8)
    st.positions, st.degree = pos, deg
    x = rng.random(2)
    w = attachment_log_weights(st, F, x)
    p = np.exp(w - np.logaddexp.reduce(w))
    draws = 20000
    scan = np.array([sample_attachment(w, rng) for _ in range(draws)])
    tree = at.frozen_draws(pos, deg, x, F, True, draws, rng, depth=2)
    for name, got in (("scan", scan), ("tree", tree)):
        obs = np.bincount(got, minlength=8)
        pval = sps.chisquare(obs, p * draws).pvalue
        assert pval > 1e-4, f"{name} sampler chi-square p = {pval:.2e}"


CHECKS = [
    ("ONG grid/linear_scan agreement and invariants", _ong_backends),
    ("GPA invariants for both samplers", _gpa_invariants),
    ("determinism and prefix property", _determinism),
    ("attachment law on a frozen state", _sampler_law),
]


def run_selftest(verbose: bool = True) -> int:
    failed = 0
    for name, fn in CHECKS:
        try:
            fn()
            ok, msg = True, ""
        except Exception as exc:
            ok, msg = False, f"{type(exc).__name__}: {exc}"
            if verbose:
                traceback.print_exc()
        failed += not ok
        if verbose:
            print(f"{'PASS' if ok else 'FAIL'}  {name}{'  ' + msg if msg else ''}")
    if verbose:
        print(f"{len(CHECKS) - failed}/{len(CHECKS)} checks passed")
    return 0 if failed == 0 else 1
