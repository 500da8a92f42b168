import math

import numpy as np
import pytest
from oracles import brute_nearest, chisquare_pvalue, exact_attachment_probs

from gpagraph import attach_tree as at
from gpagraph.errors import CoincidentPointError, ConfigError
from gpagraph.geometry import AttractivenessSpec, DensitySpec, DomainSpec, RngStream
from gpagraph.growth import (GraphState, ModelSpec, attachment_log_weights, graph_csv_text, grow_step,
                             init_graph, run_growth, sample_attachment, write_graph_csv)
from gpagraph.spatial_index import OnlineIndex
from gpagraph.stats import degree_tail

from conftest import gpa


def _probs(w):
    return np.exp(w - np.logaddexp.reduce(w))


def test_init_graph():
    st = init_graph([0.1, 0.2], [0.7, 0.7], DomainSpec("torus", 2))
    assert list(st.degree) == [1, 1]
    assert st.n == 1 and st.degree.sum() == 2
    assert st.parent[1] == 0 and st.nn_parent[1] == 0
    assert not st.mismatch[1]
    st.check_invariants()
    with pytest.raises(CoincidentPointError):
        init_graph([0.3], [0.3], DomainSpec("torus", 1))


def _state(pos, deg, d=1, kind="unit_cube"):
    dom = DomainSpec(kind, d)
    st = init_graph(pos[0], pos[1], dom)
    st.positions = np.asarray(pos, dtype=float).reshape(len(pos), d)
    st.degree = np.asarray(deg, dtype=np.int64)
    return st


def test_attachment_weights_examples():
    const = AttractivenessSpec("constant")
    st = _state([[0.1], [0.9]], [1, 1])
    np.testing.assert_allclose(_probs(attachment_log_weights(st, const, [0.5])), [0.5, 0.5])
    st = _state([[0.1], [0.5], [0.9]], [2, 1, 1])
    np.testing.assert_allclose(_probs(attachment_log_weights(st, const, [0.3])), [0.5, 0.25, 0.25])
    st = _state([[0.2], [0.6]], [2, 1])
    w = attachment_log_weights(st, AttractivenessSpec("power_law", 1.0), [0.5])
    np.testing.assert_allclose(np.exp(w), [2 / 0.3, 10.0], rtol=1e-12)
    np.testing.assert_allclose(_probs(w), [0.4, 0.6], rtol=1e-12)


def test_attachment_weights_coincident():
    st = _state([[0.2], [0.6]], [2, 1])
    with pytest.raises(CoincidentPointError):
        attachment_log_weights(st, AttractivenessSpec("gamma", 2), [0.6])


def test_sample_attachment_equal_weights():
    rng = RngStream(1, 0)
    draws = np.array([sample_attachment(np.zeros(2), rng) for _ in range(100_000)])
    p = (draws == 0).mean()
    assert abs(p - 0.5) < 3 * math.sqrt(0.25 / draws.size)


def test_sample_attachment_dominant_weight():
    rng = RngStream(2, 0)
    w = np.array([0.0, 1000.0, -5.0, 3.0])
    draws = {sample_attachment(w, rng) for _ in range(100_000)}
    assert draws == {1}


def test_sample_attachment_errors_and_neg_inf():
    with pytest.raises(ValueError):
        sample_attachment(np.full(3, -np.inf), RngStream(1, 0))
    rng = RngStream(3, 0)
    w = np.array([-np.inf, 0.0, -np.inf])
    assert {sample_attachment(w, rng) for _ in range(1000)} == {1}


def test_sample_attachment_huge_gamma_weights_finite():
    # F_gamma at tiny distances overflows doubles; the log-domain path must not
    st = _state([[1e-100], [5e-100], [0.9]], [1, 3, 2])
    w = attachment_log_weights(st, AttractivenessSpec("gamma", 3.0), [3e-100])
    assert np.all(np.isfinite(w)) and w.max() > 1e6
    p = _probs(w)
    assert np.all(np.isfinite(p)) and p.sum() == pytest.approx(1.0)


def test_five_vertex_high_precision_oracle():
    rng = np.random.default_rng(55)
    pos = rng.random((5, 2))
    deg = np.array([1, 3, 2, 1, 4])
    x = rng.random(2)
    F = AttractivenessSpec("gamma", 1.5)
    st = _state(pos, deg, d=2, kind="torus")
    w = attachment_log_weights(st, F, x)
    exact = exact_attachment_probs(pos, deg, x, F, torus=True)
    np.testing.assert_allclose(_probs(w), exact, rtol=1e-12)
    r = RngStream(8, 0)
    draws = np.array([sample_attachment(w, r) for _ in range(100_000)])
    assert chisquare_pvalue(draws, exact) > 1e-3


def test_constant_F_ignores_positions():
    """Against exact degree-proportional probabilities on a frozen state."""
    rng = np.random.default_rng(4)
    pos = rng.random((10, 2))
    deg = rng.integers(1, 7, size=10)
    st = _state(pos, deg, d=2, kind="torus")
    w = attachment_log_weights(st, AttractivenessSpec("constant"), rng.random(2))
    np.testing.assert_allclose(_probs(w), deg / deg.sum(), rtol=1e-12)
    r = RngStream(9, 0)
    draws = np.array([sample_attachment(w, r) for _ in range(100_000)])
    assert chisquare_pvalue(draws, deg / deg.sum()) > 1e-3


def test_grow_step_ong_nearest():
    dom = DomainSpec("unit_cube", 1)
    st = init_graph([0.1], [0.5], dom)
    idx = OnlineIndex(dom)
    idx.insert([0.1])
    idx.insert([0.5])
    rng = RngStream(0, 0)
    grow_step(st, ModelSpec("ONG"), [0.9], idx, rng)
    grow_step(st, ModelSpec("ONG"), [0.55], idx, rng)
    assert st.parent[3] == 1 and st.nn_parent[3] == 1
    assert list(st.degree) == [1, 3, 1, 1]
    st.check_invariants()
    with pytest.raises(CoincidentPointError):
        grow_step(st, ModelSpec("ONG"), [0.55], idx, rng)


def test_grow_step_loop_equals_run_growth_scan():
    model = gpa("gamma:2")
    dom = DomainSpec("torus", 2)
    n = 300
    full = run_growth(model, n, DensitySpec(), dom, RngStream(5, 3), sampler="scan")
    rng = RngStream(5, 3)
    pts = rng.points.random((n + 1, 2))
    st = init_graph(pts[0], pts[1], dom, model)
    idx = OnlineIndex(dom, n_expected=n + 1)
    idx.insert(pts[0])
    idx.insert(pts[1])
    for i in range(2, n + 1):
        grow_step(st, model, pts[i], idx, rng)
    np.testing.assert_array_equal(st.parent, full.parent)
    np.testing.assert_array_equal(st.nn_parent, full.nn_parent)
    np.testing.assert_array_equal(st.degree, full.degree)


def test_run_growth_n1_is_init_graph():
    st = run_growth(ModelSpec("ONG"), 1, DensitySpec(), DomainSpec("torus", 2), RngStream(1, 0))
    assert st.num_vertices == 2 and list(st.degree) == [1, 1]
    with pytest.raises(ConfigError):
        run_growth(ModelSpec("ONG"), 0, DensitySpec(), DomainSpec("torus", 2), RngStream(1, 0))


@pytest.mark.parametrize("kind", ["torus", "unit_cube"])
@pytest.mark.parametrize("d", [1, 2, 3])
def test_ong_parents_are_brute_force_nearest(kind, d):
    dom = DomainSpec(kind, d)
    st = run_growth(ModelSpec("ONG"), 1500, DensitySpec(), dom, RngStream(d, 7))
    for i in range(1, st.num_vertices):
        assert st.parent[i] == brute_nearest(st.positions[:i], st.positions[i], dom.torus)
    st.check_invariants()


def test_ong_backends_identical_n1e4():
    dom = DomainSpec("torus", 2)
    a = run_growth(ModelSpec("ONG"), 10_000, DensitySpec(), dom, RngStream(42, 0), backend="grid")
    b = run_growth(ModelSpec("ONG"), 10_000, DensitySpec(), dom, RngStream(42, 0), backend="linear_scan")
    np.testing.assert_array_equal(a.parent, b.parent)


@pytest.mark.parametrize("spec", ["constant", "power:0.5", "power:2", "gamma:1.3", "gamma:2", "gamma:4"])
@pytest.mark.parametrize("sampler", ["scan", "tree"])
def test_gpa_invariants(spec, sampler):
    for d, kind in ((1, "torus"), (2, "unit_cube"), (3, "torus")):
        st = run_growth(gpa(spec), 1500, DensitySpec(), DomainSpec(kind, d), RngStream(17, d), sampler=sampler)
        st.check_invariants()
        degree_tail(st).check_invariants()
        nn = st.nn_parent
        for i in range(2, st.num_vertices, 97):
            assert nn[i] == brute_nearest(st.positions[:i], st.positions[i], kind == "torus")


def test_gpa_backend_does_not_change_graph():
    dom = DomainSpec("torus", 2)
    for sampler in ("scan", "tree"):
        a = run_growth(gpa("gamma:2"), 3000, DensitySpec(), dom, RngStream(2, 2), backend="grid", sampler=sampler)
        b = run_growth(gpa("gamma:2"), 3000, DensitySpec(), dom, RngStream(2, 2), backend="linear_scan",
                       sampler=sampler)
        np.testing.assert_array_equal(a.parent, b.parent)


@pytest.mark.parametrize("sampler", ["scan", "tree"])
def test_prefix_property(sampler):
    dom = DomainSpec("torus", 2)
    long = run_growth(gpa("power:3"), 100_000 if sampler == "tree" else 20_000, DensitySpec(), dom,
                      RngStream(8, 1), sampler=sampler)
    short = run_growth(gpa("power:3"), 1000, DensitySpec(), dom, RngStream(8, 1), sampler=sampler)
    np.testing.assert_array_equal(long.parent[:1001], short.parent)
    p = long.prefix(1000)
    np.testing.assert_array_equal(p.degree, short.degree)


def test_grid_density_growth():
    dens = DensitySpec("grid_piecewise_constant", (2, 2), (1.0, 5.0, 0.2, 1.0))
    st = run_growth(gpa("gamma:2"), 5000, dens, DomainSpec("unit_cube", 2), RngStream(3, 3))
    st.check_invariants()
    q = (st.positions * 2).astype(int)
    frac = np.bincount(q[:, 0] * 2 + q[:, 1], minlength=4) / st.num_vertices
    np.testing.assert_allclose(frac, np.array([1.0, 5.0, 0.2, 1.0]) / 7.2, atol=0.02)


def test_high_dimension_scan_sampler():
    st = run_growth(gpa("power:150"), 400, DensitySpec(), DomainSpec("torus", 100), RngStream(1, 1))
    st.check_invariants()
    with pytest.raises(ConfigError):
        run_growth(gpa("gamma:2"), 10, DensitySpec(), DomainSpec("torus", 4), RngStream(1, 1), sampler="tree")


def test_gamma_mismatch_below_power_law():
    dom = DomainSpec("torus", 2)
    mg, mp = [], []
    for s in range(3):
        mg.append(run_growth(gpa("gamma:2"), 10_000, DensitySpec(), dom, RngStream(s, 0)).mismatch.mean())
        mp.append(run_growth(gpa("power:4"), 10_000, DensitySpec(), dom, RngStream(s, 0)).mismatch.mean())
    assert np.mean(mg) < np.mean(mp)


def test_csv_export(tmp_path):
    dom = DomainSpec("torus", 2)
    a = run_growth(gpa("gamma:2"), 50, DensitySpec(), dom, RngStream(1, 1))
    b = run_growth(gpa("gamma:2"), 50, DensitySpec(), dom, RngStream(1, 1))
    write_graph_csv(a, tmp_path / "a.csv")
    write_graph_csv(b, tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    lines = graph_csv_text(a).splitlines()
    assert lines[0] == "id,x_0,x_1,degree,parent,nn_parent,mismatch"
    assert len(lines) == 52
    assert lines[1].split(",")[4] == "-1"
    # coordinates round-trip exactly
    row = lines[10].split(",")
    assert float(row[1]) == a.positions[9, 0]


def test_frozen_tree_draws_match_scan_probabilities():
    rng = np.random.default_rng(3)
    pos = rng.random((300, 2))
    deg = rng.integers(1, 5, size=300)
    x = rng.random(2)
    F = AttractivenessSpec("power_law", 3.0)
    exact = exact_attachment_probs(pos, deg, x, F, torus=True)
    for depth in (2, 4, 6):
        draws = at.frozen_draws(pos, deg, x, F, True, 100_000, rng, depth=depth, tau=1.0, loose=1.0)
        assert chisquare_pvalue(draws, exact) > 1e-3
