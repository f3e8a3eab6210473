import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mmspace import (
    Box,
    CapacityError,
    FiniteMetricMeasureSpace,
    GeometryParams,
    InputError,
    WeightSpec,
    discretize,
    estimate_doubling,
    grid_midpoint_R0,
    truncation_box,
    verify_approximate_midpoint,
)

from .conftest import cloud, line_space


def doubling_oracle(space, b, tau):
    """Every centre, every distinct radius up to b (and b), recomputed from scratch."""
    best = 1.0
    for c in range(space.n):
        row = space.row(c)
        radii = set(row[row <= b].tolist())
        if b < row.max():
            radii.add(b)
        for r in radii:
            best = max(best, space.mass[row <= tau * r].sum() / space.mass[row <= r].sum())
    return best


def test_closed_balls_include_boundary():
    X = line_space(5)
    assert X.ball(2, 1.0).tolist() == [False, True, True, True, False]
    assert X.measure(X.ball(0, 0.0)) == 1.0


def test_uniform_line_doubling_example():
    # away from the ends B(c, r) holds 2r+1 lattice points, so the ratio is
    # (4r+1)/(2r+1), largest at r = b = 3
    X = line_space(30)
    rep = estimate_doubling(X, 3.0, 2.0)
    assert rep.constant == pytest.approx(doubling_oracle(X, 3.0, 2.0))
    assert rep.constant == pytest.approx(13 / 7)


@given(st.integers(5, 25), st.integers(1, 2), st.integers(0, 1000), st.floats(0.5, 3.0), st.floats(1.0, 3.0))
@settings(max_examples=25, deadline=None)
def test_doubling_matches_bruteforce(n, d, seed, b, tau):
    X = cloud(n, d, seed)
    assert estimate_doubling(X, b, tau).constant == pytest.approx(doubling_oracle(X, b, tau), rel=1e-12)


def test_midpoint_on_line():
    X = line_space(41, 0.1)
    # adjacent lattice points have no strict midpoint; the grid tolerance absorbs them
    assert not verify_approximate_midpoint(X, 0.0, 0.75, tolerance=0.0).verdict
    assert verify_approximate_midpoint(X, 0.0, 0.75, tolerance=0.1).verdict
    assert verify_approximate_midpoint(X, 0.15, 0.75, tolerance=0.0).verdict


def test_midpoint_fails_on_two_clusters():
    x = np.array([0.0, 0.1, 10.0, 10.1])[:, None]
    rep = verify_approximate_midpoint(FiniteMetricMeasureSpace.from_points(x), 1.0, 0.75, tolerance=0.0)
    assert not rep.verdict
    assert rep.measured_beta > 0.9


def test_grid_R0_formula(gauss1d):
    assert grid_midpoint_R0(gauss1d, 0.75) == pytest.approx(8 * gauss1d.max_edge)


def test_geometry_params():
    GeometryParams(2.0, 0.75, 0.4).require_admissible()
    with pytest.raises(InputError):
        GeometryParams(1.0, 0.75, 0.25).require_admissible()
    with pytest.raises(InputError):
        GeometryParams(1.0, 0.4)
    assert GeometryParams(1.0, 0.75, 0.1).with_b(3.0).b == 3.0


def test_discretize_gauss_mass_and_metric(gauss1d):
    assert gauss1d.total_mass == pytest.approx(math.sqrt(math.pi), rel=1e-4)
    assert gauss1d.meta["tail_mass_fraction"] < 1e-4
    x = gauss1d.coords[:, 0]
    i, j = int(np.argmin(np.abs(x))), int(np.argmin(np.abs(x - 1.0)))
    a, b = x[i], x[j]
    assert gauss1d.distance(i, j) == pytest.approx((b - a) + b * b + a * abs(a), rel=1e-4)


def test_truncation_box_tail():
    box = truncation_box(WeightSpec.gaussian(1), tail=1e-4)
    L = box.hi[0]
    assert math.erfc(L) <= 1e-4 * 1.05
    assert math.erfc(L / 1.02) > 1e-4 * 0.95


def test_lazy_and_dense_agree():
    spec = WeightSpec.gaussian(2)
    dense = discretize(spec, "-", Box.cube(-1, 1, 2), 0.25, mode="dense")
    lazy = discretize(spec, "-", Box.cube(-1, 1, 2), 0.25, mode="lazy")
    assert not lazy.is_dense
    assert np.allclose(lazy.rows(np.arange(lazy.n)), dense.dist)
    assert lazy.diameter() == pytest.approx(dense.diameter())


def test_dense_over_budget():
    with pytest.raises(CapacityError):
        discretize(WeightSpec.gaussian(2), "-", Box.cube(-1, 1, 2), 0.1, mode="dense", memory_budget=1000)


def test_save_load_round_trip(tmp_path, gauss2d):
    for name in ("s.npz", "s.json"):
        gauss2d.save(tmp_path / name)
        back = FiniteMetricMeasureSpace.load(tmp_path / name)
        assert np.array_equal(back.mass, gauss2d.mass)
        assert np.allclose(back.dist, gauss2d.dist)
        assert back.meta["h"] == gauss2d.meta["h"]


def test_shortest_path_metric_has_no_triangle_violation(gauss2d):
    assert gauss2d.triangle_violation() <= 1e-12


def test_rejects_bad_input():
    with pytest.raises(InputError):
        FiniteMetricMeasureSpace(np.array([1.0, -1.0]), dist=np.zeros((2, 2)))
    with pytest.raises(InputError):
        FiniteMetricMeasureSpace(np.ones(2), dist=np.array([[0.0, 1.0], [2.0, 0.0]]))
