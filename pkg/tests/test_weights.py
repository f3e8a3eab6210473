import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import erf

from mmspace import (
    Ball,
    Box,
    GridGraph,
    InputError,
    WeightSpec,
    check_admissible,
    check_tame,
    geodesic_distance,
    metric_equivalence,
    stencil_anisotropy,
    verify_integral_lemma,
    weighted_mass,
)


def rho_gauss_1d(a: float, b: float) -> float:
    # int_a^b (1 + 2|x|) dx
    a, b = min(a, b), max(a, b)
    return (b - a) + (b * abs(b) - a * abs(a))


def test_gaussian_geodesic_closed_form():
    est, lo, up = geodesic_distance(WeightSpec.gaussian(1), [0.0], [1.0], 1e-3)
    assert est == pytest.approx(2.0, rel=1e-3)
    assert lo <= 2.0 + 1e-9 <= up + 2e-9


_GRAPH = GridGraph(WeightSpec.gaussian(1), Box.cube(-2, 2, 1), 1e-3)


@given(st.integers(-2000, 2000), st.integers(-2000, 2000))
@settings(max_examples=40, deadline=None)
def test_gaussian_geodesic_matches_integral(i, j):
    # grid nodes, so the only error is the trapezoid rule at the kink of |x|
    a, b = i * 1e-3, j * 1e-3
    est, lo, up = geodesic_distance(WeightSpec.gaussian(1), [a], [b], 1e-3, graph=_GRAPH)
    exact = rho_gauss_1d(a, b)
    assert est == pytest.approx(exact, rel=1e-6, abs=1e-6)
    assert lo <= exact + 1e-9 and exact <= up + 1e-6


def test_constant_weight_is_euclidean_in_2d():
    spec = WeightSpec.constant(2)
    est, lo, up = geodesic_distance(spec, [0.0, 0.0], [1.0, 0.5], 0.05)
    exact = math.hypot(1.0, 0.5)
    assert lo <= exact <= up + 1e-12
    assert est == pytest.approx(exact, rel=1e-12)


def test_stencil_anisotropy_values():
    assert stencil_anisotropy(1) == 1.0
    assert stencil_anisotropy(2) == pytest.approx(1 / math.cos(math.pi / 8))
    assert stencil_anisotropy(3) > stencil_anisotropy(2)


@pytest.mark.parametrize("L", [0.5, 1.0, 2.5])
def test_gaussian_mass_against_erf(L):
    m = weighted_mass(WeightSpec.gaussian(1), "-", Box.cube(-L, L, 1), 1e-3)
    assert m == pytest.approx(math.sqrt(math.pi) * erf(L), rel=1e-6)


def test_gaussian_mass_2d_product():
    m = weighted_mass(WeightSpec.gaussian(2), "-", Box.cube(-1, 1, 2), 5e-3)
    assert m == pytest.approx((math.sqrt(math.pi) * erf(1.0)) ** 2, rel=1e-4)


def test_mass_of_ball_constant_weight():
    m = weighted_mass(WeightSpec.constant(2), "+", Ball((0.0, 0.0), 1.0), 2e-3)
    assert m == pytest.approx(math.pi, rel=1e-3)


def test_power_weight_alpha_one_example():
    # phi = 0.5 |x|^2 has m = 1 + |x|, so rho(0, x) = x + x^2/2
    spec = WeightSpec.power(2.0, 1, coefficient=0.5)
    est, _, _ = geodesic_distance(spec, [0.0], [2.0], 1e-3)
    assert est == pytest.approx(4.0, rel=1e-4)


def test_tame_gaussian_but_not_exp_square():
    assert check_tame(WeightSpec.gaussian(1), 1.0, Box.cube(-4, 4, 1)).verdict
    assert check_tame(WeightSpec.gaussian(2), 1.0, Box.cube(-4, 4, 2), sample_count=41).verdict
    assert not check_tame(WeightSpec.exponential(2.0, 1), 1.0, Box.cube(-4, 4, 1)).verdict


def test_admissible_verdicts():
    rep = check_admissible(WeightSpec.gaussian(1), Box.cube(-4, 4, 1), 4.0)
    assert rep.verdict and rep.divergent
    assert rep.hessian_ratio_tail == pytest.approx(2 / (4 * 16))
    assert rep.radial_ratio_floor == pytest.approx(1.0)
    # gradient does not diverge for a constant weight
    assert not check_admissible(WeightSpec.constant(1), Box.cube(-4, 4, 1), 2.0).verdict


def test_admissible_rejects_shell_inside_tau0():
    spec = WeightSpec.power(0.5, 1)
    with pytest.raises(InputError):
        check_admissible(spec, Box.cube(-4, 4, 1), 0.5)


def _lemma_oracle(taus, As):
    # psi = r, h = 1, d = 1: LHS/(a RHS) = (e^{t+a} - e^t) / (a (e^{t+a} - 1))
    t, a = np.meshgrid(taus, As, indexing="ij")
    return float(np.min((np.exp(t + a) - np.exp(t)) / (a * (np.exp(t + a) - 1))))


def test_integral_lemma_linear_closed_form():
    taus, As = np.linspace(0, 6, 13), np.linspace(0.1, 1, 10)
    C = verify_integral_lemma(lambda r: r, lambda r: np.ones_like(r), 1, "lower-tail", taus, As)
    assert C == pytest.approx(_lemma_oracle(taus, As), rel=1e-6)
    assert C >= 0.6
    assert C == pytest.approx(1 - math.exp(-1), abs=5e-3)


def test_integral_lemma_square_positive():
    C = verify_integral_lemma(lambda r: r * r, lambda r: 1 / (1 + 2 * r), 1, "lower-tail", np.linspace(0, 5, 11), np.linspace(0.1, 1, 10))
    assert C > 0


def test_integral_lemma_upper_tail_gaussian():
    # int_{t-a h}^t e^{-r^2} >= C a int_{t-a h}^inf e^{-r^2} with h = 1/(1+2r)
    C = verify_integral_lemma(lambda r: r * r, lambda r: 1 / (1 + 2 * r), 1, "upper-tail", np.linspace(1, 5, 9), np.linspace(0.1, 1, 10), T=1)
    assert C > 0


def test_integral_lemma_bad_direction():
    with pytest.raises(InputError):
        verify_integral_lemma(lambda r: r, lambda r: np.ones_like(r), 1, "sideways", [1.0], [0.5])


def test_metric_equivalence_small_box():
    res = metric_equivalence(WeightSpec.gaussian(2), Box.cube(-1, 1, 2), 0.1, 1.0)
    assert res["pairs"] > 0
    assert 1.0 <= res["constant"] <= 10
    assert res["min_ratio"] <= res["max_ratio"]


@given(st.floats(0.5, 4.0), st.floats(0.1, 3.0), st.integers(1, 3))
@settings(max_examples=30, deadline=None)
def test_spec_json_round_trip(alpha, coef, d):
    spec = WeightSpec.power(alpha, d, coefficient=coef)
    back = WeightSpec.from_json(spec.to_json())
    x = np.random.default_rng(0).normal(size=(5, d)) + 2.0
    assert np.allclose(back.value(x), spec.value(x))
    assert back.tau0 == spec.tau0


@given(st.floats(1.0, 3.0), st.lists(st.floats(0.3, 2.0), min_size=2, max_size=2))
@settings(max_examples=30, deadline=None)
def test_gradient_matches_finite_differences(alpha, x):
    spec = WeightSpec.power(alpha, 2)
    x = np.array([x])
    eps = 1e-6
    fd = np.array([(spec.value(x + eps * e) - spec.value(x - eps * e))[0] / (2 * eps) for e in np.eye(2)])
    assert np.allclose(spec.grad(x)[0], fd, rtol=1e-5, atol=1e-7)


def test_combination_and_tabulated():
    g = WeightSpec.gaussian(1)
    combo = WeightSpec.combination([(2.0, g), (1.0, WeightSpec.constant(1))])
    x = np.array([[0.5], [1.5]])
    assert np.allclose(combo.value(x), 2 * g.value(x))
    axis = np.linspace(-3, 3, 601)
    tab = WeightSpec.tabulated([axis], axis**2)
    assert np.allclose(tab.value(x), g.value(x), atol=1e-4)


def test_invalid_inputs():
    with pytest.raises(InputError):
        WeightSpec("nonsense", 1)
    with pytest.raises(InputError):
        WeightSpec.power(-1.0, 1)
    with pytest.raises(InputError):
        GridGraph(WeightSpec.gaussian(1), Box.cube(-1, 1, 1), 0.0)
    with pytest.raises(InputError):
        weighted_mass(WeightSpec.gaussian(1), "?", Box.cube(-1, 1, 1), 0.1)
