import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mmspace import (
    InputError,
    build_cubes,
    build_nets,
    default_B0,
    dyadic_maximal,
    fefferman_stein_check,
    rdi_check,
    rdi_params,
    resolution_level,
    weak_type_constant,
)
from mmspace.suites import smooth_suite, spiky_suite

from .conftest import cloud


def maximal_bruteforce(space, tree, f, min_level=2):
    out = np.zeros(space.n)
    for k in tree.levels:
        if k < min_level:
            continue
        for j in range(tree.n_cubes(k)):
            mem = tree.members(k, j)
            avg = np.sum(np.abs(f[mem]) * space.mass[mem]) / space.mass[mem].sum()
            out[mem] = np.maximum(out[mem], avg)
    return out


@given(st.integers(3, 40), st.integers(1, 2), st.integers(0, 10_000))
@settings(max_examples=25, deadline=None)
def test_dyadic_maximal_matches_bruteforce(n, d, seed):
    X = cloud(n, d, seed)
    tree = build_cubes(X, build_nets(X, 0.5))
    f = np.random.default_rng(seed).normal(size=n)
    lo = tree.levels[len(tree.levels) // 2]
    assert np.allclose(dyadic_maximal(X, tree, f, lo), maximal_bruteforce(X, tree, f, lo))


@given(st.integers(3, 40), st.integers(0, 10_000), st.floats(0.01, 10.0))
@settings(max_examples=30, deadline=None)
def test_weak_type_one_one(n, seed, alpha):
    # cubes of one level are disjoint, so the dyadic maximal operator has weak constant 1
    X = cloud(n, 2, seed)
    tree = build_cubes(X, build_nets(X, 0.5))
    f = np.random.default_rng(seed).standard_cauchy(size=n)
    lo = tree.levels[0]
    Mf = dyadic_maximal(X, tree, f, lo)
    assert alpha * X.mass[Mf > alpha].sum() <= np.sum(np.abs(f) * X.mass) * (1 + 1e-12)


def test_weak_constant_measured(gauss1d_tree, gauss1d):
    _, tree = gauss1d_tree
    w = weak_type_constant(gauss1d, tree)
    assert 0 < w <= 1 + 1e-12


def test_resolution_level(gauss1d_tree):
    _, tree = gauss1d_tree
    assert resolution_level(tree, 2) == 2
    with pytest.raises(InputError):
        resolution_level(tree, 99)


@pytest.fixture(scope="module")
def params(gauss1d_tree, gauss1d):
    _, tree = gauss1d_tree
    return rdi_params(gauss1d, tree, 0.678, default_B0(gauss1d), C0=0.125)


def test_rdi_parameters(params, gauss1d_tree):
    _, tree = gauss1d_tree
    p = params
    assert p.kappa == pytest.approx(tree.C1 / 4)
    assert p.b_prime == pytest.approx(2 * tree.C1 + 0.125)
    assert p.eps == pytest.approx(0.1 / (4 * p.D))
    assert p.eta == pytest.approx(1 - p.sigma + 2 * p.eps * p.D / (p.sigma * 0.1))
    assert p.frak_M == pytest.approx(2 * p.weak / p.omega)
    assert p.B0.radius >= p.kappa
    assert p.xi(2.0) == pytest.approx(p.frak_M * 2.0 / 0.9)


def test_rdi_eps_range(gauss1d_tree, gauss1d, params):
    _, tree = gauss1d_tree
    with pytest.raises(InputError):
        rdi_params(gauss1d, tree, 0.678, default_B0(gauss1d), C0=0.125, eps=1.0, weak=params.weak)
    with pytest.raises(InputError):
        rdi_params(gauss1d, tree, 0.678, default_B0(gauss1d), C0=0.125, eta_prime=1.0, weak=params.weak)


def test_rdi_holds(gauss1d_tree, gauss1d, params):
    _, tree = gauss1d_tree
    for f in spiky_suite(gauss1d, 5, seed=0):
        rep = rdi_check(gauss1d, tree, f, params)
        assert rep.verdict
        assert rep.alphas[0] == pytest.approx(rep.xi)


def test_rdi_rejects_small_alpha(gauss1d_tree, gauss1d, params):
    _, tree = gauss1d_tree
    f = spiky_suite(gauss1d, 1, seed=0)[0]
    with pytest.raises(InputError):
        rdi_check(gauss1d, tree, f, params, alpha_grid=[0.0])


def test_fefferman_stein_ratio(gauss1d):
    fs = smooth_suite(gauss1d.coords, 5, seed=0) + [np.zeros(gauss1d.n)]
    rep = fefferman_stein_check(gauss1d, fs, 2.0, 1.0)
    assert rep.skipped == 1
    assert rep.min_ratio > 0
    with pytest.raises(InputError):
        fefferman_stein_check(gauss1d, fs, 1.0, 1.0)
