import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mmspace import (
    InputError,
    ball_family,
    bmo_norm,
    bmo_norm_bruteforce,
    john_nirenberg_profile,
    sharp_function,
    verify_scale_independence,
)
from mmspace.suites import log_exemplar, piecewise_suite

from .conftest import cloud, line_space


def sharp_bruteforce(space, f, b):
    out = np.zeros(space.n)
    for c in range(space.n):
        row = space.row(c)
        for r in np.unique(row[row <= b]):
            B = row <= r
            w = space.mass[B]
            osc = np.sum(np.abs(f[B] - np.sum(f[B] * w) / w.sum()) * w) / w.sum()
            out[B] = np.maximum(out[B], osc)
    return out


def test_indicator_example():
    # a ball split evenly by an indicator has mean oscillation 2 p (1-p) = 1/2
    X = line_space(201, 0.01)
    f = (np.arange(201) > 100).astype(float)
    res = bmo_norm(X, f, 1.0)
    assert res.N == pytest.approx(0.5, abs=1e-12)
    assert res.l1_norm == pytest.approx(X.mass[f > 0].sum())
    assert bmo_norm_bruteforce(X, f, 1.0) == pytest.approx(res.N, abs=1e-14)


@given(st.integers(2, 30), st.integers(1, 2), st.integers(0, 10_000), st.sampled_from([1.0, 1.5, 2.0, 3.0]), st.floats(0.3, 5.0))
@settings(max_examples=40, deadline=None)
def test_bmo_matches_bruteforce(n, d, seed, q, b):
    X = cloud(n, d, seed)
    f = np.random.default_rng(seed).normal(size=n)
    assert bmo_norm(X, f, b, q).N == pytest.approx(bmo_norm_bruteforce(X, f, b, q), rel=1e-10, abs=1e-14)


@given(st.integers(2, 25), st.integers(0, 10_000), st.floats(0.3, 5.0))
@settings(max_examples=30, deadline=None)
def test_sharp_matches_bruteforce_and_norm(n, seed, b):
    X = cloud(n, 2, seed)
    f = np.random.default_rng(seed).normal(size=n)
    sh = sharp_function(X, f, b)
    assert np.allclose(sh, sharp_bruteforce(X, f, b), rtol=1e-12, atol=1e-14)
    assert sh.max() == bmo_norm(X, f, b).N


@given(st.integers(3, 25), st.integers(0, 10_000), st.floats(0.5, 4.0), st.floats(0.05, 0.95))
@settings(max_examples=30, deadline=None)
def test_monotone_in_scale(n, seed, b, frac):
    X = cloud(n, 1, seed)
    fs = [np.random.default_rng(seed + i).normal(size=n) for i in range(3)]
    rep = verify_scale_independence(X, fs, b, frac * b, 2.0)
    assert rep.monotone
    assert all(c <= bb for c, bb in zip(rep.N_c, rep.N_b))


def test_restricted_family_equals_fresh(gauss1d_small):
    fam = ball_family(gauss1d_small, 3.0).restrict(1.0)
    fresh = ball_family(gauss1d_small, 1.0)
    assert fam.count == fresh.count
    for a, b in zip(fam.ends, fresh.ends):
        assert np.array_equal(a, b)
    f = np.sin(gauss1d_small.coords[:, 0] * 3)
    assert bmo_norm(gauss1d_small, f, 1.0, family=fam).N == bmo_norm(gauss1d_small, f, 1.0).N


def test_constants_have_zero_oscillation(gauss1d_small):
    f = np.full(gauss1d_small.n, 3.0)
    assert bmo_norm(gauss1d_small, f, 2.0).N == pytest.approx(0.0, abs=1e-14)
    with pytest.raises(InputError):
        john_nirenberg_profile(gauss1d_small, f, 2.0, 0, 1.0, [0.0, 1.0])


def test_john_nirenberg_on_log():
    # log(1/|x|) on a fine lattice: the tail of the oscillation decays exponentially
    X = line_space(401, 0.005)
    x0 = 200
    f = log_exemplar(X, x0)
    N1 = bmo_norm(X, f, 1.0).N
    B = X.ball(x0, 1.0)
    dev = np.abs(f[B] - f[B].mean())
    rep = john_nirenberg_profile(X, f, 1.0, x0, 1.0, np.linspace(0, dev.max(), 30), N1)
    assert rep.c > 0
    assert rep.r_squared > 0.95


def test_piecewise_suite_is_seeded(gauss1d_small):
    a = piecewise_suite(gauss1d_small, 3, seed=5)
    b = piecewise_suite(gauss1d_small, 3, seed=5)
    assert all(np.array_equal(x, y) for x, y in zip(a, b))


def test_input_checks(gauss1d_small):
    with pytest.raises(InputError):
        bmo_norm(gauss1d_small, np.zeros(gauss1d_small.n), 1.0, q=0.5)
    with pytest.raises(InputError):
        bmo_norm(gauss1d_small, np.full(gauss1d_small.n, np.nan), 1.0)
    with pytest.raises(InputError):
        ball_family(gauss1d_small, 1.0).restrict(2.0)
