import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mmspace import (
    InputError,
    MetricBall,
    annuli_family,
    boundary_layer,
    build_cubes,
    build_nets,
    covering_select,
    covering_sigma,
    cube_union_family,
    default_B0,
    estimate_isoperimetric,
    slab_family,
    verify_complement_decay,
    verify_layer_growth,
)
from mmspace.isoperimetry import _best_laminar

from .conftest import cloud, line_space


def test_boundary_layer_on_lattice():
    X = line_space(10)
    A = np.arange(10) < 6
    layer, interior = boundary_layer(X, A, 2.0)
    # points 4 and 5 lie within 2 of the complement {6, ..., 9}
    assert np.flatnonzero(layer).tolist() == [4, 5]
    assert np.flatnonzero(interior).tolist() == [0, 1, 2, 3]
    with pytest.raises(InputError):
        boundary_layer(X, np.ones(10, bool), 1.0)
    with pytest.raises(InputError):
        boundary_layer(X, np.zeros(10, bool), 1.0)


def test_default_B0_holds_half_the_mass(gauss1d):
    B0 = default_B0(gauss1d)
    assert gauss1d.measure(B0.mask(gauss1d)) > 0.5 * gauss1d.total_mass
    assert abs(gauss1d.coords[B0.center, 0]) < 1e-9


def _gauss_family(X):
    B0 = default_B0(X)
    top = float(X.row(B0.center).max())
    fam = annuli_family(X, B0.center, np.linspace(B0.radius + 0.05, 0.9 * top, 10))
    fam += slab_family(X, np.linspace(0.8, 2.5, 8))
    return B0, fam


def test_gauss_isoperimetry(gauss1d):
    B0, fam = _gauss_family(gauss1d)
    # layers thinner than a grid edge are empty, so the grid starts above the longest edge
    ks = np.linspace(2 * gauss1d.max_edge, 0.5, 20)
    rep = estimate_isoperimetric(gauss1d, B0, fam, ks, strict=False)
    assert rep.I_hat > 0
    assert all(a >= b for a, b in zip(rep.C_t, rep.C_t[1:]))
    for A in fam:
        a = A & ~B0.mask(gauss1d)
        if a.any() and not a.all():
            assert verify_layer_growth(gauss1d, B0, a, rep.I_hat, ks).verdict
    row = gauss1d.row(B0.center)
    dec = verify_complement_decay(gauss1d, B0.center, np.linspace(1, row.max(), 30), I=rep.I_hat)
    assert dec.rate > 0 and dec.r_squared > 0.9


def test_strict_family_rejects_sets_meeting_B0(gauss1d):
    B0, fam = _gauss_family(gauss1d)
    with pytest.raises(InputError):
        estimate_isoperimetric(gauss1d, B0, [np.ones(gauss1d.n, bool) & (gauss1d.coords[:, 0] > -0.1)], [0.1])


def test_half_mode_hypothesis_is_tracked(gauss1d):
    B0 = default_B0(gauss1d)
    A = gauss1d.coords[:, 0] > 0
    rep = verify_layer_growth(gauss1d, B0, A, 0.5, [0.05, 5.0], mode="half")
    assert rep.rows[0].get("skipped") and not rep.rows[1].get("skipped")


def test_exponential_decay_rate_on_exact_exponential():
    # masses e^{-x} on a fine lattice: complement of B(0, r) has mass ~ e^{-r}
    x = np.arange(0, 20, 0.01)
    X = line_space(x.size, 0.01, np.exp(-x) * 0.01)
    dec = verify_complement_decay(X, 0, np.linspace(1, 15, 30), I=1.0)
    assert dec.rate == pytest.approx(1.0, rel=1e-3)
    assert dec.verdict


def test_covering_sigma_formula():
    assert covering_sigma(1.0, 2.0, 0.5) == pytest.approx((1 - math.exp(-0.25)) / 4)


def _selection_setup(X, seed):
    nets = build_nets(X, 0.5)
    tree = build_cubes(X, nets)
    nu = tree.levels[len(tree.levels) // 2]
    fam = cube_union_family(tree, [nu], 1, max(1, tree.n_cubes(nu) // 2), seed)
    return tree, nu, fam[0]


@given(st.integers(8, 40), st.integers(1, 2), st.integers(0, 10_000), st.floats(0.2, 2.0))
@settings(max_examples=25, deadline=None)
def test_covering_select_disjoint_and_inside(n, d, seed, kappa):
    X = cloud(n, d, seed)
    tree, nu, A = _selection_setup(X, seed)
    if A.all() or not A.any():
        return
    B0 = MetricBall(int(np.flatnonzero(~A)[0]), 0.0)
    sel = covering_select(X, tree, A, kappa, B0, nu, 0.7)
    taken = np.zeros(X.n, int)
    dA = X.dist_to_set(~A)
    for k, j in sel.cubes:
        mem = tree.members(k, j)
        taken[mem] += 1
        assert k >= nu
        assert A[mem].all()
        assert dA[mem].min() <= kappa
    assert taken.max() <= 1
    assert sel.mass == pytest.approx(X.mass[taken > 0].sum())


def _best_bruteforce(tree, cand, masses):
    cand = sorted(cand)
    mem = {c: set(tree.members(*c).tolist()) for c in cand}
    best = 0.0
    for r in range(len(cand) + 1):
        for sub in itertools.combinations(cand, r):
            pts = [mem[c] for c in sub]
            if sum(len(p) for p in pts) == len(set().union(*pts)):
                best = max(best, sum(masses[c] for c in sub))
    return best


@given(st.integers(4, 14), st.integers(0, 10_000))
@settings(max_examples=25, deadline=None)
def test_laminar_optimum_matches_bruteforce(n, seed):
    X = cloud(n, 1, seed)
    tree = build_cubes(X, build_nets(X, 0.5))
    rng = np.random.default_rng(seed)
    allc = [(k, j) for k, j in tree.cubes()]
    pick = rng.choice(len(allc), size=min(10, len(allc)), replace=False)
    cand = {allc[i] for i in pick}
    masses = {c: float(X.mass[tree.members(*c)].sum()) for c in cand}
    total, chosen = _best_laminar(tree, cand, masses, list(tree.levels))
    assert total == pytest.approx(_best_bruteforce(tree, cand, masses))
    assert set(chosen) <= cand


def test_covering_rejects_non_union(gauss1d_tree, gauss1d):
    _, tree = gauss1d_tree
    A = np.zeros(gauss1d.n, bool)
    A[:3] = True
    nu = tree.levels[1]
    with pytest.raises(InputError):
        covering_select(gauss1d, tree, A, 0.5, MetricBall(gauss1d.n - 1, 0.0), nu, 0.7)


def test_covering_on_gauss(gauss1d_tree, gauss1d):
    _, tree = gauss1d_tree
    B0 = default_B0(gauss1d)
    nu, kappa = 2, tree.C1 * 0.25
    lab = tree.labels[tree.index(nu)]
    far = gauss1d.row(B0.center) > B0.radius + kappa
    keep = np.bincount(lab, weights=(~far).astype(float), minlength=tree.n_cubes(nu)) == 0
    sel = covering_select(gauss1d, tree, keep[lab], kappa, B0, nu, 0.678)
    assert sel.verdict
