import itertools

import numpy as np
import pytest
import scipy.linalg as la
from hypothesis import given, strategies as st
from scipy.optimize import minimize

from bosonrg import (InvertibleGate, LatticeSpec, ModelParams, OrthogonalGate, RankDeficientError,
                     bloch_dispersion, build_hamiltonian, fold, mode_entropy, polar_project,
                     symplectic_spectrum)
from bosonrg.gaussian import GaugeError, williamson_pq
from bosonrg.momentum import exact_energy

seeds = st.integers(0, 2 ** 32 - 1)


def rotation(angles):
    """SO(4) element from the six plane-rotation angles."""
    v = np.eye(4)
    for a, (i, j) in zip(angles, itertools.combinations(range(4), 2)):
        g = np.eye(4)
        c, s = np.cos(a), np.sin(a)
        g[i, i] = g[j, j] = c
        g[i, j], g[j, i] = -s, s
        v = v @ g
    return v


def test_polar_on_manifold_is_identity():
    v = OrthogonalGate.random(5, np.random.default_rng(1)).matrix
    np.testing.assert_allclose(polar_project(v).matrix, v, atol=1e-12)


def test_polar_of_scaled_identity():
    np.testing.assert_allclose(polar_project(2 * np.eye(4)).matrix, np.eye(4), atol=1e-15)


def test_polar_matches_brute_force_so4():
    e = np.random.default_rng(7).standard_normal((4, 4))
    # coarse grid over the six angles, then local refinement of the best points
    grid = np.linspace(-np.pi, np.pi, 7)[:-1]
    best = sorted(((np.linalg.norm(rotation(a) - e), a) for a in itertools.product(grid, repeat=6)),
                  key=lambda t: t[0])[:20]
    refined = min((minimize(lambda a: np.linalg.norm(rotation(a) - e) ** 2, np.array(a0),
                            method="BFGS", options={"gtol": 1e-12}) for _, a0 in best),
                  key=lambda r: r.fun)
    np.testing.assert_allclose(polar_project(e).matrix, rotation(refined.x), atol=1e-6)


def test_polar_det_fix_lands_in_so():
    e = np.diag([3.0, 2.0, 1.0, -0.5])
    v = polar_project(e).matrix
    assert np.linalg.det(v) == pytest.approx(1.0)
    # the smallest singular direction is the one flipped
    np.testing.assert_allclose(v, np.eye(4), atol=1e-14)


def test_polar_rank_deficient():
    e = np.diag([1.0, 1.0, 0.0, 0.0])
    with pytest.raises(RankDeficientError, match="nullity 2"):
        polar_project(e)


@given(seeds, st.integers(2, 6))
def test_polar_uniqueness(seed, n):
    rng = np.random.default_rng(seed)
    v = OrthogonalGate.random(n, rng).matrix
    a = rng.standard_normal((n, n))
    p = a @ a.T + 0.1 * np.eye(n)
    np.testing.assert_allclose(polar_project(v @ p).matrix, v, atol=1e-9)


@given(seeds, st.integers(2, 6))
def test_polar_beats_random_rotations(seed, n):
    rng = np.random.default_rng(seed)
    e = rng.standard_normal((n, n))
    d = np.linalg.norm(polar_project(e).matrix - e)
    for _ in range(20):
        assert d <= np.linalg.norm(OrthogonalGate.random(n, rng).matrix - e) + 1e-12


def test_gate_invariants():
    with pytest.raises(GaugeError):
        OrthogonalGate(np.diag([1.0, -1.0]))
    with pytest.raises(GaugeError):
        InvertibleGate(np.diag([1.0, 1e-9]))
    g = InvertibleGate(np.array([[2.0, 1.0], [0.0, 1.0]]))
    np.testing.assert_allclose(g.matrix @ g.inverse, np.eye(2), atol=1e-15)


def test_bloch_critical_chain():
    h = build_hamiltonian(LatticeSpec(1, 8, 1), ModelParams(1.0))
    k = np.linspace(-np.pi, np.pi, 201)
    np.testing.assert_allclose(bloch_dispersion(h.blocks, k)[:, 0],
                               2 * np.sqrt(2) * np.abs(np.sin(k / 2)), atol=1e-7)


def test_bloch_flat_branch():
    e = bloch_dispersion({(0,): np.array([[3.0]])}, np.linspace(-3, 3, 11))
    np.testing.assert_allclose(e, np.sqrt(3.0), atol=1e-15)


def test_bloch_folded_two_mode_sites():
    h = build_hamiltonian(LatticeSpec(1, 8, 2), ModelParams(1.0))
    k = np.linspace(-np.pi, np.pi, 257)
    got = bloch_dispersion(h.blocks, k)
    single = lambda q: exact_energy(ModelParams(1.0), 0, q)
    expect = np.sort(np.stack([single(k / 2), single(np.pi - k / 2)], axis=1), axis=1)
    np.testing.assert_allclose(got, expect, atol=1e-10)
    np.testing.assert_allclose(fold(single, (2,), 257).energy, expect, atol=1e-10)


def test_bloch_rejects_indefinite():
    with pytest.raises(ValueError, match="semidefinite"):
        bloch_dispersion({(0,): np.array([[1.0]]), (1,): np.array([[1.0]]),
                          (-1,): np.array([[1.0]])}, np.array([np.pi]))


@given(seeds)
def test_bloch_gauge_invariance(seed):
    rng = np.random.default_rng(seed)
    h = build_hamiltonian(LatticeSpec(1, 16, 4), ModelParams(1.0, 0.3, 0.2))
    v = OrthogonalGate.random(4, rng).matrix
    rotated = {d: v.T @ b @ v for d, b in h.blocks.items()}
    k = np.linspace(-np.pi, np.pi, 33)
    np.testing.assert_allclose(bloch_dispersion(rotated, k), bloch_dispersion(h.blocks, k),
                               atol=1e-10)


def test_symplectic_examples():
    np.testing.assert_allclose(symplectic_spectrum(np.eye(3), np.eye(3)), 1.0, atol=1e-15)
    np.testing.assert_allclose(symplectic_spectrum(2 * np.eye(2), 2 * np.eye(2)), [4, 4],
                               atol=1e-14)


@given(seeds, st.integers(1, 6))
def test_random_pure_state(seed, n):
    a = np.random.default_rng(seed).standard_normal((n, n))
    x = a @ a.T + 0.5 * np.eye(n)
    lam = symplectic_spectrum(np.linalg.inv(x), x)
    np.testing.assert_allclose(lam, 1.0, atol=1e-8)


def test_symplectic_rejects_indefinite():
    with pytest.raises(ValueError):
        symplectic_spectrum(np.eye(2), np.diag([1.0, -1.0]))
    with pytest.raises(ValueError, match="Heisenberg"):
        symplectic_spectrum(0.5 * np.eye(2), np.eye(2))


@given(seeds, st.integers(1, 5))
def test_symplectic_invariance(seed, n):
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((n, n))
    gq = a @ a.T + np.eye(n)
    b = rng.standard_normal((n, n))
    gp = np.linalg.inv(gq) + b @ b.T          # mixed, still physical
    g = la.expm(0.5 * rng.standard_normal((n, n)))
    gi = np.linalg.inv(g)
    lam0 = symplectic_spectrum(gp, gq)
    lam1 = symplectic_spectrum(g.T @ gp @ g, gi @ gq @ gi.T)
    np.testing.assert_allclose(lam1, lam0, rtol=1e-8)


def test_mode_entropy_values():
    assert mode_entropy(1.0) == 0.0
    assert mode_entropy(4.0) == pytest.approx(0.5 + 1.5 * np.log2(1.5), abs=1e-12)
    assert mode_entropy(4.0) == pytest.approx(1.377444, abs=1e-6)
    assert mode_entropy(9.0) == pytest.approx(2.0, abs=1e-12)
    assert mode_entropy(1 - 1e-9) == 0.0
    with pytest.raises(ValueError):
        mode_entropy(0.99)


@given(st.floats(1.0, 1e4), st.floats(1e-6, 1e3))
def test_mode_entropy_monotone(lam, step):
    assert mode_entropy(lam + step) > mode_entropy(lam)


@given(seeds, st.integers(1, 5))
def test_williamson_form(seed, n):
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((n, n))
    gq = a @ a.T + np.eye(n)
    b = rng.standard_normal((n, n))
    gp = np.linalg.inv(gq) + b @ b.T
    t, lam = williamson_pq(gp, gq)
    ti = np.linalg.inv(t)
    d = np.diag(np.sqrt(lam))
    np.testing.assert_allclose(t.T @ gp @ t, d, atol=1e-8 * lam.max())
    np.testing.assert_allclose(ti @ gq @ ti.T, d, atol=1e-8 * lam.max())
