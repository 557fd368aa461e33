import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.optimize import minimize

from bosonrg import (ENERGY_FACTOR, LatticeSpec, ModelParams, OptimizerOptions, OrthogonalGate,
                     QuadraticHamiltonian, RgLayer, block_cost, build_hamiltonian,
                     coarse_grain_hamiltonian, dense_coarse_grain, flow_dispersion, fold,
                     mean_energy, optimize_layer, run_flow)
from bosonrg.gaussian import bloch_dispersion
from bosonrg.hamiltonian_rg import (_eigen_w0, auto_protect_order, hamiltonian_distance,
                                    uniform_mode)
from bosonrg.momentum import exact_energy
from bosonrg.network import CellWindow, window_operator

seeds = st.integers(0, 2 ** 32 - 1)
QUICK = OptimizerOptions(max_sweeps=400, restarts=1, screen_sweeps=100, finalists=1)


def rot2(theta):
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s], [s, c]])


def layer_from(scheme, u, w, m=1, dim=1):
    us = (OrthogonalGate(u),) if scheme == "ER" else (OrthogonalGate.identity(2 * m),)
    return RgLayer(scheme, us, OrthogonalGate(w), m, dim)


def test_lp_identity_on_decoupled_blocks():
    rng = np.random.default_rng(0)
    a = rng.standard_normal((2, 2))
    h0 = a @ a.T + np.eye(2)
    h = QuadraticHamiltonian(1, 2, blocks={(0,): h0})
    layer = RgLayer("LP", (OrthogonalGate.identity(4),), OrthogonalGate.identity(4), 2)
    out = coarse_grain_hamiltonian(h, layer)
    # the kept last M coordinates of the two-site block are the second site
    two_site = np.kron(np.eye(2), h0)
    np.testing.assert_allclose(out.h0, ENERGY_FACTOR * two_site[2:, 2:], atol=1e-14)
    assert np.max(np.abs(out.h1)) == 0


@given(seeds)
def test_er_with_identity_disentangler_is_lp(seed):
    rng = np.random.default_rng(seed)
    h = build_hamiltonian(LatticeSpec(1, 16, 2), ModelParams(1.0, 0.3, 0.4))
    w = OrthogonalGate.random(4, rng)
    er = RgLayer("ER", (OrthogonalGate.identity(4),), w, 2)
    lp = RgLayer("LP", (OrthogonalGate.identity(4),), w, 2)
    a, b = coarse_grain_hamiltonian(h, er), coarse_grain_hamiltonian(h, lp)
    for d in set(a.blocks) | set(b.blocks):
        np.testing.assert_allclose(a.block(d), b.block(d), atol=1e-13)


@given(seeds, st.sampled_from(["ER", "LP"]), st.floats(0.0, 1.0), st.floats(0.0, 1.0))
def test_window_path_matches_dense_ring(seed, scheme, mass, alpha):
    rng = np.random.default_rng(seed)
    h = build_hamiltonian(LatticeSpec(1, 8, 1), ModelParams(1.0, mass, alpha))
    layer = layer_from(scheme, OrthogonalGate.random(2, rng).matrix,
                       OrthogonalGate.random(2, rng).matrix)
    coarse = coarse_grain_hamiltonian(h, layer)
    ref = dense_coarse_grain(h.to_dense(8), 1, layer)
    np.testing.assert_allclose(coarse.to_dense(4), ref, atol=1e-10)


def brute_force_ring(scheme, n_angles=73):
    """Grid over both 2x2 rotation angles on the 8-mode ring, then local refinement."""
    h = build_hamiltonian(LatticeSpec(1, 8, 1), ModelParams(1.0, 1e-3)).to_dense(8)

    def cost(t):
        tu, tw = (t[0], t[1]) if scheme == "ER" else (0.0, t[0])
        return np.trace(dense_coarse_grain(h, 1, layer_from(scheme, rot2(tu), rot2(tw))))

    angles = np.linspace(-np.pi, np.pi, n_angles)
    grid = itertools.product(angles, angles) if scheme == "ER" else ([a] for a in angles)
    starts = sorted(grid, key=cost)[:5]
    return min(minimize(cost, np.array(t0), method="Nelder-Mead",
                        options={"xatol": 1e-10, "fatol": 1e-14}).fun for t0 in starts)


@pytest.mark.parametrize("scheme", ["LP", "ER"])
def test_optimum_matches_dense_brute_force(scheme):
    h = build_hamiltonian(LatticeSpec(1, 8, 1), ModelParams(1.0, 1e-3))
    layer = optimize_layer(h, scheme, OptimizerOptions(protect_order=None, restarts=4))
    # dense cost sums the 4 coarse sites of the ring
    assert layer.cost == pytest.approx(brute_force_ring(scheme) / 4, abs=1e-8)
    ref = dense_coarse_grain(h.to_dense(8), 1, layer)
    np.testing.assert_allclose(coarse_grain_hamiltonian(h, layer).to_dense(4), ref, atol=1e-10)


def test_decoupled_cell_keeps_lowest_modes():
    # a cell with spectrum {1, 2, 3, 4} and no coupling to its neighbours
    rng = np.random.default_rng(5)
    v = OrthogonalGate.random(4, rng).matrix
    cell = v @ np.diag([1.0, 2.0, 3.0, 4.0]) @ v.T
    best = min(sum(c) for c in itertools.combinations([1.0, 2.0, 3.0, 4.0], 2))
    w0, tr = _eigen_w0(cell, 2)
    assert ENERGY_FACTOR * tr == pytest.approx(ENERGY_FACTOR * best, abs=1e-12)
    assert ENERGY_FACTOR * tr == pytest.approx(12.0, abs=1e-12)
    kept = w0.matrix[:, 2:]
    assert np.trace(kept.T @ cell @ kept) == pytest.approx(3.0, abs=1e-12)


def test_decoupled_sites_lp_optimum():
    # on-site spectrum {1, 2}, no hopping: the two-site cell holds {1, 1, 2, 2}
    h0 = np.array([[1.5, 0.5], [0.5, 1.5]])
    h = QuadraticHamiltonian(1, 2, blocks={(0,): h0})
    layer = optimize_layer(h, "LP", OptimizerOptions(protect_order=None))
    assert layer.cost == pytest.approx(4 * (1 + 1), abs=1e-12)


@pytest.fixture(scope="module")
def critical_m4():
    return build_hamiltonian(LatticeSpec(1, 16, 4), ModelParams(1.0))


def test_er_never_worse_than_lp(critical_m4):
    lp = optimize_layer(critical_m4, "LP")
    er = optimize_layer(critical_m4, "ER", QUICK)
    assert er.cost <= lp.cost + 1e-12


def test_seed_reproducibility(critical_m4):
    costs = [optimize_layer(critical_m4, "ER", OptimizerOptions(restarts=3, seed=s)).cost
             for s in (1, 2)]
    assert abs(costs[0] - costs[1]) <= 1e-6 * abs(costs[0])


def test_cost_history_monotone(critical_m4):
    layer = optimize_layer(critical_m4, "ER", QUICK)
    hist = np.array(layer.history)
    assert np.all(np.diff(hist) <= 1e-12)
    assert block_cost(critical_m4, layer) == pytest.approx(layer.cost, rel=1e-10)


@given(seeds)
def test_conjugation_preserves_block_spectrum(seed):
    rng = np.random.default_rng(seed)
    h = build_hamiltonian(LatticeSpec(1, 16, 2), ModelParams(1.0, 0.2, 0.3))
    gates = [OrthogonalGate.random(4, rng).matrix]
    win = CellWindow(1, 2, gates)
    hw = window_operator(h.blocks, win.sites, win.sites, 2)
    # the window isometry X has orthonormal columns: X^T H X has the compressed spectrum
    x = win.x
    np.testing.assert_allclose(x.T @ x, np.eye(x.shape[1]), atol=1e-12)
    w = OrthogonalGate.random(4, rng).matrix
    np.testing.assert_allclose(np.linalg.eigvalsh(w.T @ (x.T @ hw @ x) @ w),
                               np.linalg.eigvalsh(x.T @ hw @ x), atol=1e-10)


def test_flow_members_stay_banded(critical_m4):
    flow = run_flow(critical_m4, "ER", 2, QUICK)
    for h in flow.hamiltonians:
        assert h.range <= 2
        assert h.modes_per_site == 4
        h.check()
    assert flow.depth == 2


def test_flow_dispersion_tau0_is_folded_exact(critical_m4):
    flow = run_flow(critical_m4, "LP", 1)
    got = flow_dispersion(flow, 0, 257).energy
    exact = fold(lambda k: exact_energy(ModelParams(1.0), 0, k), (4,), 257).energy
    np.testing.assert_allclose(got, exact, atol=1e-7)
    with pytest.raises(IndexError):
        flow_dispersion(flow, 5)


def test_raw_units_undo_rescale(critical_m4):
    flow = run_flow(critical_m4, "LP", 2)
    a = flow_dispersion(flow, 2, 65)
    b = flow_dispersion(flow, 2, 65, units="raw")
    np.testing.assert_allclose(b.energy * 4, a.energy, rtol=1e-14)


def test_lp_flow_drifts_from_exact(critical_m4):
    er = run_flow(critical_m4, "ER", 3, QUICK)
    lp = run_flow(critical_m4, "LP", 3)
    ms = mean_energy(fold(lambda k: exact_energy(ModelParams(1.0), 3, k), (4,), 1025))
    err = {s: abs(mean_energy(flow_dispersion(f, 3, 1025)) - ms) / ms for s, f in
           (("ER", er), ("LP", lp))}
    assert err["LP"] > err["ER"]


def test_er_slope_at_small_momentum(critical_m4):
    flow = run_flow(critical_m4, "ER", 3, QUICK)
    k = np.array([0.02, 0.04])
    e = flow_dispersion(flow, 3, None).energy
    low = bloch_dispersion(flow.hamiltonians[3].blocks, k)[:, 0]
    slope = low / k
    # fixed point E = sqrt(2 K) |k| per mode; a site momentum K folds to k = K / 4
    np.testing.assert_allclose(slope, np.sqrt(2) / 4, rtol=0.03)
    assert e.shape[1] == 4


def test_shape_mismatch_rejected(critical_m4):
    layer = layer_from("LP", np.eye(2), np.eye(2))
    with pytest.raises(ValueError, match="layer expects"):
        coarse_grain_hamiltonian(critical_m4, layer)


def test_distance_is_gauge_invariant(critical_m4):
    rng = np.random.default_rng(0)
    v = OrthogonalGate.random(4, rng).matrix
    rotated = QuadraticHamiltonian(1, 4, blocks={d: v.T @ b @ v for d, b in
                                                 critical_m4.blocks.items()})
    assert hamiltonian_distance(rotated, critical_m4) < 1e-12


def test_protect_order_and_uniform_mode(critical_m4):
    assert auto_protect_order(1, 4) == 3
    assert auto_protect_order(2, 9) == 2
    assert auto_protect_order(1, 1) == 0
    z = uniform_mode(critical_m4)
    np.testing.assert_allclose(np.abs(z), 0.5, atol=1e-12)
