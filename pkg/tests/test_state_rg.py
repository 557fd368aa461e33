import numpy as np
import pytest
import scipy.linalg as la
from hypothesis import given, strategies as st

from bosonrg import (CovarianceState, InvertibleGate, LatticeSpec, ModelParams, OrthogonalGate,
                     StateFlow, StateLayer, StateOptions, build_hamiltonian, coarse_grain_state,
                     correlator_error, ground_state, load_record, optimize_state_layer,
                     product_state, random_layer, reconstruct, regroup, run_state_flow,
                     save_record, symplectic_spectrum, synthetic_state)
from bosonrg.state_rg import apply_gates, site_entropy, state_distance, zero_mode

seeds = st.integers(0, 2 ** 32 - 1)
QUICK = StateOptions(max_sweeps=300)


def chain_state(n_modes, m, mass=0.0, mreg=1e-3, alpha=0.0):
    spec = LatticeSpec(1, n_modes, m, regulator_mass=mreg)
    h = build_hamiltonian(spec, ModelParams(1.0, mass, alpha), form="dense", regulate=True)
    return ground_state(regroup(h, m))


def orthogonal_layer(scheme, m, rng):
    u = (InvertibleGate.from_orthogonal(OrthogonalGate.random(2 * m, rng))
         if scheme == "ER" else InvertibleGate.identity(2 * m))
    w = InvertibleGate.from_orthogonal(OrthogonalGate.random(2 * m, rng))
    return StateLayer(scheme, (u,), w, m)


def dense_layer_matrix(layer, n_sites):
    """``A = U W`` on a ring of one-mode sites, assembled entry by entry."""
    m = layer.modes_per_site
    n = n_sites * m
    big_u = np.eye(n)
    if layer.scheme == "ER":
        big_u = np.zeros((n, n))
        for s in range(1, n_sites, 2):
            idx = np.r_[s * m:(s + 1) * m, ((s + 1) % n_sites) * m:((s + 1) % n_sites + 1) * m]
            big_u[np.ix_(idx, idx)] = layer.disentanglers[0].matrix
    big_w = la.block_diag(*[layer.w0.matrix] * (n_sites // 2))
    return big_u @ big_w


@given(seeds, st.sampled_from(["ER", "LP"]), st.booleans())
def test_matches_dense_conjugation(seed, scheme, general):
    rng = np.random.default_rng(seed)
    state = chain_state(8, 1, mass=0.4)
    layer = random_layer(1, 1, scheme, rng) if general else orthogonal_layer(scheme, 1, rng)
    a = dense_layer_matrix(layer, 8)
    ai = np.linalg.inv(a)
    gp = a.T @ state.gamma_p @ a
    gq = ai @ state.gamma_q @ ai.T
    keep = np.arange(1, 8, 2)
    out = coarse_grain_state(state, layer)
    np.testing.assert_allclose(out.gamma_p, gp[np.ix_(keep, keep)], atol=1e-12)
    np.testing.assert_allclose(out.gamma_q, gq[np.ix_(keep, keep)], atol=1e-12)
    assert out.sites_per_axis == 4


@given(seeds, st.sampled_from(["ER", "LP"]))
def test_product_vacuum_stays_pure(seed, scheme):
    rng = np.random.default_rng(seed)
    vac = CovarianceState(np.eye(32), np.eye(32), 4, 1, (4,), 8)
    out = coarse_grain_state(vac, orthogonal_layer(scheme, 4, rng))
    np.testing.assert_allclose(out.gamma_p @ out.gamma_q, np.eye(16), atol=1e-12)


def test_identity_lp_is_projection():
    state = chain_state(32, 2, mass=0.5)
    eye = InvertibleGate.identity(4)
    out = coarse_grain_state(state, StateLayer("LP", (eye,), eye, 2))
    keep = np.concatenate([np.arange(4 * c + 2, 4 * c + 4) for c in range(8)])
    np.testing.assert_array_equal(out.gamma_q, state.gamma_q[np.ix_(keep, keep)])


@given(seeds, st.sampled_from(["ER", "LP"]))
def test_orthogonal_layers_preserve_purity(seed, scheme):
    rng = np.random.default_rng(seed)
    state = chain_state(32, 2, mass=0.3)
    full = apply_gates(state, orthogonal_layer(scheme, 2, rng))
    np.testing.assert_allclose(full.gamma_p @ full.gamma_q, np.eye(32), atol=1e-8)


@given(seeds, st.sampled_from(["ER", "LP"]))
def test_gate_action_keeps_symplectic_spectrum(seed, scheme):
    rng = np.random.default_rng(seed)
    state = chain_state(16, 2, mass=0.3)
    # a mixed state: the reduced state of a larger ring
    big = chain_state(32, 2, mass=0.3)
    idx = np.arange(16)
    mixed = CovarianceState(big.gamma_p[np.ix_(idx, idx)], big.gamma_q[np.ix_(idx, idx)],
                            2, 1, (2,), 8)
    for s in (state, mixed):
        full = apply_gates(s, random_layer(2, 1, scheme, rng))
        np.testing.assert_allclose(symplectic_spectrum(full.gamma_p, full.gamma_q),
                                   symplectic_spectrum(s.gamma_p, s.gamma_q), rtol=1e-8)


def test_product_state_needs_no_disentangling():
    state = product_state(8, 4, rng=3)
    for scheme in ("LP", "ER"):
        layer = optimize_state_layer(state, scheme, QUICK)
        assert layer.cost == pytest.approx(4.0, abs=1e-10)
        assert layer.residual_entropy < 1e-8


def test_critical_truncation_certificate():
    state = chain_state(128, 4, mreg=1e-6)
    er = optimize_state_layer(state, "ER")
    lp = optimize_state_layer(state, "LP")
    assert er.residual_entropy <= lp.residual_entropy
    assert np.all(er.truncated - 1 <= 1e-3)
    assert np.all(np.diff(er.history) <= 1e-12)


def test_lossless_reconstruction():
    rng = np.random.default_rng(11)
    top = chain_state(16, 4, mass=0.5)
    layers = [random_layer(4, 1, "ER", rng, generation=t + 1) for t in range(2)]
    fine = synthetic_state(top, layers)
    record = StateFlow([fine, None, top], layers, "ER")
    assert correlator_error(reconstruct(record), fine) <= 1e-10


def test_certificate_soundness():
    rng = np.random.default_rng(2)
    top = chain_state(16, 2, mass=0.5)
    layers = [random_layer(2, 1, "ER", rng, generation=t + 1) for t in range(2)]
    errors = []
    for excess in (1e-2, 1e-4, 1e-6, 1e-8, 0.0):
        fine = synthetic_state(top, layers, excess)
        errors.append(correlator_error(reconstruct(StateFlow([fine, None, top], layers, "ER")),
                                       fine))
    assert np.all(np.diff(errors) < 0)
    assert errors[-1] <= 1e-12


def test_correlator_error_definition():
    state = chain_state(16, 2, mass=0.5)
    assert correlator_error(state, state) == 0.0
    gq = state.gamma_q.copy()
    gq[3, 5] += 1e-3
    gq[5, 3] += 1e-3
    bumped = CovarianceState(state.gamma_p, gq, 2, 1, (2,), 8)
    assert correlator_error(bumped, state) == pytest.approx(1e-3, abs=1e-15)
    with pytest.raises(ValueError, match="shape"):
        correlator_error(chain_state(8, 2, mass=0.5), state)


def test_flow_and_record_round_trip(tmp_path):
    state = chain_state(64, 4, mass=0.3)
    flow = run_state_flow(state, "ER", 2, QUICK)
    assert flow.depth == 2 and len(flow.states) == 3
    assert all(s.modes_per_site == 4 for s in flow.states)
    save_record(flow, tmp_path)
    loaded = load_record(tmp_path)
    np.testing.assert_allclose(reconstruct(loaded).gamma_q, reconstruct(flow).gamma_q, atol=1e-12)
    d = flow.diagnostics[1]
    assert {"S_per_site", "delta_S", "truncation_residual", "state_change"} <= set(d)


def test_flow_needs_room():
    with pytest.raises(ValueError, match="halvings"):
        run_state_flow(chain_state(32, 4, mass=0.3), "ER", 2)


def test_massive_chain_factorises():
    state = chain_state(256, 4, mass=1.0)
    flow = run_state_flow(state, "ER", 3, QUICK)
    s = flow.entropies()
    assert s[-1] < 0.05 < s[0]


def test_zero_mode_detection():
    assert zero_mode(chain_state(64, 4, mass=0.5)) is None
    z = zero_mode(chain_state(64, 4, mreg=1e-6))
    np.testing.assert_allclose(np.abs(z), 0.5, atol=1e-6)


def test_state_distance_gauge_invariant():
    state = chain_state(32, 2, mass=0.3)
    rng = np.random.default_rng(0)
    g = la.expm(0.3 * rng.standard_normal((2, 2)))
    a = np.kron(np.eye(16), g)
    ai = np.linalg.inv(a)
    moved = CovarianceState(a.T @ state.gamma_p @ a, ai @ state.gamma_q @ ai.T, 2, 1, (2,), 16)
    assert state_distance(moved, state) < 1e-10
    assert site_entropy(moved) == pytest.approx(site_entropy(state), abs=1e-10)
