"""
Real-space RG of Gaussian ground states.

A layer acts on the covariance pair through ``S = A (+) A^{-T}``:
``gamma_p -> A^T gamma_p A`` and ``gamma_q -> A^{-1} gamma_q A^{-T}``, where
``A = U_0 ... U_{D-1} W`` stacks the disentanglers (ER only) and the cell
rotations. Of the ``2^D M`` coordinates of a cell the last ``M`` are kept;
the rest are dropped, which is exact when they sit in a product state.
Gates minimise ``tr(gq_t gp_t)`` over the dropped sector (``M`` times the
number of dropped modes at best), so the layers are chosen to leave the
dropped modes as unentangled as possible. No energy rescale is applied to
states.

After optimisation the dropped sector is brought to Williamson form, so its
covariance is ``diag(sqrt(lambda))`` in both quadratures; reinsertion as unit
diagonal (the product-state assumption) is then wrong only by
``sqrt(lambda) - 1``.
"""

import itertools
import json
import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg as la

from .gaussian import (DEFAULT_COND_MAX, InvertibleGate, OrthogonalGate, PSD_TOL,
                       mode_entropy, polar_project, symplectic_spectrum,
                       williamson_pq)
from .hamiltonian_rg import SCHEMES, ConvergenceWarning
from .lattice import CovarianceState
from .network import CellWindow, cell_sites
from .optim import FAMILIES, minimize_gates

log = logging.getLogger(__name__)

STATE_FP_EPS = 1e-2
KEPT_WEIGHT = 1e-4
ZERO_MODE_THRESHOLD = 1e3


@dataclass(frozen=True)
class StateOptions:
    """Settings for :func:`optimize_state_layer`.

    ``family`` picks general invertible gates (default, capped at condition
    number ``cond_max``) or orthogonal ones. ``kept_weight`` scales the
    tie-breaking kept-site term of the objective. ``protect_zero_mode``
    keeps a soft zero-momentum q-mode (see :func:`zero_mode`) out of the
    dropped sector; it needs the general family.
    """

    max_sweeps: int = 3000
    tol: float = 1e-10
    seed: int = 0
    restarts: int = 1
    family: str = "general"
    kept_weight: float = KEPT_WEIGHT
    protect_zero_mode: bool = True
    cond_max: float = DEFAULT_COND_MAX

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown gate family {self.family!r}")


@dataclass(frozen=True)
class StateLayer:
    """Gates of one state coarse-graining layer.

    ``disentanglers`` has one ``2M x 2M`` gate per axis (identities for LP);
    ``w0`` is the ``2^D M`` cell rotation whose last ``M`` columns are kept.
    ``truncated`` holds the symplectic eigenvalues of the dropped sector.
    """

    scheme: str
    disentanglers: tuple
    w0: InvertibleGate
    modes_per_site: int
    dimension: int = 1
    generation: int = 1
    cost: float = float("nan")
    truncated: np.ndarray = None
    history: tuple = ()
    sweeps: int = 0
    converged: bool = True

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}")
        m, n = self.modes_per_site, 2 ** self.dimension * self.modes_per_site
        if len(self.disentanglers) != self.dimension:
            raise ValueError("need one disentangler per axis")
        for g in self.disentanglers:
            if g.n != 2 * m:
                raise ValueError(f"disentangler is {g.n}x{g.n}, expected {2 * m}")
        if self.w0.n != n:
            raise ValueError(f"w0 is {self.w0.n}x{self.w0.n}, expected {n}")

    @property
    def n_cell(self):
        return self.w0.n

    @property
    def residual_entropy(self):
        if self.truncated is None:
            return float("nan")
        return float(np.sum(mode_entropy(self.truncated)))


# -- lattice plumbing ----------------------------------------------------------


def _site_index(site, n):
    return int(np.ravel_multi_index(tuple(s % n for s in site), (n,) * len(site)))


def _mode_index(sites, n, m):
    return np.concatenate([_site_index(s, n) * m + np.arange(m) for s in sites])


def _full_matrices(layer, n_sites, inverse_transpose=False):
    """Dense ``A`` (or ``A^{-T}``) of a layer on a ring/torus of ``n_sites`` per axis."""
    m, dim = layer.modes_per_site, layer.dimension
    nm = n_sites ** dim * m

    def gate(g):
        return g.inverse.T if inverse_transpose else g.matrix

    out = np.eye(nm)
    for axis in range(dim):
        if layer.scheme == "LP":
            break
        u = np.zeros((nm, nm))
        g = gate(layer.disentanglers[axis])
        e = np.zeros(dim, dtype=int)
        e[axis] = 1
        for s in itertools.product(range(n_sites), repeat=dim):
            if s[axis] % 2 == 1:
                idx = _mode_index([s, tuple(np.array(s) + e)], n_sites, m)
                u[np.ix_(idx, idx)] = g
        out = out @ u
    w = np.zeros((nm, nm))
    g = gate(layer.w0)
    for c in itertools.product(range(n_sites // 2), repeat=dim):
        idx = _mode_index([tuple(2 * np.array(c) + np.array(a)) for a in cell_sites(dim)],
                          n_sites, m)
        w[np.ix_(idx, idx)] = g
    return out @ w


def _kept_index(n_sites, dim, m):
    n_cell = 2 ** dim * m
    cells = (n_sites // 2) ** dim
    return np.concatenate([c * n_cell + np.arange(n_cell - m, n_cell) for c in range(cells)])


def _cell_permutation(n_sites, dim, m):
    """Map from cell-major coordinates (cell, cell-site, mode) to site-major indices."""
    perm = []
    for c in itertools.product(range(n_sites // 2), repeat=dim):
        perm.append(_mode_index([tuple(2 * np.array(c) + np.array(a)) for a in cell_sites(dim)],
                                n_sites, m))
    return np.concatenate(perm)


def _check_lattice(state):
    n = state.sites_per_axis
    if n is None or n ** state.dimension != state.n_sites:
        raise ValueError("state needs sites_per_axis consistent with its size")
    if n % 2:
        raise ValueError(f"{n} sites per axis cannot be blocked in pairs")
    return n


def _transform(state, layer):
    n = _check_lattice(state)
    if layer.modes_per_site != state.modes_per_site or layer.dimension != state.dimension:
        raise ValueError("layer and state disagree on M or dimension")
    a = _full_matrices(layer, n)
    b = _full_matrices(layer, n, inverse_transpose=True)
    # reorder new coordinates cell-major so the kept ones are easy to pick
    perm = _cell_permutation(n, state.dimension, state.modes_per_site)
    a, b = a[:, perm], b[:, perm]
    return a.T @ state.gamma_p @ a, b.T @ state.gamma_q @ b, n


def apply_gates(state, layer):
    """Full (unprojected) gate action, in cell-major coordinate order."""
    gp, gq, n = _transform(state, layer)
    return CovarianceState(gp, gq, state.modes_per_site, state.dimension, None, None)


def coarse_grain_state(state, layer):
    """Apply a layer's gates and keep ``M`` modes per cell.

    Raises
    ------
    ValueError
        On a shape mismatch or if the coarse covariance has lost positive
        definiteness beyond ``PSD_TOL``.
    """
    gp, gq, n = _transform(state, layer)
    keep = _kept_index(n, state.dimension, state.modes_per_site)
    gp, gq = gp[np.ix_(keep, keep)], gq[np.ix_(keep, keep)]
    for name, g in (("gamma_p", gp), ("gamma_q", gq)):
        ev = np.linalg.eigvalsh(0.5 * (g + g.T))
        if ev.min() <= -PSD_TOL * max(1.0, ev.max()):
            raise ValueError(f"coarse {name} lost positive definiteness ({ev.min():.3e})")
    return CovarianceState(gp, gq, state.modes_per_site, state.dimension, state.site_shape,
                           n // 2, {"generation": layer.generation})


# -- optimisation --------------------------------------------------------------


def _window_covariance(state, sites):
    idx = _mode_index(sites, state.sites_per_axis, state.modes_per_site)
    return state.restrict(idx)


def _state_objective(gp_w, gq_w, gates, dim, m, scheme, family, kept_weight=0.0, pin=None):
    """Dropped-sector product trace and its gradient w.r.t. every gate.

    ``f = tr(gq_t gp_t) + kept_weight * log det(gq_k gp_k)``; the second term
    (the kept site's log symplectic volume, blind to any change of basis
    inside the site) only breaks ties between gates that truncate equally
    well. ``gates`` is the disentanglers (ER) followed by the cell rotation.
    With ``pin`` (a window vector, general family only) the last column of
    ``w`` is replaced by the pinned mode's image, see :func:`_pinned_w0`.
    """
    us, w = (gates[:-1], gates[-1]) if scheme == "ER" else ([], gates[-1])
    if pin is not None:
        w = _pinned_w0(w, us, pin, dim, m)
    n_cell = w.shape[0]
    drop = n_cell - m
    win_p = CellWindow(dim, m, us)
    tp = win_p.x @ w
    if family == "orthogonal":
        win_q, w_q, tq = win_p, w, tp
    else:
        inv_t = [np.linalg.inv(u).T for u in us]
        win_q = CellWindow(dim, m, inv_t)
        w_q = np.linalg.inv(w).T
        tq = win_q.x @ w_q
    g_tp = np.zeros_like(tp)
    g_tq = np.zeros_like(tq)
    pt = tp[:, :drop].T @ gp_w @ tp[:, :drop]
    qt = tq[:, :drop].T @ gq_w @ tq[:, :drop]
    f = float(np.sum(pt * qt))
    g_tp[:, :drop] = 2.0 * gp_w @ tp[:, :drop] @ qt
    g_tq[:, :drop] = 2.0 * gq_w @ tq[:, :drop] @ pt
    if kept_weight:
        pk = tp[:, drop:].T @ gp_w @ tp[:, drop:]
        qk = tq[:, drop:].T @ gq_w @ tq[:, drop:]
        f += kept_weight * (np.linalg.slogdet(pk)[1] + np.linalg.slogdet(qk)[1])
        g_tp[:, drop:] = 2.0 * kept_weight * gp_w @ tp[:, drop:] @ np.linalg.inv(pk)
        g_tq[:, drop:] = 2.0 * kept_weight * gq_w @ tq[:, drop:] @ np.linalg.inv(qk)
    grads_u = [np.zeros_like(u) for u in us]
    # p side: X(u) and w directly
    g_w = win_p.x.T @ g_tp
    for ax, g in win_p.gate_gradients(g_tp @ w.T).items():
        grads_u[ax] += g
    # q side: through the inverse transposes
    if family == "orthogonal":
        g_w += win_q.x.T @ g_tq
        for ax, g in win_q.gate_gradients(g_tq @ w_q.T).items():
            grads_u[ax] += g
    else:
        g_w += -w_q @ (win_q.x.T @ g_tq).T @ w_q
        grad_xq = g_tq @ w_q.T
        if pin is not None:
            # last column of w is X_q^T pin
            grad_xq = grad_xq + np.outer(pin, g_w[:, -1])
            g_w = g_w.copy()
            g_w[:, -1] = 0.0
        for ax, g in win_q.gate_gradients(grad_xq).items():
            grads_u[ax] += -inv_t[ax] @ g.T @ inv_t[ax]
    return float(f), grads_u + [g_w]


def _pinned_w0(w, us, pin, dim, m):
    """Cell rotation whose last (kept) column is ``X_q^T pin``.

    The dropped q-coordinates are then orthogonal to ``pin``, so a mode with
    that profile (the regulated zero mode) is carried by the kept sector
    exactly.
    """
    xq = CellWindow(dim, m, [np.linalg.inv(u).T for u in us]).x
    out = np.array(w, float, copy=True)
    out[:, -1] = xq.T @ pin
    return out


def zero_mode(state, threshold=None):
    """Per-site profile of a soft q-mode at zero momentum, or ``None``.

    Sums the ``gamma_q`` blocks of site 0 over all partners (the ``k = 0``
    Bloch block) and returns its top eigenvector when the eigenvalue exceeds
    ``threshold`` (vacuum is 1).
    """
    threshold = ZERO_MODE_THRESHOLD if threshold is None else threshold
    m = state.modes_per_site
    g0 = state.gamma_q[:m].reshape(m, state.n_sites, m).sum(axis=1)
    ev, vec = np.linalg.eigh(0.5 * (g0 + g0.T))
    if ev[-1] <= threshold:
        return None
    z = vec[:, -1]
    return z * np.sign(z[np.argmax(np.abs(z))])


def _random_orthogonal(n, rng):
    return OrthogonalGate.random(n, rng).matrix


def optimize_state_layer(state, scheme="ER", opts=None, init=None):
    """Choose gates minimising the dropped-sector product trace.

    Parameters
    ----------
    state : CovarianceState
        Translation-invariant state on a ring/torus.
    scheme : {"ER", "LP"}
    opts : StateOptions
    init : StateLayer, optional
        Warm start tried alongside the default and seeded random starts.

    Returns
    -------
    StateLayer
        With ``cost`` (the product trace; the number of dropped modes is its
        minimum), the truncated symplectic spectrum as certificate, and the
        per-iteration cost history.
    """
    opts = opts or StateOptions()
    if scheme not in SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}")
    _check_lattice(state)
    m, dim = state.modes_per_site, state.dimension
    n_cell = 2 ** dim * m
    sites = CellWindow(dim, m, [np.eye(2 * m)] * dim if scheme == "ER" else []).sites
    gp_w, gq_w = _window_covariance(state, sites)
    pin = None
    if opts.protect_zero_mode and opts.family == "general":
        z = zero_mode(state)
        if z is not None:
            pin = np.tile(z, len(sites))

    starts = []
    if init is not None and init.scheme == scheme:
        starts.append([u.matrix for u in init.disentanglers][:dim if scheme == "ER" else 0]
                      + [init.w0.matrix])
    starts.append([np.eye(2 * m)] * (dim if scheme == "ER" else 0) + [np.eye(n_cell)])
    rng = np.random.default_rng(opts.seed)
    for _ in range(opts.restarts):
        starts.append([_random_orthogonal(2 * m, rng) for _ in range(dim if scheme == "ER" else 0)]
                      + [_random_orthogonal(n_cell, rng)])

    def objective(g):
        return _state_objective(gp_w, gq_w, g, dim, m, scheme, opts.family,
                                opts.kept_weight, pin)

    runs = []
    if scheme == "ER":
        # the LP optimum (u = I) as a start keeps ER at least as good as LP
        eye = [np.eye(2 * m)] * dim

        def cell_only(g):
            f, grads = objective(eye + g)
            return f, grads[-1:]

        w_lp = minimize_gates(cell_only, [np.eye(n_cell)], opts.max_sweeps, opts.tol,
                              opts.family, opts.cond_max)[0][0]
        starts.insert(0, eye + [w_lp])
    for gates in starts:
        if opts.family == "orthogonal":
            # warm starts carry a Williamson-rescaled w0; go back to the group
            gates = [polar_project(g).matrix for g in gates]
        runs.append(minimize_gates(objective, gates, opts.max_sweeps, opts.tol,
                                   opts.family, opts.cond_max))
    gates, history, converged, used = min(runs, key=lambda r: r[1][-1])
    if not converged:
        warnings.warn(f"{scheme} state layer stopped after {used} iterations",
                      ConvergenceWarning, stacklevel=2)
    w = gates[-1] if pin is None else _pinned_w0(gates[-1], gates[:-1], pin, dim, m)
    w, lam = _canonical_w0(gp_w, gq_w, gates[:-1], w, dim, m, opts.family)
    us = gates[:-1] if scheme == "ER" else [np.eye(2 * m)] * dim
    layer = StateLayer(
        scheme, tuple(_as_invertible(u, opts) for u in us),
        InvertibleGate(w, cond_max=opts.cond_max), m, dim,
        generation=state.meta.get("generation", 0) + 1, cost=float(np.sum(lam)),
        truncated=lam, history=tuple(history), sweeps=used, converged=converged)
    return layer


def _as_invertible(u, opts):
    if opts.family == "orthogonal":
        return InvertibleGate.from_orthogonal(OrthogonalGate(u), cond_max=opts.cond_max)
    return InvertibleGate(u, cond_max=opts.cond_max)


def _canonical_w0(gp_w, gq_w, us, w, dim, m, family):
    """Fold the Williamson transform of the dropped sector into ``w0``."""
    drop = w.shape[0] - m
    xp = CellWindow(dim, m, us).x
    if family == "orthogonal":
        xq, wq = xp, w
    else:
        xq = CellWindow(dim, m, [np.linalg.inv(u).T for u in us]).x
        wq = np.linalg.inv(w).T
    tp = xp @ w[:, :drop]
    tq = xq @ wq[:, :drop]
    t, lam = williamson_pq(tp.T @ gp_w @ tp, tq.T @ gq_w @ tq)
    out = w.copy()
    out[:, :drop] = w[:, :drop] @ t
    return out, np.maximum(lam, 1.0)


# -- flows ---------------------------------------------------------------------


def site_entropy(state, site=0):
    """Entropy in bits of one site (its ``M`` modes) of a state."""
    lam = symplectic_spectrum(*state.restrict(state.site_slice(site)))
    return float(np.sum(mode_entropy(lam)))


def block_spectrum(state, length):
    """Symplectic spectrum of ``length`` consecutive sites along axis 0 (from site 0)."""
    n = state.sites_per_axis
    sites = [(i,) + (0,) * (state.dimension - 1) for i in range(length)]
    return symplectic_spectrum(*state.restrict(_mode_index(sites, n, state.modes_per_site)))


def state_distance(new, old, lengths=(1, 2)):
    """Relative change of block symplectic spectra (invariant under local gauge).

    Compares ``sqrt(lambda)`` of blocks of 1 and 2 consecutive sites; a fixed
    state up to a per-site symplectic change of basis gives zero.
    """
    num = den = 0.0
    for length in lengths:
        a = np.sqrt(block_spectrum(new, length))
        b = np.sqrt(block_spectrum(old, length))
        num += np.sum((a - b) ** 2)
        den += np.sum(b ** 2)
    return float(np.sqrt(num / den))


@dataclass
class StateFlow:
    """Coarse-grained states and the layers linking them (a MERA or TTN record).

    ``states[0]`` is the original state; ``states[-1]`` the top state.
    """

    states: list
    layers: list
    scheme: str
    diagnostics: list = field(default_factory=list)

    def __post_init__(self):
        if len(self.layers) != len(self.states) - 1:
            raise ValueError("layer count must equal flow length - 1")

    @property
    def depth(self):
        return len(self.layers)

    @property
    def top(self):
        return self.states[-1]

    def entropies(self):
        return [d["S_per_site"] for d in self.diagnostics]


def run_state_flow(state, scheme="ER", iterations=4, opts=None, warm_start=True):
    """Iterate :func:`optimize_state_layer` and :func:`coarse_grain_state`."""
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    opts = opts or StateOptions()
    n = _check_lattice(state)
    if n % 2 ** iterations or n // 2 ** iterations < 4:
        raise ValueError(f"{n} sites per axis cannot take {iterations} halvings "
                         "(need at least four sites left)")
    state = CovarianceState(state.gamma_p, state.gamma_q, state.modes_per_site, state.dimension,
                            state.site_shape, n, {**state.meta, "generation": 0})
    states, layers = [state], []
    diags = [{"tau": 0, "scheme": scheme, "S_per_site": site_entropy(state)}]
    for tau in range(1, iterations + 1):
        prev = layers[-1] if layers and warm_start else None
        layer = optimize_state_layer(states[-1], scheme, opts, init=prev)
        new = coarse_grain_state(states[-1], layer)
        s = site_entropy(new)
        diags.append({
            "tau": tau, "scheme": scheme, "S_per_site": s,
            "delta_S": s - diags[-1]["S_per_site"],
            "truncation_residual": layer.residual_entropy,
            "max_truncated_excess": float(np.max(layer.truncated) - 1.0),
            "cost": layer.cost, "sweeps": layer.sweeps, "converged": layer.converged,
            "state_change": state_distance(new, states[-1]),
        })
        log.debug("tau=%d S=%.6f residual=%.3e", tau, s, layer.residual_entropy)
        layers.append(layer)
        states.append(new)
    return StateFlow(states, layers, scheme, diags)


MeraRecord = StateFlow


def _inverse_layer(fine_n, layer, gp_c, gq_c, fill=1.0):
    """Undo one layer given the coarse covariance (dropped modes as ``fill * I``)."""
    m, dim = layer.modes_per_site, layer.dimension
    n_cell = layer.n_cell
    cells = (fine_n // 2) ** dim
    nm = cells * n_cell
    keep = _kept_index(fine_n, dim, m)
    gp = fill * np.eye(nm)
    gq = fill * np.eye(nm)
    gp[np.ix_(keep, keep)] = gp_c
    gq[np.ix_(keep, keep)] = gq_c
    a = _full_matrices(layer, fine_n)
    b = _full_matrices(layer, fine_n, inverse_transpose=True)
    perm = _cell_permutation(fine_n, dim, m)
    a, b = a[:, perm], b[:, perm]
    # gp' = A^T gp A  =>  gp = B gp' B^T with B = A^{-T}; gq = A gq' A^T
    return b @ gp @ b.T, a @ gq @ a.T


def reconstruct(record, top=None):
    """Approximate original state from the top state and the layer record.

    Dropped modes are reinserted as unit-covariance product modes and every
    layer is undone in reverse order.
    """
    if not record.layers:
        raise ValueError("record has no layers")
    top = record.top if top is None else top
    gp, gq = top.gamma_p, top.gamma_q
    n = top.sites_per_axis
    for layer in reversed(record.layers):
        if layer is None:
            raise ValueError("missing layer in record")
        n *= 2
        gp, gq = _inverse_layer(n, layer, gp, gq)
    return CovarianceState(gp, gq, top.modes_per_site, top.dimension, top.site_shape, n)


def synthetic_state(top, layers, excess=0.0):
    """Fine state generated from ``top`` by undoing ``layers``.

    Every dropped mode is inserted with symplectic eigenvalue
    ``1 + excess`` (covariance ``sqrt(1 + excess) I`` in both quadratures),
    so ``excess = 0`` gives a state the layers truncate without loss and
    larger values dial in truncated entanglement by hand.
    """
    fill = np.sqrt(1.0 + excess)
    gp, gq = top.gamma_p, top.gamma_q
    n = top.sites_per_axis
    for layer in reversed(list(layers)):
        n *= 2
        gp, gq = _inverse_layer(n, layer, gp, gq, fill)
    return CovarianceState(gp, gq, top.modes_per_site, top.dimension, top.site_shape, n)


def product_state(sites_per_axis, m, dimension=1, rng=None, spread=0.3):
    """Translation-invariant product of one seeded pure ``M``-mode state per site."""
    rng = np.random.default_rng(rng)
    x = la.expm(spread * rng.standard_normal((m, m)))
    gq_site = x @ x.T
    count = sites_per_axis ** dimension
    gq = np.kron(np.eye(count), gq_site)
    gp = np.kron(np.eye(count), np.linalg.inv(gq_site))
    side = m if dimension == 1 else int(round(np.sqrt(m)))
    return CovarianceState(gp, gq, m, dimension, (side,) * dimension, sites_per_axis)


def random_layer(m, dimension=1, scheme="ER", rng=None, spread=0.3, generation=1):
    """Seeded invertible layer ``expm(spread * G)`` with Gaussian ``G`` per gate."""
    rng = np.random.default_rng(rng)
    n_cell = 2 ** dimension * m

    def gate(n):
        return InvertibleGate(la.expm(spread * rng.standard_normal((n, n))))

    us = tuple(gate(2 * m) if scheme == "ER" else InvertibleGate(np.eye(2 * m))
               for _ in range(dimension))
    return StateLayer(scheme, us, gate(n_cell), m, dimension, generation)


def correlator_error(approx, exact):
    """Largest absolute entry deviation over both covariance matrices."""
    a_p, a_q = (approx.gamma_p, approx.gamma_q) if hasattr(approx, "gamma_p") else approx
    e_p, e_q = (exact.gamma_p, exact.gamma_q) if hasattr(exact, "gamma_p") else exact
    if np.shape(a_p) != np.shape(e_p) or np.shape(a_q) != np.shape(e_q):
        raise ValueError(f"shape mismatch {np.shape(a_p)} vs {np.shape(e_p)}")
    return float(max(np.max(np.abs(np.asarray(a_p) - e_p)), np.max(np.abs(np.asarray(a_q) - e_q))))


# -- serialisation ---------------------------------------------------------------


def _write_matrix(path, mat):
    np.savetxt(path, np.asarray(mat), delimiter=",", fmt="%.17g")


def save_record(record, directory):
    """Write a JSON manifest plus per-layer gate CSVs and the top state.

    The files are enough for :func:`load_record` + :func:`reconstruct`.
    """
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    layers = []
    for i, layer in enumerate(record.layers):
        files = {"w0": f"layer{i + 1}_w0.csv"}
        _write_matrix(out / files["w0"], layer.w0.matrix)
        for ax, u in enumerate(layer.disentanglers):
            files[f"u{ax}"] = f"layer{i + 1}_u{ax}.csv"
            _write_matrix(out / files[f"u{ax}"], u.matrix)
        layers.append({
            "generation": layer.generation, "scheme": layer.scheme, "files": files,
            "cost": layer.cost, "truncated": [float(x) for x in layer.truncated],
            "residual_entropy": layer.residual_entropy, "converged": bool(layer.converged),
            "cond_max": layer.w0.cond_max,
        })
    top = record.top
    _write_matrix(out / "top_gamma_p.csv", top.gamma_p)
    _write_matrix(out / "top_gamma_q.csv", top.gamma_q)
    manifest = {
        "scheme": record.scheme, "dimension": top.dimension,
        "modes_per_site": top.modes_per_site, "top_sites_per_axis": top.sites_per_axis,
        "site_shape": list(top.site_shape) if top.site_shape else None,
        "top": {"gamma_p": "top_gamma_p.csv", "gamma_q": "top_gamma_q.csv"},
        "layers": layers, "diagnostics": record.diagnostics,
    }
    (out / "record.json").write_text(json.dumps(manifest, indent=2, default=_json_default) + "\n")
    return out / "record.json"


def _json_default(x):
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    if isinstance(x, np.bool_):
        return bool(x)
    if isinstance(x, np.ndarray):
        return x.tolist()
    raise TypeError(f"not serialisable: {type(x)}")


def _read_matrix(path):
    return np.atleast_2d(np.loadtxt(path, delimiter=","))


def load_record(directory):
    """Inverse of :func:`save_record`; returns a record holding only the top state."""
    base = Path(directory)
    man = json.loads((base / "record.json").read_text())
    m, dim = man["modes_per_site"], man["dimension"]
    layers = []
    for entry in man["layers"]:
        files = entry["files"]
        us = tuple(InvertibleGate(_read_matrix(base / files[f"u{ax}"]), cond_max=entry["cond_max"])
                   for ax in range(dim))
        w0 = InvertibleGate(_read_matrix(base / files["w0"]), cond_max=entry["cond_max"])
        layers.append(StateLayer(entry["scheme"], us, w0, m, dim, entry["generation"],
                                 entry["cost"], np.array(entry["truncated"]),
                                 converged=entry["converged"]))
    top = CovarianceState(_read_matrix(base / man["top"]["gamma_p"]),
                          _read_matrix(base / man["top"]["gamma_q"]), m, dim,
                          tuple(man["site_shape"]) if man["site_shape"] else None,
                          man["top_sites_per_axis"])
    placeholders = [None] * len(layers)
    flow = StateFlow.__new__(StateFlow)
    flow.states, flow.layers, flow.scheme = placeholders + [top], layers, man["scheme"]
    flow.diagnostics = man.get("diagnostics", [])
    return flow
