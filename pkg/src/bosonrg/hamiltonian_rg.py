"""
Real-space RG of quadratic Hamiltonian matrices.

One iteration (LP or ER) acting on translation-invariant block Hamiltonians:

1. conjugate ``H_q`` by the disentanglers (ER only) and the cell rotation ``w0``;
2. drop the discarded rows/columns (``w_proj = 0_M (+) I_M`` keeps the last M);
3. multiply the retained matrix by ``ENERGY_FACTOR`` (4 on ``H_q``, i.e.
   energies double, matching the momentum-space map ``c'(k) = 4 c(k/2)``).

Gates minimise the trace of one coarse-grained block. Minimising the trace
alone leaks a little of the long-wavelength mode into the discarded sector;
under iteration that leak acts like a mass (or a velocity shift) and grows.
The kept span is therefore constrained to contain the lowest Bloch mode to
the highest order in momentum that fits in ``M`` modes (see
:func:`long_wavelength_modes`). For fixed
disentanglers the constrained isometry is an exact eigen-problem, so the
optimiser only searches over the disentanglers.
"""

import itertools
import logging
import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg as la

from .gaussian import OrthogonalGate, bloch_dispersion, bloch_matrix
from .lattice import QuadraticHamiltonian
from .momentum import DispersionCurve, bz_grid, mean_energy
from .optim import minimize_gates
from .network import CellWindow, cell_sites, coarse_offsets, shifted, window_operator

log = logging.getLogger(__name__)

ENERGY_FACTOR = 4.0
SCALE_FACTOR = 2
FIXED_POINT_EPS = 1e-2
PROTECT_ORDER = "auto"
TIE_BREAK = 0.0
SCHEMES = ("LP", "ER")


class ConvergenceWarning(UserWarning):
    pass


@dataclass(frozen=True)
class OptimizerOptions:
    """Settings for :func:`optimize_layer`.

    ``max_sweeps`` caps the quasi-Newton iterations per start, ``tol`` is the
    relative cost change (per inner run) that counts as converged,
    ``restarts`` random starts (drawn from ``seed``) join the identity and any
    warm start. Every start gets ``screen_sweeps`` iterations; the best
    ``finalists`` are then run to convergence.
    ``protect_order`` fixes how many orders in ``k`` of the lowest Bloch mode
    the kept span must reproduce; ``"auto"`` takes the highest order that fits
    in ``M`` kept modes and ``None`` gives plain trace minimisation.
    """

    max_sweeps: int = 5000
    tol: float = 1e-8
    seed: int = 0
    restarts: int = 8
    screen_sweeps: int = 400
    finalists: int = 2
    protect_order: object = PROTECT_ORDER


@dataclass(frozen=True)
class RgLayer:
    """Gates of one coarse-graining layer.

    ``disentanglers`` holds one ``2M x 2M`` gate per lattice axis (identities
    for LP); ``w0`` rotates the ``2^D M`` cell modes before the projector
    keeps the last ``M``.
    """

    scheme: str
    disentanglers: tuple
    w0: OrthogonalGate
    modes_per_site: int
    dimension: int = 1
    generation: int = 0
    scale: int = SCALE_FACTOR
    cost: float = None
    sweeps: int = 0
    converged: bool = True
    history: tuple = field(default=(), repr=False)

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}")
        n = 2 ** self.dimension * self.modes_per_site
        if self.w0.n != n:
            raise ValueError(f"w0 has size {self.w0.n}, expected {n}")
        if len(self.disentanglers) != self.dimension:
            raise ValueError("one disentangler per lattice axis is required")
        for u in self.disentanglers:
            if u.n != 2 * self.modes_per_site:
                raise ValueError("disentangler has the wrong size")
            if self.scheme == "LP" and not np.allclose(u.matrix, np.eye(u.n)):
                raise ValueError("LP layers carry identity disentanglers")

    @property
    def projector(self):
        """``w_proj = 0_M (+) I_M`` as an ``n x M`` column selector."""
        n = self.w0.n
        p = np.zeros((n, self.modes_per_site))
        p[n - self.modes_per_site:, :] = np.eye(self.modes_per_site)
        return p

    @property
    def kept(self):
        """Kept columns of ``w0`` (``w0 w_proj``)."""
        return self.w0.matrix[:, -self.modes_per_site:]

    def window(self):
        gates = [u.matrix for u in self.disentanglers] if self.scheme == "ER" else []
        return CellWindow(self.dimension, self.modes_per_site, gates)

    def composite(self):
        """Isometry from kept coarse modes to the supporting window of sites."""
        win = self.window()
        return win.x @ self.kept, win.sites


def _cost_parts(h, window):
    sites = window.sites
    hw = window_operator(h.blocks, sites, sites, h.modes_per_site)
    return hw, window.x.T @ hw @ window.x


def uniform_mode(h):
    """Lowest eigenvector of the zero-momentum Bloch matrix ``sum_d h_d`` (unit norm)."""
    h_zero = sum(h.blocks.values())
    _, v = la.eigh(0.5 * (h_zero + h_zero.T))
    z = v[:, 0]
    return z if z[int(np.argmax(np.abs(z)))] > 0 else -z


def auto_protect_order(dimension, m):
    """Highest expansion order whose mode count fits in ``m`` kept modes."""
    order = 0
    while math.comb(order + 1 + dimension, dimension) <= m:
        order += 1
    return order


def _multi_indices(dimension, order):
    out = []
    for total in range(order + 1):
        out += [n for n in itertools.product(range(total + 1), repeat=dimension) if sum(n) == total]
    return out


def long_wavelength_modes(h, sites, order=2):
    """Window vectors spanning the lowest Bloch mode to the given order in ``k``.

    With ``h(k) = sum_n (i k)^n H_n / n!`` (multi-index ``n``,
    ``H_n = sum_d d^n h_d``) the lowest eigenvector expands as
    ``psi(k) = sum_n (i k)^n phi_n`` with ``phi_0 = z`` and

        phi_n = -R sum_{0 < j <= n} (H_j / j! - eps_j) phi_{n-j},
        eps_n = z . sum_{0 < j <= n} (H_j / j!) phi_{n-j},

    ``R`` the reduced resolvent of ``h(0)``. The real-space mode
    ``exp(i k.x) psi(k)`` then has coefficient vectors
    ``v_n(x) = sum_{a <= n} x^a / a! phi_{n-a}``; their span over ``|n| <= order``,
    restricted to ``sites`` and orthonormalised, is returned.
    """
    dim = h.dimension
    h_zero = sum(h.blocks.values())
    e, v = la.eigh(0.5 * (h_zero + h_zero.T))
    z = uniform_mode(h)
    gap = e[1:] - e[0]
    ok = gap > 1e-12 * max(1.0, abs(e).max())
    vr = v[:, 1:][:, ok]
    resolvent = (vr / gap[ok]) @ vr.T
    indices = _multi_indices(dim, order)
    fact = {n: float(np.prod([math.factorial(c) for c in n])) for n in indices}
    moments = {n: sum(np.prod(np.power(d, n)) * b for d, b in h.blocks.items()) / fact[n]
               for n in indices}
    phi, eps = {indices[0]: z}, {indices[0]: e[0]}
    for n in indices[1:]:
        lower = [j for j in indices if any(j) and all(a <= b for a, b in zip(j, n))]
        acc = sum(moments[j] @ phi[_sub(n, j)] for j in lower)
        eps[n] = float(z @ acc)
        acc = acc - sum(eps[j] * phi[_sub(n, j)] for j in lower)
        phi[n] = -resolvent @ acc
    xs = np.array(sites, dtype=float)
    cols = []
    for n in indices:
        parts = [j for j in indices if all(a <= b for a, b in zip(j, n))]
        cols.append(np.concatenate([
            sum(np.prod(np.power(x, j)) / fact[j] * phi[_sub(n, j)] for j in parts)
            for x in xs]))
    q, r = np.linalg.qr(np.column_stack(cols))
    rank = int(np.sum(np.abs(np.diag(r)) > 1e-10 * np.abs(r).max()))
    return q[:, :rank]


def _sub(n, j):
    return tuple(a - b for a, b in zip(n, j))


def _gauge_fix(g):
    for j in range(g.shape[1]):
        col = g[:, j]
        k = int(np.argmax(np.abs(np.round(col, 10))))
        if col[k] < 0:
            g[:, j] = -col
    if np.linalg.det(g) < 0:
        g[:, 0] = -g[:, 0]
    return OrthogonalGate(g)


def _eigen_w0(ht, m, protect=None):
    """Rotation whose last M columns span the lowest eigenvectors of ``ht``.

    With ``protect`` (cell vectors, one per column) the kept span is forced
    to contain them: the optimum is their span plus the lowest remaining
    eigenvectors of ``ht`` compressed to its orthogonal complement.
    """
    if protect is None:
        w, v = la.eigh(ht)
        order = list(range(m, len(w))) + list(range(m))
        return _gauge_fix(v[:, order].copy()), float(np.sum(w[:m]))
    u, sv, _ = np.linalg.svd(np.atleast_2d(protect.T).T, full_matrices=True)
    r = int(np.sum(sv > 1e-10 * sv.max()))
    if r > m:
        raise ValueError(f"cannot keep {r} protected modes with M={m}")
    t, comp = u[:, :r], u[:, r:]
    _, v = la.eigh(comp.T @ ht @ comp)
    kept = np.column_stack([t, comp @ v[:, :m - r]])
    # diagonalise inside the kept span (a gauge choice)
    wk, rot = la.eigh(kept.T @ ht @ kept)
    g = np.column_stack([comp @ v[:, m - r:], kept @ rot])
    return _gauge_fix(g), float(np.sum(wk))


def coarse_grain_hamiltonian(h, layer, check=True):
    """Apply one RG layer to a block Hamiltonian.

    Returns a block Hamiltonian with the same number of modes per site,
    couplings up to next-nearest sites, generation advanced by one.
    """
    if h.blocks is None:
        raise ValueError("coarse-graining acts on the translation-invariant block form")
    if h.modes_per_site != layer.modes_per_site or h.dimension != layer.dimension:
        raise ValueError(
            f"layer expects M={layer.modes_per_site}, D={layer.dimension}; "
            f"got M={h.modes_per_site}, D={h.dimension}")
    m = h.modes_per_site
    win = layer.window()
    y = win.x @ layer.kept
    out = {}
    for d in coarse_offsets(h.dimension, 3):
        cross = window_operator(h.blocks, win.sites, shifted(win.sites, d), m)
        b = ENERGY_FACTOR * (y.T @ cross @ y)
        if max(abs(x) for x in d) == 3:
            if np.max(np.abs(b)) > 1e-12 * max(1.0, max(np.abs(v).max() for v in h.blocks.values())):
                raise RuntimeError(f"coarse couplings at offset {d}: bandwidth exceeds next-nearest")
            continue
        if np.any(b):
            out[d] = b
    zero = (0,) * h.dimension
    out[zero] = 0.5 * (out[zero] + out[zero].T)
    new = QuadraticHamiltonian(
        dimension=h.dimension, modes_per_site=m, blocks=out, site_shape=None,
        sites_per_axis=None if h.sites_per_axis is None else h.sites_per_axis // 2,
        spacing=h.spacing * SCALE_FACTOR, generation=h.generation + 1,
    )
    if check:
        new.check()
    return new


def _layer_objective(hw, vw, gates, dim, m):
    """Constrained block trace and its gradient w.r.t. every disentangler.

    The isometry is eliminated exactly: the kept span is ``span(X^T V)`` plus
    the lowest eigenvectors of the block compressed to its complement, so
    ``f = tr(Ht Pi)`` with ``Pi`` the kept projector. Differentiating also
    through the moving protected projector ``P`` gives
    ``df/dX = 2 H X Pi + V C^T`` with ``C = 2 (I - P) S (X^T V)^{+T}`` and
    ``S = Ht - G G^T Ht - Ht G G^T`` (``G`` the free kept vectors).
    """
    win = CellWindow(dim, m, gates)
    x = win.x
    n = x.shape[1]
    ht = x.T @ hw @ x
    r = vw.shape[1]
    if r:
        a = x.T @ vw
        u, _, _ = np.linalg.svd(a, full_matrices=True)
        t, comp = u[:, :r], u[:, r:]
    else:
        t, comp = np.zeros((n, 0)), np.eye(n)
    _, v = la.eigh(comp.T @ ht @ comp)
    g = comp @ v[:, :m - r]
    pi = t @ t.T + g @ g.T
    f = float(np.sum(ht * pi))
    grad_x = 2.0 * hw @ x @ pi
    if r:
        gg = g @ g.T
        s = ht - gg @ ht - ht @ gg
        c = 2.0 * (np.eye(n) - t @ t.T) @ s @ np.linalg.pinv(a).T
        grad_x = grad_x + vw @ c.T
    return f, win.gate_gradients(grad_x)


def _minimize_gates(hw, vw, gates, dim, m, opts):
    return minimize_gates(lambda g: _layer_objective(hw, vw, g, dim, m), gates,
                          opts.max_sweeps, opts.tol)


def _start_gates(m, dim, opts, init):
    starts = []
    if init is not None and init.scheme == "ER":
        starts.append([u.matrix.copy() for u in init.disentanglers])
    starts.append([np.eye(2 * m) for _ in range(dim)])
    rng = np.random.default_rng(opts.seed)
    for _ in range(opts.restarts):
        starts.append([OrthogonalGate.random(2 * m, rng).matrix for _ in range(dim)])
    return starts


def optimize_layer(h, scheme="ER", opts=None, init=None):
    return optimize_layer_candidates(h, scheme, opts, init)[0]


def optimize_layer_candidates(h, scheme="ER", opts=None, init=None):
    """Find gates minimising the (constrained) trace of a coarse-grained block.

    Parameters
    ----------
    h : QuadraticHamiltonian
        Block form, Bloch-positive.
    scheme : {"ER", "LP"}
    opts : OptimizerOptions
    init : RgLayer, optional
        Warm start (e.g. the previous layer of a flow), tried alongside the
        identity and ``opts.restarts`` seeded random starts.

    Returns
    -------
    RgLayer
        The best start, with ``cost`` (including the energy factor), the
        per-iteration cost history and a ``converged`` flag. Non-convergence
        emits a :class:`ConvergenceWarning` and returns the best layer found.
    """
    opts = opts or OptimizerOptions()
    if scheme not in SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}")
    if h.blocks is None:
        raise ValueError("optimize_layer needs the block form")
    m, dim = h.modes_per_site, h.dimension
    sites = CellWindow(dim, m, [np.eye(2 * m)] * dim if scheme == "ER" else []).sites
    hw = window_operator(h.blocks, sites, sites, m)
    if opts.protect_order is None:
        vw = np.zeros((hw.shape[0], 0))
    else:
        order = opts.protect_order
        if order == "auto":
            order = auto_protect_order(dim, m)
        vw = long_wavelength_modes(h, sites, order)
        if vw.shape[1] > m:
            raise ValueError(f"protecting order {order} needs {vw.shape[1]} "
                             f"kept modes but M={m}")

    if scheme == "LP":
        runs = [([], [_layer_objective(hw, vw, [], dim, m)[0]], True, 0)]
    else:
        screen = replace(opts, max_sweeps=min(opts.screen_sweeps, opts.max_sweeps))
        runs = [_minimize_gates(hw, vw, g, dim, m, screen) for g in _start_gates(m, dim, opts, init)]
        runs = sorted(runs, key=lambda r: r[1][-1])
        finals = []
        for gates, history, converged, used in runs[:opts.finalists]:
            if not converged and opts.max_sweeps > used:
                g2, h2, converged, more = _minimize_gates(
                    hw, vw, gates, dim, m, replace(opts, max_sweeps=opts.max_sweeps - used))
                gates, history, used = g2, history + h2[1:], used + more
            finals.append((gates, history, converged, used))
        runs = finals
    runs = sorted(runs, key=lambda r: r[1][-1])
    gates, history, converged, used = runs[0]
    if not converged:
        warnings.warn(f"ER layer optimisation stopped after {used} iterations "
                      f"(last relative change {abs(history[-2] - history[-1]) / abs(history[-1]):.2e})",
                      ConvergenceWarning, stacklevel=3)
    out = []
    for gates, history, converged, used in runs:
        win = CellWindow(dim, m, gates)
        ht = win.x.T @ hw @ win.x
        w0, tr = _eigen_w0(ht, m, win.x.T @ vw if vw.shape[1] else None)
        us = tuple(OrthogonalGate(g) for g in gates) if scheme == "ER" else \
            tuple(OrthogonalGate.identity(2 * m) for _ in range(dim))
        out.append(RgLayer(scheme, us, w0, m, dim, generation=h.generation + 1,
                           cost=ENERGY_FACTOR * tr, sweeps=used, converged=converged,
                           history=tuple(ENERGY_FACTOR * c for c in history)))
    return out


def block_cost(h, layer):
    """``ENERGY_FACTOR * tr`` of one coarse-grained on-site block."""
    _, ht = _cost_parts(h, layer.window())
    q = layer.kept
    return float(ENERGY_FACTOR * np.trace(q.T @ ht @ q))


# -- flows ---------------------------------------------------------------------


def _midpoint_grid(points, dimension):
    k = -np.pi + (np.arange(points) + 0.5) * 2 * np.pi / points
    if dimension == 1:
        return k
    k1, k2 = np.meshgrid(k, k, indexing="ij")
    return np.stack([k1.ravel(), k2.ravel()], axis=1)


def _default_points(dimension):
    return 256 if dimension == 1 else 32


def bloch_spectrum(h, points=None):
    """Ascending eigenvalues of ``h(k)`` on a midpoint grid, shape ``(G, M)``."""
    kappa = _midpoint_grid(points or _default_points(h.dimension), h.dimension)
    return np.linalg.eigvalsh(bloch_matrix(h.blocks, kappa))


def hamiltonian_distance(h_new, h_old, points=None):
    """Gauge-invariant relative distance between two block Hamiltonians.

    By Parseval the stacked Frobenius norm of the blocks equals the L2 norm
    of ``h(k)`` over the zone. Minimising the block distance over all
    momentum-dependent orthogonal changes of basis leaves the L2 distance of
    the sorted Bloch eigenvalues, which is what is returned (relative to the
    norm of ``h_old``).
    """
    a = bloch_spectrum(h_new, points)
    b = bloch_spectrum(h_old, points)
    return float(np.sqrt(np.mean(np.sum((a - b) ** 2, axis=1)) / np.mean(np.sum(b ** 2, axis=1))))


def _normalised_stack(h, offsets):
    scale = np.linalg.norm(h.h0)
    return np.stack([h.block(d) for d in offsets]) / scale


def sign_aligned_distance(a, b):
    """``min_D |D a D - b| / |b|`` over diagonal sign matrices ``D``.

    ``a`` and ``b`` are stacks ``(k, M, M)`` (blocks) or ``(n, M)`` (columns
    of an isometry, acted on from the right only).
    """
    m = a.shape[-1]
    best = np.inf
    if m > 12:
        raise ValueError("sign alignment is exhaustive; M too large")
    for signs in itertools.product((1.0, -1.0), repeat=m - 1):
        s = np.array((1.0,) + signs)
        if a.ndim == 3:
            cand = a * s[None, :, None] * s[None, None, :]
        else:
            cand = a * s[None, :]
        best = min(best, np.linalg.norm(cand - b))
    return best / np.linalg.norm(b)


def block_distance(h_new, h_old):
    """Raw block distance (scale ``|h0|``, aligned over site sign flips only)."""
    offsets = sorted(set(h_new.blocks) | set(h_old.blocks))
    return sign_aligned_distance(_normalised_stack(h_new, offsets), _normalised_stack(h_old, offsets))


def retained_weights(h, layer, points=None):
    """Weight each fine Bloch mode keeps in the coarse sector, per coarse momentum.

    For coarse momentum ``K`` the ``2^D M`` modes of a cell have Bloch
    eigenvectors ``e_j(K)`` (ascending energy); the layer keeps an ``M``-dim
    subspace. Returns cumulative kept weights ``sum_{i<=j} |P_kept e_i|^2``,
    shape ``(G, 2^D M)``. Independent of the basis choice on either lattice.
    """
    m, dim = layer.modes_per_site, layer.dimension
    y, sites = layer.composite()
    cells = cell_sites(dim)
    pos = {a: i for i, a in enumerate(cells)}
    n = len(cells) * m
    kappa = _midpoint_grid(points or _default_points(dim), dim).reshape(-1, dim)
    # supercell Bloch matrix: couples (a, mu) to (b, nu) across cell offsets D
    hk = np.zeros((len(kappa), n, n), complex)
    for d, blk in h.blocks.items():
        for a in cells:
            for b in cells:
                off = np.array(d) + np.array(a) - np.array(b)
                if np.all(off % 2 == 0):
                    big = off // 2
                    ph = np.exp(1j * kappa @ big)
                    ia, ib = pos[a], pos[b]
                    hk[:, ia * m:(ia + 1) * m, ib * m:(ib + 1) * m] += ph[:, None, None] * blk
    # Bloch image of the kept coarse modes
    yk = np.zeros((len(kappa), n, m), complex)
    for i, s in enumerate(sites):
        s = np.array(s)
        a = tuple(s % 2)
        c = s // 2
        ia = pos[a]
        yk[:, ia * m:(ia + 1) * m, :] += np.exp(-1j * kappa @ c)[:, None, None] * y[i * m:(i + 1) * m]
    _, vecs = np.linalg.eigh(0.5 * (hk + np.conj(np.swapaxes(hk, 1, 2))))
    over = np.einsum("gnm,gnj->gmj", np.conj(yk), vecs)
    return np.cumsum(np.sum(np.abs(over) ** 2, axis=1), axis=1)


def gate_distance(layer_new, h_new, layer_old, h_old, points=None):
    """RMS change of :func:`retained_weights` between two layers."""
    a = retained_weights(h_new, layer_new, points)
    b = retained_weights(h_old, layer_old, points)
    return float(np.sqrt(np.mean((a - b) ** 2)))


@dataclass
class HamiltonianFlow:
    """Sequence of effective Hamiltonians with the layers connecting them."""

    hamiltonians: list
    layers: list
    scheme: str
    diagnostics: list = field(default_factory=list)
    fixed_point_eps: float = FIXED_POINT_EPS

    @property
    def depth(self):
        return len(self.layers)

    @property
    def fixed_point_generation(self):
        """Smallest ``tau`` from which every later step stays below the threshold."""
        flags = [d["fixed_point"] for d in self.diagnostics[1:]]
        for t in range(len(flags)):
            if all(flags[t:]):
                return t + 1
        return None


def run_flow(h0, scheme="ER", iterations=4, opts=None, oracle=None, grid=None,
             eps=FIXED_POINT_EPS, warm_start=True, tie_break=TIE_BREAK):
    """Iterate :func:`optimize_layer` + :func:`coarse_grain_hamiltonian`.

    ``oracle`` is an optional callable ``tau -> mean energy`` (momentum-space
    reference); when given, each generation records ``delta_E``.
    """
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    opts = opts or OptimizerOptions()
    hs, layers = [h0], []
    diags = [_diagnostics(h0, None, None, None, None, scheme, oracle, grid, eps)]
    for _ in range(iterations):
        prev = layers[-1] if layers and warm_start else None
        cands = optimize_layer_candidates(hs[-1], scheme, opts, init=prev)
        best = cands[0].cost
        # near-degenerate minima: follow the branch closest to the current theory
        tied = [c for c in cands if c.cost <= best + tie_break * abs(best)]
        nexts = [coarse_grain_hamiltonian(hs[-1], c) for c in tied]
        j = 0 if len(tied) == 1 or not layers else int(np.argmin(
            [hamiltonian_distance(hn, hs[-1]) for hn in nexts]))
        layer, h_next = tied[j], nexts[j]
        diags.append(_diagnostics(h_next, hs[-1], layer, layers[-1] if layers else None,
                                  hs[-2] if layers else None, scheme, oracle, grid, eps))
        layers.append(layer)
        hs.append(h_next)
    return HamiltonianFlow(hs, layers, scheme, diags, eps)


def _diagnostics(h, h_prev, layer, layer_prev, h_prev_prev, scheme, oracle, grid, eps):
    d = {"tau": h.generation, "scheme": scheme}
    if layer is not None:
        d["cost"] = layer.cost
        d["sweeps"] = layer.sweeps
        d["converged"] = layer.converged
    if h_prev is not None:
        d["rel_change"] = hamiltonian_distance(h, h_prev)
        d["block_change"] = block_distance(h, h_prev)
        d["fixed_point"] = d["rel_change"] < eps
    if layer is not None and layer_prev is not None:
        d["gate_change"] = gate_distance(layer, h_prev, layer_prev, h_prev_prev)
    if oracle is not None:
        e_rs = mean_energy(hamiltonian_dispersion(h, grid))
        e_ms = oracle(h.generation)
        d["E_bar_rs"] = e_rs
        d["E_bar_ms"] = e_ms
        d["delta_E"] = (e_rs - e_ms) / e_ms
    return d


def hamiltonian_dispersion(h, points=None, units="rescaled"):
    """Dispersion branches of a block Hamiltonian on a uniform grid."""
    points = points or (4096 if h.dimension == 1 else 64)
    kappa, shape = bz_grid(points, h.dimension)
    e = bloch_dispersion(h.blocks, kappa)
    curve = DispersionCurve(kappa, e, h.generation, "rescaled", shape)
    return curve.to_raw() if units == "raw" else curve


def flow_dispersion(flow, tau, points=None, units="rescaled"):
    """Dispersion of the ``tau``-th effective Hamiltonian of a flow."""
    if not 0 <= tau < len(flow.hamiltonians):
        raise IndexError(f"tau={tau} outside 0..{len(flow.hamiltonians) - 1}")
    return hamiltonian_dispersion(flow.hamiltonians[tau], points, units)


def dense_coarse_grain(h_dense, m, layer):
    """Reference implementation on a 1D ring: full-matrix conjugation.

    Builds the direct sums of the gates explicitly, conjugates, keeps the
    retained rows/columns and rescales. Used to cross-check the window path.
    """
    n = h_dense.shape[0]
    if layer.dimension != 1:
        raise ValueError("dense reference is 1D only")
    ncell = n // (2 * m)
    big_u = np.eye(n)
    if layer.scheme == "ER":
        u = layer.disentanglers[0].matrix
        shift = np.roll(np.eye(n), m, axis=0)          # site s -> s + 1
        blk = la.block_diag(*[u] * ncell)
        big_u = shift @ blk @ shift.T
    big_w = la.block_diag(*[layer.w0.matrix] * ncell)
    keep = np.concatenate([c * 2 * m + np.arange(m, 2 * m) for c in range(ncell)])
    full = big_w.T @ big_u.T @ h_dense @ big_u @ big_w
    return ENERGY_FACTOR * full[np.ix_(keep, keep)]


def with_generation(h, generation):
    return replace(h, generation=generation)
