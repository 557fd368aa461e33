"""
Harmonic lattice models: Hamiltonian matrices, site regrouping and the exact
Gaussian ground state.

All Hamiltonians are of the form ``H = p.p + q^T H_q q`` with hbar = 1; only
the q-quadrature coupling matrix ``H_q`` is stored. Two storage forms exist:

* ``blocks`` -- translation-invariant site blocks ``{offset: M x M}``
  describing the infinite lattice (used for Hamiltonian RG);
* ``dense`` -- the full matrix on a periodic ring / torus (used for
  covariance work).
"""

import itertools
import math
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg as la

from .gaussian import PSD_TOL, HEISENBERG_TOL, BlockSymbol, symplectic_spectrum


class MasslessError(ValueError):
    """Ground state requested for a Hamiltonian with a zero mode."""


@dataclass(frozen=True)
class LatticeSpec:
    """Geometry of a periodic harmonic lattice.

    ``extent`` counts modes per axis. In 2D ``modes_per_site`` must be a
    perfect square (sites are ``s x s`` patches of modes).
    """

    dimension: int = 1
    extent: int = 64
    modes_per_site: int = 1
    spacing: float = 1.0
    regulator_mass: float = 1e-6

    def __post_init__(self):
        if self.dimension not in (1, 2):
            raise ValueError(f"dimension must be 1 or 2, got {self.dimension}")
        if self.modes_per_site < 1:
            raise ValueError("modes_per_site must be positive")
        if self.regulator_mass < 0:
            raise ValueError("regulator_mass must be >= 0")
        side = self.site_side
        if self.extent <= 0 or self.extent % side:
            raise ValueError(f"extent {self.extent} is not a multiple of the site side {side}")
        if (self.extent // side) % 2:
            raise ValueError(
                f"extent {self.extent} gives {self.extent // side} sites per axis; "
                "an even number is needed for two-site blocking"
            )

    @property
    def site_side(self):
        if self.dimension == 1:
            return self.modes_per_site
        s = math.isqrt(self.modes_per_site)
        if s * s != self.modes_per_site:
            raise ValueError(f"2D sites need a square mode count, got {self.modes_per_site}")
        return s

    @property
    def site_shape(self):
        return (self.site_side,) * self.dimension

    @property
    def sites_per_axis(self):
        return self.extent // self.site_side

    @property
    def n_modes(self):
        return self.extent ** self.dimension


@dataclass(frozen=True)
class ModelParams:
    """Couplings of ``H0 + m^2 H_rel + alpha H_irrel``."""

    coupling: float = 1.0
    mass: float = 0.0
    alpha: float = 0.0

    def __post_init__(self):
        if not self.coupling >= 0:
            raise ValueError(f"coupling must be >= 0, got {self.coupling}")
        if self.mass < 0:
            raise ValueError(f"mass must be >= 0, got {self.mass}")
        if self.alpha < 0:
            raise ValueError(f"alpha must be >= 0, got {self.alpha}")

    @property
    def is_massless(self):
        return self.mass == 0


@dataclass(frozen=True)
class QuadraticHamiltonian:
    """q-quadrature coupling matrix in block or dense form."""

    dimension: int
    modes_per_site: int
    blocks: dict = None
    dense: np.ndarray = None
    site_shape: tuple = None
    sites_per_axis: int = None
    spacing: float = 1.0
    generation: int = 0

    def __post_init__(self):
        if (self.blocks is None) == (self.dense is None):
            raise ValueError("exactly one of blocks / dense must be given")
        if self.blocks is not None:
            zero = (0,) * self.dimension
            blocks = {tuple(int(x) for x in k): np.asarray(v, float) for k, v in self.blocks.items()}
            for d, b in blocks.items():
                if len(d) != self.dimension or b.shape != (self.modes_per_site,) * 2:
                    raise ValueError(f"bad block at offset {d}: shape {b.shape}")
            if zero not in blocks:
                blocks[zero] = np.zeros((self.modes_per_site,) * 2)
            h0 = blocks[zero]
            if np.max(np.abs(h0 - h0.T), initial=0) > 1e-12 * max(1.0, np.max(np.abs(h0))):
                raise ValueError("on-site block is not symmetric")
            for d in list(blocks):
                neg = tuple(-x for x in d)
                if neg not in blocks:
                    blocks[neg] = blocks[d].T.copy()
            object.__setattr__(self, "blocks", blocks)
        else:
            h = np.asarray(self.dense, float)
            if h.ndim != 2 or h.shape[0] != h.shape[1]:
                raise ValueError("dense Hamiltonian must be square")
            if np.max(np.abs(h - h.T)) > 1e-12 * max(1.0, np.max(np.abs(h))):
                raise ValueError("dense Hamiltonian is not symmetric")
            if h.shape[0] % self.modes_per_site:
                raise ValueError("mode count not divisible by modes_per_site")
            object.__setattr__(self, "dense", h)

    @property
    def form(self):
        return "blocks" if self.blocks is not None else "dense"

    @property
    def h0(self):
        return self.block((0,) * self.dimension)

    @property
    def h1(self):
        return self.block((1,) + (0,) * (self.dimension - 1))

    @property
    def h2(self):
        return self.block((2,) + (0,) * (self.dimension - 1))

    def block(self, offset):
        if self.blocks is None:
            raise ValueError("site blocks are only defined for the block form")
        offset = tuple(offset)
        return self.blocks.get(offset, np.zeros((self.modes_per_site,) * 2))

    @property
    def range(self):
        """Largest site offset (Chebyshev) carrying a nonzero block."""
        scale = max(np.max(np.abs(b)) for b in self.blocks.values())
        live = [d for d, b in self.blocks.items() if np.max(np.abs(b)) > 1e-13 * scale]
        return max((max(abs(x) for x in d) for d in live), default=0)

    def symbol(self):
        return BlockSymbol(self.blocks)

    def bloch(self, kappa):
        return self.symbol()(kappa)

    def scaled(self, factor, generation=None):
        gen = self.generation if generation is None else generation
        if self.blocks is not None:
            return replace(self, blocks={d: factor * b for d, b in self.blocks.items()}, generation=gen)
        return replace(self, dense=factor * self.dense, generation=gen)

    def to_dense(self, sites_per_axis=None):
        """Dense matrix on a ring/torus of ``sites_per_axis`` sites per axis."""
        if self.dense is not None:
            return self.dense
        n = sites_per_axis or self.sites_per_axis
        if n is None:
            raise ValueError("ring size needed to densify a block Hamiltonian")
        return blocks_to_dense(self.blocks, n, self.dimension, self.modes_per_site)

    def as_dense(self, sites_per_axis=None):
        n = sites_per_axis or self.sites_per_axis
        return replace(self, blocks=None, dense=self.to_dense(n), sites_per_axis=n)

    def check(self, grid=64, tol=PSD_TOL):
        """Assert symmetry, Bloch positivity and next-nearest bandwidth."""
        if self.blocks is None:
            return True
        if self.range > 2:
            raise ValueError(f"couplings extend to {self.range} sites (max 2)")
        k = np.linspace(-np.pi, np.pi, grid)
        if self.dimension == 2:
            k1, k2 = np.meshgrid(k, k, indexing="ij")
            k = np.stack([k1.ravel(), k2.ravel()], axis=1)
        self.symbol().eigenvalues(k, tol=tol)
        return True


def mode_stencil(dimension, params):
    """Mode-level coupling stencil ``{offset: coefficient}`` of ``H_q``."""
    k, m2, a = params.coupling, params.mass ** 2, params.alpha
    if dimension == 1:
        st = {(0,): 4 * k + m2 + 1.5 * a, (1,): -2 * k - a, (2,): a / 4}
    else:
        st = {(0, 0): 8 * k + m2 + 3 * a}
        for ax in range(2):
            for step, c in ((1, -2 * k - a), (2, a / 4)):
                e = [0, 0]
                e[ax] = step
                st[tuple(e)] = c
    full = {}
    for d, c in st.items():
        if c == 0 and any(d):
            continue
        full[d] = c
        full[tuple(-x for x in d)] = c
    return full


def regroup_blocks(blocks, dimension, site_shape, factor):
    """Merge ``factor`` sites per axis into one site.

    ``site_shape`` gives the mode layout of the old site (``None`` for
    abstract sites); new intra-site indices follow the merged mode layout.
    """
    old_m = next(iter(blocks.values())).shape[0]
    old_shape = site_shape or (old_m,) + (1,) * (dimension - 1)
    if int(np.prod(old_shape)) != old_m:
        raise ValueError("site shape does not match block size")
    new_shape = tuple(s * factor for s in old_shape)
    new_m = old_m * factor ** dimension

    # every mode of the new site: (sub-site position p, old intra index i)
    members = []
    for p in itertools.product(range(factor), repeat=dimension):
        for i, c in enumerate(itertools.product(*(range(s) for s in old_shape))):
            coord = tuple(pj * sj + cj for pj, sj, cj in zip(p, old_shape, c))
            members.append((p, i, int(np.ravel_multi_index(coord, new_shape))))

    reach = max(max(abs(x) for x in d) for d in blocks)
    new_reach = -(-(reach + factor - 1) // factor)
    out = {}
    for big in itertools.product(range(-new_reach, new_reach + 1), repeat=dimension):
        b = np.zeros((new_m, new_m))
        for p, i, ni in members:
            for pp, j, nj in members:
                d = tuple(factor * bd + qq - q for bd, q, qq in zip(big, p, pp))
                if d in blocks:
                    b[ni, nj] = blocks[d][i, j]
        if np.any(b):
            out[big] = b
    return out, new_shape


def blocks_to_dense(blocks, sites_per_axis, dimension, m):
    """Assemble the ring/torus matrix of a banded operator (site-major order)."""
    n = sites_per_axis
    nsite = n ** dimension
    h = np.zeros((nsite * m, nsite * m))
    for site in itertools.product(range(n), repeat=dimension):
        r = int(np.ravel_multi_index(site, (n,) * dimension))
        for d, b in blocks.items():
            t = tuple((s + x) % n for s, x in zip(site, d))
            c = int(np.ravel_multi_index(t, (n,) * dimension))
            h[r * m:(r + 1) * m, c * m:(c + 1) * m] += b
    return h


def build_hamiltonian(spec, params, form="blocks", regulate=False):
    """Hamiltonian matrix of the (perturbed) harmonic lattice.

    Parameters
    ----------
    spec : LatticeSpec
    params : ModelParams
    form : {"blocks", "dense"}
        ``blocks`` gives translation-invariant site blocks with
        ``spec.modes_per_site`` modes per site; ``dense`` gives the
        mode-level ring/torus matrix (one mode per site, natural order).
    regulate : bool
        Replace a zero mass by ``spec.regulator_mass``.
    """
    if regulate and params.is_massless:
        params = replace(params, mass=spec.regulator_mass)
    stencil = {d: np.array([[c]]) for d, c in mode_stencil(spec.dimension, params).items()}
    if form == "dense":
        h = blocks_to_dense(stencil, spec.extent, spec.dimension, 1)
        return QuadraticHamiltonian(
            dimension=spec.dimension, modes_per_site=1, dense=h,
            site_shape=(1,) * spec.dimension, sites_per_axis=spec.extent, spacing=spec.spacing,
        )
    if form != "blocks":
        raise ValueError(f"unknown form {form!r}")
    if spec.site_side > 1:
        blocks, shape = regroup_blocks(stencil, spec.dimension, None, spec.site_side)
    else:
        blocks, shape = stencil, (1,) * spec.dimension
    return QuadraticHamiltonian(
        dimension=spec.dimension, modes_per_site=spec.modes_per_site, blocks=blocks,
        site_shape=shape, sites_per_axis=spec.sites_per_axis, spacing=spec.spacing,
    )


@dataclass(frozen=True)
class CovarianceState:
    """Gaussian state ``gamma = gamma_p (+) gamma_q`` (units of 2<xx>)."""

    gamma_p: np.ndarray
    gamma_q: np.ndarray
    modes_per_site: int = 1
    dimension: int = 1
    site_shape: tuple = None
    sites_per_axis: int = None
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        gp = np.asarray(self.gamma_p, float)
        gq = np.asarray(self.gamma_q, float)
        if gp.shape != gq.shape or gp.ndim != 2 or gp.shape[0] != gp.shape[1]:
            raise ValueError(f"covariance shapes {gp.shape} / {gq.shape} are inconsistent")
        for name, g in (("gamma_p", gp), ("gamma_q", gq)):
            if np.max(np.abs(g - g.T)) > 1e-12 * np.max(np.abs(g)):
                raise ValueError(f"{name} is not symmetric")
        if gp.shape[0] % self.modes_per_site:
            raise ValueError("mode count not divisible by modes_per_site")
        object.__setattr__(self, "gamma_p", 0.5 * (gp + gp.T))
        object.__setattr__(self, "gamma_q", 0.5 * (gq + gq.T))

    @property
    def n_modes(self):
        return self.gamma_p.shape[0]

    @property
    def n_sites(self):
        return self.n_modes // self.modes_per_site

    def site_slice(self, i, count=1):
        m = self.modes_per_site
        return np.arange(i * m, (i + count) * m) % self.n_modes

    def restrict(self, idx):
        idx = np.asarray(idx)
        return self.gamma_p[np.ix_(idx, idx)], self.gamma_q[np.ix_(idx, idx)]

    def site_blocks(self, which="q"):
        """View as ``(n_sites, M, n_sites, M)``."""
        g = self.gamma_q if which == "q" else self.gamma_p
        m = self.modes_per_site
        return g.reshape(self.n_sites, m, self.n_sites, m)

    def purity_error(self):
        return float(np.max(np.abs(self.gamma_p @ self.gamma_q - np.eye(self.n_modes))))

    def check(self, sites=None):
        """Heisenberg bound on the symplectic spectrum of ``sites`` (all by default)."""
        idx = np.arange(self.n_modes) if sites is None else np.concatenate(
            [self.site_slice(s) for s in sites])
        lam = symplectic_spectrum(*self.restrict(idx))
        if lam[0] < 1 - HEISENBERG_TOL:
            raise ValueError("state violates the uncertainty relation")
        return lam


def ground_state(h, sites_per_axis=None):
    """Exact Gaussian ground state of ``p.p + q^T H_q q``.

    ``gamma_q = H_q^{-1/2}`` and ``gamma_p = H_q^{1/2}``, built from one
    symmetric eigendecomposition.

    Raises
    ------
    MasslessError
        If ``H_q`` is singular or indefinite (apply a regulator mass first).
    """
    mat = h.to_dense(sites_per_axis)
    w, v = la.eigh(mat)
    scale = max(abs(w).max(), 1.0)
    if w.min() <= 1e-14 * scale:
        raise MasslessError(
            f"H_q has eigenvalue {w.min():.3e}: massless without regulator "
            "(set a regulator mass before requesting a ground state)"
        )
    root = w ** 0.25
    vq = v / root
    vp = v * root
    return CovarianceState(
        gamma_p=vp @ vp.T, gamma_q=vq @ vq.T,
        modes_per_site=h.modes_per_site, dimension=h.dimension,
        site_shape=h.site_shape, sites_per_axis=sites_per_axis or h.sites_per_axis,
    )


def _mode_permutation(dimension, extent, side):
    """``perm[new] = old`` mapping natural mode order to site-major order."""
    if dimension == 1:
        return np.arange(extent)
    ns = extent // side
    perm = np.empty(extent * extent, dtype=int)
    for new in range(extent * extent):
        site, intra = divmod(new, side * side)
        sx, sy = divmod(site, ns)
        ix, iy = divmod(intra, side)
        perm[new] = (sx * side + ix) * extent + (sy * side + iy)
    return perm


def regroup(obj, modes_per_site):
    """Group contiguous modes into sites of ``modes_per_site`` modes.

    Works on mode-level dense Hamiltonians and covariance states (a pure
    relabelling; in 2D the modes are permuted into site-major order) and on
    block Hamiltonians (sites merged by an integer factor per axis).
    """
    dim = obj.dimension
    if dim == 1:
        side = modes_per_site
    else:
        side = math.isqrt(modes_per_site)
        if side * side != modes_per_site:
            raise ValueError(f"2D sites need a square mode count, got {modes_per_site}")

    if isinstance(obj, QuadraticHamiltonian) and obj.blocks is not None:
        old_side = 1 if obj.site_shape is None else obj.site_shape[0]
        if obj.site_shape is None and obj.modes_per_site != 1:
            old_side = obj.modes_per_site if dim == 1 else math.isqrt(obj.modes_per_site)
        if side % old_side:
            raise ValueError(f"cannot regroup sites of {obj.modes_per_site} modes into {modes_per_site}")
        factor = side // old_side
        blocks, shape = regroup_blocks(obj.blocks, dim, obj.site_shape, factor)
        return replace(obj, blocks=blocks, modes_per_site=modes_per_site, site_shape=shape,
                       sites_per_axis=None if obj.sites_per_axis is None else obj.sites_per_axis // factor)

    if obj.modes_per_site != 1:
        raise ValueError("dense regrouping starts from the mode-level (ungrouped) object")
    n = (obj.dense if isinstance(obj, QuadraticHamiltonian) else obj.gamma_p).shape[0]
    extent = round(n ** (1 / dim))
    if extent ** dim != n or extent % side:
        raise ValueError(f"{n} modes cannot be grouped into sites of {modes_per_site}")
    perm = _mode_permutation(dim, extent, side)
    ix = np.ix_(perm, perm)
    common = dict(modes_per_site=modes_per_site, site_shape=(side,) * dim,
                  sites_per_axis=extent // side)
    if isinstance(obj, QuadraticHamiltonian):
        return replace(obj, dense=obj.dense[ix], **common)
    return replace(obj, gamma_p=obj.gamma_p[ix], gamma_q=obj.gamma_q[ix], **common)


def ungroup(obj):
    """Inverse of :func:`regroup` for dense objects."""
    if obj.modes_per_site == 1:
        return obj
    dim = obj.dimension
    side = obj.site_shape[0] if obj.site_shape else (
        obj.modes_per_site if dim == 1 else math.isqrt(obj.modes_per_site))
    n = (obj.dense if isinstance(obj, QuadraticHamiltonian) else obj.gamma_p).shape[0]
    extent = round(n ** (1 / dim))
    perm = _mode_permutation(dim, extent, side)
    inv = np.argsort(perm)
    ix = np.ix_(inv, inv)
    common = dict(modes_per_site=1, site_shape=(1,) * dim, sites_per_axis=extent)
    if isinstance(obj, QuadraticHamiltonian):
        if obj.dense is None:
            raise ValueError("ungroup needs a dense object")
        return replace(obj, dense=obj.dense[ix], **common)
    return replace(obj, gamma_p=obj.gamma_p[ix], gamma_q=obj.gamma_q[ix], **common)
