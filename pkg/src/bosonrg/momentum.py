"""
Exact momentum-space RG for quadratic lattice theories.

A theory is described by its symbol ``c(k)``, the coefficient of ``q(k)^2``
in the diagonal form ``p(k)^2 + c(k) q(k)^2``; the dispersion is
``E(k) = sqrt(c(k))``. One RG iteration (halve the cutoff, double the lattice
spacing, rescale the fields) composes to ``c'(k) = 4 c(k/2)``.
"""

from dataclasses import dataclass, field

import numpy as np

DEFAULT_GRID_1D = 4096
DEFAULT_GRID_2D = 256


@dataclass(frozen=True)
class SymbolFunction:
    """Coefficient ``c(k) >= 0`` of ``q(k)^2`` at RG generation ``generation``."""

    evaluate: object
    generation: int = 0
    dimension: int = 1

    def __call__(self, kappa):
        return self.evaluate(np.asarray(kappa, dtype=float))


def bare_symbol(params, dimension=1):
    """Symbol of ``H0 + m^2 H_rel + alpha H_irrel`` at generation zero."""
    k, m2, a = params.coupling, params.mass ** 2, params.alpha

    def c(kappa):
        kappa = np.asarray(kappa, float)
        if dimension == 1:
            s2 = np.sin(kappa / 2) ** 2
            return m2 + 8 * k * s2 + 4 * a * s2 ** 2
        s2 = np.sin(kappa / 2) ** 2
        return m2 + np.sum(8 * k * s2 + 4 * a * s2 ** 2, axis=-1)

    return SymbolFunction(c, 0, dimension)


def symbol_rg_step(symbol):
    """One momentum-space RG iteration: ``c'(k) = 4 c(k/2)``."""
    inner = symbol.evaluate
    return SymbolFunction(lambda kappa: 4.0 * inner(np.asarray(kappa, float) / 2.0),
                          symbol.generation + 1, symbol.dimension)


def iterate_symbol(symbol, steps):
    for _ in range(steps):
        symbol = symbol_rg_step(symbol)
    return symbol


@dataclass(frozen=True)
class DispersionCurve:
    """Dispersion branches sampled on a uniform Brillouin-zone grid.

    ``kappa`` has shape ``(G,)`` in 1D and ``(G1*G2, 2)`` in 2D (row-major
    over ``grid_shape``); ``energy`` has shape ``(points, branches)``.
    """

    kappa: np.ndarray
    energy: np.ndarray
    generation: int = 0
    units: str = "rescaled"
    grid_shape: tuple = None
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        e = np.asarray(self.energy, float)
        if e.ndim == 1:
            e = e[:, None]
        if np.any(e < 0):
            raise ValueError("negative energies")
        object.__setattr__(self, "energy", e)
        if self.grid_shape is None:
            object.__setattr__(self, "grid_shape", (e.shape[0],))

    @property
    def dimension(self):
        return len(self.grid_shape)

    @property
    def branches(self):
        return self.energy.shape[1]

    def to_raw(self):
        """Undo the per-iteration energy rescale (divide by ``2^tau``)."""
        if self.units == "raw":
            return self
        return DispersionCurve(self.kappa, self.energy / 2.0 ** self.generation,
                               self.generation, "raw", self.grid_shape, dict(self.meta))

    def sorted_spectrum(self):
        return np.sort(self.energy.ravel())


def bz_grid(points, dimension=1):
    """Uniform grid covering the Brillouin zone ``[-pi, pi]`` per axis, endpoints included."""
    if points < 2:
        raise ValueError("grid needs at least two points per axis")
    k = np.linspace(-np.pi, np.pi, points)
    if dimension == 1:
        return k, (points,)
    k1, k2 = np.meshgrid(k, k, indexing="ij")
    return np.stack([k1.ravel(), k2.ravel()], axis=1), (points, points)


def sample_symbol(symbol, points=None, units="rescaled"):
    points = points or (DEFAULT_GRID_1D if symbol.dimension == 1 else DEFAULT_GRID_2D)
    kappa, shape = bz_grid(points, symbol.dimension)
    c = symbol(kappa)
    if np.any(c < -1e-12):
        raise ValueError("symbol is negative somewhere on the grid")
    curve = DispersionCurve(kappa, np.sqrt(np.clip(c, 0, None)), symbol.generation,
                            "rescaled", shape)
    return curve.to_raw() if units == "raw" else curve


def _check_family(params):
    if params.mass > 0 and params.alpha > 0:
        raise ValueError("closed form covers one perturbation family at a time; "
                         "iterate symbol_rg_step for composite models")


def exact_energy(params, tau, kappa, dimension=1):
    """Closed-form ``E^(tau)(k)`` for the critical, massive or irrelevant family."""
    _check_family(params)
    kappa = np.asarray(kappa, float)
    K, m, a = params.coupling, params.mass, params.alpha
    s = np.sin(kappa / 2.0 ** (tau + 1))
    if dimension == 1:
        if a > 0:
            return 2.0 ** (tau + 1) * np.abs(s) * np.sqrt(2 * K + a * s ** 2)
        if m > 0:
            return 2.0 ** tau * np.sqrt(m ** 2 + 8 * K * s ** 2)
        return 2.0 ** (tau + 1.5) * np.sqrt(K) * np.abs(s)
    s2 = s ** 2
    inner = m ** 2 + np.sum(8 * K * s2 + 4 * a * s2 ** 2, axis=-1)
    return 2.0 ** tau * np.sqrt(inner)


def exact_dispersion(params, tau, points=None, dimension=1, units="rescaled"):
    """Closed-form dispersion after ``tau`` momentum-space RG iterations."""
    points = points or (DEFAULT_GRID_1D if dimension == 1 else DEFAULT_GRID_2D)
    kappa, shape = bz_grid(points, dimension)
    curve = DispersionCurve(kappa, exact_energy(params, tau, kappa, dimension), tau,
                            "rescaled", shape, {"family": family(params)})
    return curve.to_raw() if units == "raw" else curve


def family(params):
    if params.mass > 0 and params.alpha > 0:
        return "composite"
    if params.mass > 0:
        return "massive"
    if params.alpha > 0:
        return "irrelevant"
    return "critical"


def fixed_point_symbol(params, dimension=1):
    """``c*(k) = 2 K |k|^2``, invariant under :func:`symbol_rg_step`."""
    K = params.coupling

    def c(kappa):
        kappa = np.asarray(kappa, float)
        if dimension == 1:
            return 2 * K * kappa ** 2
        return 2 * K * np.sum(kappa ** 2, axis=-1)

    return SymbolFunction(c, 0, dimension)


def fixed_point_dispersion(params, points=None, dimension=1):
    """Linear gapless fixed point ``E*(k) = sqrt(2 K) |k|``."""
    return sample_symbol(fixed_point_symbol(params, dimension), points)


def mean_energy(curve):
    """Brillouin-zone average of all branches (trapezoid rule on the uniform grid)."""
    e = np.asarray(curve.energy, float)
    if e.size == 0:
        raise ValueError("empty dispersion grid")
    shape = tuple(curve.grid_shape) + (e.shape[1],)
    vals = e.reshape(shape).mean(axis=-1)
    for axis in reversed(range(len(curve.grid_shape))):
        n = vals.shape[axis]
        if n < 2:
            raise ValueError("need at least two grid points per axis")
        vals = np.trapezoid(vals, dx=1.0 / (n - 1), axis=axis)
    return float(vals)


def fold(energy_fn, site_shape, points=None):
    """Fold a single-band mode dispersion into ``prod(site_shape)`` site branches.

    ``energy_fn`` maps mode momenta to energies; the result samples site
    momenta ``K`` and returns branches ``E((K + 2 pi j) / s)`` sorted ascending.
    """
    dim = len(site_shape)
    points = points or (DEFAULT_GRID_1D if dim == 1 else DEFAULT_GRID_2D)
    kappa, shape = bz_grid(points, dim)
    kk = kappa if dim > 1 else kappa[:, None]
    branches = []
    for j in np.ndindex(*site_shape):
        km = (kk + 2 * np.pi * np.array(j)) / np.array(site_shape)
        # effective theories live on |k| <= pi only
        km = km - 2 * np.pi * np.round(km / (2 * np.pi))
        branches.append(energy_fn(km if dim > 1 else km[:, 0]))
    e = np.sort(np.stack(branches, axis=1), axis=1)
    return DispersionCurve(kappa, e, 0, "rescaled", shape)
