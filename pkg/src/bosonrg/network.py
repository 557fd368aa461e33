"""
Wiring of one coarse-graining layer on a translation-invariant lattice.

A layer maps two sites per axis (a cell) to one coarse site. Disentanglers
act on pairs of sites straddling cell boundaries, one gate per lattice axis,
applied before the cell-local isometry. Everything about one cell is
captured by the *composite map* ``X``: a matrix taking the cell's ``2^D M``
rotated coordinates to the window of original sites they are supported on.
Translation invariance makes this single window sufficient.
"""

import itertools

import numpy as np


def cell_sites(dimension):
    return [tuple(p) for p in itertools.product((0, 1), repeat=dimension)]


def _layer_matrix(g, sites, axis, m):
    """Matrix of one disentangler layer restricted to the sites feeding ``sites``.

    Site ``s`` with even coordinate along ``axis`` is the upper member of the
    pair ``(s - e, s)``; odd coordinate means lower member of ``(s, s + e)``.
    Returns ``(matrix, inner_sites, placements)``.
    """
    e = np.zeros(len(sites[0]), dtype=int)
    e[axis] = 1
    placements = []
    inner = set()
    for s in sites:
        s = np.array(s)
        if s[axis] % 2 == 0:
            lo, hi, half = tuple(s - e), tuple(s), 1
        else:
            lo, hi, half = tuple(s), tuple(s + e), 0
        placements.append((lo, hi, half))
        inner.update((lo, hi))
    inner = sorted(inner)
    index = {s: i for i, s in enumerate(inner)}
    mat = np.zeros((len(inner) * m, len(sites) * m))
    for col, (lo, hi, half) in enumerate(placements):
        cs = slice(col * m, (col + 1) * m)
        gs = slice(half * m, (half + 1) * m)
        mat[index[lo] * m:(index[lo] + 1) * m, cs] = g[:m, gs]
        mat[index[hi] * m:(index[hi] + 1) * m, cs] = g[m:, gs]
    return mat, inner, [(index[lo], index[hi], half) for lo, hi, half in placements]


def _layer_adjoint(grad, placements, m):
    """Gradient w.r.t. the gate given the gradient w.r.t. its layer matrix."""
    out = np.zeros((2 * m, 2 * m))
    for col, (lo, hi, half) in enumerate(placements):
        cs = slice(col * m, (col + 1) * m)
        gs = slice(half * m, (half + 1) * m)
        out[:m, gs] += grad[lo * m:(lo + 1) * m, cs]
        out[m:, gs] += grad[hi * m:(hi + 1) * m, cs]
    return out


class CellWindow:
    """Composite map of one cell through a stack of disentangler layers.

    ``gates[a]`` is the disentangler along axis ``a`` (``None`` entries or an
    empty list give the local-projection wiring). Layers are applied to the
    lattice in axis order, so the axis-0 layer sits next to the original sites.
    """

    def __init__(self, dimension, m, gates=()):
        self.dimension = dimension
        self.m = m
        self.gates = [np.asarray(g, float) for g in gates]
        self._build()

    def _build(self):
        m = self.m
        sites = cell_sites(self.dimension)
        # outermost layer (last axis) first
        self.layers = []
        for axis in reversed(range(len(self.gates))):
            mat, inner, placements = _layer_matrix(self.gates[axis], sites, axis, m)
            self.layers.append((axis, mat, placements))
            sites = inner
        self.sites = sites
        x = np.eye(len(cell_sites(self.dimension)) * m)
        for _, mat, _ in self.layers:
            x = mat @ x
        self.x = x

    @property
    def n_cell(self):
        return len(cell_sites(self.dimension)) * self.m

    def gate_gradients(self, grad_x):
        """Map ``d f / d X`` to ``d f / d gate`` for every disentangler."""
        out = {}
        n = len(self.layers)
        for j, (axis, mat, placements) in enumerate(self.layers):
            outer = np.eye(self.n_cell)
            for _, mk, _ in self.layers[:j]:
                outer = mk @ outer
            inner = None
            for _, mk, _ in self.layers[j + 1:n]:
                inner = mk if inner is None else mk @ inner
            g = grad_x if inner is None else inner.T @ grad_x
            out[axis] = _layer_adjoint(g @ outer.T, placements, self.m)
        return out


def window_operator(blocks, rows, cols, m):
    """Dense restriction of a banded operator between two lists of sites."""
    out = np.zeros((len(rows) * m, len(cols) * m))
    for i, r in enumerate(rows):
        for j, c in enumerate(cols):
            d = tuple(cj - rj for rj, cj in zip(r, c))
            b = blocks.get(d)
            if b is not None:
                out[i * m:(i + 1) * m, j * m:(j + 1) * m] = b
    return out


def shifted(sites, offset):
    return [tuple(s + 2 * o for s, o in zip(site, offset)) for site in sites]


def coarse_offsets(dimension, reach):
    return list(itertools.product(range(-reach, reach + 1), repeat=dimension))
