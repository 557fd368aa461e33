"""
Shared numerical kernel for free-boson coarse-graining.

Gate containers (special orthogonal and invertible), the polar projection used
by every alternating update, Bloch-matrix dispersions of banded
translation-invariant operators, symplectic spectra and mode entropies.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as la

ORTHO_TOL = 1e-10
DET_TOL = 1e-8
PSD_TOL = 1e-10
HEISENBERG_TOL = 1e-8
DEFAULT_COND_MAX = 1e6


class GaugeError(ValueError):
    """Raised when a gate violates its manifold constraints."""


class RankDeficientError(ValueError):
    """Raised by :func:`polar_project` on a singular environment."""

    def __init__(self, nullity, smallest):
        self.nullity = nullity
        super().__init__(
            f"environment is rank deficient: nullity {nullity} "
            f"(smallest singular value {smallest:.3e})"
        )


@dataclass(frozen=True)
class OrthogonalGate:
    """Real special orthogonal ``n x n`` gate."""

    matrix: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.matrix, dtype=float)
        if v.ndim != 2 or v.shape[0] != v.shape[1]:
            raise GaugeError(f"gate must be square, got shape {v.shape}")
        err = np.linalg.norm(v.T @ v - np.eye(v.shape[0]))
        if err > ORTHO_TOL * max(1, v.shape[0]):
            raise GaugeError(f"gate is not orthogonal (|V^T V - I| = {err:.2e})")
        det = np.linalg.det(v)
        if abs(det - 1.0) > DET_TOL:
            raise GaugeError(f"gate has det {det:+.6f}, expected +1")
        object.__setattr__(self, "matrix", v)

    @property
    def n(self):
        return self.matrix.shape[0]

    @property
    def inverse(self):
        return self.matrix.T

    @classmethod
    def identity(cls, n):
        return cls(np.eye(n))

    @classmethod
    def random(cls, n, rng):
        """Haar-random element of SO(n)."""
        q, r = np.linalg.qr(rng.standard_normal((n, n)))
        q = q * np.sign(np.diag(r))
        if np.linalg.det(q) < 0:
            q[:, 0] = -q[:, 0]
        return cls(q)


@dataclass(frozen=True)
class InvertibleGate:
    """Real invertible gate with cached inverse and a condition-number cap."""

    matrix: np.ndarray
    cond_max: float = DEFAULT_COND_MAX
    inverse: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        a = np.asarray(self.matrix, dtype=float)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise GaugeError(f"gate must be square, got shape {a.shape}")
        cond = np.linalg.cond(a)
        if not np.isfinite(cond) or cond > self.cond_max:
            raise GaugeError(f"gate condition number {cond:.3e} exceeds cap {self.cond_max:.1e}")
        inv = np.linalg.inv(a) if self.inverse is None else np.asarray(self.inverse, float)
        if np.linalg.norm(a @ inv - np.eye(a.shape[0])) > ORTHO_TOL * max(1.0, cond):
            raise GaugeError("cached inverse is inconsistent with the gate")
        object.__setattr__(self, "matrix", a)
        object.__setattr__(self, "inverse", inv)

    @property
    def n(self):
        return self.matrix.shape[0]

    @property
    def condition(self):
        return float(np.linalg.cond(self.matrix))

    @classmethod
    def identity(cls, n, cond_max=DEFAULT_COND_MAX):
        return cls(np.eye(n), cond_max=cond_max)

    @classmethod
    def from_orthogonal(cls, gate, cond_max=DEFAULT_COND_MAX):
        return cls(gate.matrix, cond_max=cond_max, inverse=gate.matrix.T)


def polar_project(e, rank_tol=1e-12):
    """Closest special orthogonal matrix to ``e`` in Frobenius norm.

    Parameters
    ----------
    e : ndarray, shape (n, n)
        Environment (or any full-rank square matrix).
    rank_tol : float
        Relative singular-value threshold below which ``e`` counts as singular.

    Returns
    -------
    OrthogonalGate
        ``U W^T`` from the SVD ``e = U S W^T``; when that has determinant -1
        the direction of the smallest singular value is flipped, which is the
        maximiser of ``tr(V^T e)`` over SO(n).
    """
    e = np.asarray(e, dtype=float)
    if not np.all(np.isfinite(e)):
        raise FloatingPointError("environment contains NaN or inf")
    u, s, wt = np.linalg.svd(e)
    small = s <= rank_tol * max(s[0], np.finfo(float).tiny)
    if np.any(small):
        raise RankDeficientError(int(small.sum()), float(s[-1]))
    if np.linalg.det(u) * np.linalg.det(wt) < 0:
        # svd sorts descending; the last column has the smallest singular value
        # (argmin picks the lowest index among exact ties)
        j = len(s) - 1 - int(np.argmin(s[::-1]))
        u = u.copy()
        u[:, j] = -u[:, j]
    v = u @ wt
    # re-orthogonalise away rounding drift
    return OrthogonalGate(_reorthonormalise(v))


def _reorthonormalise(v):
    u, _, wt = np.linalg.svd(v)
    return u @ wt


# -- banded translation-invariant operators ----------------------------------


def bloch_matrix(blocks, kappa):
    """Bloch matrices ``h(k) = sum_d h_d exp(i k.d)`` of a banded operator.

    ``blocks`` maps integer offset tuples to square site blocks (both ``d``
    and ``-d`` must be present). ``kappa`` has shape ``(G,)`` in 1D or
    ``(G, 2)`` in 2D; the result has shape ``(G, M, M)``.
    """
    offsets = sorted(blocks)
    kappa = np.asarray(kappa, dtype=float)
    if kappa.ndim == 1:
        kappa = kappa[:, None]
    d = np.array(offsets, dtype=float)
    phases = np.exp(1j * kappa @ d.T)
    stack = np.stack([blocks[o] for o in offsets])
    return np.einsum("gk,kij->gij", phases, stack)


@dataclass(frozen=True)
class BlockSymbol:
    """Momentum-space symbol of a banded translation-invariant operator."""

    blocks: dict

    def __post_init__(self):
        for d, b in self.blocks.items():
            neg = tuple(-x for x in d)
            if neg not in self.blocks or not np.allclose(self.blocks[neg], b.T, atol=1e-12):
                raise ValueError(f"block for offset {d} has no transposed partner")

    def __call__(self, kappa):
        return bloch_matrix(self.blocks, kappa)

    def eigenvalues(self, kappa, tol=PSD_TOL):
        h = self(kappa)
        herm = np.max(np.abs(h - np.conj(np.swapaxes(h, -1, -2))))
        if herm > 1e-12 * max(1.0, np.max(np.abs(h))):
            raise ValueError(f"Bloch matrix not Hermitian (deviation {herm:.2e})")
        ev = np.linalg.eigvalsh(h)
        worst = ev.min()
        if worst < -tol * max(1.0, np.abs(ev).max()):
            raise ValueError(f"Bloch matrix not positive semidefinite (eigenvalue {worst:.3e})")
        return np.clip(ev, 0.0, None)


def bloch_dispersion(blocks, kappa):
    """Ascending dispersion branches ``sqrt(eig h(k))``, shape ``(G, M)``."""
    return np.sqrt(BlockSymbol(blocks).eigenvalues(kappa))


# -- Gaussian states -----------------------------------------------------------


def _sym_sqrt(a):
    w, v = la.eigh(a)
    if w.min() <= 0:
        raise ValueError(f"matrix is not positive definite (eigenvalue {w.min():.3e})")
    return (v * np.sqrt(w)) @ v.T


def symplectic_spectrum(gamma_p, gamma_q):
    """Symplectic eigenvalues of a block, i.e. ``Spec(gamma_p gamma_q)``.

    Computed from the symmetric similar form ``gq^{1/2} gp gq^{1/2}``.
    Values are returned in ascending order; anything below the Heisenberg
    bound by more than ``HEISENBERG_TOL`` is an error.
    """
    gp = np.asarray(gamma_p, float)
    gq = np.asarray(gamma_q, float)
    if gp.shape != gq.shape:
        raise ValueError(f"shape mismatch {gp.shape} vs {gq.shape}")
    for g in (gp, gq):
        if np.linalg.eigvalsh(0.5 * (g + g.T)).min() <= 0:
            raise ValueError("covariance block is not positive definite")
    r = _sym_sqrt(0.5 * (gq + gq.T))
    lam = la.eigvalsh(r @ (0.5 * (gp + gp.T)) @ r)
    if lam[0] < 1 - HEISENBERG_TOL:
        raise ValueError(f"symplectic eigenvalue {lam[0]:.12f} violates the Heisenberg bound")
    return lam


def _xlog2x(x):
    x = np.asarray(x, float)
    out = np.zeros_like(x)
    pos = x > 0
    out[pos] = x[pos] * np.log2(x[pos])
    return out


def mode_entropy(lam):
    """Entanglement entropy in bits of a mode with symplectic eigenvalue ``lam``.

    ``S = f((sqrt(lam) - 1)/2) - f((sqrt(lam) + 1)/2)`` with ``f(x) = -x log2 x``.
    Accepts scalars or arrays; values within ``HEISENBERG_TOL`` below one
    are clamped to one.
    """
    lam = np.asarray(lam, dtype=float)
    if np.any(lam < 1 - HEISENBERG_TOL):
        raise ValueError(f"symplectic eigenvalue {lam.min():.12f} < 1")
    s = np.sqrt(np.maximum(lam, 1.0))
    ent = _xlog2x((s + 1) / 2) - _xlog2x((s - 1) / 2)
    return float(ent) if ent.ndim == 0 else ent


def williamson_pq(gamma_p, gamma_q):
    """Invertible ``T`` with ``T^T gp T = D`` and ``T^{-1} gq T^{-T} = D``.

    ``D = diag(sqrt(lam))`` in ascending order, ``lam`` the symplectic
    spectrum. Returns ``(T, lam)``.
    """
    r = _sym_sqrt(0.5 * (gamma_q + gamma_q.T))
    lam, o = la.eigh(r @ gamma_p @ r)
    t = r @ o * lam ** -0.25
    return t, lam
