"""
Quasi-Newton descent over products of gate manifolds.

Each gate is written as ``g = g_base expm(A)``: ``A`` skew-symmetric keeps the
gate special orthogonal, a general ``A`` keeps it invertible. L-BFGS works on
the entries of ``A`` with exact gradients (adjoint of the Frechet derivative
of the exponential); the base point is refreshed between short inner runs so
the chart stays small.
"""

import numpy as np
import scipy.linalg as la
from scipy.optimize import minimize

from .gaussian import DEFAULT_COND_MAX, polar_project

INNER_ITERATIONS = 300
FAMILIES = ("orthogonal", "general")


def _chart(n, family):
    if family == "orthogonal":
        iu = np.triu_indices(n, 1)

        def to_matrix(theta):
            a = np.zeros((n, n))
            a[iu] = theta
            return a - a.T

        def project(g):
            return (g - g.T)[iu]

        return len(iu[0]), to_matrix, project
    if family == "general":
        return n * n, lambda theta: theta.reshape(n, n), lambda g: g.ravel()
    raise ValueError(f"unknown gate family {family!r}")


def minimize_gates(objective, gates, max_iterations=2000, tol=1e-10, family="orthogonal",
                   cond_max=DEFAULT_COND_MAX):
    """Minimise ``objective(gates) -> (f, grads)`` over a list of square gates.

    Parameters
    ----------
    objective : callable
        Returns the cost and the Euclidean gradient w.r.t. every gate.
    gates : list of ndarray
        Starting point; orthogonal starts for ``family="orthogonal"``.
    max_iterations : int
        Total L-BFGS iterations.
    tol : float
        Relative cost decrease between inner runs that counts as converged.
    family : {"orthogonal", "general"}
    cond_max : float
        Condition-number cap for the general family; iterates beyond it are
        never accepted.

    Returns
    -------
    gates, history, converged, iterations
        ``history`` is the non-increasing cost at every accepted base point.
    """
    gates = [np.array(g, float) for g in gates]
    if not gates:
        return gates, [objective(gates)[0]], True, 0
    sizes = [g.shape[0] for g in gates]
    charts = [_chart(n, family) for n in sizes]
    offsets = np.cumsum([0] + [c[0] for c in charts])
    history = [objective(gates)[0]]
    used = 0
    converged = False

    def unpack(theta):
        return [c[1](theta[offsets[i]:offsets[i + 1]]) for i, c in enumerate(charts)]

    while used < max_iterations:
        base = [g.copy() for g in gates]
        best = {"f": history[-1], "gates": None}

        def fun(theta):
            gens = unpack(theta)
            trial = [b @ la.expm(a) for b, a in zip(base, gens)]
            if family == "general" and max(np.linalg.cond(g) for g in trial) > cond_max:
                # outside the admissible set: steer the line search back
                return np.inf, np.zeros_like(theta)
            f, grads = objective(trial)
            if f < best["f"]:
                best["f"], best["gates"] = f, trial
            out = []
            for i, a in enumerate(gens):
                ga = la.expm_frechet(a.T, base[i].T @ grads[i], compute_expm=False)
                out.append(charts[i][2](ga))
            return f, np.concatenate(out)

        res = minimize(fun, np.zeros(offsets[-1]), jac=True, method="L-BFGS-B",
                       options={"maxiter": min(INNER_ITERATIONS, max_iterations - used),
                                "ftol": 1e-15, "gtol": 1e-12})
        used += max(int(res.nit), 1)
        prev = history[-1]
        if best["gates"] is not None:
            cand = best["gates"]
            if family == "orthogonal":
                cand = [polar_project(g).matrix for g in cand]
            cur = objective(cand)[0]
            if cur <= prev:
                gates = cand
                history.append(cur)
            else:
                cur = prev
        else:
            cur = prev
        if abs(prev - cur) <= tol * max(abs(cur), 1e-300):
            converged = True
            break
    return gates, history, converged, used
