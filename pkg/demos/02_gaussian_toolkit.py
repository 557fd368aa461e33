"""
Gates, ground states and entanglement of Gaussian states.

A state is stored as its two covariance blocks (gamma_p, gamma_q). Pure
states have all symplectic eigenvalues equal to one; a subsystem's entropy is
a sum over its symplectic eigenvalues.
"""
import numpy as np

from bosonrg import (LatticeSpec, ModelParams, OrthogonalGate, build_hamiltonian, ground_state,
                     mode_entropy, polar_project, symplectic_spectrum)

rng = np.random.default_rng(0)

# polar projection: closest rotation to an arbitrary matrix
e = rng.standard_normal((4, 4))
v = polar_project(e).matrix
print("orthogonal:", np.allclose(v.T @ v, np.eye(4)), " det:", round(np.linalg.det(v), 12))
print("beats 1000 random rotations:",
      all(np.linalg.norm(v - e) <= np.linalg.norm(OrthogonalGate.random(4, rng).matrix - e)
          for _ in range(1000)))

# ground state of a massive chain, and its half-chain / single-site entanglement
h = build_hamiltonian(LatticeSpec(1, 64, 1), ModelParams(1.0, 0.1), form="dense")
g = ground_state(h)
print("purity error:", np.max(np.abs(symplectic_spectrum(g.gamma_p, g.gamma_q) - 1)))
for length in (1, 4, 16, 32):
    idx = np.arange(length)
    lam = symplectic_spectrum(g.gamma_p[np.ix_(idx, idx)], g.gamma_q[np.ix_(idx, idx)])
    print(f"block of {length:2d} sites: S = {sum(mode_entropy(x) for x in lam):.4f} bits")
