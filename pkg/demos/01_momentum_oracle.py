"""
Exact momentum-space flow of the harmonic chain.

The coarse-graining step acts on the symbol c(k) (the squared dispersion) as
c'(k) = 4 c(k/2): two sites become one, momenta are stretched by two and the
energy scale doubles. Everything later in the package is checked against this.
"""
import numpy as np

from bosonrg import (LatticeSpec, ModelParams, bare_symbol, build_hamiltonian, exact_dispersion,
                     exact_energy, fixed_point_dispersion, fold, iterate_symbol, mean_energy)
from bosonrg.gaussian import bloch_dispersion

critical = ModelParams(1.0)
massive = ModelParams(1.0, mass=0.2)
kappa = np.linspace(-np.pi, np.pi, 9)

# the lattice Hamiltonian and the closed form agree at tau = 0
h = build_hamiltonian(LatticeSpec(1, 32, 1), critical)
print("Bloch vs closed form:", np.max(np.abs(bloch_dispersion(h.blocks, kappa)[:, 0]
                                          - exact_energy(critical, 0, kappa))))

# iterate the symbol map; the mass gap doubles each step
for tau in range(5):
    c = iterate_symbol(bare_symbol(massive), tau)
    print(f"tau={tau}  gap={np.sqrt(c(np.array([0.0])))[0]:.4f}  expected={0.2 * 2**tau:.4f}")

# the critical chain flows to a linear dispersion with slope sqrt(2)
for tau in (0, 2, 6):
    print(tau, "mean energy", round(mean_energy(exact_dispersion(critical, tau, 4097)), 6))
print("fixed point", round(mean_energy(fixed_point_dispersion(critical, 4097)), 6))

# four modes per site: the single-mode band folds into four branches
curve = fold(lambda k: exact_energy(critical, 0, k), (4,), 9)
print("folded branches at kappa=0:", np.round(curve.energy[4], 4))
