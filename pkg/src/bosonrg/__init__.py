"""
Real-space renormalization of free bosonic lattices.

Harmonic chains and square lattices are coarse-grained two ways: the
Hamiltonian matrix itself (LP / ER layers minimising the energy of the kept
modes) and the Gaussian ground state (layers minimising the entanglement of
the dropped modes). Exact momentum-space flows serve as the reference.
"""

from .gaussian import (DEFAULT_COND_MAX, BlockSymbol, InvertibleGate, OrthogonalGate,
                       RankDeficientError, bloch_dispersion, bloch_matrix, mode_entropy,
                       polar_project, symplectic_spectrum)
from .hamiltonian_rg import (ENERGY_FACTOR, FIXED_POINT_EPS, ConvergenceWarning,
                             HamiltonianFlow, OptimizerOptions, RgLayer, block_cost,
                             block_distance, coarse_grain_hamiltonian, dense_coarse_grain,
                             flow_dispersion, hamiltonian_dispersion, hamiltonian_distance,
                             optimize_layer, run_flow)
from .lattice import (CovarianceState, LatticeSpec, MasslessError, ModelParams,
                      QuadraticHamiltonian, build_hamiltonian, ground_state, regroup, ungroup)
from .momentum import (DispersionCurve, SymbolFunction, bare_symbol, exact_dispersion,
                       exact_energy, fixed_point_dispersion, fold, iterate_symbol, mean_energy,
                       symbol_rg_step)
from .state_rg import (MeraRecord, StateFlow, StateLayer, StateOptions, coarse_grain_state,
                       correlator_error, load_record, optimize_state_layer, reconstruct,
                       product_state, random_layer, run_state_flow, save_record, site_entropy,
                       state_distance, synthetic_state)

__version__ = "0.1.0"

__all__ = [
    "BlockSymbol", "ConvergenceWarning", "CovarianceState", "DEFAULT_COND_MAX",
    "DispersionCurve", "ENERGY_FACTOR", "FIXED_POINT_EPS", "HamiltonianFlow",
    "InvertibleGate", "LatticeSpec", "MasslessError", "MeraRecord", "ModelParams",
    "OptimizerOptions", "OrthogonalGate", "QuadraticHamiltonian", "RankDeficientError",
    "RgLayer", "StateFlow", "StateLayer", "StateOptions", "SymbolFunction", "bare_symbol",
    "bloch_dispersion", "bloch_matrix", "block_cost", "block_distance", "build_hamiltonian",
    "coarse_grain_hamiltonian", "coarse_grain_state", "correlator_error",
    "dense_coarse_grain", "exact_dispersion", "exact_energy", "fixed_point_dispersion",
    "flow_dispersion", "fold", "ground_state", "hamiltonian_dispersion",
    "hamiltonian_distance", "iterate_symbol", "load_record", "mean_energy", "mode_entropy",
    "optimize_layer", "optimize_state_layer", "polar_project", "product_state",
    "random_layer", "reconstruct", "regroup", "run_flow", "run_state_flow", "save_record",
    "site_entropy", "state_distance", "symbol_rg_step", "symplectic_spectrum",
    "synthetic_state", "ungroup",
]
