"""Numerical laboratory for deterministic be-able dynamics, its positive
splitting at an observer scale, and Born-rule emergence in Koopman-von
Neumann phase space.
"""
__version__ = "0.1.0"

from .lattice import Lattice, PhaseLattice, make_lattice, make_phase_lattice
from .beable import FlowField, make_field, flow_map, integrate_trajectory, ensemble_sample
from .operators import Ordering, build_hamiltonian, spectrum, propagator, heisenberg_commutator_norm
from .emergent import split_hamiltonian, build_constraint, physical_subspace, physical_energies
from .kvn import PhaseWavefunction, ConfigWavefunction, build_liouvillian, evolve_phase, born_check
from .kernel import Interpolation, build_transport_kernel, propagate_both, symplectic_action
from .scenario import Scenario, ScenarioError, parse_scenario
