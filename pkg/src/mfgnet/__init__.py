"""Stationary mean field games on metric networks."""

from .errors import (
    ConfigError,
    CrossCheckError,
    DimensionMismatch,
    GraphError,
    MfgNetError,
    NonConvergence,
    NonPositiveDensity,
    NumericallySingular,
    SingularJacobian,
)
from .fp import DensityResult, FpConfig, ParabolicConfig, evolve_density, evolve_dual, flux_residual, solve_stationary_fp
from .graph import (
    EdgeSpec,
    GraphSpec,
    GridFunction,
    MetricGraph,
    build_graph,
    cycle,
    integrate,
    lens,
    oriented_derivative,
    star_with_ring,
    triangle,
)
from .hamiltonian import CallbackHamiltonian, Hamiltonian, QuadraticHamiltonian, clipped, numerical_hamiltonian
from .hjb import ErgodicSolution, HjbConfig, rho_bound, solve_discounted, solve_ergodic, verify_comparison
from .mfg import (
    CouplingSpec,
    EnergyReport,
    MFGConfig,
    MFGSolution,
    apply_T,
    energy_identity_gap,
    power_coupling,
    residual_audit,
    solve_mfg,
)
from .operators import assemble_fp_operator, assemble_hjb_jacobian, assemble_hjb_system, linearized_operator
from .stochastic import OccupationHistogram, compare_histogram, routing_pvalues, simulate

__version__ = "0.1.0"
