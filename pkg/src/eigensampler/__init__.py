"""Stochastic projector-sampling imaginary-time evolution.

Find ground and excited eigenstates of Hamiltonians decomposable into
product-basis terms by sampling rank-1 projectors and applying damped
steps (I - eta P), with filter steps against already-found states to
climb the spectrum.  Includes an exact-diagonalization oracle, error- and
success-rate bound validators, and dense circuit constructions for the
hardware protocol.
"""

from .model import (
    HamiltonianTerm,
    ProductProjector,
    SamplingDistribution,
    build_distribution,
    build_tfim,
    hamiltonian_matrix,
    projector_vector,
)
from .engine import (
    Forced,
    MonteCarlo,
    QuantumState,
    RunConfig,
    TrajectoryRecord,
    TrajectoryRejected,
    apply_projector_step,
    energy_expectation,
    estimate_success_rate,
    mixed_state,
    plus_state,
    pure_state,
    run_ite,
    sample_projector,
)
from .excited import (
    DenseProjector,
    Deterministic,
    FilterMethod,
    LevelSpec,
    SpectrumConfig,
    SpectrumResult,
    Stochastic,
    blend_projectors,
    exact_filter_step,
    lift_distribution,
    sbs_step,
    solve_level,
    solve_spectrum,
)
from .analysis import (
    BoundViolation,
    ErrorReport,
    TwoLevelModel,
    cascaded_error_projection,
    error_report,
    exact_diagonalize,
    level_fidelity,
    normalized_state_error,
    operator_error,
    state_error,
    success_rate_excited,
    two_level_excited_error,
)
from .circuits import (
    ControlledUnitary,
    TripartiteSetup,
    build_controlled_ry,
    postselect_block,
    simulate_sbs_protocol,
)
from .config import ConfigError, ExperimentConfig, load_config, parse_initial_state

__version__ = "0.1.0"

__all__ = [
    "HamiltonianTerm", "ProductProjector", "SamplingDistribution",
    "build_distribution", "build_tfim", "hamiltonian_matrix", "projector_vector",
    "Forced", "MonteCarlo", "QuantumState", "RunConfig", "TrajectoryRecord",
    "TrajectoryRejected",
    "apply_projector_step", "energy_expectation", "estimate_success_rate",
    "mixed_state", "plus_state", "pure_state", "run_ite", "sample_projector",
    "DenseProjector", "Deterministic", "FilterMethod", "LevelSpec",
    "SpectrumConfig", "SpectrumResult", "Stochastic", "blend_projectors",
    "exact_filter_step", "lift_distribution", "sbs_step", "solve_level",
    "solve_spectrum",
    "BoundViolation", "ErrorReport", "TwoLevelModel", "cascaded_error_projection",
    "error_report", "exact_diagonalize", "level_fidelity", "normalized_state_error",
    "operator_error", "state_error", "success_rate_excited", "two_level_excited_error",
    "ControlledUnitary", "TripartiteSetup", "build_controlled_ry",
    "postselect_block", "simulate_sbs_protocol",
    "ConfigError", "ExperimentConfig", "load_config", "parse_initial_state",
]
