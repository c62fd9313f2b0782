"""Finite determining modes for conservative semilinear models in 1D:
spectral Galerkin dynamics, windowed partial observation, observability
Gramians, and Picard reconstruction of the unobserved high-frequency part.
"""

__version__ = "0.1.0"

from .errors import (
    BlowupError,
    ModalreconError,
    ReconstructionError,
    ScenarioError,
    UnobservableError,
)
from .spectral import (
    ModelKind,
    ModelOperator,
    SobolevScale,
    State,
    build_model,
    dealias_capacity,
    norm_sigma,
    phasors,
    project_high,
    project_low,
    state_from_phasors,
)
from .dynamics import (
    Nonlinearity,
    Trajectory,
    duhamel_integrate,
    linear_propagate,
    nonlinear_solve,
    propagate_linearized,
    taylor_jet,
    time_derivatives,
    verify_defocusing,
)
from .observation import (
    GramianReport,
    ObservationOperator,
    build_observation,
    commutator_diagnostic,
    gcc_time,
    gramian,
    linearized_gramian,
    observe,
)
from .reconstruction import (
    ObservationRecord,
    ObservationSolver,
    ReconstructionConfig,
    ReconstructionResult,
    gain_probe,
    predicted_threshold,
    reconstruct_high,
    reduced_low_ode,
    solve_observation_problem,
)
from .diagnostics import (
    AnalyticityReport,
    DeterminingModesReport,
    analyticity_radius,
    determining_modes_experiment,
    energy,
    find_stationary,
    stationarity_residual,
)
from .scenario import Scenario, load_scenario
from .runner import RunManifest, run

__all__ = [
    "__version__",
    "ModalreconError", "ScenarioError", "UnobservableError", "BlowupError",
    "ReconstructionError",
    "ModelKind", "ModelOperator", "State", "SobolevScale", "build_model",
    "dealias_capacity", "norm_sigma", "phasors", "state_from_phasors",
    "project_low", "project_high",
    "Nonlinearity", "Trajectory", "verify_defocusing", "linear_propagate",
    "nonlinear_solve", "duhamel_integrate", "propagate_linearized",
    "taylor_jet", "time_derivatives",
    "ObservationOperator", "GramianReport", "build_observation", "observe",
    "gramian", "linearized_gramian", "gcc_time", "commutator_diagnostic",
    "ObservationRecord", "ReconstructionConfig", "ReconstructionResult",
    "ObservationSolver", "solve_observation_problem", "reconstruct_high",
    "reduced_low_ode", "gain_probe", "predicted_threshold",
    "AnalyticityReport", "DeterminingModesReport", "analyticity_radius",
    "determining_modes_experiment", "energy", "stationarity_residual",
    "find_stationary",
    "Scenario", "load_scenario", "RunManifest", "run",
]
