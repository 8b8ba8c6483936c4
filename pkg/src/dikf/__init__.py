"""Bayesian estimation of 3D point coordinates from noisy geometric
constraints, with full covariance tracking.

The solver runs an iterated Kalman update per constraint inside outer
cycles that reheat the covariance and reorder constraints by how badly
they fit, which lets it escape the local minima that a single sequential
pass gets stuck in.
"""

from .model import (
    VARIANCE_FLOOR,
    Constraint,
    ConstraintKind,
    CovarianceMatrix,
    CycleReport,
    OrderingStrategy,
    SolveConfig,
    StateVector,
    atom_block,
    init_covariance,
    init_state,
)
from .constraints import (
    Prediction,
    SingularGeometryError,
    SparseJacobian,
    predict,
    predict_coords,
    residual,
    standardized_error,
    wrap_angle,
)
from .filtering import (
    NumericalBreakdownError,
    UpdateOutcome,
    apply_constraint,
    apply_constraint_in_place,
    iterate_scalar_update,
    kalman_gain,
)
from .scheduler import Solution, check_stop, order_constraints, run_cycle, solve
from .synth import (
    BOND_LENGTH,
    COMPACTNESS_SCALE,
    EXACT_VARIANCE,
    MIN_SEPARATION,
    Dataset,
    GenerationFailedError,
    NoiseModel,
    NoiseSpec,
    apply_noise,
    enumerate_distances,
    generate_target,
    make_dataset,
    sample_fraction,
)
from .evaluate import (
    Ellipsoid,
    ErrorStats,
    Superposition,
    covariance_map,
    error_stats,
    superpose_rmsd,
    uncertainty_ellipsoids,
)
from .io import (
    FormatError,
    SolutionRecord,
    load_dataset,
    load_report,
    load_solution,
    read_trace,
    save_dataset,
    save_report,
    save_solution,
    write_trace,
)
from .presets import DEFAULT_SEEDS, PRESETS, ExperimentConfig, get_preset

__version__ = "0.1.0"

__all__ = [
    "VARIANCE_FLOOR",
    "Constraint",
    "ConstraintKind",
    "CovarianceMatrix",
    "CycleReport",
    "OrderingStrategy",
    "SolveConfig",
    "StateVector",
    "atom_block",
    "init_covariance",
    "init_state",
    "Prediction",
    "SingularGeometryError",
    "SparseJacobian",
    "predict",
    "predict_coords",
    "residual",
    "standardized_error",
    "wrap_angle",
    "NumericalBreakdownError",
    "UpdateOutcome",
    "apply_constraint",
    "apply_constraint_in_place",
    "iterate_scalar_update",
    "kalman_gain",
    "Solution",
    "check_stop",
    "order_constraints",
    "run_cycle",
    "solve",
    "BOND_LENGTH",
    "COMPACTNESS_SCALE",
    "EXACT_VARIANCE",
    "MIN_SEPARATION",
    "Dataset",
    "GenerationFailedError",
    "NoiseModel",
    "NoiseSpec",
    "apply_noise",
    "enumerate_distances",
    "generate_target",
    "make_dataset",
    "sample_fraction",
    "Ellipsoid",
    "ErrorStats",
    "Superposition",
    "covariance_map",
    "error_stats",
    "superpose_rmsd",
    "uncertainty_ellipsoids",
    "FormatError",
    "SolutionRecord",
    "load_dataset",
    "load_report",
    "load_solution",
    "read_trace",
    "save_dataset",
    "save_report",
    "save_solution",
    "write_trace",
    "DEFAULT_SEEDS",
    "PRESETS",
    "ExperimentConfig",
    "get_preset",
    "__version__",
]
