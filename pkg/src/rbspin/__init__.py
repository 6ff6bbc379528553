"""Reduced basis surrogate models for parametrized quantum spin Hamiltonians."""
from .affine import (
    AffineObservable,
    AffineOperator,
    ParameterGrid,
    apply,
    as_point,
    evaluate_hamiltonian,
    theta_eval,
)
from .basis import ReducedBasisModel
from .errors import (
    ConditioningError,
    ConfigError,
    DomainError,
    RBSpinError,
    SolverError,
    StateError,
    StructuralError,
    TrainingAborted,
)
from .models import (
    LatticeSpec,
    build_model,
    build_rydberg,
    build_triangle,
    lift_site_operator,
    occupation_profile,
    rydberg_structure_factor,
    triangle_structure_factor,
)
from .offline import GreedyConfig, compress, extend_reduced_matrices, greedy_train, residual
from .online import ReducedSolution, ScanResult, lift, observable_eval, reduced_ground, scan, warm_start_guess
from .truth import GroundStateManifold, dense_fallback, solve_ground_manifold

__version__ = "0.1.0"
