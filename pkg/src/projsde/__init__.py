"""Projected Stratonovich SDE integration on implicitly defined manifolds."""
from .geometry import (
    DivergenceError,
    InvalidStateError,
    ManifoldSpec,
    NormalFrame,
    ProjectionError,
    QuadraticConstraint,
    RankDeficiencyError,
    SingularPointError,
    constraint_gradients,
    eval_constraints,
    normal_project,
    orthonormalize,
    tangential_project,
)
from .noise import NoisePlan, gaussian_increments
from .stepper import (
    SdeProblem,
    StepConfig,
    step_cEP,
    step_cMP,
    step_midpoint_unconstrained,
    step_tMP,
)
from .ensemble import EnsembleResult, integrate_ensemble
from .metrics import (
    ErrorTable,
    build_error_table,
    euclidean_dist_sq,
    great_circle_dist,
    truncation_error,
)
from .manifolds import (
    CatalogEntry,
    IntrinsicModel,
    catalog,
    catenoid_msd,
    hypersphere_msd,
    intrinsic_model,
    kubo_moment,
    make_quadratic,
)

__version__ = "0.1.0"
