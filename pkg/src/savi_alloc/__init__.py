"""Semi-amortized variational inference on DAG latents and the bit
allocation it implies, on small analytic surrogate codec models."""

from .allocation import (
    AllocationReport,
    DependencyMatrices,
    LambdaGrid,
    LambdaMap,
    OmegaSchedule,
    brute_force_optimal_lambda,
    dependency_matrices,
    encode_with_lambda,
    equivalent_lambda_map,
    lambda_domain_allocate,
    lambda_from_dependencies,
    oeu_baseline,
)
from .errors import (
    BudgetExceeded,
    ConfigInvalid,
    CycleDetected,
    DanglingEdge,
    DegenerateGradient,
    DimensionMismatch,
    DivergenceDetected,
    GuardExceeded,
    NonPositiveLambda,
    NumericalError,
    SaviError,
    SingularSystem,
)
from .graph import ROOT, LatentGraph, build_graph, chain, diamond, full_reference, independent
from .model import (
    FrameData,
    GopModel,
    LatentState,
    ModelSpec,
    ObjectiveBreakdown,
    TwoLevelModel,
    favi_state,
    generate_frames,
    two_level_quadratic,
)
from .oracle import OracleConfig, quadratic_global_optimum, unrolled_hypergradient
from .savi import (
    ExecutionTrace,
    SaviConfig,
    grad_2level,
    grad_dag,
    hvp,
    run_savi,
    savi_accurate_2level,
    savi_accurate_dag,
    savi_approx,
    savi_naive,
    suggest_learning_rate,
    windowed_gradient,
)

__version__ = "0.1.0"
