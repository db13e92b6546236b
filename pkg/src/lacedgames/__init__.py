"""Two-player differential games with hidden feedback couplings: simulation,
conserved-quantity verification, a-posteriori control reconstruction, virtual
decomposition and approximating-game prediction."""

from .approximate import (
    ApproximationRun,
    ErrorMetrics,
    SweepResult,
    error_curve,
    frozen_predict,
    prediction_error,
    retarded_predict,
    sweep_t0,
)
from .catalog import CATALOG_NAMES, CatalogEntry, build_catalog_game
from .core import (
    ControlSchedule,
    GameDefinition,
    Trajectory,
    estimate_derivative,
    interpolate_state,
    read_trajectory_csv,
    trajectory_csv_text,
    with_estimated_derivatives,
    write_trajectory_csv,
)
from .decompose import (
    DecompositionMap,
    coupling_residual,
    feedback_jacobian_at_zero,
    virtual_decompose,
)
from .dsl import EvalEnv, eval_expr, grad_fd, parse_expr, to_string
from .errors import AnalysisError, ConfigError, LacedGamesError, NumericError
from .lacing import (
    LacingIntegralSet,
    check_lacing_rank,
    conservation_report,
    dynamical_integrals_from_dynamics,
    evaluate_integrals,
    measure_constants,
    reconstruct_feedback,
    reconstruct_trajectory,
)
from .simulate import resolve_controls, simulate

__version__ = "0.1.0"
