"""Real-time EV charging congestion control on radial LV feeders."""

from .feeder import (
    BaseLoad,
    ChargerSite,
    Feeder,
    FeederError,
    Line,
    LineCodeError,
    LoadDataError,
    LoadShape,
    RoutingMatrix,
    TopologyError,
    available_capacity,
    base_current,
    build_routing_matrix,
    parse_feeder,
    read_load_shapes,
)
from .solvers import (
    DualState,
    IterationTrace,
    NumProblem,
    PrimalState,
    SolverConfig,
    centralized_solve,
    default_budgets,
    dual_lambda_update,
    dual_solve,
    dual_step_bound,
    dual_step_safe,
    dual_x_update,
    primal_budget_step,
    primal_solve,
    primal_x_mu_update,
    sequential_project,
)

__version__ = "0.1.0"
