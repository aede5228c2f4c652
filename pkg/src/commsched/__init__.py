"""commsched: communication scheduling for fleets of linear agents.

Design controllers, propagate estimation-error covariances through a
shared lossy channel, optimize who gets to transmit, and simulate the
closed loop.
"""

__version__ = "0.1.0"

from .control import (
    ControllerDesign,
    CostWeights,
    LinearSystem,
    design_controller,
    error_price_matrix,
    lqr_from_gain,
    solve_dare,
    solve_discrete_lyapunov,
    spectral_radius,
    stage_cost,
)
from .errors import (
    CommschedError,
    InfeasibleSchedule,
    InvalidAlpha,
    NonConvergent,
    NotStabilizing,
    SingularInnovation,
    TooLarge,
)
from .estimation import (
    CovState,
    FilterState,
    NoiseModel,
    expected_cov_step,
    kalman_gain,
    predict,
    update_realized,
)
from .scheduler import (
    AllocationProblem,
    allocation_cost,
    baseline_round_robin,
    receding_horizon_step,
    round_schedule,
    solve_exhaustive,
    solve_greedy_voi,
    solve_relaxed,
    voi,
)
from .simulator import (
    ConstantSigma,
    DistanceSigma,
    LinearAgent,
    MCStats,
    Scenario,
    SimTrace,
    baseline_steady_state_mu,
    closed_loop_cost,
    lsp_bound_monitor,
    monte_carlo,
    run_closed_loop,
)
from .scenarios import scenario_library
