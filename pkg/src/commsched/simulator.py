"""Closed-loop Monte Carlo engine: plants, filters, controllers and the
channel scheduler co-simulated with realized packet losses.

Loop convention (one iteration per time step k):

  k = 0   the filter holds the prior (xhat = 0, E = X0); nothing is
          scheduled at slot 0, the first grants happen at slot 1
  k >= 1  (1) plan from the realized posterior covariances of step k-1
          and actuate the plan's first column, (2) draw the Bernoulli
          packet outcomes, (3) sense y = C x + v, (4) filter predict +
          gated update, then u = -K xhat and the plants step forward.

Randomness is drawn from one counter-based stream per (run, agent,
source), so runs are reproducible bit-for-bit and adding agents never
perturbs the draws of existing ones.
"""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .control import ControllerDesign, LinearSystem, spectral_radius, stage_cost, symmetrize
from .errors import InvalidAlpha
from .estimation import FilterState, NoiseModel, cov_step, predict, update_realized
from .scheduler import (
    AllocationProblem,
    Schedule,
    baseline_round_robin,
    receding_horizon_step,
    shift_schedule,
)

WORKERS_ENV = "COMMSCHED_WORKERS"

# RNG sub-stream ids per (run, agent)
_SRC_X0, _SRC_W, _SRC_V, _SRC_PACKET = 0, 1, 2, 3


@dataclass(frozen=True)
class LinearAgent:
    """One subsystem: plant model, noise description and controller design."""

    sys: LinearSystem
    noise: NoiseModel
    design: ControllerDesign


@dataclass(frozen=True)
class ConstantSigma:
    """Per-agent constant success probability."""

    values: tuple[float, ...] | float = 1.0

    def value(self, agent: int, k: int) -> float:
        if np.isscalar(self.values):
            return float(self.values)
        return float(self.values[agent])

    def window(self, agent: int, start: int, count: int) -> np.ndarray:
        return np.full(count, self.value(agent, 0))


@dataclass(frozen=True)
class DistanceSigma:
    """Distance-driven success probability with an exact worst case.

    The distance follows d(agent, k) = cos(rate * k + (agent+1) * phase),
    so consecutive agents see probability curves shifted by half a period.
    The curve is exp(-d^2) rescaled in the exponent so that its minimum
    equals `floor` (floor = 1/e reproduces the unscaled exp(-d^2)); lower
    floors mean more severe packet loss.
    """

    floor: float = np.exp(-1.0)
    rate: float = 0.1
    phase: float = np.pi / 2

    def _scale(self) -> float:
        if not 0.0 < self.floor < 1.0:
            raise ValueError("floor must lie strictly between 0 and 1")
        return np.log(1.0 / self.floor)

    def value(self, agent: int, k: int) -> float:
        d = np.cos(self.rate * k + (agent + 1) * self.phase)
        return float(np.exp(-(d**2) * self._scale()))

    def window(self, agent: int, start: int, count: int) -> np.ndarray:
        ks = np.arange(start, start + count)
        d = np.cos(self.rate * ks + (agent + 1) * self.phase)
        return np.exp(-(d**2) * self._scale())


@dataclass(frozen=True)
class Scenario:
    """Everything needed to reproduce one closed-loop experiment."""

    name: str
    agents: tuple[LinearAgent, ...]
    capacity: int
    horizon: int  # planning horizon N; plans cover N+1 slots
    steps: int  # simulated steps T
    runs: int
    seed: int
    sigma_model: ConstantSigma | DistanceSigma
    strategy: str
    loss_aware: bool = True
    pg_tol: float = 1e-4
    pg_max_iter: int = 2000
    # test/monitor hook: (M, steps) binary grants applied verbatim
    # (slot 0 stays unscheduled like everywhere else)
    forced_schedule: np.ndarray | None = None
    # RNG stream identity per agent; defaults to fleet position. Lets a
    # sub-fleet replay exactly the draws it saw inside a larger fleet.
    stream_ids: tuple[int, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "agents", tuple(self.agents))
        if self.steps < self.horizon + 1:
            raise ValueError("steps must be at least horizon + 1")
        if self.runs < 1 or self.capacity < 1 or self.horizon < 1:
            raise ValueError("runs, capacity and horizon must be positive")
        dims = {(a.sys.nx, a.sys.nu, a.sys.ny) for a in self.agents}
        if len(dims) != 1:
            raise ValueError("agents in one scenario must share state/input/output dims")
        if self.stream_ids is not None and len(self.stream_ids) != len(self.agents):
            raise ValueError("stream_ids must name one stream per agent")
        for i, a in enumerate(self.agents):
            if spectral_radius(a.sys.A - a.sys.B @ a.design.K) >= 1.0:
                raise ValueError(f"agent {i}: feedback gain is not stabilizing")

    @property
    def n_agents(self) -> int:
        return len(self.agents)


@dataclass
class SimTrace:
    """Per-step, per-agent record of one closed-loop run."""

    x: np.ndarray  # (T, M, n) true states
    xhat: np.ndarray  # (T, M, n) estimates
    u: np.ndarray  # (T, M, m) inputs
    E: np.ndarray  # (T, M, n, n) realized error covariances
    delta: np.ndarray  # (T, M) applied grants
    s: np.ndarray  # (T, M) realized packet outcomes
    sigma: np.ndarray  # (T, M) true success probabilities
    stage_cost: np.ndarray  # (T, M)
    tr_gamma_E: np.ndarray  # (T, M) price-weighted covariance trace
    tr_P_X: np.ndarray  # (T, M) x' P x samples
    run_seed: int = 0
    scenario: str = ""


@dataclass
class MCStats:
    """Aggregates over independent Monte Carlo runs."""

    j_mean: float
    j_stderr: float
    j_trace_mean: float
    j_trace_stderr: float
    grant_counts: np.ndarray  # (M,) mean grants per run
    grant_ratio: float  # sum(delta[agent 1]) / sum(delta[agent 0]) for M = 2
    runs: int
    j_runs: np.ndarray = field(repr=False, default=None)


def _psd_factor(M: np.ndarray) -> np.ndarray:
    """A factor F with F F' = M for PSD M (Cholesky, eigen fallback)."""
    try:
        return np.linalg.cholesky(M)
    except np.linalg.LinAlgError:
        vals, vecs = np.linalg.eigh(symmetrize(M))
        return vecs * np.sqrt(np.clip(vals, 0.0, None))


def _stream(scenario_seed: int, run_seed: int, agent: int, source: int) -> np.random.Generator:
    seq = np.random.SeedSequence(entropy=(scenario_seed, run_seed, agent, source))
    return np.random.Generator(np.random.Philox(seq))


def _plan_sigma(sc: Scenario, start: int) -> np.ndarray:
    """(M, N+1) window of success probabilities the planner believes in."""
    count = sc.horizon + 1
    if not sc.loss_aware:
        return np.ones((sc.n_agents, count))
    return np.stack([sc.sigma_model.window(i, start, count) for i in range(sc.n_agents)])


def run_closed_loop(sc: Scenario, run_seed: int) -> SimTrace:
    """Simulate one run; deterministic given (scenario.seed, run_seed)."""
    M, T = sc.n_agents, sc.steps
    n = sc.agents[0].sys.nx
    m = sc.agents[0].sys.nu
    p = sc.agents[0].sys.ny
    sid = sc.stream_ids if sc.stream_ids is not None else tuple(range(M))

    x0_fac = [_psd_factor(a.noise.X0) for a in sc.agents]
    w_fac = [_psd_factor(a.noise.W) for a in sc.agents]
    v_fac = [_psd_factor(a.noise.V) for a in sc.agents]
    x = np.stack(
        [x0_fac[i] @ _stream(sc.seed, run_seed, sid[i], _SRC_X0).standard_normal(n) for i in range(M)]
    )
    w_draws = np.stack(
        [(_stream(sc.seed, run_seed, sid[i], _SRC_W).standard_normal((T, n)) @ w_fac[i].T) for i in range(M)],
        axis=1,
    )  # (T, M, n)
    v_draws = np.stack(
        [(_stream(sc.seed, run_seed, sid[i], _SRC_V).standard_normal((T, p)) @ v_fac[i].T) for i in range(M)],
        axis=1,
    )
    packet_u = np.stack(
        [_stream(sc.seed, run_seed, sid[i], _SRC_PACKET).uniform(size=T) for i in range(M)], axis=1
    )

    fs = [FilterState(xhat=np.zeros(n), E=a.noise.X0.copy()) for a in sc.agents]
    price = np.stack([a.design.error_price for a in sc.agents])
    A_st = np.stack([a.sys.A for a in sc.agents])
    C_st = np.stack([a.sys.C for a in sc.agents])
    W_st = np.stack([a.noise.W for a in sc.agents])
    V_st = np.stack([a.noise.V for a in sc.agents])

    tr = SimTrace(
        x=np.zeros((T, M, n)),
        xhat=np.zeros((T, M, n)),
        u=np.zeros((T, M, m)),
        E=np.zeros((T, M, n, n)),
        delta=np.zeros((T, M), dtype=int),
        s=np.zeros((T, M), dtype=int),
        sigma=np.zeros((T, M)),
        stage_cost=np.zeros((T, M)),
        tr_gamma_E=np.zeros((T, M)),
        tr_P_X=np.zeros((T, M)),
        run_seed=run_seed,
        scenario=sc.name,
    )

    u_prev = np.zeros((M, m))
    prev_plan: Schedule | None = None
    for k in range(T):
        sigma_true = np.array([sc.sigma_model.value(i, k) for i in range(M)])
        if k == 0:
            delta_col = np.zeros(M, dtype=int)
            s_col = np.zeros(M, dtype=int)
        else:
            if sc.forced_schedule is not None:
                delta_col = np.asarray(sc.forced_schedule[:, k], dtype=int)
            elif sc.strategy == "baseline":
                delta_col = baseline_round_robin(
                    M, sc.capacity, sc.horizon, phase=(k * sc.capacity) % M
                )[:, 0].astype(int)
            else:
                problem = AllocationProblem(
                    price=price,
                    A=A_st,
                    C=C_st,
                    W=W_st,
                    V=V_st,
                    sigma=_plan_sigma(sc, k),
                    E_init=np.stack([f.E for f in fs]),
                    capacity=sc.capacity,
                )
                warm = shift_schedule(prev_plan) if prev_plan is not None else None
                first, plan, _ = receding_horizon_step(
                    problem,
                    sc.strategy,
                    warm_start=warm,
                    pg_tol=sc.pg_tol,
                    pg_max_iter=sc.pg_max_iter,
                )
                prev_plan = plan
                delta_col = first.astype(int)
            s_col = (delta_col * (packet_u[k] < sigma_true)).astype(int)
            for i, agent in enumerate(sc.agents):
                xbar, Ebar = predict(fs[i], agent.sys, u_prev[i], agent.noise.W)
                y = agent.sys.C @ x[i] + v_draws[k, i]
                fs[i] = update_realized(
                    xbar, Ebar, y, int(delta_col[i] * s_col[i]), agent.sys.C, agent.noise.V
                )

        u = np.stack([-sc.agents[i].design.K @ fs[i].xhat for i in range(M)])
        tr.x[k] = x
        tr.xhat[k] = np.stack([f.xhat for f in fs])
        tr.u[k] = u
        tr.E[k] = np.stack([f.E for f in fs])
        tr.delta[k] = delta_col
        tr.s[k] = s_col
        tr.sigma[k] = sigma_true
        for i, agent in enumerate(sc.agents):
            tr.stage_cost[k, i] = stage_cost(x[i], u[i], agent.design.weights)
            tr.tr_gamma_E[k, i] = float(np.sum(agent.design.error_price * fs[i].E))
            tr.tr_P_X[k, i] = float(x[i] @ agent.design.P @ x[i])
        x = np.stack(
            [sc.agents[i].sys.A @ x[i] + sc.agents[i].sys.B @ u[i] + w_draws[k, i] for i in range(M)]
        )
        u_prev = u
    return tr


def closed_loop_cost(trace: SimTrace) -> float:
    """Time-averaged fleet stage cost J = (1/T) sum_k sum_i l_i(x, u)."""
    return float(trace.stage_cost.sum() / trace.stage_cost.shape[0])


def trace_cost(trace: SimTrace) -> float:
    """Secondary metric: summed price-weighted covariance path cost."""
    return float(trace.tr_gamma_E.sum())


def _run_one(args) -> SimTrace:
    sc, r = args
    return run_closed_loop(sc, r)


def _n_workers(runs: int) -> int:
    env = os.environ.get(WORKERS_ENV)
    if env is not None:
        return max(1, int(env))
    if runs < 4:
        return 1
    return min(os.cpu_count() or 1, runs)


def monte_carlo(sc: Scenario, keep_traces: bool = False):
    """Run `sc.runs` independent closed loops and aggregate.

    Seeds derive from (scenario seed, run index); aggregation is by run
    index, so results are identical for any worker count. Returns MCStats,
    or (MCStats, traces) when keep_traces is set.
    """
    workers = _n_workers(sc.runs)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            traces = list(pool.map(_run_one, [(sc, r) for r in range(sc.runs)], chunksize=4))
    else:
        traces = [run_closed_loop(sc, r) for r in range(sc.runs)]
    stats = aggregate(traces)
    return (stats, traces) if keep_traces else stats


def aggregate(traces: list[SimTrace]) -> MCStats:
    R = len(traces)
    j = np.array([closed_loop_cost(t) for t in traces])
    jt = np.array([trace_cost(t) for t in traces])
    grants = np.stack([t.delta.sum(axis=0) for t in traces])  # (R, M)
    total = grants.sum(axis=0)
    ratio = float(total[1] / total[0]) if total.shape[0] == 2 and total[0] > 0 else np.nan
    sd = lambda a: float(a.std(ddof=1) / np.sqrt(R)) if R > 1 else 0.0
    return MCStats(
        j_mean=float(j.mean()),
        j_stderr=sd(j),
        j_trace_mean=float(jt.mean()),
        j_trace_stderr=sd(jt),
        grant_counts=grants.mean(axis=0),
        grant_ratio=ratio,
        runs=R,
        j_runs=j,
    )


def lyapunov_increase_samples(
    agent: LinearAgent, x: np.ndarray, errors: np.ndarray
) -> np.ndarray:
    """One-step closed-loop cost difference of estimate feedback vs state
    feedback, per sampled estimation error (no process noise).

    For each error e: u = -K(x - e) against ubar = -K x, comparing stage
    costs at x plus the Lyapunov values of the two successors. Averaged
    over e ~ N(0, E), the expectation is tr(error_price @ E).
    """
    sys, dsn = agent.sys, agent.design
    w = dsn.weights
    x = np.asarray(x, dtype=float).reshape(-1)
    errors = np.atleast_2d(np.asarray(errors, dtype=float))
    A_K = sys.A - sys.B @ dsn.K
    ubar = -dsn.K @ x
    u = ubar + errors @ dsn.K.T  # u = -K(x - e)
    du = u - ubar
    # stage-cost difference: quadratic expansion around ubar
    l_lin = 2.0 * (w.S @ x + w.R @ ubar)
    dl = du @ l_lin + np.einsum("si,ij,sj->s", du, w.R, du)
    x_u = (A_K @ x)[None, :] + errors @ (sys.B @ dsn.K).T
    x_ubar = A_K @ x
    dV = np.einsum("si,ij,sj->s", x_u, dsn.P, x_u) - float(x_ubar @ dsn.P @ x_ubar)
    return dl + dV


def lyapunov_decrease_matrix(agent: LinearAgent) -> np.ndarray:
    """The exact per-step Lyapunov decrease weight P - A_K' P A_K of a
    design (equals Q + K'RK for cross-free LQR designs)."""
    A_K = agent.sys.A - agent.sys.B @ agent.design.K
    return symmetrize(agent.design.P - A_K.T @ agent.design.P @ A_K)


def baseline_steady_state_mu(sc: Scenario, settle: int = 200) -> float:
    """Steady-state maximum of the fleet's price-weighted expected
    covariance under the round-robin baseline; the default invariant-set
    level for the stability-bound monitor."""
    M = sc.n_agents
    E = np.stack([a.noise.X0 for a in sc.agents])
    price = np.stack([a.design.error_price for a in sc.agents])
    A = np.stack([a.sys.A for a in sc.agents])
    C = np.stack([a.sys.C for a in sc.agents])
    W = np.stack([a.noise.W for a in sc.agents])
    V = np.stack([a.noise.V for a in sc.agents])
    worst = 0.0
    for k in range(2 * settle):
        col = baseline_round_robin(M, sc.capacity, 1, phase=(k * sc.capacity) % M)[:, 0]
        sig = np.array([sc.sigma_model.value(i, k) for i in range(M)])
        E = cov_step(E, col * sig, A, C, W, V)
        if k >= settle:
            worst = max(worst, float(np.einsum("mij,mij->", price, E)))
    return worst


@dataclass
class LspReport:
    """Empirical check of the closed-loop covariance bound."""

    alpha: float
    nu: float
    bound: float
    mean_curve: np.ndarray  # (T,) MC mean of sum_i x' P_i x
    running: np.ndarray  # (T,) running average of mean_curve
    flagged_steps: np.ndarray  # steps where running > (1 + slack) * bound
    margin: float  # max(running) / bound
    frac_runs_inside: float  # runs whose tail average stays within bound
    passed: bool


def lsp_bound_monitor(
    sc: Scenario,
    traces: list[SimTrace],
    Q_blocks: list[np.ndarray],
    mu: float,
    *,
    slack: float = 0.10,
    tail_frac: float = 0.5,
) -> LspReport:
    """Compare the Monte Carlo estimate of E{x' P x} against the
    analytic stability bound nu / (1 - alpha).

    alpha is the worst per-agent contraction 1 - lambda_min(Q P^-1)
    (clipped to [0, 1)); nu = tr(P W) + N * mu. The bound concerns the
    limsup, so the running average starts after the transient cutoff
    (tail_frac of the horizon). Raises InvalidAlpha when some agent's Q
    is too weak relative to its P.
    """
    alphas = []
    for agent, Q in zip(sc.agents, Q_blocks):
        lam = np.linalg.eigvals(np.linalg.solve(agent.design.P, np.asarray(Q, dtype=float)))
        alphas.append(1.0 - float(np.min(lam.real)))
    alpha = max(alphas)
    if alpha >= 1.0:
        raise InvalidAlpha(f"alpha = {alpha:.6f} >= 1; Q too weak relative to P")
    alpha = min(max(alpha, 0.0), 1.0 - 1e-15)
    nu = sum(float(np.trace(a.design.P @ a.noise.W)) for a in sc.agents) + sc.horizon * mu
    bound = nu / (1.0 - alpha)

    per_run = np.stack([t.tr_P_X.sum(axis=1) for t in traces])  # (R, T)
    mean_curve = per_run.mean(axis=0)
    tail = int(tail_frac * per_run.shape[1])
    post = mean_curve[tail:]
    running = np.cumsum(post) / np.arange(1, post.size + 1)
    flagged = tail + np.nonzero(running > (1.0 + slack) * bound)[0]
    inside = float(np.mean(per_run[:, tail:].mean(axis=1) <= bound))
    return LspReport(
        alpha=alpha,
        nu=nu,
        bound=bound,
        mean_curve=mean_curve,
        running=running,
        flagged_steps=flagged,
        margin=float(running.max() / bound),
        frac_runs_inside=inside,
        passed=flagged.size == 0,
    )
