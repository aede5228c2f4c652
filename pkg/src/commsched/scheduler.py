"""Channel-allocation optimizers for fleets of estimating agents.

The problem: M agents share a channel carrying at most `capacity` grants
per slot. Granting agent i at slot k lets its covariance contract through
the lossy measurement update with success probability sigma[i, k]; the
objective is the summed path cost

    sum_i sum_k tr(price_i @ E_{i,k})

over the planning slots 0..horizon. Solvers:

* ``solve_exhaustive``  - enumeration oracle, globally optimal at desk scale
* ``solve_greedy_voi``  - slot-by-slot largest one-slot cost reduction
* ``solve_relaxed``     - projected gradient on the [0, 1] relaxation with
  an adjoint (backward) sweep for the exact gradient
* ``round_schedule``    - sum-up rounding with per-slot capacity repair
* ``baseline_round_robin``  - fixed cyclic schedule

``receding_horizon_step`` wraps any of these for closed-loop use, keeping
the better of the fresh solution and a shifted warm start.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import product

import numpy as np

from .control import symmetrize
from .errors import InfeasibleSchedule, NonConvergent, SingularInnovation, TooLarge
from .estimation import cov_step

# Binary M x (horizon+1) grant matrix.
Schedule = np.ndarray
# Same shape with entries in [0, 1].
RelaxedSchedule = np.ndarray

ENUM_LIMIT = 10**7
FEAS_TOL = 1e-9
PG_TOL = 1e-6
PG_MAX_ITER = 10_000


@dataclass(frozen=True)
class AllocationProblem:
    """Finite-horizon allocation problem with stacked per-agent data.

    All arrays carry the agent axis first; agents must share state and
    output dimensions within one problem. ``sigma`` has one column per
    plan slot (horizon + 1 of them); ``E_init`` is the covariance each
    agent enters slot 0 with.
    """

    price: np.ndarray  # (M, n, n) PSD cost weights
    A: np.ndarray  # (M, n, n)
    C: np.ndarray  # (M, p, n)
    W: np.ndarray  # (M, n, n)
    V: np.ndarray  # (M, p, p)
    sigma: np.ndarray  # (M, horizon+1)
    E_init: np.ndarray  # (M, n, n)
    capacity: int

    def __post_init__(self):
        for name in ("price", "A", "C", "W", "V", "sigma", "E_init"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        M, n, _ = self.A.shape
        p = self.C.shape[1]
        if self.A.shape != (M, n, n):
            raise ValueError("A must be (M, n, n)")
        for name, shape in (
            ("price", (M, n, n)),
            ("C", (M, p, n)),
            ("W", (M, n, n)),
            ("V", (M, p, p)),
            ("E_init", (M, n, n)),
        ):
            if getattr(self, name).shape != shape:
                raise ValueError(f"{name} must have shape {shape}, got {getattr(self, name).shape}")
        if self.sigma.ndim != 2 or self.sigma.shape[0] != M or self.sigma.shape[1] < 2:
            raise ValueError("sigma must be (M, horizon+1) with horizon >= 1")
        if np.any(self.sigma < 0) or np.any(self.sigma > 1):
            raise ValueError("sigma entries must lie in [0, 1]")
        if self.capacity < 1:
            raise ValueError("capacity must be >= 1")
        for name in ("price", "E_init"):
            mats = getattr(self, name)
            if np.max(np.abs(mats - np.swapaxes(mats, -1, -2))) > 1e-9:
                raise ValueError(f"{name} matrices must be symmetric")
            if np.min(np.linalg.eigvalsh(symmetrize(mats))) < -1e-9:
                raise ValueError(f"{name} matrices must be PSD")

    @property
    def n_agents(self) -> int:
        return self.A.shape[0]

    @property
    def n_slots(self) -> int:
        return self.sigma.shape[1]

    @property
    def horizon(self) -> int:
        return self.sigma.shape[1] - 1


def build_problem(agents, E_init, sigma, capacity: int) -> AllocationProblem:
    """Stack per-agent (price, A, C, W, V) tuples into an AllocationProblem."""
    price, A, C, W, V = (np.stack([np.asarray(a[j], dtype=float) for a in agents]) for j in range(5))
    return AllocationProblem(
        price=price,
        A=A,
        C=C,
        W=W,
        V=V,
        sigma=np.asarray(sigma, dtype=float),
        E_init=np.stack([np.asarray(E, dtype=float) for E in E_init]),
        capacity=capacity,
    )


def check_feasible(delta: np.ndarray, p: AllocationProblem) -> np.ndarray:
    """Validate shape, entry bounds and per-slot capacity of a schedule."""
    delta = np.asarray(delta, dtype=float)
    if delta.shape != (p.n_agents, p.n_slots):
        raise InfeasibleSchedule(
            f"schedule must be {p.n_agents}x{p.n_slots}, got {delta.shape}"
        )
    if np.any(delta < -FEAS_TOL) or np.any(delta > 1 + FEAS_TOL):
        raise InfeasibleSchedule("schedule entries must lie in [0, 1]")
    col = delta.sum(axis=0)
    if np.any(col > p.capacity + FEAS_TOL):
        k = int(np.argmax(col))
        raise InfeasibleSchedule(
            f"slot {k} carries {col[k]:.9f} grants, capacity is {p.capacity}"
        )
    return np.clip(delta, 0.0, 1.0)


def voi(p: AllocationProblem, agent: int, delta_row: np.ndarray, E_prev=None) -> float:
    """Cumulative path cost of one agent under a candidate grant row.

    Rolls the expected covariance through every plan slot and sums
    tr(price @ E); the fleet objective is exactly the sum of these over
    agents.
    """
    row = np.clip(np.asarray(delta_row, dtype=float).reshape(-1), 0.0, 1.0)
    if row.size != p.n_slots:
        raise ValueError(f"delta row must have {p.n_slots} entries, got {row.size}")
    E = np.asarray(p.E_init[agent] if E_prev is None else E_prev, dtype=float)
    A, C, W, V = p.A[agent], p.C[agent], p.W[agent], p.V[agent]
    price = p.price[agent]
    total = 0.0
    for k in range(p.n_slots):
        E = cov_step(E, row[k] * p.sigma[agent, k], A, C, W, V)
        total += float(np.sum(price * E))
    return total


def allocation_cost(p: AllocationProblem, delta: np.ndarray) -> float:
    """Fleet objective: sum of per-agent VoI path costs (feasibility checked)."""
    delta = check_feasible(delta, p)
    return sum(voi(p, i, delta[i]) for i in range(p.n_agents))


def feasible_columns(M: int, capacity: int) -> list[tuple[int, ...]]:
    """All binary grant columns with at most `capacity` ones."""
    return [c for c in product((0, 1), repeat=M) if sum(c) <= capacity]


def _voi_table(p: AllocationProblem, agent: int) -> np.ndarray:
    """Path cost of every binary grant row, indexed by the row's bitmask.

    Depth-first over slots so shared prefixes share covariance rollouts.
    """
    S = p.n_slots
    A, C, W, V = p.A[agent], p.C[agent], p.W[agent], p.V[agent]
    price = p.price[agent]
    sig = p.sigma[agent]
    table = np.empty(2**S)

    def descend(k: int, E: np.ndarray, acc: float, idx: int):
        for bit in (0, 1):
            E1 = cov_step(E, bit * sig[k], A, C, W, V)
            acc1 = acc + float(np.sum(price * E1))
            idx1 = (idx << 1) | bit
            if k + 1 == S:
                table[idx1] = acc1
            else:
                descend(k + 1, E1, acc1, idx1)

    descend(0, np.asarray(p.E_init[agent], dtype=float), 0.0, 0)
    return table


def solve_exhaustive(p: AllocationProblem) -> tuple[Schedule, float]:
    """Enumerate every capacity-feasible schedule and return the optimum.

    Ties are broken by the lexicographically smallest row-major flattened
    schedule, making the result independent of enumeration order. Raises
    TooLarge when (feasible columns)^(slots) exceeds the enumeration limit.
    """
    M, S = p.n_agents, p.n_slots
    cols = feasible_columns(M, p.capacity)
    size = len(cols) ** S
    if size > ENUM_LIMIT:
        raise TooLarge(
            f"{len(cols)}^{S} = {size} feasible schedules exceeds the "
            f"enumeration limit {ENUM_LIMIT}"
        )
    tables = [_voi_table(p, i) for i in range(M)]
    best_cost = np.inf
    best_flat: tuple[int, ...] | None = None
    for cand in product(cols, repeat=S):
        cost = 0.0
        for i in range(M):
            idx = 0
            for k in range(S):
                idx = (idx << 1) | cand[k][i]
            cost += tables[i][idx]
        if cost > best_cost:
            continue
        flat = tuple(cand[k][i] for i in range(M) for k in range(S))
        if cost < best_cost or flat < best_flat:
            best_cost = cost
            best_flat = flat
    delta = np.array(best_flat, dtype=float).reshape(M, S)
    return delta, float(best_cost)


def _update_parts(E, A, At, C, Ct, W, V):
    """Batched prediction and gain pieces shared by greedy and the adjoint.

    Returns (Ebar, Z, LCE) with Z = Minn^-1 C Ebar (so L = Z') and
    LCE = L C Ebar for the whole fleet at once. Minn is PD by problem
    validation, so a plain solve suffices here; the public estimation op
    keeps its Cholesky-based gain.
    """
    Ebar = A @ E @ At + W
    Ebar = 0.5 * (Ebar + np.swapaxes(Ebar, -1, -2))
    CE = C @ Ebar
    Minn = V + CE @ Ct
    try:
        Z = np.linalg.solve(Minn, CE)  # Minn^-1 C Ebar
    except np.linalg.LinAlgError as e:
        raise SingularInnovation("V + C Ebar C' is not positive definite") from e
    LCE = np.swapaxes(CE, -1, -2) @ Z
    return Ebar, Z, LCE


def _lossy_update_parts(E, p: AllocationProblem):
    At = np.swapaxes(p.A, -1, -2)
    Ct = np.swapaxes(p.C, -1, -2)
    Ebar, Z, LCE = _update_parts(E, p.A, At, p.C, Ct, p.W, p.V)
    return Ebar, np.swapaxes(Z, -1, -2) @ p.C, LCE


def _forward_cost(p: AllocationProblem, delta: np.ndarray) -> float:
    """Batched fleet rollout returning only the objective (hot path)."""
    w = np.clip(delta, 0.0, 1.0) * p.sigma
    A, C, W, V = p.A, p.C, p.W, p.V
    At = np.swapaxes(A, -1, -2)
    Ct = np.swapaxes(C, -1, -2)
    E = p.E_init
    cost = 0.0
    for k in range(p.n_slots):
        Ebar, _, LCE = _update_parts(E, A, At, C, Ct, W, V)
        E = Ebar - w[:, k, None, None] * LCE
        cost += float(np.einsum("mij,mij->", p.price, E))
    return cost


def solve_greedy_voi(p: AllocationProblem) -> tuple[Schedule, float]:
    """Slot-by-slot grants to the agents with the largest one-slot saving.

    The saving of granting agent i at slot k is
    sigma[i, k] * tr(price_i @ L C Ebar); the `capacity` largest strictly
    positive savings win, ties to the lowest agent index.
    """
    M, S = p.n_agents, p.n_slots
    delta = np.zeros((M, S))
    E = p.E_init.copy()
    for k in range(S):
        Ebar, _, LCE = _lossy_update_parts(E, p)
        saving = p.sigma[:, k] * np.einsum("mij,mij->m", p.price, LCE)
        order = sorted(range(M), key=lambda i: (-saving[i], i))
        grant = [i for i in order[: p.capacity] if saving[i] > 0.0]
        delta[grant, k] = 1.0
        w = delta[:, k] * p.sigma[:, k]
        E = symmetrize(Ebar - w[:, None, None] * LCE)
    return delta, allocation_cost(p, delta)


def relaxed_cost_grad(p: AllocationProblem, delta: np.ndarray) -> tuple[float, np.ndarray]:
    """Objective and its exact gradient in the relaxed schedule entries.

    Forward sweep rolls the fleet covariances; the backward (adjoint)
    sweep propagates dJ/dE through the prediction and gain maps, treating
    the Kalman gain as a function of the predicted covariance.
    """
    M, S = p.n_agents, p.n_slots
    delta = np.clip(np.asarray(delta, dtype=float), 0.0, 1.0)
    w = delta * p.sigma
    A, C = p.A, p.C
    At = np.swapaxes(A, -1, -2)
    Ct = np.swapaxes(C, -1, -2)
    E = p.E_init
    Gs, LCEs = [], []
    cost = 0.0
    for k in range(S):
        Ebar, Z, LCE = _update_parts(E, A, At, C, Ct, p.W, p.V)
        E = Ebar - w[:, k, None, None] * LCE
        cost += float(np.einsum("mij,mij->", p.price, E))
        Gs.append(np.swapaxes(Z, -1, -2) @ C)  # G = L C
        LCEs.append(LCE)
    grad = np.empty((M, S))
    lam = np.broadcast_to(p.price, E.shape).copy()
    for k in range(S - 1, -1, -1):
        grad[:, k] = -p.sigma[:, k] * np.einsum("mij,mij->m", lam, LCEs[k])
        lam_G = lam @ Gs[k]
        lam_bar = lam - w[:, k, None, None] * (
            lam_G + np.swapaxes(lam_G, -1, -2) - np.swapaxes(Gs[k], -1, -2) @ lam_G
        )
        if k:
            lam = symmetrize(At @ lam_bar @ A) + p.price
    return cost, grad


def project_column(v: np.ndarray, capacity: int) -> np.ndarray:
    """Euclidean projection onto {x in [0,1]^M : sum(x) <= capacity}.

    Box clipping first; if the budget is still violated the sum constraint
    is active and the capped-simplex shift x_i = clip(v_i - tau, 0, 1) is
    solved exactly on the piecewise-linear breakpoint grid.
    """
    v = np.asarray(v, dtype=float).reshape(-1)
    return project_schedule(v[:, None], capacity)[:, 0]


def project_schedule(delta: np.ndarray, capacity: int) -> np.ndarray:
    """Column-wise projection of a relaxed schedule onto the feasible set.

    Vectorized over columns: only columns whose box clip still exceeds the
    budget get the capped-simplex shift, with the breakpoint search done
    for all of them at once.
    """
    v = np.asarray(delta, dtype=float)
    out = np.clip(v, 0.0, 1.0)
    over = np.nonzero(out.sum(axis=0) > capacity)[0]
    if over.size == 0:
        return out
    vs = v[:, over]  # (M, K) violating columns
    bps = np.sort(np.concatenate([vs, vs - 1.0], axis=0), axis=0)  # (2M, K)
    phi = np.clip(vs[:, None, :] - bps[None, :, :], 0.0, 1.0).sum(axis=0)  # (2M, K)
    # phi decreases along the breakpoint axis; locate the segment where it
    # crosses the budget, then interpolate linearly
    j = (phi > capacity).sum(axis=0)  # first index with phi <= capacity
    cols = np.arange(over.size)
    lo, hi = bps[j - 1, cols], bps[j, cols]
    plo, phi_hi = phi[j - 1, cols], phi[j, cols]
    with np.errstate(divide="ignore", invalid="ignore"):
        tau = np.where(plo == phi_hi, lo, lo + (plo - capacity) * (hi - lo) / (plo - phi_hi))
    out[:, over] = np.clip(vs - tau[None, :], 0.0, 1.0)
    return out


def solve_relaxed(
    p: AllocationProblem,
    init: RelaxedSchedule,
    *,
    tol: float = PG_TOL,
    max_iter: int = PG_MAX_ITER,
    strict: bool = True,
) -> tuple[RelaxedSchedule, float]:
    """Projected gradient with backtracking on the [0, 1] relaxation.

    Monotone descent from `init` (which must be feasible); stops when the
    unit-step projected-gradient mapping has Frobenius norm <= tol.
    Raises NonConvergent when the iteration budget runs out, unless
    strict=False (the receding-horizon driver settles for the incumbent,
    which rounding blunts anyway).
    """
    x = check_feasible(init, p)
    x = project_schedule(x, p.capacity)
    f, g = relaxed_cost_grad(p, x)
    t = 1.0
    for _ in range(max_iter):
        mapped = project_schedule(x - g, p.capacity)
        if np.linalg.norm(x - mapped) <= tol:
            return x, _forward_cost(p, x)
        stalled = False
        while True:
            x_new = project_schedule(x - t * g, p.capacity)
            d2 = float(np.sum((x_new - x) ** 2))
            if d2 > 0 and _forward_cost(p, x_new) <= f - 1e-4 / t * d2:
                break
            t *= 0.5
            if t < 1e-14:
                stalled = True
                break
        if stalled:
            # descent exhausted at machine precision
            if strict and np.linalg.norm(x - mapped) > 10 * tol:
                raise NonConvergent("line search stalled before reaching tolerance")
            return x, _forward_cost(p, x)
        x = x_new
        f, g = relaxed_cost_grad(p, x)
        t = min(2.0 * t, 1e8)
    if strict:
        raise NonConvergent(f"projected gradient did not converge in {max_iter} iterations")
    return x, _forward_cost(p, x)


def round_schedule(relaxed: RelaxedSchedule, capacity: int) -> Schedule:
    """Sum-up rounding with per-slot capacity repair.

    Per agent an accumulator integrates the fractional grants; a bit fires
    once the accumulator reaches 1/2 and pays 1 back when it does. Slots
    oversubscribed after thresholding keep the `capacity` largest
    accumulators (ties to the lowest agent index), so the output is always
    feasible. Integer input is returned unchanged.
    """
    r = np.clip(np.asarray(relaxed, dtype=float), 0.0, 1.0)
    M, S = r.shape
    out = np.zeros((M, S))
    acc = np.zeros(M)
    for k in range(S):
        acc += r[:, k]
        want = [i for i in range(M) if acc[i] >= 0.5]
        if len(want) > capacity:
            want = sorted(want, key=lambda i: (-acc[i], i))[:capacity]
        for i in want:
            out[i, k] = 1.0
            acc[i] -= 1.0
    return out


def baseline_round_robin(M: int, capacity: int, horizon: int, phase: int = 0) -> Schedule:
    """Cyclic schedule granting `capacity` agents per slot in fixed rotation."""
    if M < 1:
        raise ValueError("need at least one agent")
    S = horizon + 1
    delta = np.zeros((M, S))
    width = min(capacity, M)
    for k in range(S):
        for j in range(width):
            delta[(phase + k * capacity + j) % M, k] = 1.0
    return delta


def shift_schedule(delta: np.ndarray) -> np.ndarray:
    """Warm start for the next solve: drop slot 0, repeat the last column."""
    return np.concatenate([delta[:, 1:], delta[:, -1:]], axis=1)


STRATEGIES = ("exhaustive", "greedy", "relaxed", "baseline")


def receding_horizon_step(
    p: AllocationProblem,
    strategy: str,
    warm_start: Schedule | None = None,
    *,
    baseline_phase: int = 0,
    pg_tol: float = PG_TOL,
    pg_max_iter: int = PG_MAX_ITER,
) -> tuple[np.ndarray, Schedule, float]:
    """One closed-loop planning step: solve, keep the better of plan and
    warm start, return (slot-0 grants, full plan, cost).

    `strategy` is one of "exhaustive", "greedy", "relaxed" (relax then
    round) or "baseline" (ignores covariances entirely).
    """
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown strategy {strategy!r}; pick one of {STRATEGIES}")
    if strategy == "baseline":
        sched = baseline_round_robin(p.n_agents, p.capacity, p.horizon, baseline_phase)
        return sched[:, 0].copy(), sched, allocation_cost(p, sched)
    if strategy == "exhaustive":
        sched, cost = solve_exhaustive(p)
    elif strategy == "greedy":
        sched, cost = solve_greedy_voi(p)
    else:
        init = warm_start if warm_start is not None else solve_greedy_voi(p)[0]
        rel, _ = solve_relaxed(p, init, tol=pg_tol, max_iter=pg_max_iter, strict=False)
        sched = round_schedule(rel, p.capacity)
        cost = _forward_cost(p, sched)
    if warm_start is not None:
        warm_cost = _forward_cost(p, np.clip(np.asarray(warm_start, dtype=float), 0.0, 1.0))
        if warm_cost < cost:
            sched, cost = np.asarray(warm_start, dtype=float), warm_cost
    return sched[:, 0].copy(), sched, cost
