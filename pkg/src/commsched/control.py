"""Discrete-time controller synthesis and the cost of estimation error.

Provides the control-design half of the pipeline: a discrete Lyapunov
solver, a DARE solver (structured fixed-point iteration, no external
solver dependency), the inverse-LQR construction that turns any
stabilizing gain into LQR weights, and the matrix that prices the
expected increase of the closed-loop Lyapunov function per unit of
estimation-error covariance.

Conventions: x+ = A x + B u, stage cost [x;u]' [[Q, S'],[S, R]] [x;u],
feedback u = -K x, K = (R + B'PB)^-1 (S + B'PA).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NonConvergent, NotStabilizing

# Module-level default tolerances; every solver takes them as overridable
# keyword arguments.
DARE_STEP_TOL = 1e-12
DARE_MAX_ITER = 100_000
LYAP_RESIDUAL_TOL = 1e-10
LYAP_MAX_DOUBLINGS = 200
EIG_TOL = 1e-10


def symmetrize(M: np.ndarray) -> np.ndarray:
    """Return (M + M') / 2; used after every covariance-like update."""
    return 0.5 * (M + np.swapaxes(M, -1, -2))


def spectral_radius(A: np.ndarray) -> float:
    """Largest absolute eigenvalue of a square matrix.

    Backed by the LAPACK QR eigensolver; raises NonConvergent if the
    eigenvalue iteration fails.
    """
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"spectral_radius needs a square matrix, got {A.shape}")
    if A.shape[0] == 0:
        return 0.0
    try:
        return float(np.max(np.abs(np.linalg.eigvals(A))))
    except np.linalg.LinAlgError as e:
        raise NonConvergent(f"eigenvalue computation failed: {e}") from e


def _as_matrix(M, name: str) -> np.ndarray:
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.ndim != 2:
        raise ValueError(f"{name} must be a 2-d array, got shape {M.shape}")
    return M


@dataclass(frozen=True)
class LinearSystem:
    """Plant matrices x+ = A x + B u, y = C x."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "A", _as_matrix(self.A, "A"))
        object.__setattr__(self, "B", _as_matrix(self.B, "B"))
        object.__setattr__(self, "C", _as_matrix(self.C, "C"))
        n = self.A.shape[0]
        if self.A.shape != (n, n):
            raise ValueError(f"A must be square, got {self.A.shape}")
        if self.B.shape[0] != n:
            raise ValueError(f"B must have {n} rows, got {self.B.shape}")
        if self.C.shape[1] != n:
            raise ValueError(f"C must have {n} columns, got {self.C.shape}")

    @property
    def nx(self) -> int:
        return self.A.shape[0]

    @property
    def nu(self) -> int:
        return self.B.shape[1]

    @property
    def ny(self) -> int:
        return self.C.shape[0]


@dataclass(frozen=True)
class CostWeights:
    """Quadratic stage-cost weights (Q, R, S) with cross term S.

    Q must be symmetric, R symmetric positive definite. The composite
    [[Q, S'],[S, R]] should be PSD for the stage cost to be a cost.
    """

    Q: np.ndarray
    R: np.ndarray
    S: np.ndarray | None = None

    def __post_init__(self):
        Q = _as_matrix(self.Q, "Q")
        R = _as_matrix(self.R, "R")
        S = np.zeros((R.shape[0], Q.shape[0])) if self.S is None else _as_matrix(self.S, "S")
        if not np.allclose(Q, Q.T, atol=1e-10):
            raise ValueError("Q must be symmetric")
        if not np.allclose(R, R.T, atol=1e-10):
            raise ValueError("R must be symmetric")
        if np.min(np.linalg.eigvalsh(R)) <= EIG_TOL:
            raise ValueError("R must be positive definite")
        if S.shape != (R.shape[0], Q.shape[0]):
            raise ValueError(f"S must be {R.shape[0]}x{Q.shape[0]}, got {S.shape}")
        object.__setattr__(self, "Q", symmetrize(Q))
        object.__setattr__(self, "R", symmetrize(R))
        object.__setattr__(self, "S", S)


@dataclass(frozen=True)
class ControllerDesign:
    """A synthesized feedback law and its certification matrices.

    K is the feedback gain, P the cost-to-go / Lyapunov matrix, and
    error_price = K'(R + B'PB)K weights the expected per-step increase
    of x'Px caused by estimation-error covariance E via tr(error_price @ E).
    """

    K: np.ndarray
    P: np.ndarray
    error_price: np.ndarray
    weights: CostWeights = field(repr=False)


def stage_cost(x: np.ndarray, u: np.ndarray, w: CostWeights) -> float:
    """Evaluate [x;u]' [[Q, S'],[S, R]] [x;u]."""
    x = np.asarray(x, dtype=float).reshape(-1)
    u = np.asarray(u, dtype=float).reshape(-1)
    return float(x @ w.Q @ x + 2.0 * (u @ w.S @ x) + u @ w.R @ u)


def solve_discrete_lyapunov(
    A_K: np.ndarray,
    Q: np.ndarray,
    *,
    residual_tol: float = LYAP_RESIDUAL_TOL,
    max_doublings: int = LYAP_MAX_DOUBLINGS,
) -> np.ndarray:
    """Solve A_K' P A_K - P + Q = 0 for stable A_K.

    Uses the squaring (Smith) fixed point P_{j+1} = P_j + M_j' P_j M_j,
    M_{j+1} = M_j^2 starting from P_0 = Q, which sums the series
    sum_k (A_K')^k Q A_K^k with quadratic convergence.

    Raises NonConvergent when the iterates fail to settle within the
    doubling budget (unstable A_K or severe ill-conditioning).
    """
    A_K = _as_matrix(A_K, "A_K")
    Q = symmetrize(_as_matrix(Q, "Q"))
    if A_K.shape != Q.shape:
        raise ValueError(f"A_K {A_K.shape} and Q {Q.shape} must match")
    P = Q.copy()
    M = A_K.copy()
    with np.errstate(over="ignore", invalid="ignore"):
        for _ in range(max_doublings):
            step = M.T @ P @ M
            P = symmetrize(P + step)
            if not np.all(np.isfinite(P)):
                raise NonConvergent("Lyapunov iteration diverged; is A_K stable?")
            if np.max(np.abs(step)) < 0.25 * residual_tol:
                residual = np.max(np.abs(A_K.T @ P @ A_K - P + Q))
                if residual <= residual_tol:
                    return P
            M = M @ M
    raise NonConvergent(
        f"Lyapunov fixed point did not reach residual {residual_tol} "
        f"in {max_doublings} doublings"
    )


def solve_dare(
    sys: LinearSystem,
    w: CostWeights,
    *,
    step_tol: float = DARE_STEP_TOL,
    max_iter: int = DARE_MAX_ITER,
) -> tuple[np.ndarray, np.ndarray]:
    """Solve the discrete algebraic Riccati equation with cross term.

    Iterates the Riccati recursion
        P+ = Q + A'PA - (S' + A'PB)(R + B'PB)^-1 (S + B'PA)
    from P_0 = Q until the infinity-norm step falls below step_tol,
    then returns (P, K) with K = (R + B'PB)^-1 (S + B'PA).

    Raises NonConvergent if the budget runs out or R + B'PB loses
    positive definiteness, and NotStabilizing if the converged gain
    leaves the closed loop with spectral radius >= 1.
    """
    A, B = sys.A, sys.B
    Q, R, S = w.Q, w.R, w.S
    if Q.shape != A.shape:
        raise ValueError(f"Q {Q.shape} incompatible with A {A.shape}")
    if R.shape[0] != B.shape[1]:
        raise ValueError(f"R {R.shape} incompatible with B {B.shape}")
    P = Q.copy()
    for _ in range(max_iter):
        BtP = B.T @ P
        G = R + BtP @ B
        try:
            cf = np.linalg.cholesky(symmetrize(G))
        except np.linalg.LinAlgError as e:
            raise NonConvergent("R + B'PB lost positive definiteness") from e
        K = _chol_solve(cf, S + BtP @ A)
        P_next = symmetrize(Q + A.T @ P @ A - (S.T + A.T @ P @ B) @ K)
        step = np.max(np.abs(P_next - P))
        P = P_next
        if step < step_tol:
            break
    else:
        raise NonConvergent(
            f"Riccati recursion did not settle below {step_tol} in {max_iter} iterations"
        )
    BtP = B.T @ P
    G = symmetrize(R + BtP @ B)
    K = _chol_solve(np.linalg.cholesky(G), S + BtP @ A)
    if spectral_radius(A - B @ K) >= 1.0:
        raise NotStabilizing("converged Riccati solution does not stabilize the plant")
    return P, K


def _chol_solve(cf: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Solve (cf cf') X = rhs given a lower-triangular Cholesky factor."""
    y = np.linalg.solve(cf, rhs)
    return np.linalg.solve(cf.T, y)


def dare_residuals(
    sys: LinearSystem, w: CostWeights, P: np.ndarray, K: np.ndarray
) -> tuple[float, float]:
    """Infinity-norm residuals of both Riccati equations at (P, K)."""
    A, B = sys.A, sys.B
    r1 = np.max(np.abs(w.Q - P + A.T @ P @ A - (w.S.T + A.T @ P @ B) @ K))
    r2 = np.max(np.abs((w.R + B.T @ P @ B) @ K - (w.S + B.T @ P @ A)))
    return float(r1), float(r2)


def lqr_from_gain(sys: LinearSystem, K: np.ndarray) -> CostWeights:
    """Weights whose LQR reproduces a given stabilizing gain K.

    Returns R = I, S = K, Q = K'K; with these the Riccati equation is
    solved by P = 0 and recovers K exactly.
    """
    K = _as_matrix(K, "K")
    if K.shape != (sys.nu, sys.nx):
        raise ValueError(f"K must be {sys.nu}x{sys.nx}, got {K.shape}")
    if spectral_radius(sys.A - sys.B @ K) >= 1.0:
        raise NotStabilizing("gain K does not stabilize A - B K")
    return CostWeights(Q=symmetrize(K.T @ K), R=np.eye(sys.nu), S=K.copy())


def error_price_matrix(
    K: np.ndarray, R: np.ndarray, B: np.ndarray, P: np.ndarray
) -> np.ndarray:
    """K'(R + B'PB)K: per-step Lyapunov increase per unit error covariance.

    For (P, K) solving the Riccati equation this also equals
    Q - P + A'PA.
    """
    K = _as_matrix(K, "K")
    R = _as_matrix(R, "R")
    B = _as_matrix(B, "B")
    P = _as_matrix(P, "P")
    G = R + B.T @ P @ B
    if np.min(np.linalg.eigvalsh(symmetrize(G))) <= 0:
        raise ValueError("R + B'PB must be positive definite")
    return symmetrize(K.T @ G @ K)


def design_controller(sys: LinearSystem, w: CostWeights, **solver_kw) -> ControllerDesign:
    """Solve the LQR for (sys, w) and package gain, cost-to-go and price."""
    P, K = solve_dare(sys, w, **solver_kw)
    return ControllerDesign(
        K=K, P=P, error_price=error_price_matrix(K, w.R, sys.B, P), weights=w
    )
