"""Kalman filtering under scheduled, probabilistically lossy observation.

Two recursions live here. The realized filter consumes actual packet
outcomes (a grant that also survived the Bernoulli channel) and is what
closed-loop simulation runs. The expected-covariance step propagates the
planner's covariance: a grant delta in [0,1] reaching its target with
probability sigma shrinks the predicted covariance by the factor
delta * sigma on the measurement-update term,

    E+ = (I - delta * sigma * L C) (A E A' + W),   L = Ebar C' (V + C Ebar C')^-1.

With delta in {0,1} and sigma = 1 this is the plain intermittent Kalman
covariance update; fractional delta is the relaxed planning dynamics.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .control import LinearSystem, symmetrize
from .errors import SingularInnovation

# Planning covariance state: a symmetric PSD n x n array.
CovState = np.ndarray

SYM_TOL = 1e-12
EIG_FLOOR = -1e-12
V_MIN_EIG = 1e-12


def _check_cov(M: np.ndarray, name: str) -> np.ndarray:
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if np.max(np.abs(M - M.T)) > SYM_TOL:
        raise ValueError(f"{name} must be symmetric within {SYM_TOL}")
    if np.min(np.linalg.eigvalsh(symmetrize(M))) < EIG_FLOOR:
        raise ValueError(f"{name} must be positive semidefinite")
    return symmetrize(M)


@dataclass(frozen=True)
class NoiseModel:
    """Process noise W, measurement noise V and initial state covariance X0.

    V is nudged to a minimum eigenvalue of 1e-12 on ingestion so the
    innovation covariance stays invertible along any trajectory.
    """

    W: np.ndarray
    V: np.ndarray
    X0: np.ndarray

    def __post_init__(self):
        W = _check_cov(self.W, "W")
        V = _check_cov(self.V, "V")
        X0 = _check_cov(self.X0, "X0")
        vmin = float(np.min(np.linalg.eigvalsh(V)))
        if vmin < V_MIN_EIG:
            V = V + (V_MIN_EIG - vmin) * np.eye(V.shape[0])
        object.__setattr__(self, "W", W)
        object.__setattr__(self, "V", V)
        object.__setattr__(self, "X0", X0)


@dataclass
class FilterState:
    """State estimate and its error covariance (re-symmetrized on update)."""

    xhat: np.ndarray
    E: np.ndarray


def predict(
    fs: FilterState, sys: LinearSystem, u: np.ndarray, W: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Time update: xbar = A xhat + B u, Ebar = A E A' + W."""
    u = np.asarray(u, dtype=float).reshape(-1)
    xbar = sys.A @ fs.xhat + sys.B @ u
    Ebar = symmetrize(sys.A @ fs.E @ sys.A.T + W)
    return xbar, Ebar


def _gain_and_update(Ebar, weight, C, V):
    """Shared measurement-update kernel: returns (Z, E_next) with
    Z = Minn^-1 C Ebar (so the Kalman gain is Z') and
    E_next = symmetrize(Ebar - weight * Ebar C' Minn^-1 C Ebar).

    Both the realized filter and the expected-covariance planner go
    through this exact code path, so their covariance sequences agree
    bit for bit when weight matches.
    """
    Ct = np.swapaxes(C, -1, -2)
    CE = C @ Ebar
    Minn = symmetrize(V + CE @ Ct)
    try:
        cf = np.linalg.cholesky(Minn)
    except np.linalg.LinAlgError as e:
        raise SingularInnovation("V + C Ebar C' is not positive definite") from e
    Z = np.linalg.solve(np.swapaxes(cf, -1, -2), np.linalg.solve(cf, CE))
    LCE = np.swapaxes(CE, -1, -2) @ Z
    w = np.asarray(weight, dtype=float)
    if w.ndim:
        w = w.reshape(w.shape + (1, 1))
    return Z, symmetrize(Ebar - w * LCE)


def kalman_gain(Ebar: np.ndarray, C: np.ndarray, V: np.ndarray) -> np.ndarray:
    """L = Ebar C' (V + C Ebar C')^-1 via a Cholesky solve.

    Raises SingularInnovation when V + C Ebar C' is not positive definite.
    """
    Z, _ = _gain_and_update(np.atleast_2d(np.asarray(Ebar, dtype=float)), 0.0, C, V)
    return np.swapaxes(Z, -1, -2)


def update_realized(
    xbar: np.ndarray,
    Ebar: np.ndarray,
    y: np.ndarray,
    received: int,
    C: np.ndarray,
    V: np.ndarray,
) -> FilterState:
    """Measurement update gated by the realized packet outcome.

    received must be 0 or 1 (the schedule bit AND the Bernoulli channel
    success); with 0 the prediction passes through untouched.
    """
    if received not in (0, 1):
        raise ValueError(f"received must be 0 or 1, got {received!r}")
    xbar = np.asarray(xbar, dtype=float).reshape(-1)
    Ebar = np.atleast_2d(np.asarray(Ebar, dtype=float))
    if not received:
        return FilterState(xhat=xbar.copy(), E=symmetrize(Ebar))
    Z, E = _gain_and_update(Ebar, 1.0, C, V)
    L = Z.T
    y = np.asarray(y, dtype=float).reshape(-1)
    xhat = xbar + L @ (y - C @ xbar)
    return FilterState(xhat=xhat, E=E)


def cov_step(
    E: np.ndarray,
    weight: float | np.ndarray,
    A: np.ndarray,
    C: np.ndarray,
    W: np.ndarray,
    V: np.ndarray,
) -> np.ndarray:
    """One expected-covariance step with measurement weight delta * sigma.

    Accepts stacked inputs (leading batch axes on every argument, weight
    broadcast accordingly).
    """
    At = np.swapaxes(A, -1, -2)
    Ebar = symmetrize(A @ E @ At + W)
    _, E_next = _gain_and_update(Ebar, weight, C, V)
    return E_next


def expected_cov_step(
    E: CovState,
    delta: float,
    sigma: float,
    sys: LinearSystem,
    noise: NoiseModel,
) -> CovState:
    """Planning covariance dynamics for one slot.

    delta is the schedule entry (binary, or fractional in relaxed mode),
    sigma the slot's success probability; they only enter through the
    product delta * sigma.
    """
    if not 0.0 <= sigma <= 1.0:
        raise ValueError(f"sigma must be in [0, 1], got {sigma}")
    if not 0.0 <= delta <= 1.0:
        raise ValueError(f"delta must be in [0, 1], got {delta}")
    E = np.atleast_2d(np.asarray(E, dtype=float))
    return cov_step(E, delta * sigma, sys.A, sys.C, noise.W, noise.V)
