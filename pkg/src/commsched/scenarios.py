"""Canned experiment families.

All families share the double-integrator-like plant

    A = [[1, 0.1], [0, 1]],  B = [[0.005], [0.1]],  C = I

controlled by an LQR with Q = I, R = 0.01 unless rescaled. Defaults not
fixed by the problem statement (C, X0, fleet heterogeneity spread, the
lossy severity floors) are implementation choices, documented here.
"""

from __future__ import annotations

import numpy as np

from .control import CostWeights, LinearSystem, design_controller
from .estimation import NoiseModel
from .simulator import ConstantSigma, DistanceSigma, LinearAgent, Scenario

# Worst-case success probabilities of the three lossy severity levels
# (mild / moderate / severe).
LOSSY_FLOORS = {"mild": 0.9, "moderate": 0.5, "severe": 0.1}


def plant() -> LinearSystem:
    return LinearSystem(
        A=np.array([[1.0, 0.1], [0.0, 1.0]]),
        B=np.array([[0.005], [0.1]]),
        C=np.eye(2),
    )


def make_agent(
    weight_scale: float = 1.0,
    w_var: float = 1e-2,
    v_var: float = 1e-3,
    x0_var: float = 1.0,
) -> LinearAgent:
    """Standard agent; weight_scale a rescales (Q, R) to (a^2 Q, a^2 R),
    which keeps the gain and multiplies the Lyapunov matrix by a^2."""
    sys = plant()
    a2 = weight_scale**2
    weights = CostWeights(Q=a2 * np.eye(2), R=a2 * np.array([[0.01]]))
    noise = NoiseModel(W=w_var * np.eye(2), V=v_var * np.eye(2), X0=x0_var * np.eye(2))
    return LinearAgent(sys=sys, noise=noise, design=design_controller(sys, weights))


def identical4(
    N: int = 4,
    T: int = 60,
    runs: int = 1,
    seed: int = 1,
    gamma: int = 1,
    strategy: str = "exhaustive",
) -> Scenario:
    """Four identical agents on one slot per step; perfect channel."""
    return Scenario(
        name="identical4",
        agents=tuple(make_agent() for _ in range(4)),
        capacity=gamma,
        horizon=N,
        steps=T,
        runs=runs,
        seed=seed,
        sigma_model=ConstantSigma(1.0),
        strategy=strategy,
    )


def fleet(
    M: int,
    N: int = 4,
    T: int = 50,
    runs: int = 1,
    seed: int = 1,
    gamma: int = 1,
    strategy: str = "greedy",
) -> Scenario:
    """Heterogeneous fleet: process-noise levels spread over [0.5, 2] x 1e-2."""
    scales = np.linspace(0.5, 2.0, M) if M > 1 else np.array([1.0])
    agents = tuple(make_agent(w_var=1e-2 * s) for s in scales)
    return Scenario(
        name=f"fleet{M}",
        agents=agents,
        capacity=gamma,
        horizon=N,
        steps=T,
        runs=runs,
        seed=seed,
        sigma_model=ConstantSigma(1.0),
        strategy=strategy,
    )


def tuning2(
    a: float = 1.0,
    N: int = 4,
    T: int = 80,
    runs: int = 1,
    seed: int = 1,
    gamma: int = 1,
    strategy: str = "exhaustive",
) -> Scenario:
    """Two identical plants, the second with (Q, R) scaled by a^2: same
    gain, but the scheduler prices its estimation error a^2 times higher."""
    return Scenario(
        name="tuning2",
        agents=(make_agent(), make_agent(weight_scale=a)),
        capacity=gamma,
        horizon=N,
        steps=T,
        runs=runs,
        seed=seed,
        sigma_model=ConstantSigma(1.0),
        strategy=strategy,
    )


def lossy2(
    floor: float = 0.5,
    N: int = 5,
    T: int = 100,
    runs: int = 100,
    seed: int = 1,
    gamma: int = 1,
    strategy: str = "relaxed",
    loss_aware: bool = True,
) -> Scenario:
    """Two agents moving in anti-phase through a lossy channel.

    Success probability p = floor + (1 - floor) exp(-d^2) with
    d = cos(0.1 k + (i+1) pi/2); the planner either uses the true p
    ("aware") or assumes a perfect channel ("blind")."""
    mode = "aware" if loss_aware else "blind"
    return Scenario(
        name=f"lossy2-f{floor:g}-{mode}",
        agents=(make_agent(), make_agent()),
        capacity=gamma,
        horizon=N,
        steps=T,
        runs=runs,
        seed=seed,
        sigma_model=DistanceSigma(floor=floor),
        strategy=strategy,
        loss_aware=loss_aware,
    )


def scenario_library() -> dict:
    """Name -> factory for every scenario family."""
    return {
        "identical4": identical4,
        "fleet": fleet,
        "tuning2": tuning2,
        "lossy2": lossy2,
    }
