"""Shared random-instance generators (all seeded for reproducibility)."""

import numpy as np
import pytest

from commsched.control import CostWeights, LinearSystem, solve_dare, spectral_radius
from commsched.scheduler import AllocationProblem, build_problem


def rand_psd(rng: np.random.Generator, n: int, floor: float = 0.0) -> np.ndarray:
    G = rng.normal(size=(n, n))
    return G @ G.T + floor * np.eye(n)


def rand_system(rng: np.random.Generator, n: int, m: int, p: int | None = None) -> LinearSystem:
    """Random system with spectral radius in [0.3, 1.2]; generic B keeps
    (A, B) stabilizable."""
    A = rng.normal(size=(n, n))
    rho = spectral_radius(A)
    if rho > 1e-9:
        A *= rng.uniform(0.3, 1.2) / rho
    B = rng.normal(size=(n, m))
    C = rng.normal(size=(p or n, n))
    return LinearSystem(A=A, B=B, C=C)


def rand_weights(
    rng: np.random.Generator, n: int, m: int, with_cross: bool = False
) -> CostWeights:
    """Random stage cost with PSD composite [[Q, S'],[S, R]] and PD R."""
    if with_cross:
        comp = rand_psd(rng, n + m, floor=1e-3)
        return CostWeights(Q=comp[:n, :n], R=comp[n:, n:], S=comp[n:, :n])
    return CostWeights(Q=rand_psd(rng, n, floor=1e-3), R=rand_psd(rng, m, floor=0.1))


def rand_stabilizing_gain(rng: np.random.Generator, sys: LinearSystem) -> np.ndarray:
    """A stabilizing K, obtained as the LQR gain of random weights."""
    _, K = solve_dare(sys, rand_weights(rng, sys.nx, sys.nu))
    return K


def rand_allocation_problem(
    rng: np.random.Generator,
    M: int | None = None,
    slots: int | None = None,
    capacity: int | None = None,
    n: int = 2,
    p: int = 2,
) -> AllocationProblem:
    M = M or int(rng.integers(1, 4))
    slots = slots or int(rng.integers(2, 6))
    capacity = capacity or int(rng.integers(1, M + 1))
    agents, E0 = [], []
    for _ in range(M):
        A = rng.normal(size=(n, n))
        rho = spectral_radius(A)
        if rho > 1e-9:
            A *= rng.uniform(0.4, 1.1) / rho
        C = rng.normal(size=(p, n))
        W = rand_psd(rng, n, floor=0.01)
        V = rand_psd(rng, p, floor=0.01)
        agents.append((rand_psd(rng, n, floor=0.05), A, C, W, V))
        E0.append(rand_psd(rng, n, floor=0.01))
    sigma = rng.uniform(0.2, 1.0, size=(M, slots))
    return build_problem(agents, E0, sigma, capacity)


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
