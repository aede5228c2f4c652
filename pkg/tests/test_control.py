import numpy as np
import pytest
import scipy.linalg

from commsched.control import (
    CostWeights,
    LinearSystem,
    dare_residuals,
    design_controller,
    error_price_matrix,
    lqr_from_gain,
    solve_dare,
    solve_discrete_lyapunov,
    spectral_radius,
    stage_cost,
)
from commsched.errors import NonConvergent, NotStabilizing
from commsched.scenarios import plant

from conftest import rand_stabilizing_gain, rand_system, rand_weights

GOLDEN_P = (1 + np.sqrt(5)) / 2  # scalar dare with A=B=Q=R=1: P^2 - P - 1 = 0


def scalar_sys():
    return LinearSystem(A=[[1.0]], B=[[1.0]], C=[[1.0]])


class TestSpectralRadius:
    def test_zero(self):
        assert spectral_radius(np.zeros((3, 3))) == 0.0

    def test_triangular(self):
        assert spectral_radius(np.array([[1.0, 0.1], [0.0, 1.0]])) == pytest.approx(1.0, abs=1e-12)

    def test_scaled_identity(self):
        assert spectral_radius(0.5 * np.eye(4)) == pytest.approx(0.5, abs=1e-12)

    def test_rejects_nonsquare(self):
        with pytest.raises(ValueError):
            spectral_radius(np.zeros((2, 3)))


class TestStageCost:
    def test_zero(self):
        w = CostWeights(Q=[[1.0]], R=[[1.0]])
        assert stage_cost([0.0], [0.0], w) == 0.0

    def test_no_cross(self):
        w = CostWeights(Q=[[1.0]], R=[[1.0]])
        assert stage_cost([2.0], [3.0], w) == pytest.approx(13.0)

    def test_with_cross(self):
        w = CostWeights(Q=[[1.0]], R=[[1.0]], S=[[1.0]])
        assert stage_cost([1.0], [1.0], w) == pytest.approx(4.0)


class TestLyapunov:
    def test_zero_dynamics(self):
        P = solve_discrete_lyapunov(np.zeros((3, 3)), np.eye(3))
        assert np.allclose(P, np.eye(3), atol=1e-14)

    def test_scalar_geometric(self):
        P = solve_discrete_lyapunov([[0.5]], [[1.0]])
        assert P[0, 0] == pytest.approx(4.0 / 3.0, abs=1e-12)

    def test_example_plant_closed_loop(self):
        sys = plant()
        _, K = solve_dare(sys, CostWeights(Q=np.eye(2), R=[[0.01]]))
        A_K = sys.A - sys.B @ K
        P = solve_discrete_lyapunov(A_K, np.eye(2))
        residual = np.max(np.abs(A_K.T @ P @ A_K - P + np.eye(2)))
        assert residual <= 1e-10

    def test_symmetric_output(self, rng):
        for _ in range(20):
            n = int(rng.integers(1, 6))
            A = rng.normal(size=(n, n))
            A *= rng.uniform(0.2, 0.95) / max(spectral_radius(A), 1e-9)
            Q = rng.normal(size=(n, n))
            Q = Q @ Q.T + 0.1 * np.eye(n)
            P = solve_discrete_lyapunov(A, Q)
            assert np.max(np.abs(P - P.T)) <= 1e-12

    def test_matches_scipy(self, rng):
        for _ in range(10):
            n = int(rng.integers(2, 5))
            A = rng.normal(size=(n, n))
            A *= rng.uniform(0.2, 0.95) / max(spectral_radius(A), 1e-9)
            Q = rng.normal(size=(n, n))
            Q = Q @ Q.T + 0.1 * np.eye(n)
            P = solve_discrete_lyapunov(A, Q)
            P_ref = scipy.linalg.solve_discrete_lyapunov(A.T, Q)
            assert np.allclose(P, P_ref, atol=1e-8)

    def test_unstable_raises(self):
        with pytest.raises(NonConvergent):
            solve_discrete_lyapunov([[1.01]], [[1.0]])


class TestDare:
    def test_no_dynamics(self):
        sys = LinearSystem(A=[[0.0]], B=[[1.0]], C=[[1.0]])
        P, K = solve_dare(sys, CostWeights(Q=[[1.0]], R=[[1.0]]))
        assert P[0, 0] == pytest.approx(1.0, abs=1e-12)
        assert K[0, 0] == pytest.approx(0.0, abs=1e-12)

    def test_scalar_golden(self):
        P, K = solve_dare(scalar_sys(), CostWeights(Q=[[1.0]], R=[[1.0]]))
        assert P[0, 0] == pytest.approx(GOLDEN_P, abs=1e-10)
        assert K[0, 0] == pytest.approx(1.0 / GOLDEN_P, abs=1e-10)

    def test_example_plant(self):
        sys = plant()
        w = CostWeights(Q=np.eye(2), R=[[0.01]])
        P, K = solve_dare(sys, w)
        r1, r2 = dare_residuals(sys, w, P, K)
        assert max(r1, r2) <= 1e-9
        assert spectral_radius(sys.A - sys.B @ K) < 1.0

    def test_random_systems_residuals(self, rng):
        for _ in range(30):
            n = int(rng.integers(1, 7))
            m = int(rng.integers(1, 4))
            sys = rand_system(rng, n, m)
            w = rand_weights(rng, n, m, with_cross=bool(rng.integers(2)))
            P, K = solve_dare(sys, w)
            r1, r2 = dare_residuals(sys, w, P, K)
            assert max(r1, r2) <= 1e-9
            assert spectral_radius(sys.A - sys.B @ K) < 1.0

    def test_matches_scipy(self, rng):
        for _ in range(10):
            n = int(rng.integers(2, 5))
            sys = rand_system(rng, n, 2)
            w = rand_weights(rng, n, 2)
            P, _ = solve_dare(sys, w)
            P_ref = scipy.linalg.solve_discrete_are(sys.A, sys.B, w.Q, w.R)
            assert np.allclose(P, P_ref, atol=1e-7 * (1 + np.max(np.abs(P_ref))))

    def test_weight_scaling(self, rng):
        # scaling (Q, R, S) by a^2 keeps K and scales P by a^2
        sys = rand_system(rng, 3, 2)
        w = rand_weights(rng, 3, 2, with_cross=True)
        P1, K1 = solve_dare(sys, w)
        for a in (2.0, 10.0):
            wa = CostWeights(Q=a**2 * w.Q, R=a**2 * w.R, S=a**2 * w.S)
            Pa, Ka = solve_dare(sys, wa)
            assert np.max(np.abs(Ka - K1)) <= 1e-8 * (1 + np.max(np.abs(K1)))
            assert np.max(np.abs(Pa - a**2 * P1)) <= 1e-8 * (1 + np.max(np.abs(a**2 * P1)))


class TestInverseLqr:
    def test_scalar_golden(self):
        K = np.array([[1.0 / GOLDEN_P]])
        w = lqr_from_gain(scalar_sys(), K)
        assert w.Q[0, 0] == pytest.approx(0.3819660113, abs=1e-9)
        assert np.allclose(w.R, np.eye(1))
        assert np.allclose(w.S, K)
        P, K2 = solve_dare(scalar_sys(), w)
        assert abs(P[0, 0]) <= 1e-12
        assert K2[0, 0] == pytest.approx(K[0, 0], abs=1e-10)

    def test_zero_gain_stable_plant(self):
        sys = LinearSystem(A=[[0.5]], B=[[1.0]], C=[[1.0]])
        w = lqr_from_gain(sys, [[0.0]])
        assert np.allclose(w.Q, 0) and np.allclose(w.S, 0)
        P, K = solve_dare(sys, w)
        assert abs(P[0, 0]) <= 1e-12 and abs(K[0, 0]) <= 1e-12

    def test_round_trip_random(self, rng):
        for _ in range(25):
            n = int(rng.integers(1, 5))
            m = int(rng.integers(1, 3))
            sys = rand_system(rng, n, m)
            K = rand_stabilizing_gain(rng, sys)
            w = lqr_from_gain(sys, K)
            P, K2 = solve_dare(sys, w)
            assert np.max(np.abs(K2 - K)) <= 1e-8
            r1, r2 = dare_residuals(sys, w, np.zeros((n, n)), K)
            assert max(r1, r2) <= 1e-12

    def test_rejects_destabilizing_gain(self):
        with pytest.raises(NotStabilizing):
            lqr_from_gain(scalar_sys(), [[0.0]])  # A = 1 not stable under K = 0


class TestErrorPrice:
    def test_scalar_golden(self):
        g = error_price_matrix([[1.0 / GOLDEN_P]], [[1.0]], [[1.0]], [[GOLDEN_P]])
        assert g[0, 0] == pytest.approx(1.0, abs=1e-9)

    def test_zero_gain(self):
        g = error_price_matrix(np.zeros((1, 2)), np.eye(1), np.ones((2, 1)), np.eye(2))
        assert np.allclose(g, 0)

    def test_riccati_identity(self, rng):
        # price = Q - P + A'PA for designs produced by the Riccati solve
        for _ in range(20):
            n = int(rng.integers(1, 5))
            m = int(rng.integers(1, 3))
            sys = rand_system(rng, n, m)
            w = rand_weights(rng, n, m, with_cross=bool(rng.integers(2)))
            d = design_controller(sys, w)
            ident = w.Q - d.P + sys.A.T @ d.P @ sys.A
            assert np.max(np.abs(d.error_price - ident)) <= 1e-8

    def test_example_plant_identity(self):
        sys = plant()
        w = CostWeights(Q=np.eye(2), R=[[0.01]])
        d = design_controller(sys, w)
        ident = w.Q - d.P + sys.A.T @ d.P @ sys.A
        assert np.max(np.abs(d.error_price - ident)) <= 1e-8
        assert np.min(np.linalg.eigvalsh(d.error_price)) >= -1e-10


class TestValidation:
    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            LinearSystem(A=np.eye(2), B=np.ones((3, 1)), C=np.eye(2))

    def test_r_must_be_pd(self):
        with pytest.raises(ValueError):
            CostWeights(Q=[[1.0]], R=[[0.0]])
