"""Solver tests against an independent batch least-squares oracle."""
import numpy as np
import pytest

from cilqr_planner.ilqr import (FeedbackLaw, NotPositiveDefinite,
                                SolverSettings, backward_pass, forward_pass,
                                rollout, solve)


class QuadraticCost:
    """Time-invariant quadratic cost 0.5 x'Qx + 0.5 u'Ru (terminal Qf)."""

    def __init__(self, Q, R, Qf):
        self.Q, self.R, self.Qf = Q, R, Qf

    def trajectory_cost(self, X, U):
        c = 0.5 * np.einsum("ti,ij,tj->", X[:-1], self.Q, X[:-1])
        c += 0.5 * np.einsum("ti,ij,tj->", U, self.R, U)
        c += 0.5 * X[-1] @ self.Qf @ X[-1]
        return c

    def quadratize_all(self, X, U):
        n = U.shape[0]
        H = np.zeros((n + 1, 6, 6))
        g = np.zeros((n + 1, 6))
        for t in range(n):
            H[t][:4, :4] = self.Q
            H[t][4:, 4:] = self.R
            g[t][:4] = self.Q @ X[t]
            g[t][4:] = self.R @ U[t]
        H[n][:4, :4] = self.Qf
        g[n][:4] = self.Qf @ X[n]
        return H, g, None


def lq_oracle(A, B, Q, R, Qf, x0, n):
    """Solve the finite-horizon LQ problem by batch normal equations.

    Stack U = (u_0..u_{n-1}); X = Sx x0 + Su U with block-lower-triangular Su;
    minimize the quadratic directly. Completely independent of the Riccati
    recursion under test.
    """
    nx, nu = B.shape
    Sx = np.zeros(((n + 1) * nx, nx))
    Su = np.zeros(((n + 1) * nx, n * nu))
    Ap = np.eye(nx)
    Sx[0:nx] = Ap
    for t in range(1, n + 1):
        Ap = A @ Ap
        Sx[t * nx:(t + 1) * nx] = Ap
        for j in range(t):
            blk = np.linalg.matrix_power(A, t - 1 - j) @ B
            Su[t * nx:(t + 1) * nx, j * nu:(j + 1) * nu] = blk
    Qbar = np.zeros(((n + 1) * nx, (n + 1) * nx))
    for t in range(n):
        Qbar[t * nx:(t + 1) * nx, t * nx:(t + 1) * nx] = Q
    Qbar[n * nx:, n * nx:] = Qf
    Rbar = np.kron(np.eye(n), R)
    Hm = Su.T @ Qbar @ Su + Rbar
    rhs = -Su.T @ Qbar @ Sx @ x0
    U = np.linalg.solve(Hm, rhs)
    return U.reshape(n, nu)


def linear_system(nx=4, nu=2, seed=0):
    rng = np.random.default_rng(seed)
    A = np.eye(nx) + 0.1 * rng.standard_normal((nx, nx))
    B = 0.1 * rng.standard_normal((nx, nu))
    return A, B


def make_linear_fns(A, B):
    def step_fn(x, u):
        return A @ x + B @ u

    def lin_fn(x, u):
        return np.hstack([A, B])

    return step_fn, lin_fn


class TestBackwardPass:
    def test_matches_batch_lq_oracle(self):
        A, B = linear_system(seed=3)
        n = 12
        Q = np.diag([1.0, 2.0, 0.5, 1.5])
        R = np.diag([0.3, 0.7])
        Qf = 5.0 * np.eye(4)
        x0 = np.array([1.0, -2.0, 0.5, 0.3])
        cost = QuadraticCost(Q, R, Qf)
        step_fn, lin_fn = make_linear_fns(A, B)
        res = solve(x0, np.zeros((n, 2)), cost, step_fn, lin_fn,
                    SolverSettings(max_iters=50, cost_tolerance=1e-12))
        U_star = lq_oracle(A, B, Q, R, Qf, x0, n)
        assert np.abs(res.plan.controls - U_star).max() <= 1e-8

    def test_one_step_hand_solution(self):
        """Scalar-like 1-step problem solvable by hand.

        min 0.5 u'Ru + 0.5 (x0 + Bu)'Qf(x0 + Bu)  ->
        u* = -(R + B'QfB)^-1 B'Qf x0.
        """
        A = np.eye(4)
        B = np.zeros((4, 2))
        B[0, 0] = 1.0
        B[1, 1] = 1.0
        Q = np.zeros((4, 4))
        R = np.eye(2)
        Qf = np.diag([4.0, 9.0, 0.0, 0.0])
        x0 = np.array([2.0, -1.0, 0.0, 0.0])
        cost = QuadraticCost(Q, R, Qf)
        step_fn, lin_fn = make_linear_fns(A, B)
        res = solve(x0, np.zeros((1, 2)), cost, step_fn, lin_fn,
                    SolverSettings(max_iters=10, cost_tolerance=1e-12))
        u_star = -np.linalg.solve(R + B.T @ Qf @ B, B.T @ Qf @ x0)
        assert np.allclose(res.plan.controls[0], u_star, atol=1e-10)

    def test_zero_state_cost_gives_zero_gains(self):
        A, B = linear_system(seed=1)
        n = 6
        H = np.zeros((n + 1, 6, 6))
        g = np.zeros((n + 1, 6))
        for t in range(n):
            H[t][4:, 4:] = np.eye(2)
        F = np.tile(np.hstack([A, B]), (n, 1, 1))
        law, dv1, dv2 = backward_pass(H, g, F, 1e-6)
        assert np.abs(law.k).max() == 0.0
        assert np.abs(law.K).max() == 0.0
        assert dv1 == 0.0 and dv2 == 0.0

    def test_regularization_shrinks_step(self):
        """Larger reg must shrink the feedforward step toward zero."""
        A, B = linear_system(seed=5)
        n = 8
        Q = np.eye(4)
        R = 0.1 * np.eye(2)
        cost = QuadraticCost(Q, R, Q)
        rng = np.random.default_rng(2)
        U = rng.standard_normal((n, 2))
        X = rollout(np.array([1.0, 1.0, -1.0, 0.5]), U,
                    lambda x, u: A @ x + B @ u)
        H, g, _ = cost.quadratize_all(X, U)
        F = np.tile(np.hstack([A, B]), (n, 1, 1))
        norms = []
        for reg in (1e-2, 1.0, 1e2):
            law, _, _ = backward_pass(H, g, F, reg)
            norms.append(np.linalg.norm(law.k))
        assert norms[0] > norms[1] > norms[2]

    def test_indefinite_raises(self):
        n = 3
        H = np.zeros((n + 1, 6, 6))
        for t in range(n):
            H[t][4:, 4:] = -np.eye(2)
        g = np.zeros((n + 1, 6))
        F = np.tile(np.hstack([np.eye(4), np.zeros((4, 2))]), (n, 1, 1))
        with pytest.raises(NotPositiveDefinite):
            backward_pass(H, g, F, 1e-6)


class TestForwardPass:
    def test_alpha_zero_with_zero_feedback_is_identity(self):
        A, B = linear_system(seed=9)
        n = 7
        rng = np.random.default_rng(4)
        U = rng.standard_normal((n, 2))
        step_fn, _ = make_linear_fns(A, B)
        X = rollout(np.array([0.3, 0.1, 0.0, -0.2]), U, step_fn)
        cost = QuadraticCost(np.eye(4), np.eye(2), np.eye(4))
        law = FeedbackLaw(K=np.zeros((n, 2, 4)),
                          k=rng.standard_normal((n, 2)))
        Xc, Uc, _ = forward_pass(X, U, law, 0.0, cost, step_fn)
        assert np.array_equal(Uc, U)
        assert np.allclose(Xc, X)

    def test_rollout_consistency(self):
        A, B = linear_system(seed=6)
        U = np.ones((5, 2))
        step_fn, _ = make_linear_fns(A, B)
        X = rollout(np.zeros(4), U, step_fn)
        for t in range(5):
            assert np.allclose(X[t + 1], A @ X[t] + B @ U[t])


class TestSolve:
    def test_trace_monotone_nonincreasing(self):
        A, B = linear_system(seed=8)
        cost = QuadraticCost(np.eye(4), 0.5 * np.eye(2), 2 * np.eye(4))
        step_fn, lin_fn = make_linear_fns(A, B)
        res = solve(np.array([3.0, -1.0, 2.0, 0.0]), np.zeros((10, 2)),
                    cost, step_fn, lin_fn)
        assert all(b <= a for a, b in zip(res.trace, res.trace[1:]))
        assert res.converged

    def test_starts_at_optimum_converges_immediately(self):
        A, B = linear_system(seed=3)
        n = 12
        Q = np.diag([1.0, 2.0, 0.5, 1.5])
        R = np.diag([0.3, 0.7])
        Qf = 5.0 * np.eye(4)
        x0 = np.array([1.0, -2.0, 0.5, 0.3])
        U_star = lq_oracle(A, B, Q, R, Qf, x0, n)
        cost = QuadraticCost(Q, R, Qf)
        step_fn, lin_fn = make_linear_fns(A, B)
        res = solve(x0, U_star, cost, step_fn, lin_fn)
        assert res.converged
        assert res.iterations <= 2
        assert np.abs(res.plan.controls - U_star).max() <= 1e-8

    def test_settings_validation(self):
        with pytest.raises(ValueError):
            SolverSettings(max_iters=0)
        with pytest.raises(ValueError):
            SolverSettings(reg_growth=1.0)
