"""Iterative LQR solver: backward Riccati pass, line-searched forward rollout.

The solver works on raw arrays: states (N+1, 4), controls (N, 2). Dynamics and
cost are injected as callables so tests can substitute fixed linear systems.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dynamics import ControlLimits, VehicleGeometry, linearize_array, step_array


class NotPositiveDefinite(Exception):
    """Control-block Hessian not PD even after regularization; grow reg and retry."""


@dataclass(frozen=True)
class SolverSettings:
    max_iters: int = 100
    cost_tolerance: float = 1e-4          # relative cost improvement
    reg_init: float = 1e-6
    reg_growth: float = 10.0
    reg_max: float = 1e10
    line_search_alphas: tuple = tuple(0.5 ** i for i in range(11))

    def __post_init__(self):
        if self.max_iters < 1 or self.cost_tolerance <= 0:
            raise ValueError("bad solver settings")
        if self.reg_init <= 0 or self.reg_growth <= 1 or self.reg_max <= 0:
            raise ValueError("bad regularization settings")


@dataclass
class FeedbackLaw:
    """Per-step affine policy: du_t = k_t + K_t (x_t - xhat_t)."""

    K: np.ndarray   # (N, 2, 4)
    k: np.ndarray   # (N, 2)

    @classmethod
    def zero(cls, n: int) -> "FeedbackLaw":
        return cls(K=np.zeros((n, 2, 4)), k=np.zeros((n, 2)))


@dataclass
class TrajectoryPlan:
    """Dynamically feasible state/control sequences with their evaluated cost."""

    states: np.ndarray     # (N+1, 4)
    controls: np.ndarray   # (N, 2)
    dt: float
    total_cost: float


@dataclass
class SolveResult:
    plan: TrajectoryPlan
    law: FeedbackLaw
    trace: list            # cost per accepted iteration (incl. initial)
    converged: bool
    iterations: int


def rollout(x0: np.ndarray, U: np.ndarray, step_fn) -> np.ndarray:
    """States produced by applying U through the transition, starting at x0."""
    X = np.empty((U.shape[0] + 1, x0.shape[0]))
    X[0] = x0
    for t in range(U.shape[0]):
        X[t + 1] = step_fn(X[t], U[t])
    return X


def backward_pass(H, g, F, reg: float):
    """LQR backward pass over quadratized cost (H, g) and linearized dynamics F.

    H: (N+1, 6, 6); g: (N+1, 6); F: (N, 4, 6). Returns (law, dv1, dv2) where
    dv1/dv2 are the expected cost-decrease coefficients of the line search.
    Raises NotPositiveDefinite when a regularized control Hessian fails
    Cholesky.
    """
    n = F.shape[0]
    law = FeedbackLaw.zero(n)
    Vx = g[n][:4].copy()
    Vxx = H[n][:4, :4].copy()
    dv1 = 0.0
    dv2 = 0.0
    eye2 = np.eye(2)
    for t in range(n - 1, -1, -1):
        A = F[t][:, :4]
        B = F[t][:, 4:]
        Qx = g[t][:4] + A.T @ Vx
        Qu = g[t][4:] + B.T @ Vx
        VxxA = Vxx @ A
        Qxx = H[t][:4, :4] + A.T @ VxxA
        Qux = H[t][4:, :4] + B.T @ VxxA
        Quu = H[t][4:, 4:] + B.T @ Vxx @ B
        Quu_reg = Quu + reg * eye2
        try:
            cf = np.linalg.cholesky(Quu_reg)
        except np.linalg.LinAlgError:
            raise NotPositiveDefinite(f"Quu not PD at step {t} (reg={reg:g})")
        rhs = np.column_stack([Qu, Qux])
        sol = np.linalg.solve(cf.T, np.linalg.solve(cf, rhs))
        k = -sol[:, 0]
        K = -sol[:, 1:]
        law.k[t] = k
        law.K[t] = K
        dv1 += k @ Qu
        dv2 += 0.5 * k @ Quu @ k
        Vx = Qx + K.T @ Quu @ k + K.T @ Qu + Qux.T @ k
        Vxx = Qxx + K.T @ Quu @ K + K.T @ Qux + Qux.T @ K
        Vxx = 0.5 * (Vxx + Vxx.T)
    return law, dv1, dv2


def forward_pass(X_nom, U_nom, law: FeedbackLaw, alpha: float, cost_model,
                 step_fn, limits: ControlLimits | None = None):
    """Roll out u = u_nom + alpha*k + K (x - x_nom) through the true dynamics.

    Controls are clamped to the actuator box before integration when limits
    are given. Returns (X, U, cost).
    """
    n = U_nom.shape[0]
    X = np.empty_like(X_nom)
    U = np.empty_like(U_nom)
    X[0] = X_nom[0]
    for t in range(n):
        u = U_nom[t] + alpha * law.k[t] + law.K[t] @ (X[t] - X_nom[t])
        if limits is not None:
            u = limits.clamp(u)
        U[t] = u
        X[t + 1] = step_fn(X[t], u)
    return X, U, cost_model.trajectory_cost(X, U)


def solve(x0: np.ndarray, U0: np.ndarray, cost_model, step_fn, linearize_fn,
          settings: SolverSettings = SolverSettings(),
          limits: ControlLimits | None = None) -> SolveResult:
    """Iterate linearize/quadratize + backward pass + line search to convergence."""
    n = U0.shape[0]
    U = U0.copy()
    if limits is not None:
        U = np.array([limits.clamp(u) for u in U])
    X = rollout(x0, U, step_fn)
    cost = cost_model.trajectory_cost(X, U)
    trace = [cost]
    law = FeedbackLaw.zero(n)
    reg = settings.reg_init
    converged = False
    it = 0
    # Prefer a positive-semidefinite local model when the cost model offers
    # one: the exact barrier Hessians carry genuine negative curvature on
    # head-on obstacle approaches, which defeats the backward pass at any
    # practical regularization. Gradients are identical either way, so the
    # solver still converges to stationary points of the true cost.
    quadratize = getattr(cost_model, "quadratize_all_convex", None) \
        or cost_model.quadratize_all
    while it < settings.max_iters:
        it += 1
        H, g, _ = quadratize(X, U)
        F = np.stack([linearize_fn(X[t], U[t]) for t in range(n)])
        accepted = False
        while True:
            try:
                law, dv1, dv2 = backward_pass(H, g, F, reg)
            except NotPositiveDefinite:
                reg *= settings.reg_growth
                if reg > settings.reg_max:
                    break
                continue
            # local model predicts no meaningful decrease at low
            # regularization: already at a minimum
            expected = -(dv1 + dv2)
            if (reg <= settings.reg_init * settings.reg_growth
                    and expected < settings.cost_tolerance * max(abs(cost), 1e-3)):
                converged = True
                break
            for alpha in settings.line_search_alphas:
                Xc, Uc, cc = forward_pass(X, U, law, alpha, cost_model,
                                          step_fn, limits)
                if cc < cost:
                    X, U, cost = Xc, Uc, cc
                    accepted = True
                    break
            if accepted:
                reg = max(reg / settings.reg_growth, settings.reg_init)
                break
            reg *= settings.reg_growth
            if reg > settings.reg_max:
                break
        if converged or not accepted:
            break   # converged, or diverged: no descent at max reg
        trace.append(cost)
        rel = abs(trace[-2] - trace[-1]) / max(abs(trace[-2]), 1e-12)
        if rel < settings.cost_tolerance:
            converged = True
            break
    plan = TrajectoryPlan(states=X, controls=U, dt=float("nan"), total_cost=cost)
    return SolveResult(plan=plan, law=law, trace=trace, converged=converged,
                       iterations=it)


def make_bicycle_fns(dt: float, geom: VehicleGeometry):
    """(step_fn, linearize_fn) closures over the kinematic bicycle model."""
    def step_fn(x, u):
        return step_array(x, u, dt, geom)

    def linearize_fn(x, u):
        return linearize_array(x, u, dt, geom)

    return step_fn, linearize_fn


def solve_bicycle(x0, U0, cost_model, dt: float, geom: VehicleGeometry,
                  settings: SolverSettings = SolverSettings(),
                  limits: ControlLimits | None = None) -> SolveResult:
    """solve() specialized to the kinematic bicycle transition."""
    step_fn, linearize_fn = make_bicycle_fns(dt, geom)
    res = solve(x0, U0, cost_model, step_fn, linearize_fn, settings, limits)
    res.plan.dt = dt
    return res
