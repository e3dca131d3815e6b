"""Per-step cost construction and quadratization for the constrained planner.

The scalar stage cost is control effort + reference tracking + velocity
tracking + exponential-barrier-wrapped inequality constraints (actuator box,
ellipse obstacles, optional road edges). Everything here is differentiated
analytically so the solver's backward pass gets exact gradients/Hessians.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .dynamics import ControlLimits, VehicleGeometry, VehicleState

# Barrier values are clamped at this ceiling; gradients use the clamped value.
BARRIER_CEIL = 1e20
# Floors/caps for the adaptive weight functions.
V_TGT_FLOOR = 0.1
GAP_CAP = 50.0


@dataclass(frozen=True)
class CostWeights:
    """Quadratic weights: control effort, reference tracking, velocity tracking."""

    w_a: float = 1.0
    w_delta: float = 10.0
    w_ref: float = 0.5
    w_vel: float = 0.5


@dataclass(frozen=True)
class BarrierParams:
    """Exponential barrier q1 * exp(q2 * g): scale and sharpness."""

    q1: float = 1.0
    q2: float = 5.0

    def __post_init__(self):
        if self.q1 <= 0 or self.q2 <= 0:
            raise ValueError("barrier parameters must be positive")


@dataclass(frozen=True)
class EllipseObstacle:
    """Rotated forbidden ellipse active at one plan step."""

    cx: float
    cy: float
    heading: float
    semi_major: float
    semi_minor: float
    active_step: int = 0

    def __post_init__(self):
        if not (self.semi_major >= self.semi_minor > 0):
            raise ValueError("require semi_major >= semi_minor > 0")

    def quadratic_form(self, inflation: float = 0.0) -> np.ndarray:
        """2x2 matrix A with the inside given by (p-c)^T A (p-c) > 1 - g form."""
        a = self.semi_major + inflation
        b = self.semi_minor + inflation
        c, s = math.cos(self.heading), math.sin(self.heading)
        R = np.array([[c, -s], [s, c]])
        return R @ np.diag([1.0 / (a * a), 1.0 / (b * b)]) @ R.T


@dataclass(frozen=True)
class AdaptiveWeightParams:
    """Tuning scalars of the analytic weight functions."""

    a1: float = 1.2
    a2: float = 16.0
    b1: float = 0.02
    b2: float = 0.02

    def __post_init__(self):
        if self.a1 <= 0 or self.a2 <= 0:
            raise ValueError("a1 and a2 must be positive")


@dataclass
class ReferencePath:
    """Ordered waypoints with per-point reference speed."""

    xy: np.ndarray          # (M, 2)
    v_ref: np.ndarray       # (M,)

    def __post_init__(self):
        self.xy = np.asarray(self.xy, dtype=float)
        self.v_ref = np.asarray(self.v_ref, dtype=float)
        if self.xy.shape[0] < 2:
            raise ValueError("need at least two waypoints")
        if np.any(np.all(np.diff(self.xy, axis=0) == 0.0, axis=1)):
            raise ValueError("consecutive waypoints must be distinct")

    @classmethod
    def straight(cls, x0: float, x1: float, y: float, v_ref: float,
                 spacing: float = 0.5) -> "ReferencePath":
        xs = np.arange(x0, x1 + spacing, spacing)
        xy = np.column_stack([xs, np.full_like(xs, y)])
        return cls(xy=xy, v_ref=np.full(len(xs), v_ref))

    def nearest_indices(self, pts: np.ndarray) -> np.ndarray:
        """Nearest waypoint per query point, ties broken toward larger index."""
        d2 = ((pts[:, None, :] - self.xy[None, :, :]) ** 2).sum(axis=2)
        m = d2.shape[1]
        return m - 1 - np.argmin(d2[:, ::-1], axis=1)


@dataclass(frozen=True)
class QuadraticCostTerm:
    """Second-order expansion of one step's scalar cost over (state, control)."""

    H: np.ndarray   # (6, 6), symmetric
    g: np.ndarray   # (6,)
    c: float


def barrier(g: float, p: BarrierParams) -> float:
    """Exponential barrier value q1 * exp(q2 * g), clamped at a finite ceiling."""
    z = p.q2 * g
    z_max = math.log(BARRIER_CEIL / p.q1)
    return p.q1 * math.exp(min(z, z_max))


def quadratize_barrier(g_value, g_gradient, g_hessian, p: BarrierParams):
    """Value/gradient/Hessian of barrier(g(x)) by the chain rule.

    grad = q2*b*grad_g;  hess = q2*b*(q2*grad_g grad_g^T + hess_g).
    Works for scalar or vector g derivatives; the Hessian is symmetrized.
    """
    b = barrier(g_value, p)
    grad_g = np.atleast_1d(np.asarray(g_gradient, dtype=float))
    hess_g = np.atleast_2d(np.asarray(g_hessian, dtype=float))
    grad = p.q2 * b * grad_g
    hess = p.q2 * b * (p.q2 * np.outer(grad_g, grad_g) + hess_g)
    hess = 0.5 * (hess + hess.T)
    return b, grad, hess


def ellipse_constraint(x: VehicleState, geom: VehicleGeometry, obs: EllipseObstacle,
                       extra_margin: float = 0.0):
    """Ellipse-avoidance constraint g = 1 - d^T A d for both ego circles.

    Semi-axes are pre-inflated by the ego circle radius (plus extra_margin).
    Returns [(g, grad, hess)] for the rear-axle and front-axle circle centers;
    gradients/Hessians are over the 4-state.
    """
    A = obs.quadratic_form(inflation=geom.circle_radius + extra_margin)
    center = np.array([obs.cx, obs.cy])
    out = []
    st = x.as_array()
    L = geom.wheelbase
    for which in ("rear", "front"):
        if which == "rear":
            p = st[:2]
            Jc = np.array([[1.0, 0, 0, 0], [0, 1.0, 0, 0]])
            curv = None
        else:
            ct, s = math.cos(st[3]), math.sin(st[3])
            p = st[:2] + L * np.array([ct, s])
            Jc = np.array([[1.0, 0, 0, -L * s], [0, 1.0, 0, L * ct]])
            curv = -L * np.array([ct, s])   # d2 p / d theta2
        d = p - center
        Ad = A @ d
        g = 1.0 - d @ Ad
        grad = -2.0 * Jc.T @ Ad
        hess = -2.0 * Jc.T @ A @ Jc
        if curv is not None:
            hess[3, 3] += -2.0 * (Ad @ curv)
        out.append((float(g), grad, 0.5 * (hess + hess.T)))
    return out


def control_limit_constraints(u, limits: ControlLimits):
    """Actuator box in negative-null form: four (g, grad, hess) over the control."""
    a, delta = float(u[0]), float(u[1])
    zero = np.zeros((2, 2))
    return [
        (a - limits.a_max, np.array([1.0, 0.0]), zero),
        (limits.a_min - a, np.array([-1.0, 0.0]), zero),
        (delta - limits.delta_max, np.array([0.0, 1.0]), zero),
        (-limits.delta_max - delta, np.array([0.0, -1.0]), zero),
    ]


def adaptive_weights(v_tgt: float, delta_x: float, p: AdaptiveWeightParams):
    """Analytic scenario-aware weights (w_ref, w_vel).

    v_tgt is the leading target's speed; delta_x the signed longitudinal gap
    (positive when the target leads). v_tgt is floored and the gap capped to
    keep the exponentials bounded.
    """
    v = max(v_tgt, V_TGT_FLOOR)
    dx = min(max(delta_x, -GAP_CAP), GAP_CAP)
    w_ref = p.a1 / v * math.exp(p.b1 * dx)
    w_vel = v / (p.a2 * math.exp(p.b2 * dx))
    return w_ref, w_vel


def baseline_weights(v_ref: float, p: AdaptiveWeightParams):
    """Weights used when no relevant leading target exists (gap at its cap)."""
    return adaptive_weights(v_ref, GAP_CAP, p)


class CilqrCostModel:
    """Vectorized stage-cost evaluation and quadratization over a horizon.

    Obstacles are registered per plan step; each contributes one barrier per
    ego footprint circle. Road edges, when set, are soft linear barriers on
    the lateral position.
    """

    def __init__(self, ref: ReferencePath, weights: CostWeights,
                 limits: ControlLimits, geom: VehicleGeometry,
                 ctrl_barrier: BarrierParams = BarrierParams(q1=1.0, q2=5.0),
                 obs_barrier: BarrierParams = BarrierParams(q1=2.0, q2=10.0),
                 road_bounds=None, road_margin: float = 1.0,
                 road_barrier: BarrierParams = BarrierParams(q1=1.0, q2=4.0)):
        self.ref = ref
        self.weights = weights
        self.limits = limits
        self.geom = geom
        self.ctrl_barrier = ctrl_barrier
        self.obs_barrier = obs_barrier
        self.road_bounds = road_bounds          # (y_min, y_max) or None
        self.road_margin = road_margin
        self.road_barrier = road_barrier
        self._obs_center = np.zeros((0, 2))
        self._obs_A = np.zeros((0, 2, 2))
        self._obs_step = np.zeros(0, dtype=int)

    # -- configuration -----------------------------------------------------

    def set_weights(self, weights: CostWeights):
        self.weights = weights

    def set_obstacles(self, obstacles, r_safe: float = 0.0):
        """Register active obstacles; semi-axes get circle_radius + r_safe."""
        infl = self.geom.circle_radius + r_safe
        self._obs_center = np.array([[o.cx, o.cy] for o in obstacles]).reshape(-1, 2)
        self._obs_A = (np.stack([o.quadratic_form(infl) for o in obstacles])
                       if obstacles else np.zeros((0, 2, 2)))
        self._obs_step = np.array([o.active_step for o in obstacles], dtype=int)

    # -- internal vectorized pieces ----------------------------------------

    def _ref_delta(self, X: np.ndarray):
        idx = self.ref.nearest_indices(X[:, :2])
        d = np.zeros_like(X)
        d[:, :2] = X[:, :2] - self.ref.xy[idx]
        d[:, 2] = X[:, 2] - self.ref.v_ref[idx]
        return d

    def _barrier_vec(self, g: np.ndarray, p: BarrierParams) -> np.ndarray:
        z = np.minimum(p.q2 * g, math.log(BARRIER_CEIL / p.q1))
        return p.q1 * np.exp(z)

    def _control_barrier_values(self, U: np.ndarray) -> np.ndarray:
        """(n, 4) barrier values for the actuator box at each step."""
        lm, p = self.limits, self.ctrl_barrier
        G = np.column_stack([
            U[:, 0] - lm.a_max, lm.a_min - U[:, 0],
            U[:, 1] - lm.delta_max, -lm.delta_max - U[:, 1],
        ])
        return self._barrier_vec(G, p)

    def _road_g(self, X: np.ndarray) -> np.ndarray:
        y_min, y_max = self.road_bounds
        m = self.road_margin
        return np.column_stack([X[:, 1] + m - y_max, y_min - (X[:, 1] - m)])

    def _circle_centers(self, X: np.ndarray):
        """Rear/front circle centers and front-circle derivative helpers."""
        L = self.geom.wheelbase
        ct, s = np.cos(X[:, 3]), np.sin(X[:, 3])
        rear = X[:, :2]
        front = rear + L * np.column_stack([ct, s])
        return rear, front, ct, s

    def _obstacle_g(self, X: np.ndarray):
        """Constraint values for all registered obstacles at their steps.

        Returns (steps, g_rear, g_front, d_rear, d_front, ct, s) with d the
        center offsets; empty arrays when no obstacles are registered.
        """
        if len(self._obs_step) == 0:
            z = np.zeros(0)
            return self._obs_step, z, z, np.zeros((0, 2)), np.zeros((0, 2)), z, z
        Xs = X[self._obs_step]
        rear, front, ct, s = self._circle_centers(Xs)
        d_r = rear - self._obs_center
        d_f = front - self._obs_center
        g_r = 1.0 - np.einsum("ki,kij,kj->k", d_r, self._obs_A, d_r)
        g_f = 1.0 - np.einsum("ki,kij,kj->k", d_f, self._obs_A, d_f)
        return self._obs_step, g_r, g_f, d_r, d_f, ct, s

    # -- public evaluation -------------------------------------------------

    def cost_components(self, X: np.ndarray, U: np.ndarray) -> dict:
        """Decomposed scalar objective: control / reference / velocity / constraints."""
        w = self.weights
        d = self._ref_delta(X)
        c_ref = w.w_ref * float((d[:, 0] ** 2 + d[:, 1] ** 2).sum())
        c_vel = w.w_vel * float((d[:, 2] ** 2).sum())
        c_u = float(w.w_a * (U[:, 0] ** 2).sum() + w.w_delta * (U[:, 1] ** 2).sum())
        c_con = float(self._control_barrier_values(U).sum())
        if self.road_bounds is not None:
            c_con += float(self._barrier_vec(self._road_g(X), self.road_barrier).sum())
        _, g_r, g_f, *_ = self._obstacle_g(X)
        if len(g_r):
            c_con += float(self._barrier_vec(g_r, self.obs_barrier).sum()
                           + self._barrier_vec(g_f, self.obs_barrier).sum())
        return {"c_u": c_u, "c_ref": c_ref, "c_vel": c_vel, "c_con": c_con}

    def obstacle_cost(self, X: np.ndarray) -> float:
        """Obstacle-barrier cost alone: how much a plan interacts with traffic."""
        _, g_r, g_f, *_ = self._obstacle_g(X)
        if not len(g_r):
            return 0.0
        return float(self._barrier_vec(g_r, self.obs_barrier).sum()
                     + self._barrier_vec(g_f, self.obs_barrier).sum())

    def trajectory_cost(self, X: np.ndarray, U: np.ndarray) -> float:
        parts = self.cost_components(X, U)
        return parts["c_u"] + parts["c_ref"] + parts["c_vel"] + parts["c_con"]

    def quadratize_all(self, X: np.ndarray, U: np.ndarray,
                       convex_obstacles: bool = False):
        """Second-order expansion of the stage cost at every step.

        Returns (H, g, c): H (N+1,6,6), g (N+1,6), c (N+1,). The terminal
        entry carries state terms only. With convex_obstacles the obstacle
        Hessians keep only their Gauss-Newton (PSD) part, a rescue mode for
        the solver when the exact negative curvature defeats its backward
        pass; gradients are unchanged.
        """
        n1 = X.shape[0]
        N = U.shape[0]
        w = self.weights
        H = np.zeros((n1, 6, 6))
        g = np.zeros((n1, 6))
        c = np.zeros(n1)

        # reference + velocity tracking (all steps incl. terminal)
        d = self._ref_delta(X)
        c += w.w_ref * (d[:, 0] ** 2 + d[:, 1] ** 2) + w.w_vel * d[:, 2] ** 2
        g[:, 0] += 2 * w.w_ref * d[:, 0]
        g[:, 1] += 2 * w.w_ref * d[:, 1]
        g[:, 2] += 2 * w.w_vel * d[:, 2]
        H[:, 0, 0] += 2 * w.w_ref
        H[:, 1, 1] += 2 * w.w_ref
        H[:, 2, 2] += 2 * w.w_vel

        # control effort + actuator barriers (non-terminal steps)
        c[:N] += w.w_a * U[:, 0] ** 2 + w.w_delta * U[:, 1] ** 2
        g[:N, 4] += 2 * w.w_a * U[:, 0]
        g[:N, 5] += 2 * w.w_delta * U[:, 1]
        H[:N, 4, 4] += 2 * w.w_a
        H[:N, 5, 5] += 2 * w.w_delta

        q2 = self.ctrl_barrier.q2
        B = self._control_barrier_values(U)      # (N, 4): a_hi, a_lo, d_hi, d_lo
        c[:N] += B.sum(axis=1)
        g[:N, 4] += q2 * (B[:, 0] - B[:, 1])
        g[:N, 5] += q2 * (B[:, 2] - B[:, 3])
        H[:N, 4, 4] += q2 * q2 * (B[:, 0] + B[:, 1])
        H[:N, 5, 5] += q2 * q2 * (B[:, 2] + B[:, 3])

        # road-edge barriers (linear in py)
        if self.road_bounds is not None:
            qr = self.road_barrier.q2
            Br = self._barrier_vec(self._road_g(X), self.road_barrier)
            c += Br.sum(axis=1)
            g[:, 1] += qr * (Br[:, 0] - Br[:, 1])
            H[:, 1, 1] += qr * qr * (Br[:, 0] + Br[:, 1])

        # obstacle barriers: one per footprint circle per registered obstacle
        steps, g_r, g_f, d_r, d_f, ct, s = self._obstacle_g(X)
        if len(steps):
            L = self.geom.wheelbase
            q2o = self.obs_barrier.q2
            A = self._obs_A
            for which, gk, dk in (("rear", g_r, d_r), ("front", g_f, d_f)):
                Ad = np.einsum("kij,kj->ki", A, dk)          # (K, 2)
                bk = self._barrier_vec(gk, self.obs_barrier)  # (K,)
                # grad of g over the 4-state
                gg = np.zeros((len(steps), 4))
                gg[:, 0] = -2 * Ad[:, 0]
                gg[:, 1] = -2 * Ad[:, 1]
                # hess of g over the 4-state
                hg = np.zeros((len(steps), 4, 4))
                hg[:, 0, 0] = -2 * A[:, 0, 0]
                hg[:, 0, 1] = hg[:, 1, 0] = -2 * A[:, 0, 1]
                hg[:, 1, 1] = -2 * A[:, 1, 1]
                if which == "front":
                    # p = (px + L cos t, py + L sin t): theta column of Jc
                    jt = np.column_stack([-L * s, L * ct])   # (K, 2)
                    Ajt = np.einsum("kij,kj->ki", A, jt)
                    gg[:, 3] = -2 * np.einsum("ki,ki->k", jt, Ad)
                    hg[:, 0, 3] = hg[:, 3, 0] = -2 * Ajt[:, 0]
                    hg[:, 1, 3] = hg[:, 3, 1] = -2 * Ajt[:, 1]
                    hg[:, 3, 3] = (-2 * np.einsum("ki,ki->k", jt, Ajt)
                                   + 2 * L * (Ad[:, 0] * ct + Ad[:, 1] * s))
                # chain rule through the barrier
                gb = q2o * bk[:, None] * gg
                gauss_newton = q2o * np.einsum("ki,kj->kij", gg, gg)
                if not convex_obstacles:
                    gauss_newton = gauss_newton + hg
                hb = q2o * bk[:, None, None] * gauss_newton
                np.add.at(c, steps, bk)
                np.add.at(g[:, :4], steps, gb)
                np.add.at(H[:, :4, :4], steps, hb)

        H = 0.5 * (H + np.transpose(H, (0, 2, 1)))
        return H, g, c

    def quadratize_all_convex(self, X: np.ndarray, U: np.ndarray):
        """quadratize_all with PSD (Gauss-Newton) obstacle Hessians."""
        return self.quadratize_all(X, U, convex_obstacles=True)

    def quadratize_step(self, t: int, x: np.ndarray, u=None, n_steps: int = None
                        ) -> QuadraticCostTerm:
        """Expansion of the step-t cost at one (state, control) point."""
        obs_c, obs_A, obs_s = self._obs_center, self._obs_A, self._obs_step
        keep = obs_s == t
        X = np.asarray(x, dtype=float).reshape(1, 4)
        if u is None:
            U = np.zeros((0, 2))
        else:
            U = np.asarray(u, dtype=float).reshape(1, 2)
        # restrict registered obstacles to this step, re-indexed to step 0
        self._obs_center, self._obs_A, self._obs_step = (
            obs_c[keep], obs_A[keep], np.zeros(keep.sum(), dtype=int))
        try:
            H, g, c = self.quadratize_all(X, U)
        finally:
            self._obs_center, self._obs_A, self._obs_step = obs_c, obs_A, obs_s
        return QuadraticCostTerm(H=H[0], g=g[0], c=float(c[0]))


def build_step_cost(x: VehicleState, u, ref: ReferencePath, weights: CostWeights,
                    limits: ControlLimits, geom: VehicleGeometry,
                    obstacles_at_t=(), r_safe: float = 0.0,
                    ctrl_barrier: BarrierParams = BarrierParams(q1=1.0, q2=5.0),
                    obs_barrier: BarrierParams = BarrierParams(q1=2.0, q2=10.0),
                    ) -> QuadraticCostTerm:
    """One step's summed quadratic cost term; u=None means a terminal step."""
    model = CilqrCostModel(ref, weights, limits, geom,
                           ctrl_barrier=ctrl_barrier, obs_barrier=obs_barrier)
    obs0 = [EllipseObstacle(o.cx, o.cy, o.heading, o.semi_major, o.semi_minor, 0)
            for o in obstacles_at_t]
    model.set_obstacles(obs0, r_safe=r_safe)
    ua = None if u is None else (u.as_array() if hasattr(u, "as_array") else u)
    return model.quadratize_step(0, x.as_array(), ua)
