"""Two-stage target prediction: interval reachability + recursive least squares.

Short term: conservative stepwise interval propagation of the bicycle model
with bounded nondeterministic controls, bloated to cover within-step control
variation. Long term: an exponentially forgetting RLS fit of a discrete linear
model over [px, py, theta], iterated forward. Both stages are emitted as
time-indexed ellipse obstacles.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .constraints import EllipseObstacle
from .dynamics import VehicleGeometry

# Outward bloating per propagated step, covering sub-step control variation
# and rounding in the interval evaluation.
EPS_POS = 0.01      # m
EPS_V = 1e-9        # m/s (speed update is exactly linear)
EPS_THETA = 1e-4    # rad

SPEED_DOMAIN = (0.0, 40.0)
THETA_WIDTH_MAX = math.pi / 2
DEFAULT_DELTA_INTERVAL = (-0.05, 0.05)
# Default initial-state uncertainty half-widths (perception error).
DEFAULT_POS_HW = 0.2
DEFAULT_YAW_HW = 0.05
DEFAULT_SPEED_HW = 0.5


class DomainExceeded(Exception):
    """Reach box left the validated operating domain; prediction is degenerate."""


# ---------------------------------------------------------------------------
# interval helpers (closed intervals as (lo, hi) tuples)

def _imul(a, b):
    p = (a[0] * b[0], a[0] * b[1], a[1] * b[0], a[1] * b[1])
    return (min(p), max(p))


def _icos(a):
    lo, hi = a
    if hi - lo >= 2 * math.pi:
        return (-1.0, 1.0)
    vals = [math.cos(lo), math.cos(hi)]
    k_min = math.ceil(lo / math.pi)
    k_max = math.floor(hi / math.pi)
    for k in range(k_min, k_max + 1):
        vals.append(1.0 if k % 2 == 0 else -1.0)
    return (min(vals), max(vals))


def _isin(a):
    return _icos((a[0] - math.pi / 2, a[1] - math.pi / 2))


# ---------------------------------------------------------------------------
# domain types

@dataclass(frozen=True)
class ControlIntervals:
    """Admissible target controls: acceleration and steering-rate bounds."""

    accel: tuple = (-4.0, 6.0)          # m/s^2
    steer_rate: tuple = (-0.1, 0.1)     # rad/s

    def __post_init__(self):
        if self.accel[0] > self.accel[1] or self.steer_rate[0] > self.steer_rate[1]:
            raise ValueError("intervals must be nonempty")


@dataclass(frozen=True)
class ReachBox:
    """Axis-aligned interval enclosure of a target's states at one step."""

    step: int
    px: tuple
    py: tuple
    v: tuple
    theta: tuple
    delta: tuple = DEFAULT_DELTA_INTERVAL
    degenerate: bool = False

    def center(self):
        return (0.5 * (self.px[0] + self.px[1]), 0.5 * (self.py[0] + self.py[1]))

    def widths(self):
        return (self.px[1] - self.px[0], self.py[1] - self.py[0],
                self.v[1] - self.v[0], self.theta[1] - self.theta[0])


@dataclass(frozen=True)
class TargetObservation:
    """One timestamped target measurement with optional uncertainty half-widths."""

    timestamp: float
    px: float
    py: float
    theta: float
    v: float
    pos_hw: float = DEFAULT_POS_HW
    yaw_hw: float = DEFAULT_YAW_HW
    speed_hw: float = DEFAULT_SPEED_HW


@dataclass(frozen=True)
class RLSState:
    """Forgetting-factor RLS estimate of the continuous model xdot = A x."""

    A: np.ndarray          # (3, 3)
    P: np.ndarray          # (3, 3) covariance accumulator
    lam: float = 0.95

    @classmethod
    def fresh(cls, lam: float = 0.95, p0: float = 1e3) -> "RLSState":
        return cls(A=np.zeros((3, 3)), P=p0 * np.eye(3), lam=lam)


# ---------------------------------------------------------------------------
# short-term reachability

def _propagate(box: ReachBox, ctrl: ControlIntervals, dt: float,
               geom: VehicleGeometry) -> ReachBox:
    """Interval image of one step without the operating-domain check."""
    delta = (box.delta[0] + ctrl.steer_rate[0] * dt,
             box.delta[1] + ctrl.steer_rate[1] * dt)
    L = geom.wheelbase
    kappa = (math.tan(delta[0]) / L, math.tan(delta[1]) / L)
    a = ctrl.accel
    l = (box.v[0] * dt + 0.5 * a[0] * dt * dt,
         box.v[1] * dt + 0.5 * a[1] * dt * dt)
    dtheta = _imul(kappa, l)
    theta = (box.theta[0] + dtheta[0] - EPS_THETA,
             box.theta[1] + dtheta[1] + EPS_THETA)
    # headings swept during the step
    sweep = (box.theta[0] + min(0.0, dtheta[0]), box.theta[1] + max(0.0, dtheta[1]))
    dx = _imul(l, _icos(sweep))
    dy = _imul(l, _isin(sweep))
    px = (box.px[0] + dx[0] - EPS_POS, box.px[1] + dx[1] + EPS_POS)
    py = (box.py[0] + dy[0] - EPS_POS, box.py[1] + dy[1] + EPS_POS)
    v = (box.v[0] + a[0] * dt - EPS_V, box.v[1] + a[1] * dt + EPS_V)
    return ReachBox(step=box.step + 1, px=px, py=py, v=v, theta=theta,
                    delta=delta)


def reach_step(box: ReachBox, ctrl: ControlIntervals, dt: float,
               geom: VehicleGeometry) -> ReachBox:
    """Interval over-approximation of one bicycle step under bounded controls.

    Sound against any piecewise-varying admissible acceleration and steering
    rate over the step (the steering interval is widened by steer_rate*dt
    before propagation; heading sweep uses the mean-value form of the arc
    integrals, avoiding the 1/kappa division).
    """
    if dt <= 0 or dt > 0.1 + 1e-12:
        raise ValueError("reach_step validated only for 0 < dt <= 0.1 s")
    out = _propagate(box, ctrl, dt, geom)
    if out.v[0] < SPEED_DOMAIN[0] - 1e-9 or out.v[1] > SPEED_DOMAIN[1] + 1e-9 \
            or out.theta[1] - out.theta[0] > THETA_WIDTH_MAX:
        raise DomainExceeded(f"box left validated domain at step {out.step}")
    return out


def seed_box(obs: TargetObservation,
             delta_interval: tuple = DEFAULT_DELTA_INTERVAL) -> ReachBox:
    """Step-0 box from an observation and its uncertainty half-widths."""
    return ReachBox(
        step=0,
        px=(obs.px - obs.pos_hw, obs.px + obs.pos_hw),
        py=(obs.py - obs.pos_hw, obs.py + obs.pos_hw),
        v=(obs.v - obs.speed_hw, obs.v + obs.speed_hw),
        theta=(obs.theta - obs.yaw_hw, obs.theta + obs.yaw_hw),
        delta=delta_interval,
    )


def reach_horizon(obs: TargetObservation, ctrl: ControlIntervals, n_steps: int,
                  dt: float, geom: VehicleGeometry = VehicleGeometry(),
                  delta_interval: tuple = DEFAULT_DELTA_INTERVAL) -> list:
    """Boxes for steps 1..n_steps ahead of the observation.

    On DomainExceeded the offending and later boxes are returned clamped to
    the speed domain and flagged degenerate.
    """
    if n_steps * dt > 1.0 + 1e-12:
        raise ValueError("short-horizon scheme validated only up to 1.0 s")
    boxes = []
    box = seed_box(obs, delta_interval)
    degenerate = False
    for _ in range(n_steps):
        if degenerate:
            box = replace(reach_step_unchecked(box, ctrl, dt, geom),
                          degenerate=True)
        else:
            try:
                box = reach_step(box, ctrl, dt, geom)
            except DomainExceeded:
                degenerate = True
                box = replace(reach_step_unchecked(box, ctrl, dt, geom),
                              degenerate=True)
        boxes.append(box)
    return boxes


def reach_step_unchecked(box: ReachBox, ctrl: ControlIntervals, dt: float,
                         geom: VehicleGeometry) -> ReachBox:
    """reach_step with the speed interval clamped to the domain, never raising."""
    clamped = replace(box, v=(max(box.v[0], SPEED_DOMAIN[0]),
                              min(box.v[1], SPEED_DOMAIN[1])))
    return _propagate(clamped, ctrl, dt, geom)


def inflate_box_to_ellipse(box: ReachBox,
                           target_geom: VehicleGeometry) -> EllipseObstacle:
    """Circumscribing ellipse of the box grown by the swept target footprint.

    Heading is the box theta midpoint; the position extent is expressed in
    that frame, grown by the body rectangle swept over the relative heading
    range, then circumscribed (factor sqrt(2)). Ego footprint inflation is
    added later by the cost model.
    """
    cx, cy = box.center()
    theta_mid = 0.5 * (box.theta[0] + box.theta[1])
    ex = 0.5 * (box.px[1] - box.px[0])
    ey = 0.5 * (box.py[1] - box.py[0])
    c, s = abs(math.cos(theta_mid)), abs(math.sin(theta_mid))
    # box extent in the theta_mid frame (AABB of the rotated box)
    ex_f = c * ex + s * ey
    ey_f = s * ex + c * ey
    # body footprint swept over relative headings
    rel = min(0.5 * (box.theta[1] - box.theta[0]), math.pi / 2)
    sr = math.sin(rel)
    hx = 0.5 * target_geom.body_length + 0.5 * target_geom.body_width * sr
    hy = 0.5 * target_geom.body_width + 0.5 * target_geom.body_length * sr
    a = math.sqrt(2.0) * (ex_f + hx)
    b = math.sqrt(2.0) * (ey_f + hy)
    if a < b:
        a, b = b, a
        theta_mid += math.pi / 2
    return EllipseObstacle(cx=cx, cy=cy, heading=theta_mid, semi_major=a,
                           semi_minor=b, active_step=box.step)


def point_footprint_ellipse(px: float, py: float, theta: float,
                            target_geom: VehicleGeometry,
                            active_step: int) -> EllipseObstacle:
    """Minimum-area (circumscribing) ellipse of the body rectangle at a pose."""
    a = math.sqrt(2.0) * 0.5 * target_geom.body_length
    b = math.sqrt(2.0) * 0.5 * target_geom.body_width
    return EllipseObstacle(cx=px, cy=py, heading=theta, semi_major=a,
                           semi_minor=b, active_step=active_step)


# ---------------------------------------------------------------------------
# long-term RLS prediction

def rls_update(s: RLSState, prev: TargetObservation,
               curr: TargetObservation) -> RLSState:
    """Exponentially weighted RLS update of the discrete model x_k = Abar x_{k-1}.

    Abar = I + A*dt with dt from the observation timestamps; the recursion is
    the closed-form minimizer of the forgetting-factor least-squares loss.
    """
    dt = curr.timestamp - prev.timestamp
    if dt <= 0:
        raise ValueError("observations must be strictly ordered in time")
    phi = np.array([prev.px, prev.py, prev.theta])
    y = np.array([curr.px, curr.py, curr.theta])
    Abar = np.eye(3) + s.A * dt
    denom = s.lam + phi @ s.P @ phi
    gain = (s.P @ phi) / denom
    resid = y - Abar @ phi
    Abar = Abar + np.outer(resid, gain)
    P = (s.P - np.outer(gain, phi @ s.P)) / s.lam
    P = 0.5 * (P + P.T)
    return RLSState(A=(Abar - np.eye(3)) / dt, P=P, lam=s.lam)


def rls_predict(s: RLSState, curr: TargetObservation, n_steps: int,
                dt: float) -> np.ndarray:
    """Iterated point predictions (n_steps, 3) of [px, py, theta]."""
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    Abar = np.eye(3) + s.A * dt
    x = np.array([curr.px, curr.py, curr.theta])
    out = np.empty((n_steps, 3))
    for i in range(n_steps):
        x = Abar @ x
        out[i] = x
    return out


# ---------------------------------------------------------------------------
# hybrid predictor

def predict_hybrid(history, ctrl: ControlIntervals,
                   horizon_s: float = 4.0, split_s: float = 0.5,
                   dt: float = 0.1,
                   target_geom: VehicleGeometry = VehicleGeometry(),
                   rls: RLSState | None = None,
                   delta_interval: tuple = DEFAULT_DELTA_INTERVAL) -> list:
    """Ellipse obstacles for every step of the horizon.

    Steps up to split_s/dt come from interval reachability of the latest
    observation; the rest from the RLS point prediction with footprint-only
    inflation. A prior RLS state may be supplied; otherwise the filter is
    run over the whole history.
    """
    if len(history) < 2 and rls is None:
        raise ValueError("need at least two observations to fit the filter")
    n_total = int(round(horizon_s / dt))
    n_short = int(round(split_s / dt))
    n_short = min(n_short, n_total)
    curr = history[-1]
    if rls is None:
        rls = RLSState.fresh()
        for prev, nxt in zip(history[:-1], history[1:]):
            rls = rls_update(rls, prev, nxt)
    obstacles = []
    if n_short > 0:
        # validated reachability covers at most 1.0 s; any short-term steps
        # beyond that continue unchecked and are flagged degenerate
        n_valid = min(n_short, int(round(1.0 / dt)))
        boxes = reach_horizon(curr, ctrl, n_valid, dt, target_geom,
                              delta_interval)
        while len(boxes) < n_short:
            boxes.append(replace(
                reach_step_unchecked(boxes[-1], ctrl, dt, target_geom),
                degenerate=True))
        obstacles.extend(inflate_box_to_ellipse(b, target_geom) for b in boxes)
    if n_total > n_short:
        pts = rls_predict(rls, curr, n_total, dt)
        for i in range(n_short, n_total):
            px, py, th = pts[i]
            obstacles.append(point_footprint_ellipse(px, py, th, target_geom,
                                                     active_step=i + 1))
    return obstacles


class TargetPredictor:
    """Per-target stateful wrapper: incremental RLS + hybrid prediction."""

    def __init__(self, ctrl: ControlIntervals = ControlIntervals(),
                 target_geom: VehicleGeometry = VehicleGeometry(),
                 lam: float = 0.95,
                 delta_interval: tuple = DEFAULT_DELTA_INTERVAL):
        self.ctrl = ctrl
        self.target_geom = target_geom
        self.rls = RLSState.fresh(lam=lam)
        self.delta_interval = delta_interval
        self._last: TargetObservation | None = None

    def observe(self, obs: TargetObservation):
        if self._last is not None:
            self.rls = rls_update(self.rls, self._last, obs)
        self._last = obs

    def predict(self, horizon_s: float = 4.0, split_s: float = 0.5,
                dt: float = 0.1) -> list:
        if self._last is None:
            raise ValueError("no observations yet")
        return predict_hybrid([self._last], self.ctrl, horizon_s, split_s, dt,
                              self.target_geom, rls=self.rls,
                              delta_interval=self.delta_interval)
