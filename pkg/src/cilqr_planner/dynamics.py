"""Kinematic bicycle model: discrete arc-geometry transition and analytic Jacobians.

State is [px, py, v, theta] (rear-axle position, speed, heading), control is
[a, delta] (acceleration, steering angle). The step integrates the vehicle
along a constant-curvature arc of length l = v*dt + 0.5*a*dt^2 with curvature
kappa = tan(delta)/L; a straight-line branch takes over below KAPPA_EPS where
the arc formulas divide by ~0.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

# Below this curvature (1/m) the arc update is numerically unstable; the
# straight-line positional error at this curvature over one step is << 1e-6 m.
KAPPA_EPS = 1e-6


@dataclass(frozen=True)
class VehicleState:
    """Planar rear-axle pose and speed of one vehicle."""

    px: float
    py: float
    v: float
    theta: float

    def as_array(self) -> np.ndarray:
        return np.array([self.px, self.py, self.v, self.theta], dtype=float)

    @classmethod
    def from_array(cls, arr) -> "VehicleState":
        px, py, v, theta = (float(a) for a in arr)
        return cls(px, py, v, theta)


@dataclass(frozen=True)
class ControlInput:
    """Acceleration (m/s^2) and steering angle (rad)."""

    a: float
    delta: float

    def as_array(self) -> np.ndarray:
        return np.array([self.a, self.delta], dtype=float)

    @classmethod
    def from_array(cls, arr) -> "ControlInput":
        a, delta = (float(x) for x in arr)
        return cls(a, delta)


@dataclass(frozen=True)
class VehicleGeometry:
    """Wheelbase, body rectangle, and the radius of the two footprint circles."""

    wheelbase: float = 2.7
    body_length: float = 4.5
    body_width: float = 2.0
    circle_radius: float = 1.2

    def __post_init__(self):
        if min(self.wheelbase, self.body_length, self.body_width, self.circle_radius) <= 0:
            raise ValueError("all geometry fields must be positive")
        if self.circle_radius < self.body_width / 2:
            raise ValueError("circle_radius must cover half the body width")


@dataclass(frozen=True)
class ControlLimits:
    """Physical actuator box; controls are clamped here before integration."""

    a_min: float = -4.0
    a_max: float = 6.0
    delta_max: float = math.radians(30.0)

    def clamp(self, u: np.ndarray) -> np.ndarray:
        return np.array([
            min(max(u[0], self.a_min), self.a_max),
            min(max(u[1], -self.delta_max), self.delta_max),
        ])


@dataclass(frozen=True)
class LinearizedStep:
    """4x6 Jacobian of the discrete transition w.r.t. (state, control)."""

    F: np.ndarray

    @property
    def A(self) -> np.ndarray:
        return self.F[:, :4]

    @property
    def B(self) -> np.ndarray:
        return self.F[:, 4:]


def step_array(x: np.ndarray, u: np.ndarray, dt: float, geom: VehicleGeometry) -> np.ndarray:
    """Discrete transition on raw arrays; used in hot rollout loops."""
    px, py, v, theta = x
    a, delta = u
    l = v * dt + 0.5 * a * dt * dt
    kappa = math.tan(delta) / geom.wheelbase
    v_next = v + a * dt
    if abs(kappa) > KAPPA_EPS:
        phi = theta + kappa * l
        px_next = px + (math.sin(phi) - math.sin(theta)) / kappa
        py_next = py + (math.cos(theta) - math.cos(phi)) / kappa
        theta_next = phi
    else:
        px_next = px + l * math.cos(theta)
        py_next = py + l * math.sin(theta)
        theta_next = theta
    return np.array([px_next, py_next, v_next, theta_next])


def step(x: VehicleState, u: ControlInput, dt: float, geom: VehicleGeometry) -> VehicleState:
    """One discrete step of the kinematic bicycle model."""
    return VehicleState.from_array(step_array(x.as_array(), u.as_array(), dt, geom))


def linearize_array(x: np.ndarray, u: np.ndarray, dt: float, geom: VehicleGeometry) -> np.ndarray:
    """Analytic 4x6 Jacobian of step_array at (x, u)."""
    _, _, v, theta = x
    a, delta = u
    l = v * dt + 0.5 * a * dt * dt
    kappa = math.tan(delta) / geom.wheelbase
    dl_dv = dt
    dl_da = 0.5 * dt * dt
    F = np.zeros((4, 6))
    F[0, 0] = 1.0
    F[1, 1] = 1.0
    F[2, 2] = 1.0
    F[2, 4] = dt
    F[3, 3] = 1.0
    if abs(kappa) > KAPPA_EPS:
        tan_d = math.tan(delta)
        dkappa_ddelta = (1.0 + tan_d * tan_d) / geom.wheelbase
        phi = theta + kappa * l
        sin_t, cos_t = math.sin(theta), math.cos(theta)
        sin_p, cos_p = math.sin(phi), math.cos(phi)
        # px row
        F[0, 2] = cos_p * dl_dv
        F[0, 3] = (cos_p - cos_t) / kappa
        F[0, 4] = cos_p * dl_da
        F[0, 5] = (cos_p * l * kappa - (sin_p - sin_t)) / (kappa * kappa) * dkappa_ddelta
        # py row
        F[1, 2] = sin_p * dl_dv
        F[1, 3] = (sin_p - sin_t) / kappa
        F[1, 4] = sin_p * dl_da
        F[1, 5] = (sin_p * l * kappa - (cos_t - cos_p)) / (kappa * kappa) * dkappa_ddelta
        # theta row
        F[3, 2] = kappa * dl_dv
        F[3, 4] = kappa * dl_da
        F[3, 5] = l * dkappa_ddelta
    else:
        sin_t, cos_t = math.sin(theta), math.cos(theta)
        F[0, 2] = cos_t * dl_dv
        F[0, 3] = -l * sin_t
        F[0, 4] = cos_t * dl_da
        F[1, 2] = sin_t * dl_dv
        F[1, 3] = l * cos_t
        F[1, 4] = sin_t * dl_da
    return F


def linearize(x: VehicleState, u: ControlInput, dt: float, geom: VehicleGeometry) -> LinearizedStep:
    """Analytic partial derivatives of step() w.r.t. state and control."""
    return LinearizedStep(F=linearize_array(x.as_array(), u.as_array(), dt, geom))
