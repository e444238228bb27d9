"""Benchmark dynamics: a 10-state quadrotor and small desk-scale systems.

Each system exposes the drift, its analytic Jacobian, a constant input
matrix B, and interval extensions of drift and Jacobian over a box.  All
systems here are control-affine with constant B, which is what the
structural metric symmetry and the closed-loop hull composition rely on.

Quadrotor state ordering is fixed as
``[p_x, p_y, p_z, v_x, v_y, v_z, tau, phi, theta, psi]`` with positions in
meters (North-East-Down), velocities in m/s, mass-normalized thrust tau in
m/s^2, and XYZ Euler angles in radians.  The inputs are the derivatives
``[tau_dot, phi_dot, theta_dot, psi_dot]``.  Yaw does not enter the
translational accelerations, so its Jacobian column is structurally zero;
yaw is still commanded through the fourth input.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .intervals import Interval, IntervalMatrix

__all__ = [
    "GRAVITY",
    "ControlAffineSystem",
    "quad_dynamics",
    "quad_jacobians",
    "quadrotor_hover_linearization",
    "benchmark_system",
    "BENCHMARK_NAMES",
]

GRAVITY = 9.81

Box = tuple[np.ndarray, np.ndarray]


@dataclass(frozen=True, eq=False)
class ControlAffineSystem:
    """dx/dt = drift(x) + B u with exact and interval-extended derivatives."""

    name: str
    n: int
    m: int
    drift: Callable[[np.ndarray], np.ndarray]
    drift_jacobian: Callable[[np.ndarray], np.ndarray]
    input_matrix: np.ndarray
    interval_drift: Callable[[np.ndarray, np.ndarray], IntervalMatrix]
    interval_drift_jacobian: Callable[[np.ndarray, np.ndarray], IntervalMatrix]
    x_eq: np.ndarray
    u_eq: np.ndarray

    def f_ol(self, x: np.ndarray, u: np.ndarray) -> np.ndarray:
        """Open-loop field drift(x) + B u."""
        return self.drift(x) + self.input_matrix @ np.asarray(u, dtype=np.float64)


# ---------------------------------------------------------------------------
# Quadrotor


def _quad_accel(tau: float, phi: float, theta: float) -> np.ndarray:
    return np.array(
        [
            -tau * np.sin(theta),
            tau * np.cos(theta) * np.sin(phi),
            GRAVITY - tau * np.cos(theta) * np.cos(phi),
        ]
    )


def quad_dynamics(x: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Ten-state quadrotor field: [v; a(tau, phi, theta); u]."""
    x = np.asarray(x, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    tau, phi, theta = x[6], x[7], x[8]
    return np.concatenate([x[3:6], _quad_accel(tau, phi, theta), u])


def _quad_drift(x: np.ndarray) -> np.ndarray:
    return quad_dynamics(x, np.zeros(4))


def _quad_drift_jacobian(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    tau, phi, theta = x[6], x[7], x[8]
    st, ct = np.sin(theta), np.cos(theta)
    sp, cp = np.sin(phi), np.cos(phi)
    jac = np.zeros((10, 10))
    jac[0:3, 3:6] = np.eye(3)
    # rows 3..5: acceleration partials w.r.t. (tau, phi, theta)
    jac[3, 6] = -st
    jac[3, 8] = -tau * ct
    jac[4, 6] = ct * sp
    jac[4, 7] = tau * ct * cp
    jac[4, 8] = -tau * st * sp
    jac[5, 6] = -ct * cp
    jac[5, 7] = tau * ct * sp
    jac[5, 8] = tau * st * cp
    return jac


_QUAD_B = np.vstack([np.zeros((6, 4)), np.eye(4)])
_QUAD_X_EQ = np.array([0.0] * 6 + [GRAVITY, 0.0, 0.0, 0.0])
_QUAD_U_EQ = np.zeros(4)


def quad_jacobians(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(d drift / dx, B) at a state; B = [0; I] is constant."""
    return _quad_drift_jacobian(x), _QUAD_B.copy()


def quadrotor_hover_linearization() -> tuple[np.ndarray, np.ndarray]:
    """(A, B) of the quadrotor linearized at the hover equilibrium."""
    return _quad_drift_jacobian(_QUAD_X_EQ), _QUAD_B.copy()


def _box_entry(lo: np.ndarray, hi: np.ndarray, i: int) -> Interval:
    return Interval(float(lo[i]), float(hi[i]))


def _quad_interval_drift(lo: np.ndarray, hi: np.ndarray) -> IntervalMatrix:
    tau = _box_entry(lo, hi, 6)
    phi = _box_entry(lo, hi, 7)
    theta = _box_entry(lo, hi, 8)
    ct = theta.cos()
    ax = -(tau * theta.sin())
    ay = tau * ct * phi.sin()
    az = Interval.point(GRAVITY) - tau * ct * phi.cos()
    entries = [_box_entry(lo, hi, i) for i in range(3, 6)] + [ax, ay, az]
    entries += [Interval.point(0.0)] * 4
    return IntervalMatrix.column([e.lo for e in entries], [e.hi for e in entries])


def _quad_interval_drift_jacobian(lo: np.ndarray, hi: np.ndarray) -> IntervalMatrix:
    tau = _box_entry(lo, hi, 6)
    phi = _box_entry(lo, hi, 7)
    theta = _box_entry(lo, hi, 8)
    st, ct = theta.sin(), theta.cos()
    sp, cp = phi.sin(), phi.cos()
    zero = Interval.point(0.0)
    grid = [[zero] * 10 for _ in range(10)]
    for i in range(3):
        grid[i][3 + i] = Interval.point(1.0)
    grid[3][6] = -st
    grid[3][8] = -(tau * ct)
    grid[4][6] = ct * sp
    grid[4][7] = tau * ct * cp
    grid[4][8] = -(tau * st * sp)
    grid[5][6] = -(ct * cp)
    grid[5][7] = tau * ct * sp
    grid[5][8] = tau * st * cp
    return IntervalMatrix.from_scalar_intervals(grid)


_QUADROTOR = ControlAffineSystem(
    name="quadrotor10",
    n=10,
    m=4,
    drift=_quad_drift,
    drift_jacobian=_quad_drift_jacobian,
    input_matrix=_QUAD_B,
    interval_drift=_quad_interval_drift,
    interval_drift_jacobian=_quad_interval_drift_jacobian,
    x_eq=_QUAD_X_EQ,
    u_eq=_QUAD_U_EQ,
)


# ---------------------------------------------------------------------------
# Desk-scale systems


def _scalar_drift(x: np.ndarray) -> np.ndarray:
    return np.array([-x[0]])


def _scalar_jacobian(x: np.ndarray) -> np.ndarray:
    return np.array([[-1.0]])


def _scalar_interval_drift(lo: np.ndarray, hi: np.ndarray) -> IntervalMatrix:
    iv = -(_box_entry(lo, hi, 0))
    return IntervalMatrix.column([iv.lo], [iv.hi])


def _scalar_interval_jacobian(lo: np.ndarray, hi: np.ndarray) -> IntervalMatrix:
    return IntervalMatrix.point([[-1.0]])


_SCALAR = ControlAffineSystem(
    name="scalar_linear",
    n=1,
    m=1,
    drift=_scalar_drift,
    drift_jacobian=_scalar_jacobian,
    input_matrix=np.array([[1.0]]),
    interval_drift=_scalar_interval_drift,
    interval_drift_jacobian=_scalar_interval_jacobian,
    x_eq=np.zeros(1),
    u_eq=np.zeros(1),
)


def _planar_drift(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return np.array([-x[0] + x[1] - x[0] ** 3, 0.0])


def _planar_jacobian(x: np.ndarray) -> np.ndarray:
    return np.array([[-1.0 - 3.0 * x[0] ** 2, 1.0], [0.0, 0.0]])


def _planar_interval_drift(lo: np.ndarray, hi: np.ndarray) -> IntervalMatrix:
    x1 = _box_entry(lo, hi, 0)
    x2 = _box_entry(lo, hi, 1)
    f1 = -x1 + x2 - x1.powi(3)
    return IntervalMatrix.column([f1.lo, 0.0], [f1.hi, 0.0])


def _planar_interval_jacobian(lo: np.ndarray, hi: np.ndarray) -> IntervalMatrix:
    x1 = _box_entry(lo, hi, 0)
    j11 = Interval.point(-1.0) - 3.0 * x1.sq()
    grid = [
        [j11, Interval.point(1.0)],
        [Interval.point(0.0), Interval.point(0.0)],
    ]
    return IntervalMatrix.from_scalar_intervals(grid)


_PLANAR = ControlAffineSystem(
    name="planar_nonlinear",
    n=2,
    m=1,
    drift=_planar_drift,
    drift_jacobian=_planar_jacobian,
    input_matrix=np.array([[0.0], [1.0]]),
    interval_drift=_planar_interval_drift,
    interval_drift_jacobian=_planar_interval_jacobian,
    x_eq=np.zeros(2),
    u_eq=np.zeros(1),
)


_REGISTRY = {sys.name: sys for sys in (_SCALAR, _PLANAR, _QUADROTOR)}
BENCHMARK_NAMES = tuple(sorted(_REGISTRY))


def benchmark_system(name: str) -> ControlAffineSystem:
    try:
        return _REGISTRY[name]
    except KeyError:
        raise ValueError(f"unknown system {name!r}; available: {BENCHMARK_NAMES}") from None
