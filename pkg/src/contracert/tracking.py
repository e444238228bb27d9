"""Explicit tracking control, flat quadrotor references, and simulation.

The tracking law is two policy inferences plus vector arithmetic:

    u(t, x) = policy(x) - policy(x_ref(t)) + u_ref(t)

On a certified problem this stabilizes any dynamically feasible reference
exponentially at the certified rate; no geodesic search, no error-state
augmentation.

References for the quadrotor come from differential flatness: a smooth
position/yaw curve determines thrust and attitude through the
accelerations, and the inputs are the attitude/thrust derivatives.  The
distance surrogate recorded in simulations is d(t) =
||theta(x_ref(t)) (x(t) - x_ref(t))||_2, a local stand-in for the geodesic
metric distance; decay-rate checks carry slack for the surrogate gap.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline

from .boundprop import Region
from .nets import PolicyNet
from .problem import ContractionProblem
from .systems import GRAVITY, ControlAffineSystem, benchmark_system

__all__ = [
    "InfeasibleReferenceError",
    "ReferenceTrajectory",
    "tracking_control",
    "flat_reference",
    "FLAT_SHAPES",
    "SimulationResult",
    "simulate",
    "TubeReport",
    "ball_tube_check",
]

FEASIBILITY_TOL = 1e-4
MIN_THRUST = 0.1 * GRAVITY
DIVERGENCE_NORM = 1e6


class InfeasibleReferenceError(ValueError):
    """Reference rejected: thrust singularity or dynamics residual too large."""


def tracking_control(
    policy: PolicyNet, x: np.ndarray, x_ref: np.ndarray, u_ref: np.ndarray
) -> np.ndarray:
    """policy(x) - policy(x_ref) + u_ref; returns u_ref exactly at x = x_ref."""
    return policy(x) - policy(x_ref) + np.asarray(u_ref, dtype=np.float64)


@dataclass(frozen=True, eq=False)
class ReferenceTrajectory:
    """Sampled feasible pair (x_ref(t), u_ref(t)) plus the flat outputs used."""

    times: np.ndarray
    states: np.ndarray
    inputs: np.ndarray
    flat_outputs: np.ndarray
    feasibility_residual: float
    shape: str

    @property
    def duration(self) -> float:
        return float(self.times[-1] - self.times[0])


# ---------------------------------------------------------------------------
# Flat output curves (position + yaw and their first two derivatives)


def _hover_curves(t, p):
    center = np.asarray(p["center"], dtype=np.float64)
    pos = np.tile(center, (t.size, 1))
    zeros = np.zeros_like(pos)
    return pos, zeros, zeros


def _figure_eight_curves(t, p):
    cx, cy, cz = p["center"]
    ax, ay, az = p["amp_x"], p["amp_y"], p["amp_z"]
    w = 2.0 * np.pi / p["period"]
    pos = np.stack(
        [
            cx + ax * np.sin(w * t),
            cy + ay * np.sin(2 * w * t),
            cz + az * np.sin(w * t),
        ],
        axis=1,
    )
    vel = np.stack(
        [
            ax * w * np.cos(w * t),
            2 * ay * w * np.cos(2 * w * t),
            az * w * np.cos(w * t),
        ],
        axis=1,
    )
    acc = np.stack(
        [
            -ax * w**2 * np.sin(w * t),
            -4 * ay * w**2 * np.sin(2 * w * t),
            -az * w**2 * np.sin(w * t),
        ],
        axis=1,
    )
    return pos, vel, acc


def _helix_curves(t, p):
    cx, cy, cz = p["center"]
    r, climb = p["radius"], p["climb_rate"]
    w = 2.0 * np.pi / p["period"]
    pos = np.stack(
        [cx + r * np.cos(w * t), cy + r * np.sin(w * t), cz + climb * t], axis=1
    )
    vel = np.stack(
        [-r * w * np.sin(w * t), r * w * np.cos(w * t), np.full_like(t, climb)], axis=1
    )
    acc = np.stack(
        [-r * w**2 * np.cos(w * t), -r * w**2 * np.sin(w * t), np.zeros_like(t)], axis=1
    )
    return pos, vel, acc


def _trefoil_curves(t, p):
    cx, cy, cz = p["center"]
    a, av = p["amplitude"], p["vertical"]
    w = 2.0 * np.pi / p["period"]
    pos = np.stack(
        [
            cx + a * (np.sin(w * t) + 2 * np.sin(2 * w * t)),
            cy + a * (np.cos(w * t) - 2 * np.cos(2 * w * t)),
            cz - av * np.sin(3 * w * t),
        ],
        axis=1,
    )
    vel = np.stack(
        [
            a * w * (np.cos(w * t) + 4 * np.cos(2 * w * t)),
            a * w * (-np.sin(w * t) + 4 * np.sin(2 * w * t)),
            -3 * av * w * np.cos(3 * w * t),
        ],
        axis=1,
    )
    acc = np.stack(
        [
            a * w**2 * (-np.sin(w * t) - 8 * np.sin(2 * w * t)),
            a * w**2 * (-np.cos(w * t) + 8 * np.cos(2 * w * t)),
            9 * av * w**2 * np.sin(3 * w * t),
        ],
        axis=1,
    )
    return pos, vel, acc


FLAT_SHAPES = {
    "hover": (
        _hover_curves,
        {"center": (0.0, 0.0, 0.0), "yaw": 0.0},
    ),
    "figure_eight": (
        _figure_eight_curves,
        {
            "center": (0.0, 0.0, 0.0),
            "amp_x": 2.0,
            "amp_y": 1.0,
            "amp_z": 0.0,
            "period": 10.0,
            "yaw": 0.0,
        },
    ),
    "helix": (
        _helix_curves,
        {
            "center": (0.0, 0.0, 0.0),
            "radius": 1.5,
            "climb_rate": -0.2,
            "period": 8.0,
            "yaw": 0.0,
        },
    ),
    "trefoil": (
        _trefoil_curves,
        {
            "center": (0.0, 0.0, 0.0),
            "amplitude": 0.8,
            "vertical": 0.4,
            "period": 15.0,
            "yaw": 0.0,
        },
    ),
}


def _derivative_samples(y: np.ndarray, dt: float) -> np.ndarray:
    """Fourth-order derivative of uniformly sampled curves (per column).

    Central stencil inside, one-sided fourth-order stencils at the two
    samples on each end.
    """
    y = np.asarray(y, dtype=np.float64)
    if y.shape[0] < 5:
        raise ValueError("need at least 5 samples for fourth-order derivatives")
    out = np.empty_like(y)
    out[2:-2] = (-y[4:] + 8 * y[3:-1] - 8 * y[1:-3] + y[:-4]) / (12 * dt)
    out[0] = (-25 * y[0] + 48 * y[1] - 36 * y[2] + 16 * y[3] - 3 * y[4]) / (12 * dt)
    out[1] = (-3 * y[0] - 10 * y[1] + 18 * y[2] - 6 * y[3] + y[4]) / (12 * dt)
    out[-2] = (3 * y[-1] + 10 * y[-2] - 18 * y[-3] + 6 * y[-4] - y[-5]) / (12 * dt)
    out[-1] = (25 * y[-1] - 48 * y[-2] + 36 * y[-3] - 16 * y[-4] + 3 * y[-5]) / (12 * dt)
    return out


def invert_flat_outputs(acc: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Thrust and attitude from accelerations: (tau, phi, theta) per sample.

    tau = sqrt(ax^2 + ay^2 + (g - az)^2), theta = asin(-ax / tau),
    phi = atan2(ay, g - az); unique on |phi|, |theta| < pi/2.  Raises when
    the thrust (or its in-plane component) collapses toward free fall.
    """
    acc = np.atleast_2d(np.asarray(acc, dtype=np.float64))
    ax, ay = acc[:, 0], acc[:, 1]
    residual_z = GRAVITY - acc[:, 2]
    # the vertical thrust component bounds tau from below and keeps phi and
    # theta inside (-pi/2, pi/2), so one floor covers the whole domain
    if np.min(residual_z) < MIN_THRUST:
        bad = float(np.min(residual_z))
        raise InfeasibleReferenceError(
            f"thrust singularity: vertical thrust component drops to {bad:.3f} m/s^2 "
            f"(< {MIN_THRUST:.3f}); the reference approaches free fall"
        )
    tau = np.sqrt(ax**2 + ay**2 + residual_z**2)
    theta = np.arcsin(-ax / tau)
    phi = np.arctan2(ay, residual_z)
    return tau, phi, theta


def flat_reference(
    shape: str,
    duration: float,
    dt: float,
    params: dict | None = None,
    system: ControlAffineSystem | None = None,
) -> ReferenceTrajectory:
    """Dynamically feasible quadrotor reference from a smooth flat curve.

    The state trajectory is exact given the closed-form position curve;
    the inputs are fourth-order finite differences of the thrust/attitude
    curves, and the dynamics residual of the assembled pair is checked
    against the feasibility tolerance before returning.
    """
    if shape not in FLAT_SHAPES:
        raise ValueError(f"unknown shape {shape!r}; available: {sorted(FLAT_SHAPES)}")
    if duration <= 0 or dt <= 0:
        raise ValueError("duration and dt must be positive")
    system = system or benchmark_system("quadrotor10")
    curves, defaults = FLAT_SHAPES[shape]
    merged = dict(defaults)
    if params:
        unknown = set(params) - set(defaults)
        if unknown:
            raise ValueError(f"unknown parameters for {shape!r}: {sorted(unknown)}")
        merged.update(params)

    steps = int(round(duration / dt))
    times = np.arange(steps + 1) * dt
    pos, vel, acc = curves(times, merged)
    tau, phi, theta = invert_flat_outputs(acc)
    psi = np.full_like(times, float(merged["yaw"]))

    states = np.column_stack([pos, vel, tau, phi, theta, psi])
    attitude = np.column_stack([tau, phi, theta, psi])
    inputs = _derivative_samples(attitude, dt)
    flat_outputs = np.column_stack([pos, psi])

    # dynamics residual with derivatives from plain central differences
    xdot = (states[2:] - states[:-2]) / (2 * dt)
    field = np.array(
        [system.f_ol(states[k], inputs[k]) for k in range(1, states.shape[0] - 1)]
    )
    residual = float(np.max(np.linalg.norm(xdot - field, axis=1))) if xdot.size else 0.0
    if residual > FEASIBILITY_TOL:
        raise InfeasibleReferenceError(
            f"reference violates the dynamics: residual {residual:.2e} > {FEASIBILITY_TOL:.0e}"
        )
    return ReferenceTrajectory(
        times=times,
        states=states,
        inputs=inputs,
        flat_outputs=flat_outputs,
        feasibility_residual=residual,
        shape=shape,
    )


# ---------------------------------------------------------------------------
# Closed-loop simulation


@dataclass(eq=False)
class SimulationResult:
    times: np.ndarray
    reference: ReferenceTrajectory
    trajectories: list[np.ndarray]
    errors: list[np.ndarray]
    fitted_rates: list[float]
    diverged: list[bool] = field(default_factory=list)


def _fit_decay_rate(times: np.ndarray, dhat: np.ndarray, window: float) -> float:
    """Least-squares slope of log d(t) over [0, window]."""
    mask = (times <= times[0] + window) & (dhat > 1e-12)
    if mask.sum() < 2:
        return float("nan")
    slope = np.polyfit(times[mask], np.log(dhat[mask]), 1)[0]
    return float(slope)


def simulate(
    problem: ContractionProblem,
    reference: ReferenceTrajectory,
    initial_conditions: np.ndarray,
    dt: float = 1e-3,
    rate_window: float | None = None,
) -> SimulationResult:
    """Fixed-step RK4 of the closed loop under the tracking policy.

    The reference is interpolated with cubic splines so the integrator can
    evaluate it at stage times.  Each trajectory records the weighted error
    d(t) = ||theta(x_ref)(x - x_ref)||_2 and a fitted exponential rate over
    ``rate_window`` seconds (default 5/rate).
    """
    ics = np.atleast_2d(np.asarray(initial_conditions, dtype=np.float64))
    if ics.shape[1] != problem.system.n:
        raise ValueError("initial conditions do not match the state dimension")
    x_spline = CubicSpline(reference.times, reference.states, axis=0)
    u_spline = CubicSpline(reference.times, reference.inputs, axis=0)
    system = problem.system
    policy = problem.policy

    def field_at(t, x):
        u = tracking_control(policy, x, x_spline(t), u_spline(t))
        return system.f_ol(x, u)

    steps = int(round(reference.duration / dt))
    times = reference.times[0] + np.arange(steps + 1) * dt
    if rate_window is None:
        rate_window = 5.0 / problem.rate if problem.rate > 0 else reference.duration

    trajectories, errors, rates, diverged = [], [], [], []
    for x0 in ics:
        xs = np.empty((steps + 1, system.n))
        xs[0] = x0
        flagged = False
        last = steps
        for k in range(steps):
            t = times[k]
            x = xs[k]
            k1 = field_at(t, x)
            k2 = field_at(t + dt / 2, x + dt / 2 * k1)
            k3 = field_at(t + dt / 2, x + dt / 2 * k2)
            k4 = field_at(t + dt, x + dt * k3)
            xs[k + 1] = x + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
            if not np.all(np.isfinite(xs[k + 1])) or np.linalg.norm(xs[k + 1]) > DIVERGENCE_NORM:
                flagged = True
                last = k + 1
                break
        xs = xs[: last + 1]
        ref_states = x_spline(times[: last + 1])
        dhat = np.array(
            [
                np.linalg.norm(problem.theta.theta(ref_states[k]) @ (xs[k] - ref_states[k]))
                for k in range(xs.shape[0])
            ]
        )
        trajectories.append(xs)
        errors.append(dhat)
        rates.append(_fit_decay_rate(times[: last + 1], dhat, rate_window))
        diverged.append(flagged)
    return SimulationResult(
        times=times,
        reference=reference,
        trajectories=trajectories,
        errors=errors,
        fitted_rates=rates,
        diverged=diverged,
    )


# ---------------------------------------------------------------------------
# l2-ball tubes around a reference


@dataclass(frozen=True)
class TubeReport:
    """Largest Euclidean ball radius that fits around the reference inside
    the region, with the induced metric-ball radii.

    ``geodesic_radius`` = sqrt(metric_lower) * max_ball_radius bounds a
    metric ball contained in the region; initial conditions within
    ``initial_radius`` = sqrt(metric_lower/metric_upper) * max_ball_radius
    of the reference start inside that metric ball.
    """

    ok: bool
    max_ball_radius: float
    geodesic_radius: float
    initial_radius: float
    first_violation_time: float | None


def ball_tube_check(
    region: Region,
    reference: ReferenceTrajectory,
    radius: float,
    metric_lower: float,
    metric_upper: float,
) -> TubeReport:
    """Check {x : ||x - x_ref(t)|| <= radius} stays inside the region."""
    margins = np.minimum(
        reference.states - region.lo[None, :], region.hi[None, :] - reference.states
    ).min(axis=1)
    max_radius = float(np.min(margins))
    violations = margins < radius
    first_violation = (
        float(reference.times[int(np.argmax(violations))]) if violations.any() else None
    )
    scale = np.sqrt(metric_lower)
    return TubeReport(
        ok=bool(max_radius >= radius and max_radius > 0.0),
        max_ball_radius=max_radius,
        geodesic_radius=scale * max_radius,
        initial_radius=scale / np.sqrt(metric_upper) * max_radius,
        first_violation_time=first_violation,
    )
