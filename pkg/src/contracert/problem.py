"""Bundles a system with its policy/metric nets and certification hyperparameters."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, replace

import numpy as np

from .linalg import cholesky_upper, solve_care
from .nets import MetricNet, MlpParams, PolicyNet, init_residual_mlp, killing_projection
from .systems import ControlAffineSystem

__all__ = ["ContractionProblem", "warm_start_problem", "problem_fingerprint"]


@dataclass(frozen=True, eq=False)
class ContractionProblem:
    """Dynamics + nets + (rate, metric bounds) for loss and certification.

    ``rate`` is the exponential contraction rate c >= 0; ``metric_lower`` and
    ``metric_upper`` are the required uniform eigenvalue bounds (a, b) of the
    metric over the region.
    """

    system: ControlAffineSystem
    theta: MetricNet
    policy: PolicyNet
    rate: float
    metric_lower: float
    metric_upper: float

    def __post_init__(self):
        n, m = self.system.n, self.system.m
        if self.policy.n != n or self.policy.m != m:
            raise ValueError("policy dimensions do not match the system")
        if self.theta.n != n:
            raise ValueError("metric dimensions do not match the system")
        if self.rate < 0.0:
            raise ValueError("contraction rate must be nonnegative")
        if not (0.0 < self.metric_lower < self.metric_upper):
            raise ValueError("metric bounds must satisfy 0 < lower < upper")

    def closed_loop_field(self, x: np.ndarray) -> np.ndarray:
        return self.system.drift(x) + self.system.input_matrix @ self.policy(x)

    def closed_loop_jacobian(self, x: np.ndarray) -> np.ndarray:
        return self.system.drift_jacobian(x) + self.system.input_matrix @ self.policy.jacobian(x)

    def with_nets(self, theta: MetricNet, policy: PolicyNet) -> "ContractionProblem":
        return replace(self, theta=theta, policy=policy)


def warm_start_problem(
    system: ControlAffineSystem,
    rate: float,
    metric_lower: float,
    metric_upper: float,
    hidden: tuple[int, ...] = (128, 128),
    seed: int | np.random.Generator = 0,
    lqr_q: np.ndarray | None = None,
    lqr_r: np.ndarray | None = None,
) -> ContractionProblem:
    """LQR-seeded problem with zero-initialized residual nets.

    Linearizes at the system equilibrium, solves the Riccati equation for
    (K, S), and installs K as the policy base and cholesky(S)^T as the metric
    warm start, so at step 0 the policy is exactly the LQR law and the metric
    is exactly S.  The LQR weights default to identity; they only need to
    produce a stabilizing seed, so they are exposed rather than tuned.
    """
    a_lin = system.drift_jacobian(system.x_eq)
    b = system.input_matrix
    q = np.eye(system.n) if lqr_q is None else np.asarray(lqr_q, dtype=np.float64)
    r = np.eye(system.m) if lqr_r is None else np.asarray(lqr_r, dtype=np.float64)
    care_gain, riccati = solve_care(a_lin, b, q, r)
    gain = -care_gain  # feedback convention: u = gain (x - x_eq) stabilizes

    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    projection = killing_projection(b)
    n_packed = system.n * (system.n + 1) // 2
    policy_res = init_residual_mlp(system.n, hidden, system.m, rng)
    theta_res = init_residual_mlp(projection.shape[0], hidden, n_packed, rng)

    policy = PolicyNet(gain=gain, x_eq=system.x_eq, u_eq=system.u_eq, residual=policy_res)
    theta = MetricNet(
        warm_start=cholesky_upper(riccati),
        residual=theta_res,
        input_projection=projection,
    )
    return ContractionProblem(
        system=system,
        theta=theta,
        policy=policy,
        rate=rate,
        metric_lower=metric_lower,
        metric_upper=metric_upper,
    )


def _digest_arrays(h, arrays) -> None:
    for arr in arrays:
        arr = np.ascontiguousarray(arr, dtype=np.float64)
        h.update(str(arr.shape).encode())
        h.update(arr.tobytes())


def _net_arrays(net: MlpParams):
    for w, b in net.layers:
        yield w
        yield b


def problem_fingerprint(problem: ContractionProblem) -> str:
    """Deterministic hash of everything the certificate verdict depends on."""
    h = hashlib.sha256()
    h.update(problem.system.name.encode())
    h.update(
        f"{problem.rate!r}|{problem.metric_lower!r}|{problem.metric_upper!r}".encode()
    )
    _digest_arrays(
        h,
        [
            problem.policy.gain,
            problem.policy.x_eq,
            problem.policy.u_eq,
            *_net_arrays(problem.policy.residual),
            problem.theta.warm_start,
            problem.theta.input_projection,
            *_net_arrays(problem.theta.residual),
        ],
    )
    return h.hexdigest()
