"""Softplus MLPs plus the residual-on-warm-start policy and metric nets.

The policy is an LQR law plus a residual MLP; the metric factor is a
constant upper-triangular warm start plus a residual MLP whose input is
first projected onto the coordinates orthogonal to the input directions,
so the input vector fields leave the metric invariant by construction.
Softplus activations keep everything C^1, which the contraction analysis
needs (ReLU would not do).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.special

__all__ = [
    "MlpParams",
    "PolicyNet",
    "MetricNet",
    "mlp_forward",
    "mlp_preactivations",
    "mlp_jacobian",
    "init_residual_mlp",
    "upper_indices",
    "pack_upper",
    "unpack_upper",
    "killing_projection",
]

PACKING_TAG = "upper-row-major"


def softplus(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def sigmoid(x: np.ndarray) -> np.ndarray:
    return scipy.special.expit(np.asarray(x, dtype=np.float64))


@dataclass(frozen=True, eq=False)
class MlpParams:
    """Weights/biases of an MLP with softplus hidden layers, identity output."""

    layers: tuple[tuple[np.ndarray, np.ndarray], ...]

    def __post_init__(self):
        if not self.layers:
            raise ValueError("MLP needs at least one layer")
        prev_out = None
        for idx, (w, b) in enumerate(self.layers):
            if w.ndim != 2 or b.ndim != 1 or w.shape[0] != b.shape[0]:
                raise ValueError(f"layer {idx}: bad shapes {w.shape}, {b.shape}")
            if not (np.isfinite(w).all() and np.isfinite(b).all()):
                raise ValueError(f"layer {idx}: non-finite parameters")
            if prev_out is not None and w.shape[1] != prev_out:
                raise ValueError(
                    f"layer {idx}: input dim {w.shape[1]} != previous output {prev_out}"
                )
            prev_out = w.shape[0]

    @property
    def in_dim(self) -> int:
        return self.layers[0][0].shape[1]

    @property
    def out_dim(self) -> int:
        return self.layers[-1][0].shape[0]


def mlp_forward(net: MlpParams, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (net.in_dim,):
        raise ValueError(f"expected input of shape ({net.in_dim},), got {x.shape}")
    h = x
    last = len(net.layers) - 1
    for idx, (w, b) in enumerate(net.layers):
        z = w @ h + b
        h = z if idx == last else softplus(z)
    return h


def mlp_preactivations(net: MlpParams, x: np.ndarray) -> list[np.ndarray]:
    """Pre-activation vectors z_k of every layer, final layer included."""
    h = np.asarray(x, dtype=np.float64)
    zs = []
    last = len(net.layers) - 1
    for idx, (w, b) in enumerate(net.layers):
        z = w @ h + b
        zs.append(z)
        h = z if idx == last else softplus(z)
    return zs


def mlp_jacobian(net: MlpParams, x: np.ndarray) -> np.ndarray:
    """Exact Jacobian: chain of weight matrices and sigmoid diagonal factors."""
    zs = mlp_preactivations(net, x)
    jac = net.layers[0][0]
    for idx in range(1, len(net.layers)):
        w = net.layers[idx][0]
        jac = w @ (sigmoid(zs[idx - 1])[:, None] * jac)
    return jac


def init_residual_mlp(
    in_dim: int,
    hidden: tuple[int, ...],
    out_dim: int,
    rng: np.random.Generator,
) -> MlpParams:
    """Residual net whose output and Jacobian are identically zero at init.

    Hidden weights get a small-variance normal init (std 1/sqrt(fan_in));
    the final layer is zeroed out entirely, so the warm start is exact at
    step 0 while the hidden features stay trainable.
    """
    sizes = (in_dim, *hidden, out_dim)
    layers = []
    for k in range(len(sizes) - 1):
        fan_in, fan_out = sizes[k], sizes[k + 1]
        if k == len(sizes) - 2:
            w = np.zeros((fan_out, fan_in))
        else:
            scale = 1.0 / np.sqrt(max(fan_in, 1))
            w = rng.normal(scale=scale, size=(fan_out, fan_in))
        layers.append((w, np.zeros(fan_out)))
    return MlpParams(tuple(layers))


# ---------------------------------------------------------------------------
# Upper-triangle packing (row-major over i <= j, fixed for checkpoint
# portability; see PACKING_TAG)


def upper_indices(n: int) -> tuple[np.ndarray, np.ndarray]:
    rows, cols = np.triu_indices(n)
    return rows, cols


def pack_upper(mat: np.ndarray) -> np.ndarray:
    n = mat.shape[0]
    rows, cols = upper_indices(n)
    return np.asarray(mat, dtype=np.float64)[rows, cols]


def unpack_upper(vec: np.ndarray, n: int) -> np.ndarray:
    vec = np.asarray(vec, dtype=np.float64)
    if vec.shape != (n * (n + 1) // 2,):
        raise ValueError(f"expected {n * (n + 1) // 2} packed entries, got {vec.shape}")
    out = np.zeros((n, n))
    rows, cols = upper_indices(n)
    out[rows, cols] = vec
    return out


def killing_projection(b: np.ndarray) -> np.ndarray:
    """Rows spanning the left null space of the constant input matrix B.

    Feeding the metric net P @ x makes every constant input direction a
    symmetry of the metric.  When B has the [0; I] shape the projection
    selects the first n - m coordinates exactly; otherwise an orthonormal
    basis comes from the SVD-based null space.
    """
    b = np.asarray(b, dtype=np.float64)
    n, m = b.shape
    if n < m:
        raise ValueError("input matrix must have at least as many rows as columns")
    top, bottom = b[: n - m], b[n - m :]
    if np.array_equal(top, np.zeros((n - m, m))) and np.array_equal(bottom, np.eye(m)):
        return np.hstack([np.eye(n - m), np.zeros((n - m, m))])
    return scipy.linalg.null_space(b.T).T


@dataclass(frozen=True, eq=False)
class PolicyNet:
    """u = K (x - x_eq) + u_eq + residual(x); exactly the LQR law at zero init."""

    gain: np.ndarray
    x_eq: np.ndarray
    u_eq: np.ndarray
    residual: MlpParams

    def __post_init__(self):
        m, n = self.gain.shape
        if self.x_eq.shape != (n,) or self.u_eq.shape != (m,):
            raise ValueError("equilibrium dimensions do not match the gain")
        if self.residual.in_dim != n or self.residual.out_dim != m:
            raise ValueError("residual net dimensions do not match the gain")

    @property
    def n(self) -> int:
        return self.gain.shape[1]

    @property
    def m(self) -> int:
        return self.gain.shape[0]

    def __call__(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        return self.gain @ (x - self.x_eq) + self.u_eq + mlp_forward(self.residual, x)

    def jacobian(self, x: np.ndarray) -> np.ndarray:
        return self.gain + mlp_jacobian(self.residual, x)


@dataclass(frozen=True, eq=False)
class MetricNet:
    """Upper-triangular metric factor: warm start plus projected residual.

    theta(x) = warm_start + unpack(residual(P x)); the metric is
    theta(x)^T theta(x).  Coordinates annihilated by P cannot move theta,
    which is the structural symmetry condition for constant input maps.
    """

    warm_start: np.ndarray
    residual: MlpParams
    input_projection: np.ndarray
    n: int = field(default=0)

    def __post_init__(self):
        n = self.warm_start.shape[0]
        object.__setattr__(self, "n", n)
        if self.warm_start.shape != (n, n):
            raise ValueError("warm start must be square")
        if np.any(np.tril(self.warm_start, -1) != 0.0):
            raise ValueError("warm start must be upper triangular")
        if self.input_projection.shape[1] != n:
            raise ValueError("projection must map the full state")
        if self.residual.in_dim != self.input_projection.shape[0]:
            raise ValueError("residual input must match the projection output")
        if self.residual.out_dim != n * (n + 1) // 2:
            raise ValueError("residual must emit one value per upper-triangle slot")

    def theta(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        packed = mlp_forward(self.residual, self.input_projection @ x)
        return self.warm_start + unpack_upper(packed, self.n)

    def metric(self, x: np.ndarray) -> np.ndarray:
        th = self.theta(x)
        return th.T @ th

    def theta_jacobian_packed(self, x: np.ndarray) -> np.ndarray:
        """d(packed theta)/dx, shape (n(n+1)/2, n)."""
        x = np.asarray(x, dtype=np.float64)
        inner = mlp_jacobian(self.residual, self.input_projection @ x)
        return inner @ self.input_projection

    def directional_derivative(self, x: np.ndarray, v: np.ndarray) -> np.ndarray:
        """Sum_i (d theta / d x_i)(x) v_i via forward-mode along v."""
        x = np.asarray(x, dtype=np.float64)
        v = np.asarray(v, dtype=np.float64)
        if v.shape != (self.n,):
            raise ValueError(f"direction must have shape ({self.n},), got {v.shape}")
        inner = mlp_jacobian(self.residual, self.input_projection @ x)
        packed = inner @ (self.input_projection @ v)
        return unpack_upper(packed, self.n)
