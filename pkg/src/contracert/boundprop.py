"""Interval hulls of the contraction quantities over a partitioned box region.

Propagates a box of states through the policy and metric nets (interval
bound propagation), through the analytic interval Jacobians of the
dynamics, and assembles a sound hull of the factored contraction matrix

    G(x) = theta(x)^T [ d_{f(x)} theta(x) + theta(x) (df/dx(x) + c I) ]

for the closed loop, keeping the bracketed sum together before the left
factor multiplies in.  Bounding this factored form instead of its
symmetric expansion is what keeps the dependency blow-up of interval
arithmetic in check; ``scalar_contraction_bound_*`` demonstrate the gap on
a scalar instance.

Everything here is torch-backed so the hull bounds stay differentiable
with respect to the network parameters.  Cells of a region are processed
independently and reduced by entrywise union, so evaluation order cannot
change results.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np
import torch

from .intervals import (
    Interval,
    IntervalMatrix,
    matmul_point_interval,
    scale_cols,
)
from .nets import MetricNet, MlpParams, pack_upper, upper_indices
from .problem import ContractionProblem
from .systems import ControlAffineSystem

__all__ = [
    "Region",
    "HullReport",
    "BoundContext",
    "PROPAGATOR_TAGS",
    "hull_mlp_output",
    "hull_mlp_jacobian",
    "hull_directional_derivative",
    "hull_contraction_matrix",
    "hull_metric",
    "hull_over_region",
    "scalar_contraction_bound_factored",
    "scalar_contraction_bound_expanded",
]

# A linear-relaxation propagator can register here behind the same
# interface; plain interval bound propagation is the one that ships.
PROPAGATOR_TAGS = ("ibp",)


@dataclass(frozen=True)
class Region:
    """Axis-aligned box with a per-coordinate uniform partition grid."""

    lo: np.ndarray
    hi: np.ndarray
    partitions: tuple[int, ...]

    def __post_init__(self):
        lo = np.asarray(self.lo, dtype=np.float64)
        hi = np.asarray(self.hi, dtype=np.float64)
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)
        object.__setattr__(self, "partitions", tuple(int(p) for p in self.partitions))
        if lo.ndim != 1 or lo.shape != hi.shape:
            raise ValueError("region bounds must be matching 1-D arrays")
        if len(self.partitions) != lo.size:
            raise ValueError("one partition count per coordinate required")
        if np.any(lo > hi):
            bad = int(np.argmax(lo > hi))
            raise ValueError(f"region coordinate {bad}: lo={lo[bad]} > hi={hi[bad]}")
        if any(p < 1 for p in self.partitions):
            raise ValueError("partition counts must be >= 1")

    @property
    def n(self) -> int:
        return self.lo.size

    @property
    def num_cells(self) -> int:
        return int(np.prod(self.partitions))

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.lo + self.hi)

    def _boundary(self, coord: int, k: int) -> float:
        # endpoints pinned so the cells tile the box exactly
        count = self.partitions[coord]
        if k == 0:
            return float(self.lo[coord])
        if k == count:
            return float(self.hi[coord])
        width = self.hi[coord] - self.lo[coord]
        return float(self.lo[coord] + width * (k / count))

    def cell(self, multi_index: Sequence[int]) -> tuple[np.ndarray, np.ndarray]:
        """Deterministic cell bounds from a per-coordinate index."""
        lo = np.empty(self.n)
        hi = np.empty(self.n)
        for coord, k in enumerate(multi_index):
            if not 0 <= k < self.partitions[coord]:
                raise IndexError(f"cell index {k} out of range on coordinate {coord}")
            lo[coord] = self._boundary(coord, k)
            hi[coord] = self._boundary(coord, k + 1)
        return lo, hi

    def cell_from_flat(self, flat: int) -> tuple[np.ndarray, np.ndarray]:
        return self.cell(np.unravel_index(flat, self.partitions))

    def cells(self) -> Iterator[tuple[np.ndarray, np.ndarray]]:
        """All cells in row-major multi-index order."""
        for flat in range(self.num_cells):
            yield self.cell_from_flat(flat)

    def owning_cell(self, x: np.ndarray) -> int:
        """Flat index of a cell containing x (boundaries go to the lower cell)."""
        idx = []
        for coord in range(self.n):
            width = self.hi[coord] - self.lo[coord]
            if width == 0.0:
                idx.append(0)
                continue
            frac = (x[coord] - self.lo[coord]) / width
            k = min(int(frac * self.partitions[coord]), self.partitions[coord] - 1)
            idx.append(max(k, 0))
        return int(np.ravel_multi_index(idx, self.partitions))

    def contains(self, x: np.ndarray, atol: float = 0.0) -> bool:
        return bool(np.all(x >= self.lo - atol) and np.all(x <= self.hi + atol))

    def scaled(self, fraction: float) -> "Region":
        """Shrink the box radii by ``fraction`` about its center."""
        center = self.center
        lo = center + fraction * (self.lo - center)
        hi = center + fraction * (self.hi - center)
        return Region(lo, hi, self.partitions)

    def sample(self, rng: np.random.Generator, count: int) -> np.ndarray:
        return self.lo + rng.uniform(size=(count, self.n)) * (self.hi - self.lo)


@dataclass(eq=False)
class HullReport:
    """Per-cell and union hulls of G and M = theta^T theta over a region."""

    g_hull: IntervalMatrix
    m_hull: IntervalMatrix
    cell_g_hulls: list[IntervalMatrix]
    cell_m_hulls: list[IntervalMatrix]
    propagator_tag: str = "ibp"
    failed_cells: tuple[int, ...] = ()


# ---------------------------------------------------------------------------
# Tensor views of a problem


def _layers_to_tensors(net: MlpParams, requires_grad: bool = False):
    layers = []
    for w, b in net.layers:
        wt = torch.tensor(w, dtype=torch.float64, requires_grad=requires_grad)
        bt = torch.tensor(b, dtype=torch.float64, requires_grad=requires_grad)
        layers.append((wt, bt))
    return layers


@dataclass(eq=False)
class BoundContext:
    """Torch-tensor view of a contraction problem used by all hull routines.

    Training builds one of these with ``requires_grad`` parameters and keeps
    it across steps; certification builds a constant one per call.
    """

    system: ControlAffineSystem
    gain: torch.Tensor
    x_eq: torch.Tensor
    u_eq: torch.Tensor
    policy_layers: list[tuple[torch.Tensor, torch.Tensor]]
    warm_packed: torch.Tensor
    theta_layers: list[tuple[torch.Tensor, torch.Tensor]]
    projection: torch.Tensor
    input_matrix: torch.Tensor
    rate: float
    metric_lower: float
    metric_upper: float
    triu: tuple[torch.Tensor, torch.Tensor] = field(init=False)

    def __post_init__(self):
        rows, cols = upper_indices(self.n)
        self.triu = (torch.from_numpy(rows.copy()), torch.from_numpy(cols.copy()))

    @property
    def n(self) -> int:
        return self.system.n

    @property
    def m(self) -> int:
        return self.system.m

    @classmethod
    def from_problem(cls, problem: ContractionProblem, requires_grad: bool = False) -> "BoundContext":
        return cls(
            system=problem.system,
            gain=torch.tensor(problem.policy.gain, dtype=torch.float64, requires_grad=requires_grad),
            x_eq=torch.tensor(problem.policy.x_eq.reshape(-1, 1), dtype=torch.float64),
            u_eq=torch.tensor(problem.policy.u_eq.reshape(-1, 1), dtype=torch.float64),
            policy_layers=_layers_to_tensors(problem.policy.residual, requires_grad),
            warm_packed=torch.tensor(
                pack_upper(problem.theta.warm_start), dtype=torch.float64, requires_grad=requires_grad
            ),
            theta_layers=_layers_to_tensors(problem.theta.residual, requires_grad),
            projection=torch.tensor(problem.theta.input_projection, dtype=torch.float64),
            input_matrix=torch.tensor(problem.system.input_matrix, dtype=torch.float64),
            rate=problem.rate,
            metric_lower=problem.metric_lower,
            metric_upper=problem.metric_upper,
        )

    def unpack_interval(self, packed: IntervalMatrix) -> IntervalMatrix:
        """Packed upper-triangle interval column -> (n, n) interval matrix."""
        rows, cols = self.triu
        zeros = torch.zeros((self.n, self.n), dtype=torch.float64)
        lo = zeros.index_put((rows, cols), packed.lo.reshape(-1))
        hi = zeros.index_put((rows, cols), packed.hi.reshape(-1))
        return IntervalMatrix(lo, hi)


def _box_column(lo: np.ndarray, hi: np.ndarray) -> IntervalMatrix:
    return IntervalMatrix.column(np.asarray(lo, dtype=np.float64), np.asarray(hi, dtype=np.float64))


# ---------------------------------------------------------------------------
# IBP through MLPs


def _mlp_forward_hull(layers, box: IntervalMatrix):
    """Layerwise IBP: exact affine images, monotone softplus images.

    Returns the output hull and the hull of every hidden pre-activation
    (needed by the Jacobian chain).
    """
    h = box
    preacts = []
    last = len(layers) - 1
    for idx, (w, b) in enumerate(layers):
        center = w @ h.center + b.reshape(-1, 1)
        radius = torch.abs(w) @ h.radius
        z = IntervalMatrix.from_center_radius(center, radius)
        if idx == last:
            return z, preacts
        preacts.append(z)
        h = IntervalMatrix(torch.nn.functional.softplus(z.lo), torch.nn.functional.softplus(z.hi))
    raise AssertionError("unreachable")


def _mlp_jacobian_hull(layers, preacts) -> IntervalMatrix:
    """Interval chain product W_L diag(sigmoid([z_{L-1}])) ... W_1."""
    jac = IntervalMatrix.point(layers[-1][0])
    for idx in range(len(layers) - 2, -1, -1):
        z = preacts[idx]
        gate = IntervalMatrix(torch.sigmoid(z.lo).reshape(-1), torch.sigmoid(z.hi).reshape(-1))
        jac = scale_cols(jac, gate)
        jac = _interval_times_point(jac, layers[idx][0])
    return jac


def _interval_times_point(mat: IntervalMatrix, w: torch.Tensor) -> IntervalMatrix:
    pos = w.clamp(min=0.0)
    neg = w.clamp(max=0.0)
    lo = mat.lo @ pos + mat.hi @ neg
    hi = mat.hi @ pos + mat.lo @ neg
    return IntervalMatrix(lo, hi)


def _policy_hulls(ctx: BoundContext, box: IntervalMatrix):
    """Hulls of the policy output and its Jacobian over the box."""
    res_out, preacts = _mlp_forward_hull(ctx.policy_layers, box)
    base_center = ctx.gain @ (box.center - ctx.x_eq) + ctx.u_eq
    base_radius = torch.abs(ctx.gain) @ box.radius
    out = IntervalMatrix.from_center_radius(base_center, base_radius) + res_out
    jac = IntervalMatrix(ctx.gain, ctx.gain) + _mlp_jacobian_hull(ctx.policy_layers, preacts)
    return out, jac


def _theta_hulls(ctx: BoundContext, box: IntervalMatrix):
    """Hulls of theta and of its packed Jacobian w.r.t. projected inputs."""
    projected = matmul_point_interval(ctx.projection, box)
    res_out, preacts = _mlp_forward_hull(ctx.theta_layers, projected)
    packed = IntervalMatrix(
        ctx.warm_packed.reshape(-1, 1), ctx.warm_packed.reshape(-1, 1)
    ) + res_out
    theta = ctx.unpack_interval(packed)
    jac_packed = _mlp_jacobian_hull(ctx.theta_layers, preacts)
    return theta, jac_packed


def _cell_hulls(ctx: BoundContext, lo: np.ndarray, hi: np.ndarray):
    """(G hull, M hull) over one cell."""
    box = _box_column(lo, hi)
    pi_hull, pi_jac_hull = _policy_hulls(ctx, box)
    theta_hull, theta_jac_packed = _theta_hulls(ctx, box)

    drift_hull = ctx.system.interval_drift(lo, hi)
    fpi_hull = drift_hull + matmul_point_interval(ctx.input_matrix, pi_hull)

    drift_jac_hull = ctx.system.interval_drift_jacobian(lo, hi)
    jcl_hull = drift_jac_hull + matmul_point_interval(ctx.input_matrix, pi_jac_hull)

    # directional derivative of theta along the closed-loop field: project
    # the field first (exact for a point projection), then contract the
    # packed Jacobian hull
    v_proj = matmul_point_interval(ctx.projection, fpi_hull)
    dtheta_hull = ctx.unpack_interval(theta_jac_packed @ v_proj)

    shifted = jcl_hull + IntervalMatrix.point(ctx.rate * torch.eye(ctx.n, dtype=torch.float64))
    inner = dtheta_hull + (theta_hull @ shifted)
    g_hull = theta_hull.t() @ inner
    m_hull = theta_hull.t() @ theta_hull
    return g_hull, m_hull


# ---------------------------------------------------------------------------
# Public hull operations


def hull_mlp_output(net: MlpParams, cell: tuple[np.ndarray, np.ndarray]) -> IntervalMatrix:
    """Sound hull of the net outputs over the cell, as an (out, 1) column."""
    lo, hi = cell
    out, _ = _mlp_forward_hull(_layers_to_tensors(net), _box_column(lo, hi))
    return out


def hull_mlp_jacobian(net: MlpParams, cell: tuple[np.ndarray, np.ndarray]) -> IntervalMatrix:
    """Sound hull of the net Jacobian over the cell."""
    lo, hi = cell
    layers = _layers_to_tensors(net)
    _, preacts = _mlp_forward_hull(layers, _box_column(lo, hi))
    return _mlp_jacobian_hull(layers, preacts)


def hull_directional_derivative(
    theta: MetricNet,
    cell: tuple[np.ndarray, np.ndarray],
    v_hull: IntervalMatrix,
) -> IntervalMatrix:
    """Sound hull of sum_i (d theta/dx_i)(x) v_i over the cell and v_hull."""
    lo, hi = cell
    projection = torch.tensor(theta.input_projection, dtype=torch.float64)
    layers = _layers_to_tensors(theta.residual)
    projected = matmul_point_interval(projection, _box_column(lo, hi))
    _, preacts = _mlp_forward_hull(layers, projected)
    jac_packed = _mlp_jacobian_hull(layers, preacts)
    if v_hull.cols != 1:
        raise ValueError("v_hull must be a column vector hull")
    v_proj = matmul_point_interval(projection, v_hull)
    rows, cols = upper_indices(theta.n)
    zeros = torch.zeros((theta.n, theta.n), dtype=torch.float64)
    packed = jac_packed @ v_proj
    return IntervalMatrix(
        zeros.index_put((torch.from_numpy(rows.copy()), torch.from_numpy(cols.copy())), packed.lo.reshape(-1)),
        zeros.index_put((torch.from_numpy(rows.copy()), torch.from_numpy(cols.copy())), packed.hi.reshape(-1)),
    )


def hull_contraction_matrix(
    problem: ContractionProblem, cell: tuple[np.ndarray, np.ndarray]
) -> IntervalMatrix:
    """Sound hull of the factored contraction matrix G over one cell."""
    ctx = BoundContext.from_problem(problem)
    g_hull, _ = _cell_hulls(ctx, np.asarray(cell[0], float), np.asarray(cell[1], float))
    return g_hull


def hull_metric(problem: ContractionProblem, cell: tuple[np.ndarray, np.ndarray]) -> IntervalMatrix:
    """Sound hull of theta^T theta over one cell."""
    ctx = BoundContext.from_problem(problem)
    _, m_hull = _cell_hulls(ctx, np.asarray(cell[0], float), np.asarray(cell[1], float))
    return m_hull


def hull_over_region(
    problem_or_ctx, region: Region, propagator_tag: str = "ibp"
) -> HullReport:
    """Per-cell hulls plus their entrywise unions over the whole region.

    Cells that overflow to non-finite bounds are reported in
    ``failed_cells`` rather than raising; the union hull then carries
    infinite entries for the affected positions.
    """
    if propagator_tag not in PROPAGATOR_TAGS:
        raise ValueError(f"unknown propagator {propagator_tag!r}; have {PROPAGATOR_TAGS}")
    ctx = (
        problem_or_ctx
        if isinstance(problem_or_ctx, BoundContext)
        else BoundContext.from_problem(problem_or_ctx)
    )
    cell_g: list[IntervalMatrix] = []
    cell_m: list[IntervalMatrix] = []
    failed: list[int] = []
    for idx, (lo, hi) in enumerate(region.cells()):
        g_hull, m_hull = _cell_hulls(ctx, lo, hi)
        cell_g.append(g_hull)
        cell_m.append(m_hull)
        if not (g_hull.is_finite() and m_hull.is_finite()):
            failed.append(idx)
    return HullReport(
        g_hull=IntervalMatrix.union_all(cell_g),
        m_hull=IntervalMatrix.union_all(cell_m),
        cell_g_hulls=cell_g,
        cell_m_hulls=cell_m,
        propagator_tag=propagator_tag,
        failed_cells=tuple(failed),
    )


# ---------------------------------------------------------------------------
# Scalar regression of the dependency gap


def scalar_contraction_bound_factored(
    theta: Interval, theta_dot: Interval, jac: Interval, rate: float
) -> Interval:
    """Bound of theta * (theta_dot + theta * (jac + c)), traced as written.

    The inner sum combines before the outer factor multiplies in, which is
    what keeps repeated-variable overestimation small.
    """
    return theta * (theta_dot + theta * (jac + Interval.point(rate)))


def scalar_contraction_bound_expanded(
    theta: Interval, theta_dot: Interval, jac: Interval, rate: float
) -> Interval:
    """Bound of the symmetric expansion, traced term by term.

    Every occurrence of theta is treated as an independent variable, so
    the result is strictly wider than twice the factored bound whenever
    the products interact.
    """
    theta_sq = theta * theta
    return (
        theta_sq * jac
        + jac * theta_sq
        + theta * theta_dot
        + theta_dot * theta
        + (2.0 * rate) * theta_sq
    )
