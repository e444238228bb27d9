"""Certified loss, its gradients, and curriculum training over growing regions.

The loss over a region follows the certificate structure exactly:

    loss = agg_cells max{bound_cell, 0}
         + max{a - eig_lo, 0} + max{eig_hi - b, 0}

where ``bound_cell`` is the exact corner-check maximum of the per-cell G
hull, and (eig_lo, eig_hi) are the exact extremal eigenvalue bounds of the
union metric hull.  A loss of zero therefore implies the region certificate.

Gradients flow by reverse mode through the hinge terms, the argmax
corner's top eigenvalue (whose derivative is the outer product of its unit
eigenvector), the interval hull bounds (piecewise-smooth through the
min/max selections of bound propagation), and finally the network
parameters.  Ties take the zero subgradient.

Training optimizes with AdamW over regions scaled by stage/denominator
about the region center, advancing the stage whenever the loss reaches
zero; weight decay applies to the residual nets only, never to the warm
start, so the stabilizing seed is not pulled toward zero.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import torch

from .boundprop import BoundContext, Region, _cell_hulls
from .certify import Certificate, certify_region, corner_sign_vectors
from .intervals import IntervalMatrix
from .nets import MetricNet, MlpParams, PolicyNet, unpack_upper
from .problem import ContractionProblem

__all__ = [
    "OptimizerConfig",
    "CurriculumConfig",
    "LossParts",
    "LossDiagnostics",
    "TrainState",
    "TrainResult",
    "TrainableProblem",
    "loss",
    "loss_gradient",
    "train_curriculum",
    "parameter_vector",
    "replace_parameters",
]

OVERFLOW_PENALTY = 1.0e6


@dataclass(frozen=True)
class OptimizerConfig:
    """AdamW settings.

    ``residual_step_scale`` multiplies the step size for the residual-net
    parameters only.  The warm-start gain and metric triangle enter the
    hulls exactly, so large steps on them are safe; dense residual updates
    inflate the propagated hulls, and a small scale keeps the early
    curriculum stages from blowing up the bounds they just certified.
    """

    step_size: float = 1e-3
    betas: tuple[float, float] = (0.9, 0.999)
    weight_decay: float = 1e-4
    residual_step_scale: float = 1.0


@dataclass(frozen=True)
class CurriculumConfig:
    """Growing-region schedule: stage n trains on (n/denominator) * region."""

    start: int = 1
    target: int = 100
    denominator: int = 100
    max_steps: int = 2000
    aggregation: str = "mean"

    def __post_init__(self):
        if not 1 <= self.start <= self.target <= self.denominator:
            raise ValueError("need 1 <= start <= target <= denominator")
        if self.aggregation not in ("mean", "max"):
            raise ValueError("aggregation must be 'mean' or 'max'")


@dataclass(frozen=True)
class LossParts:
    contraction: float
    lower_deficit: float
    upper_excess: float


@dataclass(frozen=True)
class LossDiagnostics:
    cell_bounds: np.ndarray
    metric_eig_lo: float
    metric_eig_hi: float
    overflow_cells: tuple[int, ...]

    @property
    def max_cell_bound(self) -> float:
        finite = self.cell_bounds[np.isfinite(self.cell_bounds)]
        return float(np.max(finite)) if finite.size else float("inf")


# ---------------------------------------------------------------------------
# Differentiable corner checks


_SIGNS_CACHE: dict[int, torch.Tensor] = {}


def _signs(n: int) -> torch.Tensor:
    if n not in _SIGNS_CACHE:
        _SIGNS_CACHE[n] = torch.from_numpy(corner_sign_vectors(n))
    return _SIGNS_CACHE[n]


def _max_log_norm_diff(hull: IntervalMatrix) -> torch.Tensor:
    """Corner-check maximum with gradient through the argmax corner only."""
    center = hull.center
    radius = hull.radius
    csym = 0.5 * (center + center.mT)
    rsym = 0.5 * (radius + radius.mT)
    signs = _signs(hull.rows)
    with torch.no_grad():
        masks = signs.unsqueeze(-1) * signs.unsqueeze(-2)
        corners = csym.detach().unsqueeze(0) + masks * rsym.detach().unsqueeze(0)
        best = int(torch.argmax(torch.linalg.eigvalsh(corners)[:, -1]))
    s = signs[best]
    corner = csym + torch.outer(s, s) * rsym
    return torch.linalg.eigvalsh(corner)[-1]


def _metric_eig_bounds_diff(m_hull: IntervalMatrix) -> tuple[torch.Tensor, torch.Tensor]:
    eig_hi = _max_log_norm_diff(m_hull)
    eig_lo = -_max_log_norm_diff(-m_hull)
    return eig_lo, eig_hi


# ---------------------------------------------------------------------------
# Trainable tensor mirror of a problem


def _trainable_layers(net: MlpParams):
    return [
        (
            torch.tensor(w, dtype=torch.float64, requires_grad=True),
            torch.tensor(b, dtype=torch.float64, requires_grad=True),
        )
        for w, b in net.layers
    ]


class TrainableProblem:
    """Torch-parameter mirror of a problem, shared by loss and optimizer.

    The warm start is held as its packed upper triangle so optimizer
    updates cannot break triangularity.
    """

    def __init__(self, problem: ContractionProblem):
        self.template = problem
        self.gain = torch.tensor(problem.policy.gain, dtype=torch.float64, requires_grad=True)
        self.warm_packed = torch.tensor(
            np.asarray(problem.theta.warm_start)[np.triu_indices(problem.theta.n)],
            dtype=torch.float64,
            requires_grad=True,
        )
        self.policy_layers = _trainable_layers(problem.policy.residual)
        self.theta_layers = _trainable_layers(problem.theta.residual)
        self.context = BoundContext(
            system=problem.system,
            gain=self.gain,
            x_eq=torch.tensor(problem.policy.x_eq.reshape(-1, 1), dtype=torch.float64),
            u_eq=torch.tensor(problem.policy.u_eq.reshape(-1, 1), dtype=torch.float64),
            policy_layers=self.policy_layers,
            warm_packed=self.warm_packed,
            theta_layers=self.theta_layers,
            projection=torch.tensor(problem.theta.input_projection, dtype=torch.float64),
            input_matrix=torch.tensor(problem.system.input_matrix, dtype=torch.float64),
            rate=problem.rate,
            metric_lower=problem.metric_lower,
            metric_upper=problem.metric_upper,
        )

    def named_parameters(self) -> list[tuple[str, torch.Tensor]]:
        out = [("policy.gain", self.gain)]
        for idx, (w, b) in enumerate(self.policy_layers):
            out.append((f"policy.residual.{idx}.weight", w))
            out.append((f"policy.residual.{idx}.bias", b))
        out.append(("theta.warm_packed", self.warm_packed))
        for idx, (w, b) in enumerate(self.theta_layers):
            out.append((f"theta.residual.{idx}.weight", w))
            out.append((f"theta.residual.{idx}.bias", b))
        return out

    def residual_parameters(self) -> list[torch.Tensor]:
        out = []
        for w, b in (*self.policy_layers, *self.theta_layers):
            out.extend((w, b))
        return out

    def seed_parameters(self) -> list[torch.Tensor]:
        return [self.gain, self.warm_packed]

    def export(self) -> ContractionProblem:
        """Exact float64 snapshot back into numpy nets."""
        problem = self.template
        policy = PolicyNet(
            gain=self.gain.detach().numpy().copy(),
            x_eq=problem.policy.x_eq,
            u_eq=problem.policy.u_eq,
            residual=MlpParams(
                tuple(
                    (w.detach().numpy().copy(), b.detach().numpy().copy())
                    for w, b in self.policy_layers
                )
            ),
        )
        theta = MetricNet(
            warm_start=unpack_upper(self.warm_packed.detach().numpy().copy(), problem.theta.n),
            residual=MlpParams(
                tuple(
                    (w.detach().numpy().copy(), b.detach().numpy().copy())
                    for w, b in self.theta_layers
                )
            ),
            input_projection=problem.theta.input_projection,
        )
        return problem.with_nets(theta, policy)


# ---------------------------------------------------------------------------
# Loss


def _loss_terms(
    ctx: BoundContext, region: Region, aggregation: str
) -> tuple[torch.Tensor, LossParts, LossDiagnostics]:
    cell_terms: list[torch.Tensor] = []
    cell_bounds: list[float] = []
    m_hulls: list[IntervalMatrix] = []
    overflow: list[int] = []
    for idx, (lo, hi) in enumerate(region.cells()):
        try:
            g_hull, m_hull = _cell_hulls(ctx, lo, hi)
            finite = g_hull.is_finite() and m_hull.is_finite()
        except ValueError:
            finite = False
        if not finite:
            overflow.append(idx)
            cell_terms.append(torch.tensor(OVERFLOW_PENALTY, dtype=torch.float64))
            cell_bounds.append(float("inf"))
            continue
        bound = _max_log_norm_diff(g_hull)
        cell_terms.append(torch.relu(bound))
        cell_bounds.append(float(bound.detach()))
        m_hulls.append(m_hull)

    stacked = torch.stack(cell_terms)
    contraction = stacked.mean() if aggregation == "mean" else stacked.max()

    if m_hulls:
        m_union = IntervalMatrix.union_all(m_hulls)
        eig_lo, eig_hi = _metric_eig_bounds_diff(m_union)
    else:
        eig_lo = torch.tensor(-OVERFLOW_PENALTY, dtype=torch.float64)
        eig_hi = torch.tensor(OVERFLOW_PENALTY, dtype=torch.float64)
    lower_deficit = torch.relu(ctx.metric_lower - eig_lo)
    upper_excess = torch.relu(eig_hi - ctx.metric_upper)
    total = contraction + lower_deficit + upper_excess

    parts = LossParts(
        contraction=float(contraction.detach()),
        lower_deficit=float(lower_deficit.detach()),
        upper_excess=float(upper_excess.detach()),
    )
    diag = LossDiagnostics(
        cell_bounds=np.array(cell_bounds),
        metric_eig_lo=float(eig_lo.detach()),
        metric_eig_hi=float(eig_hi.detach()),
        overflow_cells=tuple(overflow),
    )
    return total, parts, diag


def loss(
    problem: ContractionProblem, region: Region, aggregation: str = "mean"
) -> tuple[float, LossParts]:
    """Certified loss over the region; <= 0 implies the region certificate."""
    ctx = BoundContext.from_problem(problem)
    with torch.no_grad():
        total, parts, _ = _loss_terms(ctx, region, aggregation)
    return float(total), parts


def loss_gradient(
    problem: ContractionProblem, region: Region, aggregation: str = "mean"
) -> tuple[float, LossParts, np.ndarray, list[tuple[str, tuple[int, ...]]]]:
    """Reverse-mode gradient of the loss over every policy/metric parameter.

    Returns (value, parts, flat gradient, manifest of (name, shape)) with
    the gradient concatenated in manifest order.  Valid almost everywhere;
    hinge and argmax ties take a subgradient.
    """
    trainable = TrainableProblem(problem)
    total, parts, _ = _loss_terms(trainable.context, region, aggregation)
    names = trainable.named_parameters()
    if total.requires_grad:
        total.backward()
    chunks = []
    manifest = []
    for name, tensor in names:
        manifest.append((name, tuple(tensor.shape)))
        grad = tensor.grad
        chunk = np.zeros(tensor.numel()) if grad is None else grad.numpy().reshape(-1).copy()
        chunks.append(chunk)
    return float(total.detach()), parts, np.concatenate(chunks), manifest


def parameter_vector(problem: ContractionProblem) -> np.ndarray:
    """Flat parameter vector in the same order as loss_gradient's manifest."""
    trainable = TrainableProblem(problem)
    return np.concatenate(
        [tensor.detach().numpy().reshape(-1) for _, tensor in trainable.named_parameters()]
    )


def replace_parameters(problem: ContractionProblem, vector: np.ndarray) -> ContractionProblem:
    """Problem with parameters taken from a flat vector (manifest order)."""
    trainable = TrainableProblem(problem)
    offset = 0
    with torch.no_grad():
        for _, tensor in trainable.named_parameters():
            count = tensor.numel()
            tensor.copy_(
                torch.from_numpy(
                    np.asarray(vector[offset : offset + count], dtype=np.float64).reshape(
                        tuple(tensor.shape)
                    )
                )
            )
            offset += count
    if offset != vector.size:
        raise ValueError(f"expected {offset} parameters, got {vector.size}")
    return trainable.export()


# ---------------------------------------------------------------------------
# Curriculum training


@dataclass
class TrainState:
    step: int = 0
    stage: int = 1
    certified: bool = False
    best_loss: float = float("inf")
    loss_history: list[float] = field(default_factory=list)
    stage_history: list[int] = field(default_factory=list)


@dataclass
class TrainResult:
    problem: ContractionProblem
    state: TrainState
    certificate: Certificate | None


LogFn = Callable[[dict], None]
CheckpointFn = Callable[[int, ContractionProblem], None]


def train_curriculum(
    problem: ContractionProblem,
    full_region: Region,
    optimizer_config: OptimizerConfig = OptimizerConfig(),
    curriculum: CurriculumConfig = CurriculumConfig(),
    log_fn: LogFn | None = None,
    checkpoint_fn: CheckpointFn | None = None,
    record_timing: bool = False,
) -> TrainResult:
    """AdamW over growing regions, then a from-scratch certificate.

    Stage n trains on (n/denominator) * full_region; whenever the loss
    reaches zero the stage checkpoints and advances.  Success means the
    target stage's loss reached zero and an independent certify_region
    pass on the exported parameters confirms the verdict.  On budget
    exhaustion the best-effort parameters are returned with
    ``certified=False``.

    ``record_timing`` gates the wall-time log column: left off (default),
    logs are byte-identical across reruns of the same config and seed.
    """
    if full_region.n != problem.system.n:
        raise ValueError("region dimension does not match the system")
    trainable = TrainableProblem(problem)
    optimizer = torch.optim.AdamW(
        [
            {
                "params": trainable.residual_parameters(),
                "weight_decay": optimizer_config.weight_decay,
                "lr": optimizer_config.step_size * optimizer_config.residual_step_scale,
            },
            {"params": trainable.seed_parameters(), "weight_decay": 0.0},
        ],
        lr=optimizer_config.step_size,
        betas=optimizer_config.betas,
    )
    state = TrainState(stage=curriculum.start)
    started = time.perf_counter()
    evaluation = 0
    while True:
        region = full_region.scaled(state.stage / curriculum.denominator)
        total, parts, diag = _loss_terms(trainable.context, region, curriculum.aggregation)
        value = float(total.detach())
        state.loss_history.append(value)
        state.stage_history.append(state.stage)
        state.best_loss = min(state.best_loss, value)
        if log_fn is not None:
            log_fn(
                {
                    "step": evaluation,
                    "stage": state.stage,
                    "loss": value,
                    "log_norm_bound": diag.max_cell_bound,
                    "metric_eig_lo": diag.metric_eig_lo,
                    "metric_eig_hi": diag.metric_eig_hi,
                    "wall_time_s": time.perf_counter() - started if record_timing else 0.0,
                }
            )
        evaluation += 1
        if value <= 0.0:
            snapshot = trainable.export()
            if checkpoint_fn is not None:
                checkpoint_fn(state.stage, snapshot)
            if state.stage >= curriculum.target:
                certificate = certify_region(snapshot, region)
                state.certified = certificate.certified
                return TrainResult(problem=snapshot, state=state, certificate=certificate)
            state.stage += 1
            continue
        if state.step >= curriculum.max_steps:
            snapshot = trainable.export()
            certificate = certify_region(snapshot, region)
            state.certified = False
            return TrainResult(problem=snapshot, state=state, certificate=certificate)
        optimizer.zero_grad()
        total.backward()
        optimizer.step()
        state.step += 1
