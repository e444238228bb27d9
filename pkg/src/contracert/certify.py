"""Exact spectral bounds over interval matrices and contraction certificates.

The key primitive: the maximum l2 log-norm over an interval matrix [A] is
attained at one of 2^n sign-pattern corners

    max_{A in [A]} mu2(A) = max_s mu2(A^c + diag(s) A^Delta diag(s)),

so a region certificate needs 2^n eigensolves per cell instead of sampling.
Sign patterns s and -s give the same corner, which halves the enumeration.
The same reduction, applied to the metric hull and its negation, yields
exact extremal eigenvalue bounds of the metric over the region.

Pointwise, the factored contraction matrix and the symmetric one satisfy
S(x) = G(x) + G(x)^T, so mu2(G) = lambda_max(S)/2; the pointwise
evaluators here use exact analytic derivatives and serve as the oracle the
hull-based certificates are tested against.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .boundprop import BoundContext, Region, hull_over_region
from .intervals import IntervalMatrix
from .linalg import mu2
from .problem import ContractionProblem, problem_fingerprint

__all__ = [
    "CornerCheckResult",
    "corner_max_log_norm",
    "corner_min_eig",
    "corner_max_eig",
    "corner_sign_vectors",
    "symmetric_contraction_matrix",
    "asymmetric_contraction_matrix",
    "Certificate",
    "certify_region",
    "MetzlerCheck",
    "metzler_majorant_check",
    "SamplingReport",
    "falsify_by_sampling",
]

MAX_CORNER_DIM = 24


def _gray_code(bits: int) -> np.ndarray:
    codes = np.arange(1 << bits, dtype=np.int64)
    return codes ^ (codes >> 1)


def corner_sign_vectors(n: int) -> np.ndarray:
    """Canonical sign patterns, shape (2^(n-1), n), first component +1.

    Enumeration follows a Gray code over the remaining components so
    successive corners differ in one sign; s and -s index the same corner
    matrix, so only the s[0] = +1 representatives appear.
    """
    if n < 1:
        raise ValueError("need at least one dimension")
    bits = n - 1
    signs = np.ones((1 << bits, n), dtype=np.float64)
    codes = _gray_code(bits)
    for j in range(bits):
        signs[:, j + 1] = np.where((codes >> j) & 1, -1.0, 1.0)
    return signs


@dataclass(frozen=True)
class CornerCheckResult:
    """Exact maximum of mu2 over an interval matrix.

    ``values`` holds mu2 at every canonical sign pattern (2^(n-1) of them);
    ``argmax_sign`` is the attaining pattern and ``argmax_eigvec`` the unit
    top eigenvector of its symmetrized corner matrix.
    """

    max_value: float
    argmax_sign: np.ndarray
    values: np.ndarray
    argmax_eigvec: np.ndarray

    def argmax_corner(self, mat: IntervalMatrix) -> np.ndarray:
        """The member matrix A^c + diag(s) A^Delta diag(s) attaining the max."""
        center = mat.center.detach().numpy()
        radius = mat.radius.detach().numpy()
        s = self.argmax_sign
        return center + np.outer(s, s) * radius


def corner_max_log_norm(mat: IntervalMatrix) -> CornerCheckResult:
    """max over A in [A] of mu2(A), exactly, via sign-pattern corners.

    Symmetrization commutes with diag(s) (.) diag(s), so center and radius
    are symmetrized once and the corners assembled from those.
    """
    n = mat.rows
    if mat.cols != n:
        raise ValueError("corner checks need a square interval matrix")
    if n > MAX_CORNER_DIM:
        raise ValueError(f"dimension {n} exceeds the corner-check budget {MAX_CORNER_DIM}")
    center = mat.center.detach()
    radius = mat.radius.detach()
    csym = 0.5 * (center + center.mT)
    rsym = 0.5 * (radius + radius.mT)
    signs = corner_sign_vectors(n)
    signs_t = torch.from_numpy(signs)
    masks = signs_t.unsqueeze(-1) * signs_t.unsqueeze(-2)
    corners = csym.unsqueeze(0) + masks * rsym.unsqueeze(0)
    eigvals, eigvecs = torch.linalg.eigh(corners)
    values = eigvals[:, -1].numpy()
    best = int(np.argmax(values))
    return CornerCheckResult(
        max_value=float(values[best]),
        argmax_sign=signs[best].copy(),
        values=values.copy(),
        argmax_eigvec=eigvecs[best, :, -1].numpy().copy(),
    )


def corner_min_eig(mat: IntervalMatrix) -> float:
    """Exact min over [M] of the smallest eigenvalue of the symmetric part.

    Uses min lambda_min(M) = -max mu2(-M) on the negated interval matrix.
    """
    return -corner_max_log_norm(-mat).max_value


def corner_max_eig(mat: IntervalMatrix) -> float:
    """Exact max over [M] of the largest eigenvalue of the symmetric part."""
    return corner_max_log_norm(mat).max_value


# ---------------------------------------------------------------------------
# Pointwise oracles (exact analytic derivatives, no interval arithmetic)


def asymmetric_contraction_matrix(problem: ContractionProblem, x: np.ndarray) -> np.ndarray:
    """G(x) = theta^T [ d_f theta + theta (df/dx + c I) ] at a point."""
    x = np.asarray(x, dtype=np.float64)
    theta = problem.theta.theta(x)
    field = problem.closed_loop_field(x)
    jac = problem.closed_loop_jacobian(x)
    dtheta = problem.theta.directional_derivative(x, field)
    n = problem.system.n
    return theta.T @ (dtheta + theta @ (jac + problem.rate * np.eye(n)))


def symmetric_contraction_matrix(problem: ContractionProblem, x: np.ndarray) -> np.ndarray:
    """S(x) = M df/dx + (df/dx)^T M + d_f M + 2 c M at a point."""
    x = np.asarray(x, dtype=np.float64)
    theta = problem.theta.theta(x)
    metric = theta.T @ theta
    field = problem.closed_loop_field(x)
    jac = problem.closed_loop_jacobian(x)
    dtheta = problem.theta.directional_derivative(x, field)
    dmetric = dtheta.T @ theta + theta.T @ dtheta
    return metric @ jac + jac.T @ metric + dmetric + 2.0 * problem.rate * metric


# ---------------------------------------------------------------------------
# Certificates


@dataclass(frozen=True)
class Certificate:
    """Checkable proof object for one region.

    ``certified`` holds iff every per-cell bound is <= 0 and the metric
    eigenvalue bounds bracket [metric_lower, metric_upper].  ``timestamp``
    stays None unless explicitly stamped, so artifacts from identical runs
    are byte-identical.
    """

    problem_hash: str
    region_lo: np.ndarray
    region_hi: np.ndarray
    partitions: tuple[int, ...]
    rate: float
    metric_lower: float
    metric_upper: float
    cell_bounds: np.ndarray
    metric_eig_lo: float
    metric_eig_hi: float
    certified: bool
    propagator_tag: str
    failure_reason: str | None = None
    timestamp: str | None = None

    @property
    def max_cell_bound(self) -> float:
        return float(np.max(self.cell_bounds)) if self.cell_bounds.size else float("nan")


def certify_region(
    problem: ContractionProblem,
    region: Region,
    propagator_tag: str = "ibp",
) -> Certificate:
    """Corner-check every per-cell G hull and the union metric hull.

    Propagation overflow in any cell yields a failed (never raised)
    verdict with the cause recorded.
    """
    report = hull_over_region(problem, region, propagator_tag)
    num_cells = len(report.cell_g_hulls)
    bounds = np.empty(num_cells)
    failure = None
    for idx in range(num_cells):
        if idx in report.failed_cells:
            bounds[idx] = np.inf
            continue
        bounds[idx] = corner_max_log_norm(report.cell_g_hulls[idx]).max_value
    if report.failed_cells:
        failure = f"non-finite hull in cells {report.failed_cells[:8]}"
        eig_lo, eig_hi = -np.inf, np.inf
    else:
        eig_lo = corner_min_eig(report.m_hull)
        eig_hi = corner_max_eig(report.m_hull)
    certified = (
        failure is None
        and bool(np.all(bounds <= 0.0))
        and eig_lo >= problem.metric_lower
        and eig_hi <= problem.metric_upper
    )
    return Certificate(
        problem_hash=problem_fingerprint(problem),
        region_lo=region.lo.copy(),
        region_hi=region.hi.copy(),
        partitions=region.partitions,
        rate=problem.rate,
        metric_lower=problem.metric_lower,
        metric_upper=problem.metric_upper,
        cell_bounds=bounds,
        metric_eig_lo=float(eig_lo),
        metric_eig_hi=float(eig_hi),
        certified=certified,
        propagator_tag=propagator_tag,
        failure_reason=failure,
    )


# ---------------------------------------------------------------------------
# Prior-work comparison: Metzler majorant bound


@dataclass(frozen=True)
class MetzlerCheck:
    """Sufficient (and conservative) negative-definiteness test.

    ``majorant`` dominates the Metzler majorant of every member matrix:
    diagonal from the upper diagonal bounds, off-diagonal from the largest
    absolute values.  The verdict certifies only when its spectral
    abscissa is negative; inconclusive otherwise.
    """

    majorant: np.ndarray
    spectral_abscissa: float
    certified: bool


def metzler_majorant_check(mat: IntervalMatrix) -> MetzlerCheck:
    n = mat.rows
    if mat.cols != n:
        raise ValueError("majorant check needs a square interval matrix")
    lo = mat.lo_numpy()
    hi = mat.hi_numpy()
    majorant = np.maximum(np.abs(lo), np.abs(hi))
    diag = np.arange(n)
    majorant[diag, diag] = hi[diag, diag]
    abscissa = float(np.max(np.real(np.linalg.eigvals(majorant))))
    return MetzlerCheck(majorant=majorant, spectral_abscissa=abscissa, certified=abscissa < 0.0)


# ---------------------------------------------------------------------------
# Sampling-based falsification (a debug oracle, not a certificate)


@dataclass(frozen=True)
class SamplingReport:
    """Worst pointwise mu2(G(x)) over sampled states.

    A positive worst value disproves contraction on the region; a negative
    one proves nothing.
    """

    worst_value: float
    worst_state: np.ndarray | None
    samples: int
    violations: int


def falsify_by_sampling(
    problem: ContractionProblem,
    region: Region,
    samples: int,
    seed: int = 0,
) -> SamplingReport:
    if samples < 0:
        raise ValueError("sample count must be nonnegative")
    if samples == 0:
        return SamplingReport(worst_value=-np.inf, worst_state=None, samples=0, violations=0)
    rng = np.random.default_rng(seed)
    states = region.sample(rng, samples)
    worst = -np.inf
    worst_state = None
    violations = 0
    for x in states:
        value = mu2(asymmetric_contraction_matrix(problem, x))
        if value > 0.0:
            violations += 1
        if value > worst:
            worst = value
            worst_state = x.copy()
    return SamplingReport(
        worst_value=float(worst),
        worst_state=worst_state,
        samples=samples,
        violations=violations,
    )
