"""Closed-interval arithmetic for scalars, vectors, and matrices.

Scalar intervals are plain-float ``Interval`` values; matrix intervals are
``IntervalMatrix`` objects backed by float64 torch tensors so that bound
propagation stays differentiable with respect to network parameters.

Default arithmetic rounds to nearest: results are exact hulls of the real
operations up to one rounding per flop, which is the usual caveat of
float-backed interval libraries.  ``set_outward_rounding(True)`` widens every
result by one ulp per operation for users who want floating-point soundness
at the cost of slightly looser bounds.  Division is deliberately not part of
the API: nothing in the certification pipeline needs it.
"""

from __future__ import annotations

import math
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np
import torch

__all__ = [
    "Interval",
    "IntervalMatrix",
    "hull_center_radius",
    "matmul_point_interval",
    "matmul_interval_point",
    "scale_cols",
    "set_outward_rounding",
    "outward_rounding_enabled",
    "outward_rounding",
]

_TWO_PI = 2.0 * math.pi
_HALF_PI = 0.5 * math.pi

_outward = False


def set_outward_rounding(enabled: bool) -> None:
    """Globally enable or disable one-ulp outward widening of results."""
    global _outward
    _outward = bool(enabled)


def outward_rounding_enabled() -> bool:
    return _outward


@contextmanager
def outward_rounding(enabled: bool = True):
    """Temporarily switch the rounding mode."""
    previous = _outward
    set_outward_rounding(enabled)
    try:
        yield
    finally:
        set_outward_rounding(previous)


def _widen_scalar(lo: float, hi: float) -> tuple[float, float]:
    if not _outward:
        return lo, hi
    return math.nextafter(lo, -math.inf), math.nextafter(hi, math.inf)


@dataclass(frozen=True)
class Interval:
    """Closed real interval [lo, hi]; degenerate intervals act as exact reals."""

    lo: float
    hi: float

    def __post_init__(self):
        lo = float(self.lo)
        hi = float(self.hi)
        if math.isnan(lo) or math.isnan(hi):
            raise ValueError("interval bounds must not be NaN")
        if lo > hi:
            raise ValueError(f"invalid interval: lo={lo} > hi={hi}")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @classmethod
    def point(cls, value: float) -> "Interval":
        return cls(value, value)

    @property
    def center(self) -> float:
        return 0.5 * (self.lo + self.hi)

    @property
    def radius(self) -> float:
        return 0.5 * (self.hi - self.lo)

    @property
    def width(self) -> float:
        return self.hi - self.lo

    def contains(self, value: float, atol: float = 0.0) -> bool:
        return self.lo - atol <= value <= self.hi + atol

    def encloses(self, other: "Interval") -> bool:
        return self.lo <= other.lo and other.hi <= self.hi

    def __neg__(self) -> "Interval":
        return Interval(-self.hi, -self.lo)

    def __add__(self, other) -> "Interval":
        other = _as_interval(other)
        return Interval(*_widen_scalar(self.lo + other.lo, self.hi + other.hi))

    __radd__ = __add__

    def __sub__(self, other) -> "Interval":
        return self + (-_as_interval(other))

    def __rsub__(self, other) -> "Interval":
        return _as_interval(other) + (-self)

    def __mul__(self, other) -> "Interval":
        other = _as_interval(other)
        products = (
            self.lo * other.lo,
            self.lo * other.hi,
            self.hi * other.lo,
            self.hi * other.hi,
        )
        return Interval(*_widen_scalar(min(products), max(products)))

    __rmul__ = __mul__

    def sq(self) -> "Interval":
        """Exact range of x**2 (tighter than self * self when 0 is inside)."""
        if self.lo >= 0.0:
            lo, hi = self.lo * self.lo, self.hi * self.hi
        elif self.hi <= 0.0:
            lo, hi = self.hi * self.hi, self.lo * self.lo
        else:
            lo, hi = 0.0, max(self.lo * self.lo, self.hi * self.hi)
        return Interval(*_widen_scalar(lo, hi))

    def powi(self, exponent: int) -> "Interval":
        """Exact range of x**k for integer k >= 0."""
        if exponent < 0:
            raise ValueError("negative powers are not supported")
        if exponent == 0:
            return Interval(1.0, 1.0)
        if exponent % 2 == 0:
            base = self.sq()
            return base.powi(exponent // 2) if exponent > 2 else base
        lo, hi = self.lo**exponent, self.hi**exponent
        return Interval(*_widen_scalar(lo, hi))

    def sin(self) -> "Interval":
        """Tight range of sin over the interval, honoring interior extrema."""
        if self.width >= _TWO_PI:
            return Interval(-1.0, 1.0)
        slo, shi = math.sin(self.lo), math.sin(self.hi)
        lo, hi = min(slo, shi), max(slo, shi)
        if _contains_phase(self.lo, self.hi, _HALF_PI):
            hi = 1.0
        if _contains_phase(self.lo, self.hi, -_HALF_PI):
            lo = -1.0
        lo, hi = _widen_scalar(lo, hi)
        return Interval(max(lo, -1.0), min(hi, 1.0))

    def cos(self) -> "Interval":
        if self.width >= _TWO_PI:
            return Interval(-1.0, 1.0)
        clo, chi = math.cos(self.lo), math.cos(self.hi)
        lo, hi = min(clo, chi), max(clo, chi)
        if _contains_phase(self.lo, self.hi, 0.0):
            hi = 1.0
        if _contains_phase(self.lo, self.hi, math.pi):
            lo = -1.0
        lo, hi = _widen_scalar(lo, hi)
        return Interval(max(lo, -1.0), min(hi, 1.0))

    def softplus(self) -> "Interval":
        return Interval(*_widen_scalar(_softplus(self.lo), _softplus(self.hi)))

    def sigmoid(self) -> "Interval":
        lo, hi = _widen_scalar(_sigmoid(self.lo), _sigmoid(self.hi))
        return Interval(max(lo, 0.0), min(hi, 1.0))

    def __repr__(self) -> str:
        return f"Interval({self.lo!r}, {self.hi!r})"


def _as_interval(value) -> Interval:
    if isinstance(value, Interval):
        return value
    return Interval.point(float(value))


def _contains_phase(lo: float, hi: float, phase: float) -> bool:
    """Whether [lo, hi] contains a point congruent to ``phase`` mod 2*pi.

    A guard band of a few ulps folds borderline critical points inward, so
    rounding in the fold can only widen the reported range (sound direction).
    """
    guard = 8.0 * math.ulp(max(abs(lo), abs(hi), _TWO_PI))
    base = math.floor((lo - phase) / _TWO_PI)
    for k in (base, base + 1, base + 2):
        candidate = phase + _TWO_PI * k
        if lo - guard <= candidate <= hi + guard:
            return True
    return False


def _softplus(x: float) -> float:
    if x > 30.0:
        return x + math.log1p(math.exp(-x))
    return math.log1p(math.exp(x))


def _sigmoid(x: float) -> float:
    if x >= 0.0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


# ---------------------------------------------------------------------------
# Interval matrices


def _as_tensor(value) -> torch.Tensor:
    if isinstance(value, torch.Tensor):
        return value.to(torch.float64)
    return torch.as_tensor(np.asarray(value), dtype=torch.float64)


def _widen_tensor(lo: torch.Tensor, hi: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    if not _outward:
        return lo, hi
    neg = torch.full_like(lo.detach(), -math.inf)
    pos = torch.full_like(hi.detach(), math.inf)
    lo_w = torch.nextafter(lo.detach(), neg)
    hi_w = torch.nextafter(hi.detach(), pos)
    # keep the autograd graph intact: widening acts as an additive constant
    if lo.requires_grad:
        lo_w = lo + (lo_w - lo.detach())
    if hi.requires_grad:
        hi_w = hi + (hi_w - hi.detach())
    return lo_w, hi_w


class IntervalMatrix:
    """Entrywise interval matrix [lo, hi] over the last two tensor dims.

    Leading dimensions broadcast, so a batch of cells can flow through one
    propagation.  Vectors are stored as (n, 1) matrices.
    """

    __slots__ = ("lo", "hi")

    def __init__(self, lo, hi):
        lo = _as_tensor(lo)
        hi = _as_tensor(hi)
        if lo.shape != hi.shape:
            raise ValueError(f"shape mismatch: {tuple(lo.shape)} vs {tuple(hi.shape)}")
        if lo.ndim < 1:
            raise ValueError("interval matrices need at least one dimension")
        with torch.no_grad():
            if torch.isnan(lo).any() or torch.isnan(hi).any():
                raise ValueError("interval bounds must not be NaN")
            if (lo > hi).any():
                raise ValueError("invalid interval matrix: lo > hi somewhere")
        self.lo = lo
        self.hi = hi

    # -- constructors

    @classmethod
    def point(cls, values) -> "IntervalMatrix":
        t = _as_tensor(values)
        return cls(t, t)

    @classmethod
    def from_center_radius(cls, center, radius) -> "IntervalMatrix":
        c = _as_tensor(center)
        r = _as_tensor(radius)
        return cls(c - r, c + r)

    @classmethod
    def from_scalar_intervals(cls, grid: Sequence[Sequence[Interval]]) -> "IntervalMatrix":
        lo = [[iv.lo for iv in row] for row in grid]
        hi = [[iv.hi for iv in row] for row in grid]
        return cls(lo, hi)

    @classmethod
    def column(cls, lo, hi) -> "IntervalMatrix":
        """Interval column vector (n, 1) from 1-D bounds."""
        lo = _as_tensor(lo).reshape(-1, 1)
        hi = _as_tensor(hi).reshape(-1, 1)
        return cls(lo, hi)

    # -- views

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(self.lo.shape)

    @property
    def rows(self) -> int:
        return self.lo.shape[-2]

    @property
    def cols(self) -> int:
        return self.lo.shape[-1]

    @property
    def center(self) -> torch.Tensor:
        return 0.5 * (self.lo + self.hi)

    @property
    def radius(self) -> torch.Tensor:
        return 0.5 * (self.hi - self.lo)

    @property
    def width(self) -> torch.Tensor:
        return self.hi - self.lo

    def is_finite(self) -> bool:
        return bool(torch.isfinite(self.lo).all() and torch.isfinite(self.hi).all())

    def detach(self) -> "IntervalMatrix":
        return IntervalMatrix(self.lo.detach(), self.hi.detach())

    def lo_numpy(self) -> np.ndarray:
        return self.lo.detach().numpy().copy()

    def hi_numpy(self) -> np.ndarray:
        return self.hi.detach().numpy().copy()

    def entry(self, i: int, j: int) -> Interval:
        return Interval(float(self.lo[..., i, j]), float(self.hi[..., i, j]))

    def __iter__(self) -> Iterator[Interval]:
        for lo, hi in zip(self.lo.reshape(-1).tolist(), self.hi.reshape(-1).tolist()):
            yield Interval(lo, hi)

    def contains(self, values, atol: float = 0.0) -> bool:
        v = _as_tensor(values)
        with torch.no_grad():
            return bool(((self.lo - atol <= v) & (v <= self.hi + atol)).all())

    def encloses(self, other: "IntervalMatrix") -> bool:
        with torch.no_grad():
            return bool(((self.lo <= other.lo) & (other.hi <= self.hi)).all())

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        """Uniform member of the interval matrix (degenerate entries exact)."""
        lo = self.lo_numpy()
        hi = self.hi_numpy()
        return lo + rng.uniform(size=lo.shape) * (hi - lo)

    # -- arithmetic

    def __neg__(self) -> "IntervalMatrix":
        return IntervalMatrix(-self.hi, -self.lo)

    def __add__(self, other) -> "IntervalMatrix":
        other = _as_interval_matrix(other)
        return IntervalMatrix(*_widen_tensor(self.lo + other.lo, self.hi + other.hi))

    __radd__ = __add__

    def __sub__(self, other) -> "IntervalMatrix":
        return self + (-_as_interval_matrix(other))

    def __rsub__(self, other) -> "IntervalMatrix":
        return _as_interval_matrix(other) + (-self)

    def __mul__(self, other) -> "IntervalMatrix":
        """Elementwise (Hadamard) interval product with broadcasting."""
        other = _as_interval_matrix(other)
        p1 = self.lo * other.lo
        p2 = self.lo * other.hi
        p3 = self.hi * other.lo
        p4 = self.hi * other.hi
        lo = torch.minimum(torch.minimum(p1, p2), torch.minimum(p3, p4))
        hi = torch.maximum(torch.maximum(p1, p2), torch.maximum(p3, p4))
        return IntervalMatrix(*_widen_tensor(lo, hi))

    __rmul__ = __mul__

    def __matmul__(self, other) -> "IntervalMatrix":
        """Entrywise-exact interval matrix product.

        Materializes an (m, k, n) intermediate per corner product; use the
        point-matrix specializations below for large exact factors.
        """
        other = _as_interval_matrix(other)
        al = self.lo.unsqueeze(-1)
        ah = self.hi.unsqueeze(-1)
        bl = other.lo.unsqueeze(-3)
        bh = other.hi.unsqueeze(-3)
        p1 = al * bl
        p2 = al * bh
        p3 = ah * bl
        p4 = ah * bh
        lo = torch.minimum(torch.minimum(p1, p2), torch.minimum(p3, p4)).sum(dim=-2)
        hi = torch.maximum(torch.maximum(p1, p2), torch.maximum(p3, p4)).sum(dim=-2)
        return IntervalMatrix(*_widen_tensor(lo, hi))

    def t(self) -> "IntervalMatrix":
        return IntervalMatrix(self.lo.transpose(-2, -1), self.hi.transpose(-2, -1))

    def union(self, other: "IntervalMatrix") -> "IntervalMatrix":
        return IntervalMatrix(torch.minimum(self.lo, other.lo), torch.maximum(self.hi, other.hi))

    @staticmethod
    def union_all(mats: Sequence["IntervalMatrix"]) -> "IntervalMatrix":
        if not mats:
            raise ValueError("union of an empty collection")
        lo = torch.min(torch.stack([m.lo for m in mats]), dim=0).values
        hi = torch.max(torch.stack([m.hi for m in mats]), dim=0).values
        return IntervalMatrix(lo, hi)

    def __repr__(self) -> str:
        return f"IntervalMatrix(shape={self.shape})"


def _as_interval_matrix(value) -> IntervalMatrix:
    if isinstance(value, IntervalMatrix):
        return value
    return IntervalMatrix.point(value)


def hull_center_radius(mat: IntervalMatrix) -> tuple[torch.Tensor, torch.Tensor]:
    """Center/radius view: center +/- radius reproduces the bounds exactly."""
    center = mat.center
    radius = mat.hi - center
    return center, radius


def matmul_point_interval(point: torch.Tensor, mat: IntervalMatrix) -> IntervalMatrix:
    """Exact product (point matrix) @ (interval matrix) via sign splitting."""
    point = _as_tensor(point)
    pos = point.clamp(min=0.0)
    neg = point.clamp(max=0.0)
    lo = pos @ mat.lo + neg @ mat.hi
    hi = pos @ mat.hi + neg @ mat.lo
    return IntervalMatrix(*_widen_tensor(lo, hi))


def matmul_interval_point(mat: IntervalMatrix, point: torch.Tensor) -> IntervalMatrix:
    """Exact product (interval matrix) @ (point matrix) via sign splitting."""
    point = _as_tensor(point)
    pos = point.clamp(min=0.0)
    neg = point.clamp(max=0.0)
    lo = mat.lo @ pos + mat.hi @ neg
    hi = mat.hi @ pos + mat.lo @ neg
    return IntervalMatrix(*_widen_tensor(lo, hi))


def scale_cols(mat: IntervalMatrix, diag: IntervalMatrix) -> IntervalMatrix:
    """Right-multiply by an interval diagonal: column j scales by diag[j].

    ``diag`` holds the diagonal as an interval row of shape (..., 1, k) or
    (..., k).  Equivalent to ``mat @ diag_embed(diag)`` but elementwise.
    """
    d_lo = diag.lo if diag.lo.ndim >= 2 else diag.lo.unsqueeze(-2)
    d_hi = diag.hi if diag.hi.ndim >= 2 else diag.hi.unsqueeze(-2)
    return mat * IntervalMatrix(d_lo, d_hi)
