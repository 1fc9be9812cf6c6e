"""Inexact solvers for the prox subproblem and a brute-force grid oracle.

The subgradient solvers minimise ``y -> f(y) + ||x - y||^p / (p gamma)`` and
return the best point they have seen, measured by the subproblem value.
SG-DSS and the constant-step variant move a fixed *distance* per step
(normalised subgradient); the Polyak variant uses the classical
``(value - f_low) / ||g||^2`` multiplier.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, NamedTuple, Optional, Sequence

import numpy as np
from scipy import ndimage

from .envelope import (
    EnvelopeParams,
    Oracle,
    ProxApproximation,
    as_point,
    make_prox_approximation,
    power_grad,
)
from .errors import InvalidArgument, ResourceLimit, SolverDiverged

__all__ = [
    "SgdssSchedule",
    "InnerBudgetSchedule",
    "ConstantStep",
    "PolyakStep",
    "GridSpec",
    "GridProx",
    "solve_prox_sgdss",
    "solve_prox_baseline",
    "brute_force_prox",
    "grid_values",
]

MAX_GRID_CELLS = 10**7
POLYAK_MAX_STEP = 1e6


@dataclass(frozen=True)
class SgdssSchedule:
    """Geometric step lengths ``lam * q**i`` for ``i < max_iterations``."""

    lam: float = 1.0
    q: float = 0.93
    max_iterations: int = 300

    def __post_init__(self):
        if not self.lam > 0:
            raise InvalidArgument("lambda must be > 0")
        if not 0 < self.q < 1:
            raise InvalidArgument("q must lie in (0, 1)")
        if int(self.max_iterations) < 1:
            raise InvalidArgument("max_iterations must be positive")

    def step(self, i: int) -> float:
        return self.lam * self.q**i

    def with_iterations(self, n: int) -> "SgdssSchedule":
        return SgdssSchedule(self.lam, self.q, max(1, int(n)))


@dataclass(frozen=True)
class InnerBudgetSchedule:
    """Inner iteration count ``I_k`` used for the prox solve at outer step k.

    ``breakpoints`` lists ``(first_k, count)`` pairs sorted by ``first_k``;
    the default is 50 up to k = 2, 300 until 20, 500 until 30, then 800.
    """

    breakpoints: tuple = ((0, 50), (3, 300), (20, 500), (30, 800))

    def __post_init__(self):
        ks = [k for k, _ in self.breakpoints]
        if not ks or ks[0] != 0 or ks != sorted(set(ks)):
            raise InvalidArgument("breakpoints must start at k=0 and increase")
        if any(int(c) < 1 for _, c in self.breakpoints):
            raise InvalidArgument("inner iteration counts must be positive")

    def __call__(self, k: int) -> int:
        count = self.breakpoints[0][1]
        for first, c in self.breakpoints:
            if k >= first:
                count = c
        return int(count)

    @classmethod
    def constant(cls, count: int) -> "InnerBudgetSchedule":
        return cls(((0, int(count)),))


@dataclass(frozen=True)
class ConstantStep:
    alpha: float

    def __post_init__(self):
        if not self.alpha > 0:
            raise InvalidArgument("constant step must be > 0")


@dataclass(frozen=True)
class PolyakStep:
    f_low: float = 0.0

    def __post_init__(self):
        if not math.isfinite(self.f_low):
            raise InvalidArgument("Polyak lower bound must be finite")


def _check_finite(y, what):
    if not np.all(np.isfinite(y)):
        raise SolverDiverged(f"{what}: iterate became non-finite")


def _subgradient_loop(x, f, params, start, n_iter, step_rule):
    """Shared loop; ``step_rule(i, value, g) -> multiplier`` for ``y -= m*g``."""
    w = params.reg_weight
    y = start.copy()
    best_y, best_val = y.copy(), math.inf
    last_step = 0.0
    evals = 0
    stationary = False
    for i in range(n_iter):
        fy, g = f.evaluate(y)
        val = fy + w * float(np.linalg.norm(x - y)) ** params.p
        if val < best_val:
            best_val, best_y = val, y.copy()
        g = g + power_grad(y - x, params.p) / params.gamma
        evals += 1
        mult = step_rule(i, val, g)
        if mult is None:
            stationary = True
            break
        last_step = mult * float(np.linalg.norm(g))
        y = y - mult * g
        _check_finite(y, "subgradient solver")
    if not stationary:
        val = f.value_at(y) + w * float(np.linalg.norm(x - y)) ** params.p
        if val < best_val:
            best_val, best_y = val, y.copy()
    return best_y, evals, last_step


def solve_prox_sgdss(
    x,
    f: Oracle,
    params: EnvelopeParams,
    schedule: SgdssSchedule = SgdssSchedule(),
    warm_start=None,
    *,
    epsilon: float = float("nan"),
) -> ProxApproximation:
    """Approximate the prox at ``x`` with geometrically decaying steps.

    Step ``i`` moves a distance ``lam * q**i`` along the negative normalised
    subgradient of the subproblem.  The search starts at ``warm_start``
    (default ``x``) and stops early at an exact zero subgradient.
    """
    x = as_point(x, f.dimension)
    start = x if warm_start is None else as_point(warm_start, f.dimension)

    def rule(i, _val, g):
        gn = float(np.linalg.norm(g))
        if gn == 0.0:
            return None
        return schedule.step(i) / gn

    y, evals, last = _subgradient_loop(x, f, params, start, schedule.max_iterations, rule)
    return make_prox_approximation(
        x, y, f, params, epsilon_used=epsilon, inner_iterations=evals, inner_final_step=last
    )


def solve_prox_baseline(
    x,
    f: Oracle,
    params: EnvelopeParams,
    method,
    iterations: int,
    warm_start=None,
    *,
    epsilon: float = float("nan"),
) -> ProxApproximation:
    """Approximate the prox with a constant-step or Polyak subgradient method."""
    x = as_point(x, f.dimension)
    start = x if warm_start is None else as_point(warm_start, f.dimension)
    if isinstance(method, ConstantStep):

        def rule(i, _val, g):
            gn = float(np.linalg.norm(g))
            return None if gn == 0.0 else method.alpha / gn

    elif isinstance(method, PolyakStep):

        def rule(i, val, g):
            gg = float(g @ g)
            if gg == 0.0:
                return None
            return min(max((val - method.f_low) / gg, 0.0), POLYAK_MAX_STEP)

    else:
        raise InvalidArgument(f"unknown baseline step rule {method!r}")
    y, evals, last = _subgradient_loop(x, f, params, start, int(iterations), rule)
    return make_prox_approximation(
        x, y, f, params, epsilon_used=epsilon, inner_iterations=evals, inner_final_step=last
    )


@dataclass(frozen=True)
class GridSpec:
    """Tensor grid on a box in one or two dimensions."""

    lower: tuple
    upper: tuple
    points_per_axis: int

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lower, dtype=np.float64))
        hi = np.atleast_1d(np.asarray(self.upper, dtype=np.float64))
        if lo.shape != hi.shape or lo.ndim != 1 or lo.size not in (1, 2):
            raise InvalidArgument("grid bounds must be 1-D or 2-D and of equal length")
        if not np.all(lo < hi):
            raise InvalidArgument("grid needs lower < upper componentwise")
        if int(self.points_per_axis) < 2:
            raise InvalidArgument("need at least two points per axis")
        if int(self.points_per_axis) ** lo.size > MAX_GRID_CELLS:
            raise ResourceLimit(
                f"grid of {self.points_per_axis}^{lo.size} points exceeds {MAX_GRID_CELLS}"
            )
        object.__setattr__(self, "lower", tuple(lo.tolist()))
        object.__setattr__(self, "upper", tuple(hi.tolist()))

    @property
    def dimension(self) -> int:
        return len(self.lower)

    @property
    def spacing(self) -> np.ndarray:
        lo, hi = np.array(self.lower), np.array(self.upper)
        return (hi - lo) / (self.points_per_axis - 1)

    @property
    def cell_diagonal(self) -> float:
        return float(np.linalg.norm(self.spacing))

    def axes(self) -> list:
        return [
            np.linspace(lo, hi, self.points_per_axis) for lo, hi in zip(self.lower, self.upper)
        ]

    def points(self) -> np.ndarray:
        """Grid points, shape ``(N, d)``, in C order over the axes."""
        mesh = np.meshgrid(*self.axes(), indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    @property
    def shape(self) -> tuple:
        return (self.points_per_axis,) * self.dimension


def grid_values(f: Oracle, grid: GridSpec, vectorized: Optional[Callable] = None) -> np.ndarray:
    """Objective values on every grid point, shape ``(N,)``."""
    pts = grid.points()
    if vectorized is not None:
        vals = np.asarray(vectorized(pts), dtype=np.float64).reshape(-1)
    else:
        vals = np.array([f.value_at(pt) for pt in pts])
    return vals


class GridProx(NamedTuple):
    """Result of :func:`brute_force_prox`.

    ``minimizers`` holds every grid point within ``slack`` of the grid minimum;
    ``clusters`` holds one (optionally refined) representative per connected
    group of such points; ``value`` is the smallest value found.
    """

    minimizers: np.ndarray
    value: float
    clusters: np.ndarray
    cluster_values: np.ndarray
    slack: float
    cell: float

    @property
    def multivalued(self) -> bool:
        """True when cluster representatives are more than 3 cells apart."""
        if len(self.clusters) < 2:
            return False
        c = self.clusters
        spread = max(
            float(np.linalg.norm(c[i] - c[j])) for i in range(len(c)) for j in range(i + 1, len(c))
        )
        return spread > 3 * self.cell

    @property
    def point(self) -> np.ndarray:
        """Representative with the lowest value."""
        return self.clusters[int(np.argmin(self.cluster_values))]


def _sub_values(pts, fvals, x, params):
    dist = np.linalg.norm(pts - x, axis=1)
    return fvals + params.reg_weight * dist**params.p


def _grid_slack(vals: np.ndarray, grid: GridSpec) -> float:
    """Largest value change across one cell, scaled to the cell diagonal."""
    arr = vals.reshape(grid.shape)
    lip = 0.0
    for axis, h in enumerate(grid.spacing):
        diff = np.abs(np.diff(arr, axis=axis))
        if diff.size:
            lip = max(lip, float(diff.max()) / h)
    return lip * grid.cell_diagonal


def _refine(x, f, params, center, value, cell, levels, width=41):
    best, best_val = center, value
    h = np.asarray(cell, dtype=np.float64)
    for _ in range(levels):
        axes = [np.linspace(c - 2 * hh, c + 2 * hh, width) for c, hh in zip(best, h)]
        mesh = np.meshgrid(*axes, indexing="ij")
        pts = np.stack([m.ravel() for m in mesh], axis=1)
        fv = np.array([f.value_at(pt) for pt in pts])
        sv = _sub_values(pts, fv, x, params)
        j = int(np.argmin(sv))
        if sv[j] < best_val:
            best, best_val = pts[j], float(sv[j])
        h = h * 4.0 / (width - 1)
    return best, best_val


def brute_force_prox(
    x,
    f: Oracle,
    params: EnvelopeParams,
    grid: GridSpec,
    *,
    fvals: Optional[np.ndarray] = None,
    refine: int = 0,
) -> GridProx:
    """Exhaustive prox on a 1-D or 2-D grid.

    ``fvals`` may carry precomputed objective values on ``grid.points()``;
    ``refine`` zooms into each cluster that many times (factor 10 per level).
    """
    if grid.dimension > 2 or f.dimension != grid.dimension:
        raise InvalidArgument("brute-force prox needs a 1-D or 2-D grid matching f")
    x = as_point(x, f.dimension)
    pts = grid.points()
    if fvals is None:
        fvals = grid_values(f, grid)
    vals = _sub_values(pts, fvals, x, params)
    vmin = float(vals.min())
    slack = _grid_slack(vals, grid)
    near = (vals <= vmin + slack).reshape(grid.shape)
    labels, count = ndimage.label(near)
    flat_labels = labels.ravel()
    reps, rep_vals = [], []
    for lab in range(1, count + 1):
        idx = np.flatnonzero(flat_labels == lab)
        j = idx[int(np.argmin(vals[idx]))]
        c, v = pts[j], float(vals[j])
        if refine:
            c, v = _refine(x, f, params, c, v, grid.spacing, refine)
        reps.append(c)
        rep_vals.append(v)
    reps = np.array(reps)
    rep_vals = np.array(rep_vals)
    return GridProx(
        minimizers=pts[near.ravel()],
        value=float(rep_vals.min()),
        clusters=reps,
        cluster_values=rep_vals,
        slack=slack,
        cell=grid.cell_diagonal,
    )
