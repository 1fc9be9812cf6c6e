"""High-order Moreau envelope (HOME) and proximal operator (HOPE) primitives.

For ``p > 1`` and ``gamma > 0`` the envelope of ``f`` is

    M(x) = inf_y  f(y) + ||x - y||^p / (p * gamma)

and the proximal operator is the (possibly set-valued) argmin.  Everything in
this module works on flat float64 vectors; matrix-valued problems flatten
their variables before reaching here.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Optional

import numpy as np
from scipy.optimize import bisect

from .errors import InvalidArgument, OracleFailure

__all__ = [
    "Oracle",
    "EnvelopeParams",
    "ProxApproximation",
    "as_point",
    "power_grad",
    "subproblem_value",
    "subproblem_subgradient",
    "make_prox_approximation",
    "home_gradient",
    "residual_norm",
    "kappa",
    "kappa_threshold",
]


def as_point(x, dimension: Optional[int] = None) -> np.ndarray:
    """Return ``x`` as a finite 1-D float64 array, checking its length."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    if arr.ndim != 1:
        raise InvalidArgument(f"points must be 1-D, got shape {arr.shape}")
    if dimension is not None and arr.shape[0] != dimension:
        raise InvalidArgument(
            f"dimension mismatch: expected {dimension}, got {arr.shape[0]}"
        )
    if not np.all(np.isfinite(arr)):
        raise InvalidArgument("points must have finite entries")
    return arr


@dataclass(frozen=True)
class Oracle:
    """Nonsmooth objective given by a value and one subgradient per point.

    ``lower_bound`` is an optional known lower bound on the objective (used by
    Polyak steps and by the iteration-count bound of the outer methods).
    """

    value: Callable[[np.ndarray], float]
    subgradient: Callable[[np.ndarray], np.ndarray]
    dimension: int
    lower_bound: Optional[float] = None
    name: str = field(default="f", compare=False)
    # optional fused (value, subgradient) evaluation sharing work between the two
    value_and_subgradient: Optional[Callable] = field(default=None, compare=False)

    def __post_init__(self):
        if int(self.dimension) <= 0:
            raise InvalidArgument("oracle dimension must be positive")

    def value_at(self, x) -> float:
        x = as_point(x, self.dimension)
        v = float(self.value(x))
        if not math.isfinite(v):
            raise OracleFailure(f"{self.name}: non-finite value {v!r}")
        return v

    def subgradient_at(self, x) -> np.ndarray:
        x = as_point(x, self.dimension)
        g = np.asarray(self.subgradient(x), dtype=np.float64).reshape(-1)
        if g.shape[0] != self.dimension:
            raise OracleFailure(
                f"{self.name}: subgradient has length {g.shape[0]}, "
                f"expected {self.dimension}"
            )
        if not np.all(np.isfinite(g)):
            raise OracleFailure(f"{self.name}: non-finite subgradient")
        return g

    def evaluate(self, x) -> tuple:
        """``(value_at(x), subgradient_at(x))``, fused when the oracle allows."""
        if self.value_and_subgradient is None:
            return self.value_at(x), self.subgradient_at(x)
        x = as_point(x, self.dimension)
        v, g = self.value_and_subgradient(x)
        v = float(v)
        g = np.asarray(g, dtype=np.float64).reshape(-1)
        if not math.isfinite(v) or g.shape[0] != self.dimension or not np.all(np.isfinite(g)):
            raise OracleFailure(f"{self.name}: bad fused evaluation")
        return v, g


@dataclass(frozen=True)
class EnvelopeParams:
    """Order ``p``, prox parameter ``gamma``, descent coefficient ``sigma``
    and backtracking factor ``theta``.

    ``sigma`` defaults to ``1 / (1.1 * p * gamma)`` and must stay strictly
    below ``1 / (p * gamma)``.
    """

    p: float
    gamma: float
    sigma: Optional[float] = None
    theta: float = 0.8

    def __post_init__(self):
        if not (math.isfinite(self.p) and self.p > 1):
            raise InvalidArgument("p must be > 1")
        if not (math.isfinite(self.gamma) and self.gamma > 0):
            raise InvalidArgument("gamma must be > 0")
        if not 0 < self.theta < 1:
            raise InvalidArgument("theta must lie in (0, 1)")
        if self.sigma is None:
            object.__setattr__(self, "sigma", 1.0 / (1.1 * self.p * self.gamma))
        if not 0 < self.sigma < 1.0 / (self.p * self.gamma):
            raise InvalidArgument("sigma must lie in (0, 1/(p*gamma))")

    @property
    def reg_weight(self) -> float:
        """Weight ``1/(p*gamma)`` in front of the distance term."""
        return 1.0 / (self.p * self.gamma)


@dataclass(frozen=True)
class ProxApproximation:
    """Output of an inexact prox solve at ``anchor``.

    Build instances with :func:`make_prox_approximation` so that the envelope
    value and the residual are recomputed from ``(anchor, y_bar)``.
    """

    anchor: np.ndarray
    y_bar: np.ndarray
    envelope_value_inexact: float
    residual: np.ndarray
    epsilon_used: float = float("nan")
    inner_iterations: int = 0
    inner_final_step: float = float("nan")
    objective_value: float = float("nan")


def power_grad(v: np.ndarray, p: float) -> np.ndarray:
    """Gradient of ``||v||^p / p``, i.e. ``||v||^(p-2) v``, with 0 at v = 0."""
    nrm = float(np.linalg.norm(v))
    if nrm == 0.0:
        return np.zeros_like(v, dtype=np.float64)
    return nrm ** (p - 2.0) * v


def subproblem_value(y, x, f: Oracle, params: EnvelopeParams) -> float:
    """Evaluate ``f(y) + ||x - y||^p / (p gamma)``."""
    y = as_point(y, f.dimension)
    x = as_point(x, f.dimension)
    dist = float(np.linalg.norm(x - y))
    return f.value_at(y) + params.reg_weight * dist**params.p


def subproblem_subgradient(y, x, f: Oracle, params: EnvelopeParams) -> np.ndarray:
    """One subgradient of the prox subproblem in ``y``."""
    return f.subgradient_at(y) + power_grad(y - x, params.p) / params.gamma


def make_prox_approximation(
    anchor,
    y_bar,
    f: Oracle,
    params: EnvelopeParams,
    *,
    epsilon_used: float = float("nan"),
    inner_iterations: int = 0,
    inner_final_step: float = float("nan"),
) -> ProxApproximation:
    anchor = as_point(anchor, f.dimension)
    y_bar = as_point(y_bar, f.dimension)
    fy = f.value_at(y_bar)
    residual = anchor - y_bar
    value = fy + params.reg_weight * float(np.linalg.norm(residual)) ** params.p
    return ProxApproximation(
        anchor=anchor,
        y_bar=y_bar,
        envelope_value_inexact=value,
        residual=residual,
        epsilon_used=float(epsilon_used),
        inner_iterations=int(inner_iterations),
        inner_final_step=float(inner_final_step),
        objective_value=fy,
    )


def home_gradient(prox: ProxApproximation, params: EnvelopeParams) -> np.ndarray:
    """Envelope gradient ``(1/gamma) ||r||^(p-2) r`` with ``r = x - prox(x)``.

    Returns the zero vector at ``r = 0`` for every ``p > 1``.
    """
    return power_grad(np.asarray(prox.residual, dtype=np.float64), params.p) / params.gamma


def residual_norm(prox: ProxApproximation) -> float:
    return float(np.linalg.norm(prox.residual))


_ROOT3 = math.sqrt(3.0)
_KAPPA_SCALE = (2.0 + _ROOT3) / 16.0


def _threshold_gap(t: float) -> float:
    lhs = t * (t - 1.0) / 2.0
    rhs = 1.0 - (1.0 + (2.0 - _ROOT3) * t / (t - 1.0)) ** (1.0 - t)
    return lhs - rhs


@lru_cache(maxsize=None)
def kappa_threshold() -> float:
    """Switch point of :func:`kappa`, solved by bisection on ``(1, 2]``."""
    t_hat = bisect(_threshold_gap, 1.0 + 1e-6, 2.0, xtol=1e-12, rtol=4 * np.finfo(float).eps)
    if not 1.321 <= t_hat <= 1.322:
        raise ArithmeticError(f"threshold solve landed at {t_hat}, outside [1.321, 1.322]")
    return float(t_hat)


def kappa(t: float) -> float:
    """Monotonicity constant of ``v -> ||v||^(t-2) v`` for ``t`` in ``(1, 2]``."""
    t = float(t)
    if not 1.0 < t <= 2.0:
        raise InvalidArgument(f"kappa is defined on (1, 2], got {t}")
    if t == 2.0:
        return 1.0
    if t <= kappa_threshold():
        return _KAPPA_SCALE * (t - 1.0)
    return _KAPPA_SCALE * (1.0 - (3.0 - _ROOT3) ** (1.0 - t))
