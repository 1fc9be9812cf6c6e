"""Outer level: HiPPA and Boosted HiPPA on the high-order Moreau envelope.

Both methods call an inexact prox solver (SG-DSS) at every outer iteration.
Boosted HiPPA adds a spectral extrapolation direction ``d = -sigma_k R`` and
accepts the first candidate

    x_hat = (1 - theta^m) * prox(x) + theta^m * (x + d),   m = 0, 1, ...

whose inexact envelope value passes the nonmonotone test

    M_{k+1}(x_hat) <= M_k(x) - sigma * ||R||^p + eps_k + eps_{k+1}.

The prox computed at the accepted candidate is reused at the next iteration.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
from scipy.special import zeta

from .envelope import EnvelopeParams, Oracle, ProxApproximation, as_point
from .errors import InvalidArgument, SolverDiverged
from .inner import InnerBudgetSchedule, SgdssSchedule, solve_prox_sgdss

__all__ = [
    "ErrorSchedule",
    "SpectralConfig",
    "SpectralState",
    "StoppingRule",
    "IterateTrace",
    "RunResult",
    "spectral_sigma",
    "hippa_run",
    "boosted_hippa_step",
    "boosted_hippa_run",
    "descent_slacks",
    "lyapunov_sequence",
    "telescoped_certificate",
    "iteration_bound",
]

DEGENERATE_CURVATURE = 1e-300


@dataclass(frozen=True)
class ErrorSchedule:
    """Summable accuracies ``eps_k = scale / (k + 1)**power``."""

    scale: float = 1.0
    power: float = 2.0

    def __post_init__(self):
        if not self.scale > 0 or not self.power > 1:
            raise InvalidArgument("error schedule needs scale > 0 and power > 1")

    def __call__(self, k: int) -> float:
        return self.scale / (k + 1.0) ** self.power

    @property
    def total(self) -> float:
        """``sum_{k >= 0} eps_k`` (pi^2/6 for the default)."""
        return self.tail(0)

    def tail(self, k: int) -> float:
        """``sum_{j >= k} eps_j``."""
        return self.scale * float(zeta(self.power, k + 1.0))


@dataclass(frozen=True)
class SpectralConfig:
    sigma_min: float = 1e-1
    sigma_max: float = 1e10
    sigma_0: float = 1.0

    def __post_init__(self):
        if not 0 < self.sigma_min < self.sigma_max:
            raise InvalidArgument("need 0 < sigma_min < sigma_max")
        if not self.sigma_0 > 0:
            raise InvalidArgument("sigma_0 must be > 0")


@dataclass
class SpectralState:
    """Previous accepted iterate and its residual (both None at k = 0)."""

    prev_x: Optional[np.ndarray] = None
    prev_residual: Optional[np.ndarray] = None
    cfg: SpectralConfig = field(default_factory=SpectralConfig)


@dataclass(frozen=True)
class StoppingRule:
    residual_tol: float = 1e-6
    max_outer_iterations: Optional[int] = None
    max_seconds: Optional[float] = None
    max_oracle_calls: Optional[int] = None

    def __post_init__(self):
        if (
            self.max_outer_iterations is None
            and self.max_seconds is None
            and self.max_oracle_calls is None
        ):
            raise InvalidArgument("at least one budget must be finite")
        if not self.residual_tol >= 0:
            raise InvalidArgument("residual tolerance must be >= 0")


@dataclass(frozen=True)
class IterateTrace:
    """One accepted outer iterate ``x^k``.

    ``alpha``, ``sigma_k`` and ``backtracks`` describe the step that produced
    ``x^k`` (NaN/0 at k = 0 and for plain HiPPA).  ``oracle_calls`` is the
    cumulative number of subgradient evaluations so far.
    """

    k: int
    residual_norm: float
    envelope_value_inexact: float
    objective_value: float
    backtracks: int = 0
    alpha: float = float("nan")
    sigma_k: float = float("nan")
    inner_iterations: int = 0
    elapsed_seconds: float = 0.0
    oracle_calls: int = 0
    fallback: bool = False
    epsilon: float = float("nan")


@dataclass
class RunResult:
    x: np.ndarray
    trace: List[IterateTrace]
    iterates: List[np.ndarray]
    proxes: List[ProxApproximation]
    params: EnvelopeParams
    schedule: ErrorSchedule
    stop_reason: str
    residual_tol: float

    @property
    def oracle_calls(self) -> int:
        return self.trace[-1].oracle_calls if self.trace else 0

    @property
    def outer_iterations(self) -> int:
        return self.trace[-1].k if self.trace else 0


def spectral_sigma(s, y, residual_norm_current: float, cfg: SpectralConfig = SpectralConfig()) -> float:
    """Barzilai-Borwein step ``<s,s>/<s,y>`` with a residual-based fallback."""
    s = np.asarray(s, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if s.shape != y.shape:
        raise InvalidArgument("s and y must have the same shape")
    sy = float(s @ y)
    if abs(sy) > DEGENERATE_CURVATURE and math.isfinite(sy):
        sigma_hat = abs(float(s @ s) / sy)
        if math.isfinite(sigma_hat) and cfg.sigma_min <= sigma_hat <= cfg.sigma_max:
            return sigma_hat
    rn = float(residual_norm_current)
    if rn > 1.0:
        return 1.0
    if rn < 1e-5:
        return 1e5
    return 1.0 / rn


def _prox(x, f, params, sgdss, n_inner, eps):
    return solve_prox_sgdss(x, f, params, sgdss.with_iterations(n_inner), epsilon=eps)


def _record(k, prox, objective, t0, calls, **extra):
    return IterateTrace(
        k=k,
        residual_norm=float(np.linalg.norm(prox.residual)),
        envelope_value_inexact=prox.envelope_value_inexact,
        objective_value=float(objective),
        inner_iterations=prox.inner_iterations,
        elapsed_seconds=time.perf_counter() - t0,
        oracle_calls=calls,
        epsilon=prox.epsilon_used,
        **extra,
    )


def _should_stop(k, rn, calls, t0, stop: StoppingRule, next_cost: int) -> Optional[str]:
    if rn <= stop.residual_tol:
        return "tolerance"
    if stop.max_outer_iterations is not None and k >= stop.max_outer_iterations:
        return "iterations"
    if stop.max_seconds is not None and time.perf_counter() - t0 >= stop.max_seconds:
        return "seconds"
    if stop.max_oracle_calls is not None and calls + next_cost > stop.max_oracle_calls:
        return "oracle_calls"
    return None


def hippa_run(
    x0,
    f: Oracle,
    params: EnvelopeParams,
    schedule: ErrorSchedule = ErrorSchedule(),
    budget: InnerBudgetSchedule = InnerBudgetSchedule(),
    stop: StoppingRule = StoppingRule(max_outer_iterations=100),
    sgdss: SgdssSchedule = SgdssSchedule(),
    prox_solver=None,
) -> RunResult:
    """Inexact high-order proximal point iteration ``x^{k+1} = prox_k(x^k)``.

    ``prox_solver(x, n_inner, eps)`` replaces SG-DSS when given (used to run
    the method with exact proxes in tests).  Under an oracle-call budget the
    last inner solve is truncated so the budget is met exactly.
    """
    x = as_point(x0, f.dimension)
    solve = prox_solver or (lambda z, n, e: _prox(z, f, params, sgdss, n, e))
    t0 = time.perf_counter()
    n0 = budget(0)
    if stop.max_oracle_calls is not None:
        n0 = max(1, min(n0, stop.max_oracle_calls))
    prox = solve(x, n0, schedule(0))
    calls = prox.inner_iterations
    trace = [_record(0, prox, f.value_at(x), t0, calls)]
    iterates, proxes = [x], [prox]
    k = 0
    while True:
        cost = budget(k + 1)
        if stop.max_oracle_calls is not None:
            cost = min(cost, stop.max_oracle_calls - calls)
            reason = _should_stop(k, trace[-1].residual_norm, calls, t0, stop, 0)
            if reason is None and cost <= 0:
                reason = "oracle_calls"
        else:
            reason = _should_stop(k, trace[-1].residual_norm, calls, t0, stop, cost)
        if reason:
            break
        x = prox.y_bar
        objective = prox.objective_value
        try:
            prox = solve(x, cost, schedule(k + 1))
        except SolverDiverged as exc:
            exc.trace = trace
            raise
        calls += prox.inner_iterations
        k += 1
        trace.append(_record(k, prox, objective, t0, calls, alpha=1.0))
        iterates.append(x)
        proxes.append(prox)
    return RunResult(x, trace, iterates, proxes, params, schedule, reason, stop.residual_tol)


def boosted_hippa_step(
    x_k,
    f: Oracle,
    params: EnvelopeParams,
    k: int,
    schedule: ErrorSchedule,
    budget: InnerBudgetSchedule,
    state: SpectralState,
    max_backtracks: int = 50,
    *,
    prox_k: Optional[ProxApproximation] = None,
    sgdss: SgdssSchedule = SgdssSchedule(),
    prox_solver=None,
):
    """One accepted Boosted HiPPA iteration from ``x_k``.

    Returns ``(x_next, prox_next, info, state)`` where ``prox_next`` is the
    prox approximation at ``x_next`` (accuracy ``eps_{k+1}``) and ``info`` is
    a dict with ``backtracks``, ``alpha``, ``sigma_k``, ``fallback``,
    ``objective`` (value of f at ``x_next``) and ``calls``.  A zero residual
    returns ``x_k`` unchanged.
    """
    if max_backtracks < 1:
        raise InvalidArgument("max_backtracks must be >= 1")
    x_k = as_point(x_k, f.dimension)
    solve = prox_solver or (lambda z, n, e: _prox(z, f, params, sgdss, n, e))
    calls = 0
    if prox_k is None:
        prox_k = solve(x_k, budget(k), schedule(k))
        calls += prox_k.inner_iterations
    R = prox_k.residual
    rn = float(np.linalg.norm(R))
    if rn == 0.0:
        info = dict(backtracks=0, alpha=float("nan"), sigma_k=float("nan"),
                    fallback=False, objective=f.value_at(x_k), calls=calls)
        return x_k, prox_k, info, state

    if state.prev_x is None:
        sigma_k = state.cfg.sigma_0
    else:
        sigma_k = spectral_sigma(x_k - state.prev_x, R - state.prev_residual, rn, state.cfg)
    d = -sigma_k * R
    ybar = prox_k.y_bar
    eps_k, eps_next = schedule(k), schedule(k + 1)
    rhs = prox_k.envelope_value_inexact - params.sigma * rn**params.p + eps_k + eps_next
    n_inner = budget(k + 1)

    accepted = None
    for m in range(max_backtracks):
        alpha = params.theta**m
        x_hat = (1.0 - alpha) * ybar + alpha * (x_k + d)
        if not np.all(np.isfinite(x_hat)):
            raise SolverDiverged("line-search candidate became non-finite")
        cand = solve(x_hat, n_inner, eps_next)
        calls += cand.inner_iterations
        if cand.envelope_value_inexact <= rhs:
            accepted = (x_hat, cand, m, alpha, False)
            break
    if accepted is None:
        cand = solve(ybar, n_inner, eps_next)
        calls += cand.inner_iterations
        accepted = (ybar, cand, max_backtracks, 0.0, True)

    x_next, prox_next, m, alpha, fallback = accepted
    new_state = SpectralState(prev_x=x_k, prev_residual=R, cfg=state.cfg)
    objective = f.value_at(x_next)
    info = dict(backtracks=m, alpha=alpha, sigma_k=sigma_k, fallback=fallback,
                objective=objective, calls=calls)
    return x_next, prox_next, info, new_state


def boosted_hippa_run(
    x0,
    f: Oracle,
    params: EnvelopeParams,
    schedule: ErrorSchedule = ErrorSchedule(),
    budget: InnerBudgetSchedule = InnerBudgetSchedule(),
    stop: StoppingRule = StoppingRule(max_outer_iterations=100),
    spectral: SpectralConfig = SpectralConfig(),
    max_backtracks: int = 50,
    sgdss: SgdssSchedule = SgdssSchedule(),
    prox_solver=None,
) -> RunResult:
    """Boosted HiPPA outer loop.

    Under an oracle-call budget the backtracking cap shrinks so that the
    worst case of a step (all candidates plus the fallback solve) fits in
    what is left; the run stops when not even one candidate fits.
    """
    x = as_point(x0, f.dimension)
    solve = prox_solver or (lambda z, n, e: _prox(z, f, params, sgdss, n, e))
    t0 = time.perf_counter()
    prox = solve(x, budget(0), schedule(0))
    calls = prox.inner_iterations
    trace = [_record(0, prox, f.value_at(x), t0, calls)]
    iterates, proxes = [x], [prox]
    state = SpectralState(cfg=spectral)
    k = 0
    while True:
        # under a call budget, keep one candidate solve in reserve for the fallback
        cost = 2 * budget(k + 1) if stop.max_oracle_calls is not None else budget(k + 1)
        reason = _should_stop(k, trace[-1].residual_norm, calls, t0, stop, cost)
        if reason:
            break
        cap = max_backtracks
        if stop.max_oracle_calls is not None:
            cap = min(cap, (stop.max_oracle_calls - calls) // budget(k + 1) - 1)
        try:
            x, prox, info, state = boosted_hippa_step(
                x, f, params, k, schedule, budget, state, cap,
                prox_k=prox, sgdss=sgdss, prox_solver=prox_solver,
            )
        except SolverDiverged as exc:
            exc.trace = trace
            raise
        calls += info["calls"]
        k += 1
        trace.append(
            _record(
                k, prox, info["objective"], t0, calls,
                backtracks=info["backtracks"], alpha=info["alpha"],
                sigma_k=info["sigma_k"], fallback=info["fallback"],
            )
        )
        iterates.append(x)
        proxes.append(prox)
    return RunResult(x, trace, iterates, proxes, params, schedule, reason, stop.residual_tol)


def descent_slacks(result: RunResult, f: Optional[Oracle] = None) -> np.ndarray:
    """Slack of the inexact descent test for every accepted step (>= 0 passes).

    With ``f`` given, envelope values are re-evaluated from the stored prox
    points instead of read from the trace.
    """
    p, sigma = result.params.p, result.params.sigma
    if f is not None:
        w = result.params.reg_weight
        env = [
            f.value_at(px.y_bar) + w * float(np.linalg.norm(x - px.y_bar)) ** p
            for x, px in zip(result.iterates, result.proxes)
        ]
        res = [float(np.linalg.norm(x - px.y_bar)) for x, px in zip(result.iterates, result.proxes)]
    else:
        env = [t.envelope_value_inexact for t in result.trace]
        res = [t.residual_norm for t in result.trace]
    eps = result.schedule
    out = [
        env[k] - sigma * res[k] ** p + eps(k) + eps(k + 1) - env[k + 1]
        for k in range(len(env) - 1)
    ]
    return np.array(out)


def lyapunov_sequence(result: RunResult) -> np.ndarray:
    """``M_k(x^k) + sum_{j>=k} eps_j + sum_{j>=k+1} eps_j`` along the run."""
    eps = result.schedule
    return np.array(
        [t.envelope_value_inexact + eps.tail(t.k) + eps.tail(t.k + 1) for t in result.trace]
    )


def telescoped_certificate(result: RunResult, f_low: float = 0.0) -> dict:
    """Check ``sigma * sum ||R_k||^p <= M_0(x^0) - f_low + 2 * eps_bar``.

    The sum runs over the iterates that produced a step (all but the last).
    """
    p, sigma = result.params.p, result.params.sigma
    lhs = sigma * math.fsum(t.residual_norm**p for t in result.trace[:-1])
    rhs = result.trace[0].envelope_value_inexact - f_low + 2.0 * result.schedule.total
    return {"lhs": lhs, "rhs": rhs, "holds": bool(lhs <= rhs)}


def iteration_bound(result: RunResult, f_low: float = 0.0, tol: Optional[float] = None) -> dict:
    """Outer iteration count against ``ceil((M_0 - f_low + 2 eps_bar) / (sigma tol^p))``."""
    tol = result.residual_tol if tol is None else tol
    p, sigma = result.params.p, result.params.sigma
    num = result.trace[0].envelope_value_inexact - f_low + 2.0 * result.schedule.total
    bound = math.inf if tol <= 0 else math.ceil(num / (sigma * tol**p))
    k = result.outer_iterations
    return {"iterations": k, "bound": bound, "holds": bool(k <= bound)}
