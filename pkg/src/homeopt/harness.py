"""Experiment orchestration: configs, subgradient baselines, CSV/JSON output.

An experiment draws one recovery instance and one random starting point
from its seed, runs every requested method from that point and writes one
trace CSV per method plus ``summary.json``.

Budgets
-------
``iters``
    outer iterations for HiPPA / Boosted HiPPA.  Without ``calls`` the
    subgradient baselines get the oracle calls HiPPA would spend on that
    many iterations, ``sum_{k<=iters} I_k``.
``calls``
    one shared budget of subgradient evaluations for every method (the
    equal-work comparison).
``seconds``
    wall-clock cap per method (not deterministic).
"""

from __future__ import annotations

import dataclasses
import json
import logging
import math
import re
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Dict, List, Mapping, Optional, Sequence

import numpy as np

from ._io import atomic_write_text, fmt_float, to_jsonable
from .envelope import EnvelopeParams, Oracle, as_point
from .errors import HomeOptError, InvalidArgument, SolverDiverged
from .hippa import (
    ErrorSchedule,
    RunResult,
    StoppingRule,
    boosted_hippa_run,
    descent_slacks,
    hippa_run,
    iteration_bound,
    lyapunov_sequence,
    telescoped_certificate,
)
from .inner import InnerBudgetSchedule, SgdssSchedule
from .recovery import ModelConfig, generate_instance, objective_oracle, recovery_error

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "ExperimentResult",
    "DEFAULT_METHODS",
    "CSV_COLUMNS",
    "parse_config",
    "parse_method",
    "initial_point",
    "nominal_calls",
    "run_subgradient_method",
    "run_experiment",
    "emit_plot_data",
    "rate_slope",
]

log = logging.getLogger(__name__)

CSV_COLUMNS = (
    "k",
    "residual_norm",
    "objective_value",
    "envelope_value_inexact",
    "backtracks",
    "sigma_k",
    "elapsed_seconds",
    "recovery_error",
)
DEFAULT_METHODS = (
    "boosted-hippa",
    "hippa",
    "sg-dss",
    "sg-css(0.01)",
    "sg-css(0.1)",
    "sg-css(1)",
    "sg-pss",
)
MODEL_DEFAULTS = {
    1: dict(n1=50, n2=50, r=5, gamma=0.5),
    2: dict(n1=50, n2=40, r=5, gamma=1.0),
}
DEFAULT_ITERS = 40
RATE_WINDOW = 20


class ConfigError(InvalidArgument):
    """Malformed experiment configuration; ``key`` names the offending entry."""

    def __init__(self, key, message):
        super().__init__(f"{key}: {message}")
        self.key = key


_CSS = re.compile(r"^sg-css[(:_-]?\s*([^)\s]+)\s*\)?$")


def parse_method(name: str) -> str:
    """Canonical method name; ``sg-css:0.1`` and ``sg-css(0.1)`` both work."""
    name = name.strip().lower()
    if name in ("boosted-hippa", "hippa", "sg-dss", "sg-pss"):
        return name
    m = _CSS.match(name)
    if m:
        try:
            alpha = float(m.group(1))
        except ValueError:
            alpha = float("nan")
        if not (math.isfinite(alpha) and alpha > 0):
            raise ConfigError("methods", f"constant step in {name!r} must be a positive number")
        return f"sg-css({alpha:g})"
    raise ConfigError("methods", f"unknown method {name!r}")


def _css_alpha(method: str) -> float:
    return float(method[len("sg-css(") : -1])


def _file_stem(method: str) -> str:
    return method.replace("(", "_").replace(")", "")


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything that determines an experiment's output.

    Dimensions and ``gamma`` left as None take the defaults of the chosen
    model (model 1: n = 50, r = 5, gamma = 0.5; model 2: 50 x 40, r = 5,
    gamma = 1).  ``timing`` fills the elapsed_seconds column, which makes the
    CSVs machine-dependent.
    """

    model: int = 1
    n1: Optional[int] = None
    n2: Optional[int] = None
    r: Optional[int] = None
    p: float = 1.25
    gamma: Optional[float] = None
    theta: float = 0.8
    outliers: float = 0.3
    seed: int = 0
    methods: tuple = DEFAULT_METHODS
    iters: Optional[int] = None
    seconds: Optional[float] = None
    calls: Optional[int] = None
    residual_tol: float = 1e-6
    out: str = "out"
    timing: bool = False

    def __post_init__(self):
        if self.model not in (1, 2):
            raise ConfigError("model", "must be 1 or 2")
        d = MODEL_DEFAULTS[self.model]
        n1 = d["n1"] if self.n1 is None else self.n1
        if self.model == 1:
            n2 = n1 if self.n2 is None else self.n2
            if n2 != n1:
                raise ConfigError("n2", "model 1 needs n1 == n2")
        else:
            n2 = d["n2"] if self.n2 is None else self.n2
        r = d["r"] if self.r is None else self.r
        gamma = d["gamma"] if self.gamma is None else self.gamma
        for key, v in (("n1", n1), ("n2", n2), ("r", r)):
            if int(v) != v or v < 1:
                raise ConfigError(key, "must be a positive integer")
        if r > min(n1, n2):
            raise ConfigError("r", "cannot exceed min(n1, n2)")
        if not (math.isfinite(self.p) and self.p > 1):
            raise ConfigError("p", "p must be > 1")
        if not (math.isfinite(gamma) and gamma > 0):
            raise ConfigError("gamma", "gamma must be > 0")
        if not 0 < self.theta < 1:
            raise ConfigError("theta", "theta must lie in (0, 1)")
        if not 0 <= self.outliers < 1:
            raise ConfigError("outliers", "outlier ratio must lie in [0, 1)")
        if self.iters is not None and (int(self.iters) != self.iters or self.iters < 0):
            raise ConfigError("iters", "must be a non-negative integer")
        if self.seconds is not None and not self.seconds > 0:
            raise ConfigError("seconds", "must be > 0")
        if self.calls is not None and (int(self.calls) != self.calls or self.calls < 1):
            raise ConfigError("calls", "must be a positive integer")
        if not self.residual_tol >= 0:
            raise ConfigError("residual_tol", "must be >= 0")
        methods = tuple(parse_method(m) for m in self.methods)
        if not methods:
            raise ConfigError("methods", "at least one method is required")
        if len(set(methods)) != len(methods):
            raise ConfigError("methods", "duplicate method")
        iters = self.iters
        if iters is None and self.seconds is None and self.calls is None:
            iters = DEFAULT_ITERS
        for name, v in (("n1", int(n1)), ("n2", int(n2)), ("r", int(r)), ("gamma", float(gamma)),
                        ("methods", methods), ("iters", iters)):
            object.__setattr__(self, name, v)

    @property
    def params(self) -> EnvelopeParams:
        return EnvelopeParams(self.p, self.gamma, theta=self.theta)

    @property
    def model_config(self) -> ModelConfig:
        return ModelConfig(self.model, self.outliers)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["methods"] = list(self.methods)
        return d


# --- config parsing -------------------------------------------------------

_CASTS: Dict[str, Callable] = {
    "model": int,
    "n1": int,
    "n2": int,
    "r": int,
    "p": float,
    "gamma": float,
    "theta": float,
    "outliers": float,
    "seed": int,
    "methods": lambda s: tuple(m for m in re.split(r"[,\s]+", s.strip()) if m),
    "iters": int,
    "seconds": float,
    "calls": int,
    "residual_tol": float,
    "out": str,
    "timing": lambda s: {"1": True, "true": True, "yes": True, "0": False, "false": False,
                         "no": False}[s.strip().lower()],
}
CONFIG_KEYS = tuple(_CASTS)


def _cast(key, raw):
    if key not in _CASTS:
        raise ConfigError(key, "unknown configuration key")
    if not isinstance(raw, str):
        return raw
    try:
        return _CASTS[key](raw)
    except (ValueError, KeyError):
        raise ConfigError(key, f"cannot parse value {raw!r}") from None


def read_config_file(path) -> dict:
    """Flat ``key = value`` file; ``#`` starts a comment, blank lines ignored."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError("config", f"cannot read {path}: {exc.strerror}") from None
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}", f"expected 'key = value', got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        out[key] = _cast(key, value)
    return out


def parse_config(path=None, flags: Optional[Mapping] = None) -> ExperimentConfig:
    """Merge defaults < config file < flags and validate the result.

    ``flags`` maps keys to already-typed values or strings; None values are
    treated as "not given".
    """
    merged = {}
    if path is not None:
        merged.update(read_config_file(path))
    for key, value in (flags or {}).items():
        if value is None:
            continue
        key = key.replace("-", "_")
        merged[key] = _cast(key, value)
    return ExperimentConfig(**merged)


# --- runs -----------------------------------------------------------------

def initial_point(seed: int, dimension: int) -> np.ndarray:
    """Shared start: standard normal entries from ``default_rng([seed, 1])``.

    The instance itself uses ``default_rng(seed)``, so the two streams are
    independent.
    """
    return np.random.default_rng([int(seed), 1]).standard_normal(int(dimension))


def nominal_calls(iters: int, budget: InnerBudgetSchedule = InnerBudgetSchedule()) -> int:
    """Subgradient calls of ``iters`` HiPPA iterations, ``sum_{k=0}^{iters} I_k``."""
    return sum(budget(k) for k in range(int(iters) + 1))


def run_subgradient_method(x0, f: Oracle, rule: str, *, alpha: float = 0.01,
                           lam: float = 1.0, q: float = 0.93, f_low: float = 0.0,
                           calls: Optional[int] = None, seconds: Optional[float] = None,
                           callback=None):
    """Plain subgradient iteration on ``f`` (one oracle call per step).

    ``rule`` is ``"dss"`` (distance ``lam q^i`` along the normalised
    subgradient), ``"css"`` (distance ``alpha``) or ``"pss"`` (Polyak,
    ``(f(x) - f_low) / ||g||^2``).  ``callback(i, x, value, elapsed)`` sees
    every iterate, including the last one.  Returns ``(x, value, calls,
    stop_reason)``.
    """
    if calls is None and seconds is None:
        raise InvalidArgument("a call or time budget is required")
    x = as_point(x0, f.dimension).copy()
    t0 = time.perf_counter()
    i = 0
    reason = "calls"
    while True:
        if calls is not None and i >= calls:
            value = f.value_at(x)
            break
        if seconds is not None and time.perf_counter() - t0 >= seconds:
            reason = "seconds"
            value = f.value_at(x)
            break
        value, g = f.evaluate(x)
        if callback is not None:
            callback(i, x, value, time.perf_counter() - t0)
        gn = float(np.linalg.norm(g))
        if gn == 0.0:
            return x, value, i + 1, "stationary"
        if rule == "dss":
            step = lam * q**i / gn
        elif rule == "css":
            step = alpha / gn
        elif rule == "pss":
            step = max(value - f_low, 0.0) / (gn * gn)
        else:
            raise InvalidArgument(f"unknown subgradient rule {rule!r}")
        x = x - step * g
        if not np.all(np.isfinite(x)):
            raise SolverDiverged(f"sg-{rule}: iterate became non-finite")
        i += 1
    if callback is not None:
        callback(i, x, value, time.perf_counter() - t0)
    return x, value, i, reason


def rate_slope(result: RunResult, window: int = RATE_WINDOW) -> Optional[float]:
    """Least-squares slope of ``log ||R_k||`` against k over the last ``window``
    accepted iterates with a nonzero residual (None if fewer than two)."""
    pts = [(t.k, math.log(t.residual_norm)) for t in result.trace if t.residual_norm > 0]
    pts = pts[-window:]
    if len(pts) < 2:
        return None
    k, y = np.array(pts).T
    return float(np.polyfit(k, y, 1)[0])


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    summary: dict
    csv_paths: Dict[str, Path]
    summary_path: Path
    rows: Dict[str, List[dict]]
    failed: List[str]

    @property
    def ok(self) -> bool:
        return not self.failed


def _hippa_rows(result_trace, iterates, inst, timing):
    rows = []
    for t, x in zip(result_trace, iterates):
        rows.append({
            "k": t.k,
            "residual_norm": t.residual_norm,
            "objective_value": t.objective_value,
            "envelope_value_inexact": t.envelope_value_inexact,
            "backtracks": t.backtracks if t.k > 0 else None,
            "sigma_k": t.sigma_k,
            "elapsed_seconds": t.elapsed_seconds if timing else None,
            "recovery_error": recovery_error(x, inst),
        })
    return rows


def _csv_text(rows) -> str:
    lines = [",".join(CSV_COLUMNS)]
    for row in rows:
        cells = []
        for col in CSV_COLUMNS:
            v = row.get(col)
            if col in ("k", "backtracks"):
                cells.append("" if v is None else str(int(v)))
            else:
                cells.append(fmt_float(v))
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


def _hippa_summary(res: RunResult, f_low: float) -> dict:
    cert = telescoped_certificate(res, f_low)
    bound = iteration_bound(res, f_low)
    lyap = lyapunov_sequence(res)
    lyap_rise = float(np.max(np.diff(lyap))) if lyap.size > 1 else 0.0
    slacks = descent_slacks(res)
    return {
        "outer_iterations": res.outer_iterations,
        "stop_reason": res.stop_reason,
        "final_residual_norm": res.trace[-1].residual_norm,
        "telescoped_certificate": cert,
        "iteration_bound": bound,
        "lyapunov_max_increase": lyap_rise,
        "lyapunov_nonincreasing": bool(lyap_rise <= 1e-9),
        "descent_test_min_slack": float(slacks.min()) if slacks.size else None,
        "fallbacks": int(sum(t.fallback for t in res.trace)),
        "rate_slope_last_20": rate_slope(res),
    }


def run_experiment(cfg: ExperimentConfig, write: bool = True) -> ExperimentResult:
    """Run every method of ``cfg`` and (optionally) write CSVs and the summary.

    A method that diverges keeps its partial trace and is listed under
    ``failed``; the remaining methods still run.
    """
    inst = generate_instance(cfg.model_config, cfg.n1, cfg.n2, cfg.r, cfg.seed)
    f = objective_oracle(inst)
    f_low = f.lower_bound if f.lower_bound is not None else 0.0
    x0 = initial_point(cfg.seed, f.dimension)
    params = cfg.params
    budget = InnerBudgetSchedule()
    if cfg.calls is not None:
        baseline_calls = cfg.calls
    elif cfg.iters is not None:
        baseline_calls = nominal_calls(cfg.iters, budget)
    else:
        baseline_calls = None
    stop = StoppingRule(
        residual_tol=cfg.residual_tol,
        max_outer_iterations=cfg.iters,
        max_seconds=cfg.seconds,
        max_oracle_calls=cfg.calls,
    )

    out = Path(cfg.out)
    rows: Dict[str, List[dict]] = {}
    methods: Dict[str, dict] = {}
    csv_paths: Dict[str, Path] = {}
    failed: List[str] = []
    for method in cfg.methods:
        log.info("running %s", method)
        info: dict = {}
        try:
            if method in ("hippa", "boosted-hippa"):
                runner = boosted_hippa_run if method == "boosted-hippa" else hippa_run
                res = runner(x0, f, params, ErrorSchedule(), budget, stop, sgdss=SgdssSchedule())
                rows[method] = _hippa_rows(res.trace, res.iterates, inst, cfg.timing)
                info.update(_hippa_summary(res, f_low))
                info["oracle_calls"] = res.oracle_calls
                final_x = res.x
            else:
                trace = []

                def cb(i, x, value, elapsed, trace=trace):
                    trace.append({
                        "k": i,
                        "objective_value": value,
                        "elapsed_seconds": elapsed if cfg.timing else None,
                        "recovery_error": recovery_error(x, inst),
                    })

                rule = method[3:6]
                kw = {"alpha": _css_alpha(method)} if rule == "css" else {}
                final_x, _, used, reason = run_subgradient_method(
                    x0, f, rule, f_low=f_low, calls=baseline_calls, seconds=cfg.seconds,
                    callback=cb, **kw)
                rows[method] = trace
                info.update(oracle_calls=used, stop_reason=reason, iterations=trace[-1]["k"])
            info["final_objective"] = rows[method][-1]["objective_value"]
            info["final_recovery_error"] = recovery_error(final_x, inst)
            info["status"] = "ok"
        except (SolverDiverged, ArithmeticError) as exc:
            log.error("%s failed: %s", method, exc)
            failed.append(method)
            partial = getattr(exc, "trace", None) or []
            if method in ("hippa", "boosted-hippa"):
                rows[method] = [
                    {"k": t.k, "residual_norm": t.residual_norm,
                     "objective_value": t.objective_value,
                     "envelope_value_inexact": t.envelope_value_inexact,
                     "backtracks": t.backtracks, "sigma_k": t.sigma_k}
                    for t in partial
                ]
            else:
                rows.setdefault(method, [])
            info.update(status="failed", error=str(exc))
        methods[method] = info
        if write:
            csv_paths[method] = atomic_write_text(
                out / f"{_file_stem(method)}.csv", _csv_text(rows[method]))

    summary = {
        "config": cfg.to_dict(),
        "instance": {
            "model": inst.model, "n1": inst.n1, "n2": inst.n2, "r": inst.r, "m": inst.m,
            "seed": cfg.seed, "outliers": int(inst.outlier_mask.sum()),
            "lambda_reg": inst.config.lambda_reg, "generator": "numpy default_rng(seed)",
        },
        "initial_point": {
            "distribution": "standard normal",
            "generator": "numpy default_rng([seed, 1])",
            "objective": f.value_at(x0),
        },
        "params": {"p": params.p, "gamma": params.gamma, "sigma": params.sigma,
                   "theta": params.theta},
        "budget": {"outer_iterations": cfg.iters, "oracle_calls": cfg.calls,
                   "baseline_oracle_calls": baseline_calls, "seconds": cfg.seconds},
        "f_low": f_low,
        "epsilon_total": ErrorSchedule().total,
        "methods": methods,
        "failed": failed,
    }
    summary_path = out / "summary.json"
    if write:
        text = json.dumps(to_jsonable(summary), indent=2, sort_keys=True) + "\n"
        atomic_write_text(summary_path, text)
    return ExperimentResult(cfg, summary, csv_paths, summary_path, rows, failed)


def emit_plot_data(traces: Mapping[str, Sequence[Mapping]], path=None,
                   metrics: Optional[Sequence[str]] = None) -> str:
    """Long-format ``method,k,metric,value`` table from per-method rows.

    Every row contributes one line per metric with a finite value; columns
    other than ``k`` are metrics unless ``metrics`` restricts them.  Values
    are written with 17 significant digits.
    """
    lines = ["method,k,metric,value"]
    for method, rows in traces.items():
        for row in rows:
            names = metrics if metrics is not None else [c for c in row if c != "k"]
            for name in names:
                v = row.get(name)
                if v is None or (isinstance(v, float) and not math.isfinite(v)):
                    continue
                lines.append(f"{method},{int(row['k'])},{name},{fmt_float(v)}")
    text = "\n".join(lines) + "\n"
    if path is not None:
        atomic_write_text(path, text)
    return text
