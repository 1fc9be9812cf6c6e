"""Robust low-rank matrix recovery benchmark.

Measurements ``y_i = <A_i, X_t> + s_i`` with Gaussian sensing matrices and a
fraction ``o`` of large Gaussian outliers.  Two factorised l1 models:

* model 1 (symmetric):  Phi(U)    = (1/m) ||y - A(U U^T)||_1
* model 2 (asymmetric): Psi(U, V) = (1/m) ||y - A(U V^T)||_1
                                    + lambda ||U^T U - V^T V||_F

Factors are flattened column-major (Fortran order) and, for model 2, U comes
before V in the flat vector.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .envelope import Oracle, as_point
from .errors import InvalidArgument

__all__ = [
    "DEFAULT_DELTA",
    "ModelConfig",
    "RecoveryInstance",
    "derived_lambda",
    "generate_instance",
    "measure",
    "phi_oracle",
    "psi_oracle",
    "objective_oracle",
    "flatten_factors",
    "unflatten_factors",
    "recovery_error",
    "save_instance",
    "load_instance",
]

DEFAULT_DELTA = math.sqrt(2.0 / math.pi) / 6.3
OUTLIER_STD = 10.0  # variance 100
INSTANCE_FORMAT = "homeopt-recovery-instance"


def derived_lambda(outlier_ratio: float, delta: float = DEFAULT_DELTA) -> float:
    """Balance weight ``[2(1-o)(c - delta) - (c + delta)] / 2`` with ``c = sqrt(2/pi)``."""
    c = math.sqrt(2.0 / math.pi)
    return (2.0 * (1.0 - outlier_ratio) * (c - delta) - (c + delta)) / 2.0


@dataclass(frozen=True)
class ModelConfig:
    model: int = 1
    outlier_ratio: float = 0.3
    delta: float = DEFAULT_DELTA
    lambda_reg: Optional[float] = None

    def __post_init__(self):
        if self.model not in (1, 2):
            raise InvalidArgument(f"model must be 1 or 2, got {self.model!r}")
        if not 0 <= self.outlier_ratio < 1:
            raise InvalidArgument("outlier ratio must lie in [0, 1)")
        if self.model == 2 and self.lambda_reg is None:
            lam = derived_lambda(self.outlier_ratio, self.delta)
            if not lam > 0:
                raise InvalidArgument(
                    f"derived lambda {lam:.6g} is not positive for o={self.outlier_ratio}, "
                    f"delta={self.delta}"
                )
            object.__setattr__(self, "lambda_reg", lam)
        if self.lambda_reg is not None and self.lambda_reg < 0:
            raise InvalidArgument("lambda_reg must be >= 0")


@dataclass(frozen=True)
class RecoveryInstance:
    """A generated (or hand-built) recovery problem.

    ``sensing`` has shape ``(m, n1, n2)``; ``v_true`` is None for model 1.
    """

    config: ModelConfig
    n1: int
    n2: int
    r: int
    sensing: np.ndarray
    y: np.ndarray
    outliers: np.ndarray
    outlier_mask: np.ndarray
    u_true: np.ndarray
    v_true: Optional[np.ndarray] = None
    seed: Optional[int] = None

    @property
    def m(self) -> int:
        return int(self.sensing.shape[0])

    @property
    def model(self) -> int:
        return self.config.model

    @property
    def x_true(self) -> np.ndarray:
        v = self.u_true if self.model == 1 else self.v_true
        return self.u_true @ v.T

    @property
    def dimension(self) -> int:
        return self.r * (self.n1 if self.model == 1 else self.n1 + self.n2)


def _check_dims(model, n1, n2, r):
    if min(n1, n2, r) < 1:
        raise InvalidArgument("n1, n2 and r must be positive")
    if model == 1 and n1 != n2:
        raise InvalidArgument("model 1 needs a square matrix (n1 == n2)")
    if r > min(n1, n2):
        raise InvalidArgument("rank r cannot exceed min(n1, n2)")


def generate_instance(cfg: ModelConfig, n1: int, n2: int, r: int, seed: int) -> RecoveryInstance:
    """Draw an instance from numpy's PCG64 generator seeded with ``seed``.

    Draw order: sensing tensor, U_t, V_t (model 2), outlier positions
    (uniform without replacement), outlier values.
    """
    n1, n2, r = int(n1), int(n2), int(r)
    _check_dims(cfg.model, n1, n2, r)
    rng = np.random.default_rng(seed)
    m = 5 * r * max(n1, n2)
    sensing = rng.standard_normal((m, n1, n2))
    u_true = rng.standard_normal((n1, r))
    v_true = rng.standard_normal((n2, r)) if cfg.model == 2 else None
    n_out = int(round(cfg.outlier_ratio * m))
    idx = np.sort(rng.choice(m, size=n_out, replace=False)) if n_out else np.array([], int)
    outliers = np.zeros(m)
    outliers[idx] = OUTLIER_STD * rng.standard_normal(n_out)
    mask = np.zeros(m, dtype=bool)
    mask[idx] = True
    x_true = u_true @ (u_true if v_true is None else v_true).T
    y = measure(sensing, x_true) + outliers
    return RecoveryInstance(cfg, n1, n2, r, sensing, y, outliers, mask, u_true, v_true, seed)


def measure(sensing: np.ndarray, x: np.ndarray) -> np.ndarray:
    """``<A_i, X>`` for every i as one double contraction."""
    m = sensing.shape[0]
    return sensing.reshape(m, -1) @ np.asarray(x, dtype=np.float64).ravel()


def flatten_factors(u: np.ndarray, v: Optional[np.ndarray] = None) -> np.ndarray:
    parts = [np.asarray(u, dtype=np.float64).ravel(order="F")]
    if v is not None:
        parts.append(np.asarray(v, dtype=np.float64).ravel(order="F"))
    return np.concatenate(parts)


def unflatten_factors(point, inst: RecoveryInstance):
    """Return ``(U, V)``; ``V`` is ``U`` itself for model 1."""
    point = as_point(point, inst.dimension)
    nu = inst.n1 * inst.r
    u = point[:nu].reshape((inst.n1, inst.r), order="F")
    if inst.model == 1:
        return u, u
    v = point[nu:].reshape((inst.n2, inst.r), order="F")
    return u, v


def phi_oracle(inst: RecoveryInstance) -> Oracle:
    """Model-1 objective over flattened ``U``; subgradient uses sign(0) = 0."""
    if inst.model != 1:
        raise InvalidArgument("phi_oracle needs a model-1 instance")
    m, n, r = inst.m, inst.n1, inst.r
    flat = inst.sensing.reshape(m, n * n)
    y = inst.y

    def both(point):
        u = point.reshape((n, r), order="F")
        res = flat @ (u @ u.T).ravel() - y
        s = np.sign(res)
        g = (s @ flat).reshape(n, n)
        grad = (g + g.T) @ u / m
        return np.abs(res).sum() / m, grad.ravel(order="F")

    def value(point):
        u = point.reshape((n, r), order="F")
        return np.abs(flat @ (u @ u.T).ravel() - y).sum() / m

    return Oracle(value, lambda pt: both(pt)[1], n * r, lower_bound=0.0,
                  name="Phi", value_and_subgradient=both)


def psi_oracle(inst: RecoveryInstance, cfg: Optional[ModelConfig] = None) -> Oracle:
    """Model-2 objective over flattened ``(U; V)``."""
    cfg = cfg or inst.config
    if inst.model != 2 or cfg.model != 2:
        raise InvalidArgument("psi_oracle needs a model-2 instance and config")
    lam = float(cfg.lambda_reg)
    m, n1, n2, r = inst.m, inst.n1, inst.n2, inst.r
    flat = inst.sensing.reshape(m, n1 * n2)
    y = inst.y
    nu = n1 * r

    def split(point):
        return (point[:nu].reshape((n1, r), order="F"),
                point[nu:].reshape((n2, r), order="F"))

    def value(point):
        u, v = split(point)
        data = np.abs(flat @ (u @ v.T).ravel() - y).sum() / m
        return data + lam * np.linalg.norm(u.T @ u - v.T @ v)

    def both(point):
        u, v = split(point)
        res = flat @ (u @ v.T).ravel() - y
        s = np.sign(res)
        g = (s @ flat).reshape(n1, n2)
        gu = g @ v / m
        gv = g.T @ u / m
        gram = u.T @ u - v.T @ v
        gnorm = float(np.linalg.norm(gram))
        if gnorm > 0.0:
            gu = gu + lam * 2.0 * (u @ gram) / gnorm
            gv = gv - lam * 2.0 * (v @ gram) / gnorm
        val = np.abs(res).sum() / m + lam * gnorm
        return val, np.concatenate([gu.ravel(order="F"), gv.ravel(order="F")])

    return Oracle(value, lambda pt: both(pt)[1], (n1 + n2) * r, lower_bound=0.0,
                  name="Psi", value_and_subgradient=both)


def objective_oracle(inst: RecoveryInstance) -> Oracle:
    return phi_oracle(inst) if inst.model == 1 else psi_oracle(inst)


def recovery_error(point, inst: RecoveryInstance) -> float:
    """Relative Frobenius error of the rebuilt matrix."""
    u, v = unflatten_factors(point, inst)
    xt = inst.x_true
    return float(np.linalg.norm(u @ v.T - xt) / np.linalg.norm(xt))


def _digest(inst: RecoveryInstance) -> str:
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(inst.y, dtype="<f8").tobytes())
    return h.hexdigest()


def save_instance(inst: RecoveryInstance, path) -> Path:
    """Write a regeneration record (seed + config + checksum of y) as JSON."""
    if inst.seed is None:
        raise InvalidArgument("only seeded instances can be exported")
    doc = {
        "format": INSTANCE_FORMAT,
        "version": 1,
        "generator": "numpy.random.default_rng(seed) / PCG64",
        "model": inst.model,
        "n1": inst.n1,
        "n2": inst.n2,
        "r": inst.r,
        "m": inst.m,
        "seed": int(inst.seed),
        "outlier_ratio": inst.config.outlier_ratio,
        "delta": inst.config.delta,
        "lambda_reg": inst.config.lambda_reg,
        "n_outliers": int(inst.outlier_mask.sum()),
        "y_sha256": _digest(inst),
    }
    path = Path(path)
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def load_instance(path, verify: bool = True) -> RecoveryInstance:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("format") != INSTANCE_FORMAT:
        raise InvalidArgument(f"{path}: not an instance file")
    cfg = ModelConfig(
        model=int(doc["model"]),
        outlier_ratio=float(doc["outlier_ratio"]),
        delta=float(doc["delta"]),
        lambda_reg=None if doc["lambda_reg"] is None else float(doc["lambda_reg"]),
    )
    inst = generate_instance(cfg, doc["n1"], doc["n2"], doc["r"], int(doc["seed"]))
    if verify and _digest(inst) != doc["y_sha256"]:
        raise InvalidArgument(f"{path}: regenerated measurements do not match the checksum")
    return inst
