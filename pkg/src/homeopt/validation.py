"""Desk-scale checks of envelope theory against brute-force grid oracles.

Every ``check_*`` function is deterministic and returns a :class:`CheckReport`
(or a plain boolean for the sublevel test) whose tolerances are stated next
to the measured worst case, so a failing report can be reproduced directly
from its witnesses.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.optimize import brentq

from ._io import to_jsonable
from .envelope import (
    EnvelopeParams,
    Oracle,
    home_gradient,
    kappa,
    make_prox_approximation,
)
from .errors import InvalidArgument
from .inner import GridSpec, brute_force_prox, grid_values

__all__ = [
    "TestFunction",
    "CheckReport",
    "abs_shift",
    "half_square",
    "quartic_double_well",
    "constant_function",
    "grid_envelope",
    "check_envelope_bounds",
    "check_sublevel_inclusion",
    "check_fixed_point_chain",
    "check_gradient_formula",
    "check_inequality_suites",
    "INEQUALITY_SLACK",
]

# relative arithmetic slack for the randomized inequality checks
INEQUALITY_SLACK = 1e-12
_CHUNK = 2_000_000  # grid-point pairs per batch in grid_envelope


@dataclass(frozen=True)
class TestFunction:
    """A 1-D or 2-D objective with optional closed forms for its prox/envelope.

    ``vectorized`` maps an ``(N, d)`` array of points to ``N`` values and is
    used to fill brute-force grids quickly; ``minimizers`` lists the known
    global minimizers and ``minimum`` the optimal value.
    """

    __test__ = False  # not a pytest class

    name: str
    oracle: Oracle
    domain_box: GridSpec
    vectorized: Optional[Callable] = None
    closed_form_prox: Optional[Callable] = None
    closed_form_envelope: Optional[Callable] = None
    minimizers: tuple = ()
    minimum: Optional[float] = None

    def grid_values(self, grid: Optional[GridSpec] = None) -> np.ndarray:
        return grid_values(self.oracle, grid or self.domain_box, self.vectorized)


def _abs_shift_prox(x, p, gamma, c=2.0):
    # moves |x - c| toward c by t = gamma^(1/(p-1)), or lands on c
    x = float(np.asarray(x).reshape(-1)[0])
    d = x - c
    t = gamma ** (1.0 / (p - 1.0))
    if abs(d) <= t:
        return np.array([c])
    return np.array([x - math.copysign(t, d)])


def _abs_shift_envelope(x, p, gamma, c=2.0):
    d = abs(float(np.asarray(x).reshape(-1)[0]) - c)
    t = gamma ** (1.0 / (p - 1.0))
    if d <= t:
        return d**p / (p * gamma)
    return d - t * (1.0 - 1.0 / p)


def abs_shift(center: float = 2.0, box=(-1.0, 6.0), points: int = 7001) -> TestFunction:
    """``f(x) = |x - center|``; prox and envelope in closed form for every p.

    The prox shifts ``x`` toward the center by ``gamma**(1/(p-1))`` and the
    envelope is the order-p Huber function (the classical one for p = 2).
    """
    c = float(center)
    oracle = Oracle(
        value=lambda x: abs(float(x[0]) - c),
        subgradient=lambda x: np.array([float(np.sign(x[0] - c))]),
        dimension=1,
        lower_bound=0.0,
        name=f"|x-{c:g}|",
    )
    return TestFunction(
        name=f"abs_shift({c:g})",
        oracle=oracle,
        domain_box=GridSpec((box[0],), (box[1],), points),
        vectorized=lambda pts: np.abs(pts[:, 0] - c),
        closed_form_prox=lambda x, p, g: _abs_shift_prox(x, p, g, c),
        closed_form_envelope=lambda x, p, g: _abs_shift_envelope(x, p, g, c),
        minimizers=(np.array([c]),),
        minimum=0.0,
    )


def _half_square_prox(x, p, gamma):
    # y + sign(y - x) |y - x|^(p-1) / gamma = 0 has its root between 0 and x
    x = float(np.asarray(x).reshape(-1)[0])
    if x == 0.0:
        return np.array([0.0])
    if p == 2.0:
        return np.array([x / (1.0 + gamma)])

    def eq(y):
        d = y - x
        return y + math.copysign(abs(d) ** (p - 1.0), d) / gamma

    return np.array([brentq(eq, min(0.0, x), max(0.0, x), xtol=1e-15, rtol=1e-15)])


def half_square(box=(-4.0, 4.0), points: int = 7001) -> TestFunction:
    """``f(x) = x**2 / 2``; prox ``x / (1 + gamma)`` for p = 2, a 1-D root otherwise."""
    oracle = Oracle(
        value=lambda x: 0.5 * float(x @ x),
        subgradient=lambda x: np.array(x, dtype=np.float64),
        dimension=1,
        lower_bound=0.0,
        name="x^2/2",
    )

    def env(x, p, gamma):
        y = _half_square_prox(x, p, gamma)[0]
        x = float(np.asarray(x).reshape(-1)[0])
        return 0.5 * y * y + abs(x - y) ** p / (p * gamma)

    return TestFunction(
        name="half_square",
        oracle=oracle,
        domain_box=GridSpec((box[0],), (box[1],), points),
        vectorized=lambda pts: 0.5 * pts[:, 0] ** 2,
        closed_form_prox=_half_square_prox,
        closed_form_envelope=env,
        minimizers=(np.array([0.0]),),
        minimum=0.0,
    )


def quartic_double_well(box=(-2.0, 2.0), points: int = 7001) -> TestFunction:
    """``f(x) = x**4 - x**2``: minimizers ``+-1/sqrt(2)``, minimum ``-1/4``."""
    oracle = Oracle(
        value=lambda x: float(x[0] ** 4 - x[0] ** 2),
        subgradient=lambda x: np.array([4.0 * x[0] ** 3 - 2.0 * x[0]]),
        dimension=1,
        name="x^4-x^2",
    )
    s = 1.0 / math.sqrt(2.0)
    return TestFunction(
        name="quartic_double_well",
        oracle=oracle,
        domain_box=GridSpec((box[0],), (box[1],), points),
        vectorized=lambda pts: pts[:, 0] ** 4 - pts[:, 0] ** 2,
        minimizers=(np.array([-s]), np.array([s])),
        minimum=-0.25,
    )


def constant_function(c: float = 1.0, box=(-2.0, 2.0), points: int = 2001) -> TestFunction:
    oracle = Oracle(
        value=lambda x: float(c),
        subgradient=lambda x: np.zeros(1),
        dimension=1,
        lower_bound=float(c),
        name=f"const({c:g})",
    )
    return TestFunction(
        name=f"constant({c:g})",
        oracle=oracle,
        domain_box=GridSpec((box[0],), (box[1],), points),
        vectorized=lambda pts: np.full(pts.shape[0], float(c)),
        closed_form_prox=lambda x, p, g: np.asarray(x, dtype=np.float64).reshape(-1),
        closed_form_envelope=lambda x, p, g: float(c),
        minimum=float(c),
    )


@dataclass
class CheckReport:
    """Machine-readable outcome of one check.

    ``tolerance`` is the allowance the comparison used (grid slack or
    arithmetic slack), ``worst`` the largest measured violation (<= 0 means
    none) and ``witnesses`` the offending samples, verbatim.
    """

    name: str
    passed: bool
    tolerance: float
    worst: float
    details: dict = field(default_factory=dict)
    witnesses: list = field(default_factory=list)
    skipped: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return to_jsonable(asdict(self))

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, **kw)


def grid_envelope(fvals, pts, xs, p: float, gamma: float):
    """Brute-force envelope ``min_j fvals[j] + ||xs[i] - pts[j]||^p / (p gamma)``.

    Returns ``(values, argmin_index)`` for every row of ``xs``; works in
    batches so 7001 x 7001 grids stay within memory.
    """
    pts = np.asarray(pts, dtype=np.float64)
    xs = np.asarray(xs, dtype=np.float64)
    if pts.ndim == 1:
        pts = pts[:, None]
    if xs.ndim == 1:
        xs = xs[:, None]
    w = 1.0 / (p * gamma)
    rows = max(1, _CHUNK // max(1, pts.shape[0]))
    values = np.empty(xs.shape[0])
    index = np.empty(xs.shape[0], dtype=np.int64)
    for start in range(0, xs.shape[0], rows):
        blk = xs[start : start + rows]
        if pts.shape[1] == 1:
            dist = np.abs(blk[:, :1] - pts[:, 0][None, :])
        else:
            dist = np.sqrt(((blk[:, None, :] - pts[None, :, :]) ** 2).sum(axis=2))
        sub = fvals[None, :] + w * dist**p
        j = np.argmin(sub, axis=1)
        index[start : start + rows] = j
        values[start : start + rows] = sub[np.arange(sub.shape[0]), j]
    return values, index


def _envelope_slack(fvals, grid: GridSpec, p: float, gamma: float, reach: float) -> float:
    """Grid slack: largest subproblem change across one cell (Lipschitz x cell).

    ``reach`` bounds ``||x - y||`` over the box, so the distance term changes
    by at most ``reach**(p-1) / gamma`` per unit length.
    """
    arr = np.asarray(fvals).reshape(grid.shape)
    lip = 0.0
    for axis, h in enumerate(grid.spacing):
        diff = np.abs(np.diff(arr, axis=axis))
        if diff.size:
            lip = max(lip, float(diff.max()) / h)
    lip += reach ** (p - 1.0) / gamma
    return lip * grid.cell_diagonal


def check_envelope_bounds(tf: TestFunction, gammas: Sequence[float], p: float,
                          grid: Optional[GridSpec] = None) -> CheckReport:
    """Sandwich ``M_{g2} <= M_{g1} <= f`` for each adjacent pair ``g1 < g2``.

    Envelope values come from the brute-force grid envelope evaluated at every
    grid point.  When the test function carries a closed-form envelope, the
    grid envelope is also compared with it within the grid slack.
    """
    gammas = [float(g) for g in gammas]
    if len(gammas) < 1 or any(b <= a for a, b in zip(gammas, gammas[1:])):
        raise InvalidArgument("gammas must be strictly increasing")
    grid = grid or tf.domain_box
    pts = grid.points()
    fvals = tf.grid_values(grid)
    reach = float(np.linalg.norm(np.array(grid.upper) - np.array(grid.lower)))
    envs = [grid_envelope(fvals, pts, pts, p, g)[0] for g in gammas]
    slack = max(_envelope_slack(fvals, grid, p, g, reach) for g in gammas)

    witnesses = []
    worst = -math.inf
    # M_{g1} <= f
    gap = envs[0] - fvals
    worst = max(worst, float(gap.max()))
    for i in np.flatnonzero(gap > slack)[:10]:
        witnesses.append({"x": pts[i].tolist(), "gamma": gammas[0], "M": envs[0][i], "f": fvals[i]})
    for (g1, e1), (g2, e2) in zip(zip(gammas, envs), zip(gammas[1:], envs[1:])):
        gap = e2 - e1
        worst = max(worst, float(gap.max()))
        for i in np.flatnonzero(gap > slack)[:10]:
            witnesses.append({"x": pts[i].tolist(), "gamma_small": g1, "gamma_large": g2,
                              "M_small": e1[i], "M_large": e2[i]})

    details = {"function": tf.name, "p": p, "gammas": gammas, "grid_points": int(pts.shape[0])}
    if tf.closed_form_envelope is not None:
        cf_err = 0.0
        for g, e in zip(gammas, envs):
            exact = np.array([tf.closed_form_envelope(x, p, g) for x in pts])
            err = float(np.max(np.abs(e - exact)))
            cf_err = max(cf_err, err)
            if err > slack:
                witnesses.append({"gamma": g, "closed_form_gap": err})
        details["closed_form_max_gap"] = cf_err
    return CheckReport("envelope_bounds", not witnesses, slack, worst, details, witnesses)


def check_sublevel_inclusion(tf: TestFunction, p: float, gamma: float, level: float,
                             radius_center, grid: Optional[GridSpec] = None) -> bool:
    """Is ``{x in grid : M_gamma(x) <= level}`` inside ``ball(center, radius)``?

    ``radius_center`` is the pair ``(center, radius)``.  The envelope is the
    brute-force grid envelope on ``grid`` (default: the function's box).
    """
    center, radius = radius_center
    grid = grid or tf.domain_box
    if grid.dimension > 2:
        raise InvalidArgument("sublevel checks are limited to 1-D and 2-D grids")
    center = np.atleast_1d(np.asarray(center, dtype=np.float64))
    pts = grid.points()
    env, _ = grid_envelope(tf.grid_values(grid), pts, pts, p, gamma)
    inside = pts[env <= level]
    if inside.size == 0:
        return True
    dist = np.linalg.norm(inside - center, axis=1)
    return bool(np.all(dist <= radius))


def check_fixed_point_chain(tf: TestFunction, p: float, gamma: float,
                            grid: Optional[GridSpec] = None, refine: int = 3) -> CheckReport:
    """Known minimizers are prox fixed points, and ``min M = min f`` on the grid.

    The prox at each minimizer is the brute-force prox (refined ``refine``
    times); the allowed distance is two coarse cells.
    """
    if not tf.minimizers:
        raise InvalidArgument(f"{tf.name} has no known minimizers")
    grid = grid or tf.domain_box
    params = EnvelopeParams(p, gamma)
    pts = grid.points()
    fvals = tf.grid_values(grid)
    tol = 2.0 * grid.cell_diagonal
    witnesses, rows = [], []
    worst = -math.inf
    for xm in tf.minimizers:
        bf = brute_force_prox(xm, tf.oracle, params, grid, fvals=fvals, refine=refine)
        dist = float(np.linalg.norm(bf.point - xm))
        rows.append({"minimizer": np.asarray(xm).tolist(), "prox": bf.point.tolist(),
                     "distance": dist, "clusters": len(bf.clusters)})
        worst = max(worst, dist - tol)
        if dist > tol or bf.multivalued:
            witnesses.append(rows[-1])
    env, _ = grid_envelope(fvals, pts, pts, p, gamma)
    min_env, min_f = float(env.min()), float(fvals.min())
    slack = _envelope_slack(fvals, grid, p, gamma, 0.0)
    if abs(min_env - min_f) > slack:
        witnesses.append({"min_envelope": min_env, "min_f": min_f})
    details = {"function": tf.name, "p": p, "gamma": gamma, "proxes": rows,
               "min_envelope": min_env, "min_f": min_f, "value_slack": slack}
    if tf.minimum is not None:
        details["known_minimum"] = tf.minimum
    return CheckReport("fixed_point_chain", not witnesses, tol, worst, details, witnesses)


def check_gradient_formula(tf: TestFunction, p: float, gamma: float, samples,
                           grid: Optional[GridSpec] = None, *, refine: int = 4,
                           fd_step: float = 1e-3, rtol: float = 1e-4) -> CheckReport:
    """Compare the gradient formula (with brute-force prox) to central differences.

    Both the prox point and the envelope values come from the refined
    brute-force oracle.  Samples whose prox is multivalued are skipped and
    recorded as nondifferentiability witnesses.  The error is relative to
    the analytic gradient norm.
    """
    grid = grid or tf.domain_box
    params = EnvelopeParams(p, gamma)
    fvals = tf.grid_values(grid)

    def bf(x):
        return brute_force_prox(x, tf.oracle, params, grid, fvals=fvals, refine=refine)

    worst = 0.0
    rows, skipped, witnesses = [], [], []
    for x in samples:
        x = np.atleast_1d(np.asarray(x, dtype=np.float64))
        res = bf(x)
        if res.multivalued:
            skipped.append({"x": x.tolist(), "clusters": res.clusters.tolist(),
                            "reason": "multivalued prox (nondifferentiable envelope)"})
            continue
        prox = make_prox_approximation(x, res.point, tf.oracle, params)
        g = home_gradient(prox, params)
        fd = np.empty_like(x)
        for i in range(x.size):
            e = np.zeros_like(x)
            e[i] = fd_step
            fd[i] = (bf(x + e).value - bf(x - e).value) / (2.0 * fd_step)
        gn = float(np.linalg.norm(g))
        err = float(np.linalg.norm(fd - g)) / max(gn, 1e-300)
        rows.append({"x": x.tolist(), "gradient": g.tolist(), "finite_difference": fd.tolist(),
                     "relative_error": err})
        worst = max(worst, err)
        if not err < rtol:
            witnesses.append(rows[-1])
    details = {"function": tf.name, "p": p, "gamma": gamma, "samples": rows,
               "fd_step": fd_step, "refine_levels": refine}
    return CheckReport("gradient_formula", not witnesses, rtol, worst, details, witnesses, skipped)


# ---------------------------------------------------------------------------
# randomized inequality suites

def _pg(v, p):
    n = np.linalg.norm(v, axis=-1, keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(n > 0, n ** (p - 2.0) * v, 0.0)
    return out


def _ball(rng, trials, dim, radius):
    v = rng.standard_normal((trials, dim))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    rad = radius * rng.random((trials, 1)) ** (1.0 / dim)
    return v * rad


def _pairs(rng, trials, dim, radius=None):
    """Half independent pairs, half near-coincident pairs (the tight regime)."""
    if radius is None:
        a = rng.standard_normal((trials, dim)) * rng.exponential(1.0, (trials, 1))
        b = rng.standard_normal((trials, dim)) * rng.exponential(1.0, (trials, 1))
    else:
        a = _ball(rng, trials, dim, radius)
        b = _ball(rng, trials, dim, radius)
    half = trials // 2
    pert = rng.standard_normal((half, dim)) * 10.0 ** rng.uniform(-6, -1, (half, 1))
    b[:half] = a[:half] + pert
    if radius is not None:
        # keep perturbed points inside the closed ball
        nb = np.linalg.norm(b[:half], axis=1, keepdims=True)
        b[:half] = np.where(nb > radius, b[:half] * (radius / nb), b[:half])
    return a, b


def _nrm(v):
    return np.linalg.norm(v, axis=-1)


def _dot(u, v):
    return np.einsum("ij,ij->i", u, v)


def _judge(name, config, big, small, a, b, extra=None):
    """Count samples with ``big < small`` beyond the relative slack."""
    scale = np.maximum(1.0, np.maximum(np.abs(big), np.abs(small)))
    margin = big - small
    bad = margin < -INEQUALITY_SLACK * scale
    out = {
        "inequality": name,
        "config": config,
        "trials": int(a.shape[0]),
        "violations": int(bad.sum()),
        "min_relative_margin": float(np.min(margin / scale)),
        "witnesses": [],
    }
    for i in np.flatnonzero(bad)[:5]:
        w = {"a": a[i].tolist(), "b": b[i].tolist(), "lhs": float(big[i]), "rhs": float(small[i])}
        if extra is not None:
            w.update({k: float(v[i]) for k, v in extra.items()})
        out["witnesses"].append(w)
    return out


def check_inequality_suites(seed: int = 0, trials: int = 1000, dim: int = 3) -> CheckReport:
    """Randomized checks of the power-norm inequalities used by the theory.

    Suites (``a, b`` random, half of the pairs nearly coincident):

    * shifted_power_lower: ``||a+b||^p >= lam^(p-1)||a||^p - (lam/(1-lam))^(p-1)||b||^p``
    * difference_power_upper: ``||a-b||^p <= 2^(p-1)(||a||^p + ||b||^p)``
      (both for ``p in {1, 1.5, 2, 3}``)
    * power_convexity: ``||a-b||^p <= ||a||^p - p||a-b||^(p-2)<a-b, b>``, ``p in {1.5, 2, 3}``
    * power_monotone: ``<J(a) - J(b), a-b> >= 2^(2-p)||a-b||^p``, ``p in {2, 3}``
    * local_strong_monotone: ``<J(a) - J(b), a-b> >= kappa(p) r^(p-2)||a-b||^2``
      for ``p in {1.1, 1.5, 2}``
    * local_lipschitz: ``||J(a) - J(b)|| <= 2 r^(p-2)/kappa(s) ||a-b||`` with
      ``s = p/(p-1)``, ``p in {2, 3, 4}``

    where ``J(v) = ||v||^(p-2) v``; the two local suites sample ``a, b`` in
    ``ball(0, r)`` for ``r in {0.5, 1, 3}``.
    """
    rng = np.random.default_rng(seed)
    results = []

    for p in (1.0, 1.5, 2.0, 3.0):
        a, b = _pairs(rng, trials, dim)
        lam = rng.uniform(0.01, 0.99, trials)
        lhs = _nrm(a + b) ** p
        rhs = lam ** (p - 1) * _nrm(a) ** p - (lam / (1 - lam)) ** (p - 1) * _nrm(b) ** p
        results.append(_judge("shifted_power_lower", {"p": p}, lhs, rhs, a, b, {"lambda": lam}))
        a, b = _pairs(rng, trials, dim)
        lhs = 2.0 ** (p - 1) * (_nrm(a) ** p + _nrm(b) ** p)
        results.append(_judge("difference_power_upper", {"p": p}, lhs, _nrm(a - b) ** p, a, b))

    for p in (1.5, 2.0, 3.0):
        a, b = _pairs(rng, trials, dim)
        d = _nrm(a - b)
        with np.errstate(divide="ignore", invalid="ignore"):
            inner = np.where(d > 0, p * d ** (p - 2) * _dot(a - b, b), 0.0)
        results.append(_judge("power_convexity", {"p": p}, _nrm(a) ** p - inner, d**p, a, b))
        if p >= 2:
            a, b = _pairs(rng, trials, dim)
            lhs = _dot(_pg(a, p) - _pg(b, p), a - b)
            rhs = 0.5 ** (p - 2) * _nrm(a - b) ** p
            results.append(_judge("power_monotone", {"p": p}, lhs, rhs, a, b))

    for p in (1.1, 1.5, 2.0):
        k = kappa(p)
        for r in (0.5, 1.0, 3.0):
            a, b = _pairs(rng, trials, dim, radius=r)
            lhs = _dot(_pg(a, p) - _pg(b, p), a - b)
            rhs = k * r ** (p - 2) * _nrm(a - b) ** 2
            results.append(_judge("local_strong_monotone", {"p": p, "r": r}, lhs, rhs, a, b))

    for p in (2.0, 3.0, 4.0):
        s = p / (p - 1.0)
        ks = kappa(s)
        for r in (0.5, 1.0, 3.0):
            a, b = _pairs(rng, trials, dim, radius=r)
            lhs = 2.0 * r ** (p - 2) / ks * _nrm(a - b)
            rhs = _nrm(_pg(a, p) - _pg(b, p))
            results.append(_judge("local_lipschitz", {"p": p, "r": r, "s": s}, lhs, rhs, a, b))

    total = sum(r["violations"] for r in results)
    worst = min(r["min_relative_margin"] for r in results)
    witnesses = [w for r in results for w in r["witnesses"]]
    details = {"seed": seed, "trials": trials, "dimension": dim, "suites": results}
    return CheckReport("inequality_suites", total == 0, INEQUALITY_SLACK, -worst, details, witnesses)
