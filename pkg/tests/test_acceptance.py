"""Acceptance criteria 1-11.

Every test records one ``CRITERION n: PASS|FAIL`` line with the measured
quantity next to its pinned tolerance, then asserts; the lines are printed
in pytest's terminal summary.  Run the file directly (``python3 tests/test_acceptance.py``) to get
just the eleven lines.
"""

import sys
import time

import numpy as np
import pytest

from homeopt.envelope import EnvelopeParams, kappa, kappa_threshold
from homeopt.harness import ExperimentConfig, initial_point, rate_slope, run_experiment
from homeopt.hippa import (
    ErrorSchedule,
    StoppingRule,
    boosted_hippa_run,
    descent_slacks,
    hippa_run,
    lyapunov_sequence,
    telescoped_certificate,
)
from homeopt.inner import InnerBudgetSchedule, SgdssSchedule, brute_force_prox
from homeopt.recovery import generate_instance, objective_oracle
from homeopt.validation import (
    abs_shift,
    check_envelope_bounds,
    check_gradient_formula,
    check_inequality_suites,
    check_sublevel_inclusion,
    quartic_double_well,
)
from homeopt.cli import smooth_abs_samples

# pinned tolerances and time limits
INEQ_SLACK = 1e-12
KAPPA_T_RANGE = (1.321, 1.322)
GRAD_RTOL = 1e-4
LYAPUNOV_TOL = 1e-9
TIE_RTOL = 1e-8          # "ties allowed": relative gap below this counts as equal
SEEDS = (0, 1, 2, 3, 4)
SEEDS_REQUIRED = 4
CALL_BUDGET = 19050      # sum of I_k for 40 outer iterations
LIMITS = {1: 5.0, 2: 1.0, 3: 30.0, 4: 10.0, 5: 30.0, 6: 10.0, 7: 120.0, 8: 600.0,
          9: 120.0, 10: 60.0, 11: 120.0}

CRITERION_LINES = []     # printed in the terminal summary (see conftest.py)

BASELINES = ("sg-dss", "sg-css(0.01)", "sg-css(0.1)", "sg-css(1)", "sg-pss")


def report(n, ok, detail, elapsed):
    within = elapsed < LIMITS[n]
    status = "PASS" if ok and within else "FAIL"
    line = f"CRITERION {n}: {status}  {detail}  [{elapsed:.2f}s < {LIMITS[n]:g}s]"
    CRITERION_LINES.append(line)
    assert ok, line
    assert within, line


_desk_cache = {}


def desk_model1_run(method="boosted-hippa"):
    """Model 1, n = 20, r = 3, seed 0, 40 outer iterations, residual tol 0."""
    if method not in _desk_cache:
        cfg = ExperimentConfig(model=1, n1=20, r=3, seed=0)
        inst = generate_instance(cfg.model_config, 20, 20, 3, 0)
        f = objective_oracle(inst)
        x0 = initial_point(0, f.dimension)
        runner = boosted_hippa_run if method == "boosted-hippa" else hippa_run
        t0 = time.perf_counter()
        res = runner(x0, f, cfg.params, ErrorSchedule(), InnerBudgetSchedule(),
                     StoppingRule(residual_tol=0.0, max_outer_iterations=40),
                     sgdss=SgdssSchedule())
        _desk_cache[method] = (res, f, time.perf_counter() - t0)
    return _desk_cache[method]


def test_criterion_1_inequality_suites():
    t0 = time.perf_counter()
    rep = check_inequality_suites(seed=0, trials=1000)
    el = time.perf_counter() - t0
    suites = rep.details["suites"]
    ok = rep.passed and rep.tolerance == INEQ_SLACK and all(s["trials"] == 1000 for s in suites)
    violations = sum(s["violations"] for s in suites)
    report(1, ok, f"{len(suites)} configurations x 1000 pairs, violations={violations} "
                  f"(slack {INEQ_SLACK:g})", el)


def test_criterion_2_kappa():
    t0 = time.perf_counter()
    t = kappa_threshold()
    k2 = kappa(2.0)
    el = time.perf_counter() - t0
    ok = KAPPA_T_RANGE[0] <= t <= KAPPA_T_RANGE[1] and k2 == 1.0
    report(2, ok, f"t_hat={t:.8f} in [{KAPPA_T_RANGE[0]}, {KAPPA_T_RANGE[1]}], kappa(2)={k2!r}", el)


def test_criterion_3_envelope_sandwich():
    t0 = time.perf_counter()
    absf, quart = abs_shift(points=7001), quartic_double_well(points=7001)
    reps = [check_envelope_bounds(absf, [0.4, 1.0], p) for p in (1.25, 2.0, 3.0)]
    reps += [check_envelope_bounds(quart, [0.1, 0.2, 0.5], p) for p in (2.0, 3.0)]
    el = time.perf_counter() - t0
    worst = max(r.worst for r in reps)
    ok = all(r.passed for r in reps)
    report(3, ok, f"{len(reps)} sweeps on 7001-point grids, worst excess over grid slack={worst:.3g}", el)


def test_criterion_4_sublevel_example():
    t0 = time.perf_counter()
    tf = abs_shift()
    g1 = check_sublevel_inclusion(tf, 2.0, 1.0, 1.0, (2.0, 1.35))
    g04 = check_sublevel_inclusion(tf, 2.0, 0.4, 1.0, (2.0, 1.35))
    el = time.perf_counter() - t0
    report(4, g1 is False and g04 is True,
           f"gamma=1 -> {g1} (want False), gamma=0.4 -> {g04} (want True)", el)


def test_criterion_5_gradient_formula():
    t0 = time.perf_counter()
    tf = abs_shift()
    samples = smooth_abs_samples(20)
    reps = [check_gradient_formula(tf, 2.0, g, samples, rtol=GRAD_RTOL) for g in (0.4, 1.0)]
    el = time.perf_counter() - t0
    worst = max(r.worst for r in reps)
    n = sum(len(r.details["samples"]) for r in reps)
    ok = all(r.passed for r in reps) and worst < GRAD_RTOL and n == 40
    report(5, ok, f"{n} samples, max relative error={worst:.3g} (< {GRAD_RTOL:g})", el)


def test_criterion_6_nondifferentiability():
    t0 = time.perf_counter()
    tf = quartic_double_well()
    p3 = brute_force_prox([0.0], tf.oracle, EnvelopeParams(3.0, 1.0), tf.domain_box, refine=3)
    p2 = brute_force_prox([0.0], tf.oracle, EnvelopeParams(2.0, 0.2), tf.domain_box)
    el = time.perf_counter() - t0
    c = np.sort(p3.clusters[:, 0])
    symmetric = len(c) >= 2 and abs(c[0] + c[-1]) <= 2 * p3.cell
    ok = p3.multivalued and c[0] < 0 < c[-1] and symmetric and len(p2.clusters) == 1
    report(6, ok, f"p=3 clusters={np.round(c, 5).tolist()}, p=2/gamma=0.2 clusters={len(p2.clusters)}",
           el)


def test_criterion_7_line_search_certificates():
    res, f, el = desk_model1_run("boosted-hippa")
    t0 = time.perf_counter()
    stored = descent_slacks(res)
    recomputed = descent_slacks(res, f)
    lyap = lyapunov_sequence(res)
    rise = float(np.max(np.diff(lyap))) if lyap.size > 1 else 0.0
    cert = telescoped_certificate(res, 0.0)
    el += time.perf_counter() - t0
    ok = (stored.size == res.outer_iterations and np.all(stored >= 0) and np.all(recomputed >= 0)
          and rise <= LYAPUNOV_TOL and cert["holds"])
    report(7, ok, f"{res.outer_iterations} accepted steps (stop: {res.stop_reason}), "
                  f"min descent slack={recomputed.min():.3g}, Lyapunov max rise={rise:.3g} "
                  f"(<= {LYAPUNOV_TOL:g}), telescoped {cert['lhs']:.4g} <= {cert['rhs']:.4g}", el)


def _ordinal_ok(methods):
    """Boosted <= HiPPA <= best baseline, with relative ties of TIE_RTOL."""
    def le(a, b):
        return a <= b + TIE_RTOL * max(1.0, abs(a), abs(b))

    b = methods["boosted-hippa"]["final_objective"]
    h = methods["hippa"]["final_objective"]
    best = min(methods[m]["final_objective"] for m in BASELINES)
    return le(b, h) and le(h, best), (b, h, best)


def test_criterion_8_comparative_performance(tmp_path):
    t0 = time.perf_counter()
    lines, passed = [], []
    for model, n1, n2 in ((1, 20, 20), (2, 20, 16)):
        wins = 0
        for seed in SEEDS:
            cfg = ExperimentConfig(model=model, n1=n1, n2=n2, r=3, p=1.25, seed=seed,
                                   calls=CALL_BUDGET, residual_tol=0.0,
                                   out=str(tmp_path / f"m{model}s{seed}"))
            res = run_experiment(cfg, write=False)
            ok, (b, h, best) = _ordinal_ok(res.summary["methods"])
            wins += ok
            lines.append(f"model {model} seed {seed}: boosted={b:.10g} hippa={h:.10g} "
                         f"best baseline={best:.10g} {'ok' if ok else 'violated'}")
        passed.append(wins >= SEEDS_REQUIRED)
        lines.append(f"model {model}: {wins}/{len(SEEDS)} seeds (need {SEEDS_REQUIRED})")
    el = time.perf_counter() - t0
    for line in lines:
        CRITERION_LINES.append("    " + line)
    report(8, all(passed), f"ordinal Boosted <= HiPPA <= baselines at {CALL_BUDGET} calls, "
                           f"tie rtol {TIE_RTOL:g}; model1={passed[0]}, model2={passed[1]}", el)


def test_criterion_9_iteration_bound(tmp_path):
    t0 = time.perf_counter()
    checks = []
    for tol in (1e-6, 1e-3, 1e-1):
        cfg = ExperimentConfig(model=1, n1=20, r=3, seed=0, iters=40, residual_tol=tol,
                               methods=("boosted-hippa", "hippa"), out=str(tmp_path))
        res = run_experiment(cfg, write=False)
        for m, info in res.summary["methods"].items():
            b = info["iteration_bound"]
            checks.append((tol, m, b["iterations"], b["bound"], b["holds"]))
    el = time.perf_counter() - t0
    ok = all(c[-1] for c in checks)
    worst = max(checks, key=lambda c: c[2] / c[3])
    report(9, ok, f"{len(checks)} runs, every count <= ceil bound (tightest: {worst[1]} "
                  f"tol={worst[0]:g}: {worst[2]} <= {worst[3]})", el)


def test_criterion_10_determinism(tmp_path):
    t0 = time.perf_counter()
    kw = dict(model=2, n1=12, n2=10, r=2, seed=5, iters=10)
    a = run_experiment(ExperimentConfig(out=str(tmp_path / "a"), **kw))
    b = run_experiment(ExperimentConfig(out=str(tmp_path / "b"), **kw))
    el = time.perf_counter() - t0
    same = [a.csv_paths[m].read_bytes() == b.csv_paths[m].read_bytes() for m in a.csv_paths]
    report(10, all(same) and len(same) == 7, f"{sum(same)}/{len(same)} CSVs byte-identical", el)


def test_criterion_11_rate_probe():
    res, _, el = desk_model1_run("boosted-hippa")
    slope = rate_slope(res, 20)
    used = min(20, sum(t.residual_norm > 0 for t in res.trace))
    ok = slope is not None and slope < 0
    report(11, ok, f"slope of log||R|| over last {used} nonzero-residual iterates={slope:.4g} (< 0)",
           el)


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-p", "no:cacheprovider"]))
