"""Command line entry point: ``homeopt run | validate | gen-instance``.

Exit codes: 0 success, 1 solver or check failure, 2 configuration error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from ._io import atomic_write_text, to_jsonable
from .errors import HomeOptError, InvalidArgument
from .harness import ConfigError, emit_plot_data, parse_config, run_experiment
from .recovery import ModelConfig, generate_instance, save_instance

EXIT_OK, EXIT_FAILURE, EXIT_CONFIG = 0, 1, 2

log = logging.getLogger("homeopt")


def _add_problem_flags(p: argparse.ArgumentParser):
    p.add_argument("--model", type=int, choices=(1, 2))
    p.add_argument("--n1", type=int)
    p.add_argument("--n2", type=int)
    p.add_argument("--r", type=int)
    p.add_argument("--outliers", type=float, help="outlier ratio o (default 0.3)")
    p.add_argument("--seed", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="homeopt", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an experiment and write trace CSVs + summary.json")
    run.add_argument("--config", help="flat key = value file (flags take precedence)")
    _add_problem_flags(run)
    run.add_argument("--p", type=float)
    run.add_argument("--gamma", type=float)
    run.add_argument("--theta", type=float)
    run.add_argument("--iters", type=int, help="outer iterations for the HiPPA methods")
    run.add_argument("--seconds", type=float, help="wall-clock cap per method")
    run.add_argument("--calls", type=int, help="shared subgradient-call budget for all methods")
    run.add_argument("--methods", help="comma list, e.g. boosted-hippa,hippa,sg-css(0.1)")
    run.add_argument("--residual-tol", dest="residual_tol", type=float)
    run.add_argument("--timing", action="store_const", const=True,
                     help="record elapsed_seconds (makes outputs machine-dependent)")
    run.add_argument("--out", help="output directory (default ./out)")
    run.add_argument("--plot-data", action="store_true", help="also write plot_data.csv")

    val = sub.add_parser("validate", help="run the brute-force validation suites")
    val.add_argument("--seed", type=int, default=0)
    val.add_argument("--trials", type=int, default=1000)
    val.add_argument("--out", help="write the JSON report here instead of stdout")

    gen = sub.add_parser("gen-instance", help="write a recovery-instance record")
    _add_problem_flags(gen)
    gen.add_argument("--out", required=True, help="destination JSON file")
    return parser


def _cmd_run(args) -> int:
    flags = {k: getattr(args, k) for k in (
        "model", "n1", "n2", "r", "p", "gamma", "theta", "outliers", "seed", "iters",
        "seconds", "calls", "methods", "residual_tol", "timing", "out")}
    cfg = parse_config(args.config, flags)
    result = run_experiment(cfg)
    if args.plot_data:
        emit_plot_data(result.rows, Path(cfg.out) / "plot_data.csv",
                       metrics=("residual_norm", "objective_value"))
    for name, info in result.summary["methods"].items():
        if info.get("status") == "ok":
            print(f"{name:16s} final objective {info['final_objective']:.10g}  "
                  f"calls {info['oracle_calls']}")
        else:
            print(f"{name:16s} FAILED: {info.get('error')}")
    print(f"wrote {result.summary_path}")
    return EXIT_OK if result.ok else EXIT_FAILURE


def run_validation(seed: int = 0, trials: int = 1000) -> dict:
    """The validation suites at their default desk-scale settings."""
    from .inner import GridSpec, brute_force_prox
    from .envelope import EnvelopeParams
    from . import validation as V

    reports = []
    absf, quart = V.abs_shift(), V.quartic_double_well()
    reports.append(V.check_inequality_suites(seed, trials))
    reports.append(V.check_envelope_bounds(absf, [0.4, 1.0], 2.0))
    reports.append(V.check_envelope_bounds(quart, [0.1, 0.2], 2.0))
    sub = {
        "gamma=1": V.check_sublevel_inclusion(absf, 2.0, 1.0, 1.0, (2.0, 1.35)),
        "gamma=0.4": V.check_sublevel_inclusion(absf, 2.0, 0.4, 1.0, (2.0, 1.35)),
    }
    reports.append(V.CheckReport("sublevel_inclusion", sub == {"gamma=1": False, "gamma=0.4": True},
                                 0.0, 0.0, {"inclusion": sub, "expected": {"gamma=1": False,
                                                                           "gamma=0.4": True}}))
    for p in (1.25, 2.0, 3.0):
        reports.append(V.check_fixed_point_chain(absf, p, 1.0))
    reports.append(V.check_fixed_point_chain(quart, 2.0, 0.05))
    samples = smooth_abs_samples()
    for g in (0.4, 1.0):
        reports.append(V.check_gradient_formula(absf, 2.0, g, samples))
    reports.append(V.check_gradient_formula(quart, 3.0, 1.0, [0.0]))
    grid = quart.domain_box
    probe3 = brute_force_prox(0.0, quart.oracle, EnvelopeParams(3.0, 1.0), grid)
    probe2 = brute_force_prox(0.0, quart.oracle, EnvelopeParams(2.0, 0.2), grid)
    ok = (probe3.multivalued and probe3.clusters.min() < 0 < probe3.clusters.max()
          and len(probe2.clusters) == 1)
    reports.append(V.CheckReport("nondifferentiability_probe", bool(ok), probe3.slack, 0.0, {
        "p3_clusters": probe3.clusters, "p2_clusters": probe2.clusters}))
    return {"passed": all(r.passed for r in reports),
            "reports": [r.to_dict() for r in reports]}


def smooth_abs_samples(n: int = 20, center: float = 2.0, kinks=(0.4, 1.0), gap: float = 0.01):
    """``n`` points of [-0.9, 5.9] away from the center and the Huber switch points."""
    cand = np.linspace(-0.9, 5.9, 4 * n)
    keep = [x for x in cand if abs(x - center) > gap
            and all(abs(abs(x - center) - k) > gap for k in kinks)]
    idx = np.linspace(0, len(keep) - 1, n).round().astype(int)
    return [float(keep[i]) for i in idx]


def _cmd_validate(args) -> int:
    if args.trials < 1:
        raise ConfigError("trials", "must be positive")
    report = run_validation(args.seed, args.trials)
    text = json.dumps(to_jsonable(report), indent=2, sort_keys=True) + "\n"
    if args.out:
        atomic_write_text(args.out, text)
    else:
        sys.stdout.write(text)
    for r in report["reports"]:
        print(f"{'PASS' if r['passed'] else 'FAIL'} {r['name']}", file=sys.stderr)
    return EXIT_OK if report["passed"] else EXIT_FAILURE


def _cmd_gen(args) -> int:
    model = args.model or 1
    try:
        cfg = ModelConfig(model, 0.3 if args.outliers is None else args.outliers)
    except InvalidArgument as exc:
        raise ConfigError("outliers", str(exc)) from None
    defaults = {1: (50, 50, 5), 2: (50, 40, 5)}[model]
    n1 = args.n1 or defaults[0]
    n2 = args.n2 or (n1 if model == 1 else defaults[1])
    r = args.r or defaults[2]
    try:
        inst = generate_instance(cfg, n1, n2, r, args.seed or 0)
    except InvalidArgument as exc:
        raise ConfigError("dimensions", str(exc)) from None
    path = save_instance(inst, args.out)
    print(f"wrote {path} (m = {inst.m})")
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "validate":
            return _cmd_validate(args)
        return _cmd_gen(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InvalidArgument as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (HomeOptError, ArithmeticError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
