import json

import numpy as np
import pytest

from homeopt.envelope import EnvelopeParams
from homeopt.errors import InvalidArgument
from homeopt.inner import GridSpec, brute_force_prox
from homeopt.validation import (
    abs_shift,
    check_envelope_bounds,
    check_fixed_point_chain,
    check_gradient_formula,
    check_inequality_suites,
    check_sublevel_inclusion,
    constant_function,
    grid_envelope,
    half_square,
    quartic_double_well,
)

from conftest import huber


@pytest.mark.parametrize("p", [1.25, 2.0, 3.0])
@pytest.mark.parametrize("gamma", [0.4, 1.0])
def test_closed_form_abs_matches_grid(p, gamma):
    tf = abs_shift(points=3501)
    for x in (-0.8, 1.1, 2.0, 2.3, 5.2):
        bf = brute_force_prox([x], tf.oracle, EnvelopeParams(p, gamma), tf.domain_box)
        assert abs(bf.value - tf.closed_form_envelope([x], p, gamma)) <= bf.slack
        assert abs(bf.point[0] - tf.closed_form_prox([x], p, gamma)[0]) <= 2 * bf.cell + 1e-9


def test_closed_form_abs_is_huber_for_p2():
    tf = abs_shift()
    for x in np.linspace(-1, 6, 29):
        assert tf.closed_form_envelope([x], 2.0, 0.7) == pytest.approx(huber(x, 0.7))


@pytest.mark.parametrize("p", [1.25, 2.0, 3.0])
def test_closed_form_half_square_stationarity(p):
    tf = half_square()
    for x in (-3.0, -0.5, 0.0, 1.0, 3.5):
        y = tf.closed_form_prox([x], p, 0.5)[0]
        # y + sign(y-x)|y-x|^(p-1)/gamma = 0
        assert y + np.sign(y - x) * abs(y - x) ** (p - 1) / 0.5 == pytest.approx(0.0, abs=1e-12)


def test_envelope_bounds_examples():
    r1 = check_envelope_bounds(abs_shift(), [0.4, 1.0], 2.0)
    assert r1.passed and r1.worst <= 0 and not r1.witnesses
    assert r1.details["closed_form_max_gap"] <= r1.tolerance
    r2 = check_envelope_bounds(quartic_double_well(), [0.1, 0.2], 2.0)
    assert r2.passed and r2.worst <= 0


def test_envelope_of_constant_is_constant():
    tf = constant_function(3.0)
    r = check_envelope_bounds(tf, [0.2, 0.5, 2.0], 1.5)
    assert r.passed
    pts = tf.domain_box.points()
    vals, _ = grid_envelope(tf.grid_values(), pts, pts, 1.5, 2.0)
    assert np.all(vals == 3.0)


def test_envelope_bounds_requires_increasing_gammas():
    with pytest.raises(InvalidArgument):
        check_envelope_bounds(abs_shift(points=101), [1.0, 0.4], 2.0)


def test_grid_envelope_two_dimensional():
    grid = GridSpec((-2.0, -2.0), (2.0, 2.0), 81)
    pts = grid.points()
    fv = 0.5 * (pts**2).sum(axis=1)
    xs = np.array([[1.0, 1.0], [0.0, 0.0]])
    vals, idx = grid_envelope(fv, pts, xs, 2.0, 1.0)
    # exact: |x|^2 / 4 for f = |y|^2/2, gamma = 1
    np.testing.assert_allclose(vals, [0.5, 0.0], atol=1e-12)
    np.testing.assert_allclose(pts[idx[0]], [0.5, 0.5])


def test_sublevel_example():
    tf = abs_shift()
    assert check_sublevel_inclusion(tf, 2.0, 1.0, 1.0, (2.0, 1.35)) is False
    assert check_sublevel_inclusion(tf, 2.0, 0.4, 1.0, (2.0, 1.35)) is True
    assert check_sublevel_inclusion(tf, 2.0, 1.0, -0.5, (2.0, 0.01)) is True  # empty set


def test_fixed_point_chain():
    absf = abs_shift()
    for p in (1.25, 2.0, 3.0):
        for g in (0.4, 1.0):
            r = check_fixed_point_chain(absf, p, g)
            assert r.passed, r.witnesses
    r = check_fixed_point_chain(quartic_double_well(), 2.0, 0.05)
    assert r.passed
    for row in r.details["proxes"]:
        assert row["distance"] <= 1e-6
    assert r.details["min_envelope"] == r.details["min_f"]
    assert r.details["min_f"] == pytest.approx(-0.25, abs=1e-6)


def test_gradient_formula_abs():
    tf = abs_shift()
    r = check_gradient_formula(tf, 2.0, 1.0, [4.0, 2.5, 0.3])
    assert r.passed and r.worst < 1e-6
    grads = [s["gradient"][0] for s in r.details["samples"]]
    assert grads[0] == pytest.approx(1.0, abs=1e-6)
    assert grads[1] == pytest.approx(0.5, abs=1e-6)


def test_gradient_zero_at_minimizer():
    tf = abs_shift()
    bf = brute_force_prox([2.0], tf.oracle, EnvelopeParams(2, 1), tf.domain_box, refine=2)
    assert bf.point[0] == pytest.approx(2.0, abs=1e-12)


def test_gradient_skips_multivalued_point():
    r = check_gradient_formula(quartic_double_well(), 3.0, 1.0, [0.0, 1.5])
    assert len(r.skipped) == 1 and r.skipped[0]["x"] == [0.0]
    assert len(r.details["samples"]) == 1


def test_inequality_suites_pass_and_are_deterministic():
    a = check_inequality_suites(seed=3, trials=1000)
    b = check_inequality_suites(seed=3, trials=1000)
    assert a.passed
    assert a.to_json() == b.to_json()
    names = {s["inequality"] for s in a.details["suites"]}
    assert len(names) == 6
    assert all(s["trials"] == 1000 for s in a.details["suites"])


def test_inequality_equality_cases():
    # a = b: both sides of the p >= 2 monotonicity bound vanish; p = 2 local bound is tight
    from homeopt.validation import _pg

    a = np.array([[0.3, -0.2, 0.1]])
    lhs = ((_pg(a, 3.0) - _pg(a, 3.0)) * (a - a)).sum()
    assert lhs == 0.0
    b = np.array([[0.1, 0.4, -0.2]])
    lhs2 = ((_pg(a, 2.0) - _pg(b, 2.0)) * (a - b)).sum()
    assert lhs2 == pytest.approx(((a - b) ** 2).sum())


def test_report_json_serializable():
    r = check_gradient_formula(quartic_double_well(), 3.0, 1.0, [0.0])
    doc = json.loads(r.to_json())
    assert doc["name"] == "gradient_formula" and doc["skipped"]
