import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from homeopt.envelope import EnvelopeParams, Oracle, subproblem_value
from homeopt.errors import InvalidArgument, ResourceLimit, SolverDiverged
from homeopt.inner import (
    ConstantStep,
    GridSpec,
    InnerBudgetSchedule,
    PolyakStep,
    SgdssSchedule,
    brute_force_prox,
    solve_prox_baseline,
    solve_prox_sgdss,
)
from homeopt.validation import abs_shift, half_square, quartic_double_well

from conftest import abs2_oracle, half_square_oracle, huber


def test_sgdss_schedule_steps():
    s = SgdssSchedule()
    assert s.step(0) == 1.0
    assert s.step(1) == pytest.approx(0.93)
    steps = [s.step(i) for i in range(50)]
    assert all(a > b for a, b in zip(steps, steps[1:]))
    with pytest.raises(InvalidArgument):
        SgdssSchedule(q=1.0)
    with pytest.raises(InvalidArgument):
        SgdssSchedule(lam=0.0)


def test_inner_budget_default():
    b = InnerBudgetSchedule()
    assert [b(k) for k in (0, 1, 2, 3, 19, 20, 29, 30, 100)] == [50, 50, 50, 300, 300, 500, 500, 800, 800]
    assert sum(b(k) for k in range(41)) == 19050
    assert InnerBudgetSchedule.constant(7)(12) == 7
    with pytest.raises(InvalidArgument):
        InnerBudgetSchedule(((1, 10),))


def test_sgdss_at_minimizer_stays():
    f = abs2_oracle()
    for p, g in ((1.25, 0.4), (2.0, 1.0), (3.0, 0.5)):
        px = solve_prox_sgdss([2.0], f, EnvelopeParams(p, g), warm_start=[2.0])
        assert px.y_bar.tolist() == [2.0]
        assert px.residual.tolist() == [0.0]
        assert px.inner_iterations == 1  # stops at the zero subgradient


def test_sgdss_abs_soft_threshold():
    px = solve_prox_sgdss([4.0], abs2_oracle(), EnvelopeParams(2, 1), SgdssSchedule(1.0, 0.93, 300))
    assert abs(px.y_bar[0] - 3.0) <= 1e-2


def test_sgdss_quadratic_2d():
    px = solve_prox_sgdss([4.0, 0.0], half_square_oracle(2), EnvelopeParams(2, 1))
    assert np.linalg.norm(px.y_bar - [2.0, 0.0]) <= 1e-2


def test_sgdss_best_seen_never_worse_than_start():
    rng = np.random.default_rng(3)
    f = quartic_double_well().oracle
    for _ in range(20):
        x, w = rng.normal(size=1) * 2, rng.normal(size=1) * 2
        prm = EnvelopeParams(rng.choice([1.25, 2.0, 3.0]), rng.choice([0.4, 1.0]))
        px = solve_prox_sgdss(x, f, prm, SgdssSchedule(max_iterations=40), warm_start=w)
        assert px.envelope_value_inexact <= subproblem_value(w, x, f, prm) + 1e-15


def test_sgdss_deterministic():
    f = quartic_double_well().oracle
    a = solve_prox_sgdss([0.3], f, EnvelopeParams(1.25, 0.5))
    b = solve_prox_sgdss([0.3], f, EnvelopeParams(1.25, 0.5))
    assert a.y_bar.tolist() == b.y_bar.tolist()
    assert a.envelope_value_inexact == b.envelope_value_inexact


def test_non_finite_iterate_raises():
    from homeopt.inner import _subgradient_loop

    f = abs2_oracle()
    x = np.array([4.0])
    with pytest.raises(SolverDiverged):
        _subgradient_loop(x, f, EnvelopeParams(2, 1), x, 5, lambda i, v, g: float("inf"))


def test_warm_start_dimension_checked():
    with pytest.raises(InvalidArgument):
        solve_prox_sgdss([4.0], abs2_oracle(), EnvelopeParams(2, 1), warm_start=[1.0, 2.0])


@pytest.mark.parametrize("tf_factory", [abs_shift, half_square, quartic_double_well])
@pytest.mark.parametrize("p", [1.25, 2.0, 3.0])
@pytest.mark.parametrize("gamma", [0.4, 0.5, 1.0])
def test_sgdss_value_agrees_with_brute_force(tf_factory, p, gamma):
    tf = tf_factory(points=2001)
    prm = EnvelopeParams(p, gamma)
    fv = tf.grid_values()
    for x in (-0.7, 0.4, 1.3, 3.1):
        bf = brute_force_prox([x], tf.oracle, prm, tf.domain_box, fvals=fv)
        px = solve_prox_sgdss([x], tf.oracle, prm)
        assert px.envelope_value_inexact < bf.value + 1e-2 + bf.slack


# --- baselines ---------------------------------------------------------------

def test_constant_step_at_minimizer():
    px = solve_prox_baseline([2.0], abs2_oracle(), EnvelopeParams(2, 1), ConstantStep(0.1), 20,
                             warm_start=[2.0])
    assert px.y_bar.tolist() == [2.0]


def test_polyak_quadratic_converges():
    px = solve_prox_baseline([0.0, 0.0], half_square_oracle(2), EnvelopeParams(2, 1),
                             PolyakStep(0.0), 100, warm_start=[1.0, 0.0])
    assert np.linalg.norm(px.y_bar) <= 1e-3


def test_constant_step_oscillates_but_best_is_close():
    px = solve_prox_baseline([4.0], abs2_oracle(), EnvelopeParams(2, 1), ConstantStep(1.0), 50)
    assert abs(px.envelope_value_inexact - 1.5) <= 0.5


def test_baseline_rejects_unknown_rule():
    with pytest.raises(InvalidArgument):
        solve_prox_baseline([0.0], abs2_oracle(), EnvelopeParams(2, 1), "bogus", 3)
    with pytest.raises(InvalidArgument):
        ConstantStep(0.0)
    with pytest.raises(InvalidArgument):
        PolyakStep(float("inf"))


# --- grid oracle --------------------------------------------------------------

def test_gridspec_validation():
    with pytest.raises(InvalidArgument):
        GridSpec((0.0, 0.0, 0.0), (1.0, 1.0, 1.0), 3)
    with pytest.raises(InvalidArgument):
        GridSpec((1.0,), (0.0,), 10)
    with pytest.raises(ResourceLimit):
        GridSpec((0.0, 0.0), (1.0, 1.0), 4000)
    g = GridSpec((-1.0,), (6.0,), 7001)
    assert g.spacing[0] == pytest.approx(0.001)
    assert g.points().shape == (7001, 1)


def test_brute_force_abs_example():
    tf = abs_shift()
    bf = brute_force_prox([4.0], tf.oracle, EnvelopeParams(2, 1), tf.domain_box)
    assert bf.point[0] == pytest.approx(3.0, abs=2e-3)
    assert bf.value == pytest.approx(1.5, abs=1e-6)
    assert not bf.multivalued


def test_brute_force_fixed_point():
    tf = abs_shift()
    for p, g in ((1.25, 0.4), (2.0, 1.0), (3.0, 0.5)):
        bf = brute_force_prox([2.0], tf.oracle, EnvelopeParams(p, g), tf.domain_box)
        assert len(bf.clusters) == 1
        assert bf.point[0] == pytest.approx(2.0, abs=1e-9)
        assert bf.value == pytest.approx(0.0, abs=1e-12)


def test_brute_force_quartic_multivalued_p3():
    tf = quartic_double_well()
    bf = brute_force_prox([0.0], tf.oracle, EnvelopeParams(3, 1), tf.domain_box, refine=3)
    assert bf.multivalued
    c = np.sort(bf.clusters[:, 0])
    assert c[0] < 0 < c[-1]
    ystar = (-1 + np.sqrt(33)) / 8
    assert c[-1] == pytest.approx(ystar, abs=1e-5)
    assert c[0] == pytest.approx(-ystar, abs=1e-5)


def test_brute_force_quartic_single_p2():
    tf = quartic_double_well()
    bf = brute_force_prox([0.0], tf.oracle, EnvelopeParams(2, 0.2), tf.domain_box)
    assert len(bf.clusters) == 1
    assert not bf.multivalued


def test_brute_force_two_dimensional():
    f = half_square_oracle(2)
    grid = GridSpec((-3.0, -3.0), (5.0, 3.0), 401)
    bf = brute_force_prox([4.0, 0.0], f, EnvelopeParams(2, 1), grid)
    assert np.linalg.norm(bf.point - [2.0, 0.0]) <= 2 * grid.cell_diagonal
    assert bf.value == pytest.approx(4.0, abs=bf.slack)


def test_brute_force_rejects_dimension_mismatch():
    tf = abs_shift(points=101)
    with pytest.raises(InvalidArgument):
        brute_force_prox([0.0, 1.0], half_square_oracle(2), EnvelopeParams(2, 1), tf.domain_box)


@settings(max_examples=30, deadline=None)
@given(st.floats(-0.5, 5.5), st.sampled_from([0.4, 1.0]))
def test_brute_force_matches_huber(x, gamma):
    tf = abs_shift(points=3501)
    bf = brute_force_prox([x], tf.oracle, EnvelopeParams(2, gamma), tf.domain_box)
    assert abs(bf.value - huber(x, gamma)) <= bf.slack
