from dataclasses import astuple

import numpy as np
import pytest

from moreau_cc.catalog import example_6_4, get_problem
from moreau_cc.envelope import BallDistance, Quadratic, SeparableSum, absolute
from moreau_cc.errors import InfeasibleStart, MaxPenaltyReached
from moreau_cc.solver import ProblemSpec, SolverOptions, continuation, nominal_value, solve_regularized
from moreau_cc.spherical import GaussianModel, prob_estimate, sample_directions
from moreau_cc.systems import joint_system

DIRS = sample_directions(2, 1024, seed=42, mode="low-discrepancy")


def _trivial_spec(p=0.01):
    target = np.array([1.0, 0.0])
    psi = Quadratic(np.eye(2), -target, 0.5 * target @ target)
    return ProblemSpec(psi, example_6_4(), GaussianModel.standard(2), p, [0.0, 0.0])


def _shifted_example_6_4(eps):
    """Example 6.4 with both right-hand sides relaxed by ``eps``."""
    c1 = SeparableSum(4, [((0, 1), BallDistance([0.0, 0.0], 0.0)), ((2,), absolute())], [0, 0, 0, 1.0], -5.0 - eps)
    c2 = SeparableSum(4, [((2,), absolute())], [0, 0, 0, 1.0], -3.0 - eps)
    return joint_system(2, 2, [c1, c2])


def test_slack_constraint_returns_unconstrained_minimizer():
    res = solve_regularized(_trivial_spec(), 0.1, DIRS)
    np.testing.assert_allclose(res.x, [1.0, 0.0], atol=1e-6)
    assert res.status == "converged"
    assert res.penalty == 10.0


def test_trivial_continuation_is_constant():
    trace = continuation(_trivial_spec(), [1.0, 0.1, 0.01], DIRS, n_mc=10_000)
    for rec in trace.records:
        np.testing.assert_allclose(rec.x, [1.0, 0.0], atol=1e-6)
        assert rec.value == pytest.approx(0.0, abs=1e-10)
    assert trace.nominal.feasible
    assert trace.aborted is None


def test_continuation_is_deterministic():
    spec = get_problem("example_6_4")
    a = continuation(spec, [1.0, 0.1], DIRS, n_mc=10_000)
    b = continuation(spec, [1.0, 0.1], DIRS, n_mc=10_000)
    for ra, rb in zip(a.records, b.records):
        np.testing.assert_array_equal(ra.x, rb.x)
        assert ra.value == rb.value and ra.iterations == rb.iterations
    np.testing.assert_array_equal(astuple(a.nominal), astuple(b.nominal))


def test_first_table_row_with_fewer_directions():
    res = solve_regularized(get_problem("example_6_4"), 1.0, DIRS)
    assert res.value == pytest.approx(8.19472, abs=0.02)
    assert np.linalg.norm(res.x - [2.96739, -1.19475]) <= 0.02
    assert res.phi >= 0.95 - 1e-6


def test_schedule_must_decrease():
    with pytest.raises(ValueError):
        continuation(_trivial_spec(), [0.1, 0.1], DIRS)
    with pytest.raises(ValueError):
        continuation(_trivial_spec(), [0.1, 1.0], DIRS)


def test_infeasible_start_is_rejected():
    spec = _trivial_spec()
    with pytest.raises(InfeasibleStart):
        solve_regularized(spec, 0.1, DIRS, x_start=[6.0, 0.0])


def test_aborted_stage_keeps_partial_trace():
    spec = get_problem("example_6_4")
    opts = SolverOptions(penalty_max=10.0, raise_on_max_penalty=True)
    trace = continuation(spec, [1.0, 0.1], DIRS, opts, n_mc=1000)
    assert trace.aborted is not None and "MaxPenaltyReached" in trace.aborted
    assert trace.nominal is None


def test_penalty_ceiling_reports_status():
    spec = get_problem("example_6_4")
    res = solve_regularized(spec, 1.0, DIRS, SolverOptions(penalty_max=10.0))
    assert res.status == "max-penalty"
    with pytest.raises(MaxPenaltyReached):
        solve_regularized(spec, 1.0, DIRS, SolverOptions(penalty_max=10.0, raise_on_max_penalty=True))


def test_bounds_are_respected():
    spec = _trivial_spec()
    boxed = ProblemSpec(spec.objective, spec.system, spec.model, spec.p, spec.x0, bounds=([-1.0, -1.0], [0.5, 1.0]))
    res = solve_regularized(boxed, 0.1, DIRS)
    np.testing.assert_allclose(res.x, [0.5, 0.0], atol=1e-6)


def test_multistart_returns_a_feasible_solution():
    opts = SolverOptions(multistart=3)
    res = solve_regularized(get_problem("example_6_4"), 1.0, DIRS, opts)
    assert res.phi >= 0.95 - 1e-6
    assert res.value == pytest.approx(8.19472, abs=0.02)


def test_nominal_value_at_reference_solution():
    spec = get_problem("example_6_4")
    x = [2.12984, -0.68049]
    nv = nominal_value(spec, x, n_mc=10**6, seed=1)
    assert nv.psi_value == pytest.approx(10.42120, abs=1e-4)
    assert abs(nv.phi_mc - 0.95) <= 3 * nv.phi_mc_std_error + 1e-4
    assert abs(nv.phi_value - 0.95) <= 1e-3


def test_zero_level_is_always_feasible():
    spec = _trivial_spec(p=0.0)
    assert nominal_value(spec, [3.5, 0.0], n_mc=1000).feasible


def test_problem_spec_validation():
    spec = _trivial_spec()
    with pytest.raises(ValueError):
        ProblemSpec(spec.objective, spec.system, spec.model, 1.0, spec.x0)
    with pytest.raises(ValueError):
        ProblemSpec(spec.objective, spec.system, GaussianModel.standard(3), 0.5, spec.x0)
    with pytest.raises(ValueError):
        ProblemSpec(spec.objective, spec.system, spec.model, 0.5, spec.x0, objective_smoothing="termwise")


def test_nominal_feasible_points_are_lambda_feasible(rng):
    spec = get_problem("example_6_4")
    dirs = sample_directions(2, 4096, seed=5)
    hits = 0
    for _ in range(40):
        x = rng.uniform(-3, 3, size=2)
        if spec.slater_gap(x) <= 0:
            continue
        nom = prob_estimate(spec.system, spec.model, 0.0, x, dirs)
        if nom.value < spec.p + 3 * nom.std_error:
            continue
        hits += 1
        for lam in (1.0, 0.1, 0.01):
            assert prob_estimate(spec.system, spec.model, lam, x, dirs, mode="termwise").value >= spec.p
            assert prob_estimate(spec.system, spec.model, lam, x, dirs).value >= spec.p
    assert hits > 0


def test_enlargement_contains_regularized_feasible_set(rng):
    spec = get_problem("example_6_4")
    dirs = sample_directions(2, 4096, seed=8)
    eps, eta, lam = 0.05, 0.01, 0.001
    relaxed = _shifted_example_6_4(eps)
    checked = 0
    for _ in range(60):
        x = rng.uniform(-5, 5, size=2)
        if spec.slater_gap(x, lam) <= 0:
            continue
        if prob_estimate(spec.system, spec.model, lam, x, dirs).value < spec.p:
            continue
        checked += 1
        assert prob_estimate(relaxed, spec.model, 0.0, x, dirs).value >= spec.p - eta
    assert checked > 0
