import ast
import inspect
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from moreau_cc import oracle
from moreau_cc.catalog import example_5_2, example_6_1, example_6_2
from moreau_cc.envelope import Affine, Constant
from moreau_cc.errors import NotFound
from moreau_cc.oracle import (
    analytic_example1,
    analytic_example52,
    binomial_std_error,
    envelope_example2,
    fd_gradient,
    grid_prox_1d,
    mc_probability,
    nonconvex_levelset_witness,
    nonsmoothness_witness_example1,
    normal_cdf,
    right_slope_example1,
    verify_witness,
)
from moreau_cc.spherical import GaussianModel, prob_estimate, sample_directions
from moreau_cc.systems import envelope_of_sup, joint_system

STD1 = GaussianModel.standard(1)


def test_oracle_does_not_import_the_estimators():
    tree = ast.parse(inspect.getsource(oracle))
    imported = set()
    for node in ast.walk(tree):
        if isinstance(node, ast.ImportFrom):
            imported.add(node.module or "")
        elif isinstance(node, ast.Import):
            imported.update(a.name for a in node.names)
    assert not any(name.endswith(("spherical", "gradient")) for name in imported)


def test_normal_cdf_reference_values():
    assert normal_cdf(0.0) == 0.5
    assert normal_cdf(1.959964) == pytest.approx(0.975, abs=1e-7)
    assert normal_cdf(-10.0) == pytest.approx(7.619853024160527e-24, rel=1e-12)


@settings(max_examples=100, deadline=None)
@given(r=st.floats(-30.0, 30.0))
def test_property_normal_cdf_symmetry(r):
    assert normal_cdf(-r) == pytest.approx(1.0 - normal_cdf(r), abs=1e-15)
    assert normal_cdf(r) == pytest.approx(0.5 * math.erfc(-r / math.sqrt(2)), abs=1e-15)


def test_mc_half_line():
    sys = joint_system(1, 1, [Affine([0.0, 1.0], -1.6449)])
    mc = mc_probability(sys, STD1, 0.0, [0.0], 10**6, seed=1)
    assert abs(mc.value - 0.95) <= 3 * binomial_std_error(0.95, mc.n) + 1e-5


def test_mc_empty_constraint_is_certain():
    sys = joint_system(1, 1, [Constant(2, -1.0)])
    mc = mc_probability(sys, STD1, 0.0, [0.0], 10_000, seed=1)
    assert mc.value == 1.0 and mc.std_error == 0.0


def test_mc_example_6_1_at_origin():
    mc = mc_probability(example_6_1(), STD1, 0.0, [0.0], 10**6, seed=2)
    assert abs(mc.value - 0.98733) <= 3 * binomial_std_error(0.98733, mc.n) + 1e-5


def test_score_std_error_survives_a_sample_without_misses():
    # phi = 1 - 2e-8 is invisible to 1e6 draws, but the score-test error is not zero
    assert binomial_std_error(1 - 2e-8, 10**6) == pytest.approx(math.sqrt(2e-8 / 1e6), rel=1e-6)
    assert binomial_std_error(1.0, 10) == 0.0
    assert binomial_std_error(0.5, 100) == pytest.approx(0.05)


def test_mc_rejects_empty_sample():
    with pytest.raises(ValueError):
        mc_probability(example_6_1(), STD1, 0.0, [0.0], 0)


def test_analytic_example1_values():
    expected = normal_cdf(math.sqrt(5)) - normal_cdf(-5.0)
    assert analytic_example1(0.0, 0.0) == pytest.approx(expected, abs=1e-15)
    assert analytic_example1(0.0, 0.0) == pytest.approx(0.987327, abs=1e-6)


@settings(max_examples=100, deadline=None)
@given(x=st.floats(-6.0, 6.0), l1=st.floats(0.0, 1.0), l2=st.floats(0.0, 1.0))
def test_property_analytic_example1_monotone_in_lambda(x, l1, l2):
    big, small = max(l1, l2), min(l1, l2)
    assert analytic_example1(x, big) >= analytic_example1(x, small) - 1e-15


def test_analytic_example1_continuous_past_the_collapse():
    # The threshold 5 - 2 f1(x) reaches 0 at |x| = 3.5, where the probability vanishes like sqrt(t)
    for lam in (0.0, 0.1):
        x_end = 3.5 + lam
        assert analytic_example1(x_end + 1e-3, lam) == 0.0
        near = [analytic_example1(x_end - d, lam) for d in (1e-2, 1e-4, 1e-6, 1e-8)]
        assert all(b < a for a, b in zip(near, near[1:]))
        assert near[-1] < 1e-3
        vals = analytic_example1(np.linspace(3.0, 4.0, 2001), lam)
        assert np.all(np.diff(vals) <= 1e-15)


def test_analytic_example1_matches_exact_quadrature():
    two = sample_directions(1, 2)
    for lam in (0.0, 0.3):
        for x in (-2.7, -1.0, 0.4, 1.3):
            assert prob_estimate(example_6_1(), STD1, lam, [x], two).value == pytest.approx(
                analytic_example1(x, lam), abs=1e-12)


def test_nonsmoothness_witness_slopes():
    w = nonsmoothness_witness_example1()
    assert all(abs(s) <= 1e-12 for s in w.left_slopes)
    assert w.right_reference == pytest.approx(-0.0146480, abs=1e-7)
    assert abs(w.right_slopes[-1] - w.right_reference) <= 1e-4
    errs = [abs(s - w.right_reference) for s in w.right_slopes]
    assert errs[0] > errs[1] > errs[2] * 0.99


def test_nonsmoothness_witness_mirrors_at_minus_one():
    w = nonsmoothness_witness_example1(point=-1.0)
    assert all(abs(s) <= 1e-12 for s in w.right_slopes)
    assert w.right_reference == pytest.approx(-right_slope_example1())
    assert abs(w.left_slopes[-1] - w.right_reference) <= 1e-4


def test_envelope_example2_matches_system_envelope(rng):
    sys = example_6_2()
    for _ in range(20):
        x, z = rng.normal(size=2) * 2, rng.normal(size=2)
        for lam in (0.0, 0.1, 1.0):
            ref = envelope_example2(x, z, lam)
            got = envelope_of_sup(sys, lam, x, z).value if lam > 0 else float(sys.sup.value(sys.join(x, z)))
            assert got == pytest.approx(ref, abs=1e-12)


def test_analytic_example52_matches_exact_quadrature(rng):
    two = sample_directions(1, 2)
    sys = example_5_2()
    for _ in range(10):
        x = rng.uniform(-2, 2, size=2)
        if sys.h_value(x) - envelope_of_sup(sys, 0.5, x, [0.0]).value <= 0:
            continue
        assert prob_estimate(sys, STD1, 0.5, x, two).value == pytest.approx(analytic_example52(x, 0.5), abs=1e-12)


def test_levelset_witness_for_example_5_2():
    w = nonconvex_levelset_witness(0.5)
    assert w.phi_a >= w.p and w.phi_b >= w.p
    assert w.phi_mid < w.p - 0.005
    np.testing.assert_allclose(w.midpoint, (w.x_a + w.x_b) / 2, atol=1e-12)
    assert analytic_example52(w.midpoint, 0.5) == pytest.approx(w.phi_mid)
    check = verify_witness(w, example_5_2(), STD1, 0.5, n=200_000, seed=3)
    assert check.confirmed


def test_levelset_witness_absent_for_linear_constraint():
    # P(xi <= 1 - x1 + 0.5 x2) is a probit of an affine map: every upper level set is a half-plane
    with pytest.raises(NotFound):
        nonconvex_levelset_witness(phi=lambda X: normal_cdf(1.0 - X[..., 0] + 0.5 * X[..., 1]))


def test_fd_gradient_on_quadratic_and_affine():
    Q = np.array([[2.0, 0.5], [0.5, 1.0]])
    x = np.array([0.3, -1.2])
    np.testing.assert_allclose(fd_gradient(lambda y: 0.5 * y @ Q @ y, x), Q @ x, atol=1e-9)
    np.testing.assert_allclose(fd_gradient(lambda y: 3 * y[0] - y[1], x), [3.0, -1.0], atol=1e-9)


def test_grid_prox_matches_closed_form():
    # a grid search resolves a smooth minimizer only to about sqrt(machine epsilon)
    for w in (-2.0, 0.3, 4.0):
        assert grid_prox_1d(lambda u: 0.5 * u * u, 0.5, w) == pytest.approx(w / 1.5, abs=1e-7)
