import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from moreau_cc.catalog import SYSTEM_NAMES, example_6_1, example_6_4, get_system
from moreau_cc.envelope import Affine
from moreau_cc.errors import SlaterViolation
from moreau_cc.oracle import analytic_example1, binomial_std_error, mc_probability, normal_cdf
from moreau_cc.spherical import (
    GaussianModel,
    chi_cdf,
    chi_pdf,
    prob_estimate,
    radial_all,
    radial_min_formula,
    radial_solve,
    sample_directions,
)
from moreau_cc.systems import joint_system, sup_value

STD1 = GaussianModel.standard(1)


def _half_line(c):
    """Single inequality ``z - c <= 0``."""
    return joint_system(1, 1, [Affine([0.0, 1.0], -c)])


def test_one_dimensional_sphere_is_two_points():
    d = sample_directions(1, 50, seed=3)
    np.testing.assert_array_equal(np.sort(d.directions[:, 0]), [-1.0, 1.0])


def test_pseudo_random_mean_is_near_zero():
    d = sample_directions(3, 10_000, seed=1)
    assert np.all(np.abs(d.directions.mean(axis=0)) <= 3 / math.sqrt(10_000))


@pytest.mark.parametrize("mode", ["pseudo-random", "low-discrepancy"])
def test_directions_are_deterministic_unit_vectors(mode):
    a = sample_directions(4, 257, seed=11, mode=mode)
    b = sample_directions(4, 257, seed=11, mode=mode)
    np.testing.assert_array_equal(a.directions, b.directions)
    np.testing.assert_allclose(np.linalg.norm(a.directions, axis=1), 1.0, atol=1e-12)
    assert not np.array_equal(a.directions, sample_directions(4, 257, seed=12, mode=mode).directions)


def test_chi_cdf_reference_values():
    assert chi_cdf(2, math.sqrt(2 * math.log(2))) == pytest.approx(0.5, abs=1e-15)
    assert chi_cdf(1, 1.959964) == pytest.approx(0.95, abs=1e-6)
    assert chi_cdf(1, 1.959964) == pytest.approx(2 * normal_cdf(1.959964) - 1, abs=1e-14)
    assert chi_cdf(3, 0.0) == 0.0
    assert chi_cdf(3, math.inf) == 1.0


@settings(max_examples=50, deadline=None)
@given(m=st.integers(1, 6), r=st.floats(0.01, 6.0))
def test_property_chi_pdf_is_cdf_derivative(m, r):
    h = 1e-6
    fd = (chi_cdf(m, r + h) - chi_cdf(m, r - h)) / (2 * h)
    assert chi_pdf(m, r) == pytest.approx(fd, rel=1e-5, abs=1e-9)


def test_gaussian_model_validation():
    with pytest.raises(ValueError):
        GaussianModel(np.array([[1.0, 0.5], [0.0, 1.0]]))
    with pytest.raises(ValueError):
        GaussianModel(np.array([[-1.0]]))
    cov = np.array([[2.0, 0.3], [0.3, 1.0]])
    np.testing.assert_allclose(GaussianModel.from_covariance(cov).covariance, cov)


def test_radial_single_inequality():
    sys = _half_line(1.3)
    assert radial_solve(sys, STD1, 0.0, [0.0], [1.0]).rho == pytest.approx(1.3, abs=1e-9)
    assert radial_solve(sys, STD1, 0.0, [0.0], [-1.0]).kind == "infinite"


def test_radial_example_6_1_nominal():
    sys = example_6_1()
    assert radial_solve(sys, STD1, 0.0, [0.0], [1.0]).rho == pytest.approx(math.sqrt(5), abs=1e-9)
    assert radial_solve(sys, STD1, 0.0, [0.0], [-1.0]).rho == pytest.approx(5.0, abs=1e-9)


def test_radial_continuity_in_lambda_closed_form():
    # On z >= 0 the envelope of z^2 is z^2 / (1 + 2 lam), so rho = sqrt(5 (1 + 2 lam)).
    sys = example_6_1()
    gaps = []
    for lam in (0.1, 0.01, 0.001):
        rho = radial_solve(sys, STD1, lam, [0.0], [1.0]).rho
        assert rho == pytest.approx(math.sqrt(5 * (1 + 2 * lam)), abs=1e-9)
        gaps.append(rho - math.sqrt(5))
    assert gaps[0] > gaps[1] > gaps[2] > 0


def test_slater_violation_is_raised():
    with pytest.raises(SlaterViolation):
        prob_estimate(_half_line(-0.5), STD1, 0.0, [0.0], sample_directions(1, 2))


@pytest.mark.parametrize("name", SYSTEM_NAMES)
def test_root_residuals_within_tolerance(name):
    sys = get_system(name)
    model = GaussianModel.standard(sys.m)
    dirs = sample_directions(sys.m, 256, seed=5)
    for lam in (0.0, 0.1, 0.01):
        batch = radial_all(sys, model, lam, sys.anchor, dirs)
        ftol = 1e-8 * (1 + abs(batch.h))
        assert np.all(batch.residual[batch.finite] <= ftol)


def test_radial_min_formula_example_6_4(rng):
    sys = example_6_4()
    model = GaussianModel.standard(2)
    for _ in range(5):
        v = rng.normal(size=2)
        v /= np.linalg.norm(v)
        direct = radial_solve(sys, model, 0.1, [0.0, 0.0], v).rho
        assert radial_min_formula(sys, model, 0.1, [0.0, 0.0], v) == pytest.approx(direct, abs=1e-6)


def test_radial_min_formula_inactive_and_duplicate_components():
    active = Affine([0.0, 1.0], -2.0)
    idle = Affine([0.0, 0.0], -1.0)
    model = STD1
    for parts in ([active, idle], [active, active]):
        sys = joint_system(1, 1, parts)
        rho = radial_min_formula(sys, model, 0.2, [0.0], [1.0])
        assert rho == pytest.approx(radial_solve(joint_system(1, 1, [active]), model, 0.2, [0.0], [1.0]).rho,
                                    abs=1e-8)


def test_probability_of_half_line_is_exact():
    c = 1.6449
    pe = prob_estimate(_half_line(c), STD1, 0.0, [0.0], sample_directions(1, 2))
    assert pe.value == pytest.approx((chi_cdf(1, c) + 1) / 2, abs=1e-15)
    assert pe.value == pytest.approx(normal_cdf(c), abs=1e-14)


def test_probability_example_6_1_at_zero():
    pe = prob_estimate(example_6_1(), STD1, 0.0, [0.0], sample_directions(1, 2))
    assert pe.value == pytest.approx(0.98733, abs=5e-6)
    assert pe.value == pytest.approx(analytic_example1(0.0, 0.0), abs=1e-12)


@pytest.mark.parametrize("lam", [0.0, 0.03, 0.1, 0.3])
def test_example_6_1_matches_closed_form(lam):
    two = sample_directions(1, 2)
    for x in np.linspace(-3, 3, 13):
        pe = prob_estimate(example_6_1(), STD1, lam, [x], two)
        assert pe.value == pytest.approx(analytic_example1(x, lam), abs=1e-9)


@pytest.mark.parametrize("name", SYSTEM_NAMES)
def test_monotone_in_lambda_per_direction(name):
    sys = get_system(name)
    model = GaussianModel.standard(sys.m)
    dirs = sample_directions(sys.m, 512, seed=2)
    rhos = [radial_all(sys, model, lam, sys.anchor, dirs).rho for lam in (0.1, 0.01, 0.0)]
    for a, b in zip(rhos, rhos[1:]):
        assert np.all(a >= b - 1e-8 * (1 + np.where(np.isfinite(b), b, 0)))
    vals = [prob_estimate(sys, model, lam, sys.anchor, dirs).value for lam in (0.1, 0.01, 0.0)]
    assert vals[0] >= vals[1] >= vals[2]


@pytest.mark.parametrize("name", SYSTEM_NAMES)
def test_spherical_agrees_with_monte_carlo(name):
    sys = get_system(name)
    model = GaussianModel.standard(sys.m)
    dirs = sample_directions(sys.m, 2000, seed=9)
    for lam in (0.0, 0.1):
        pe = prob_estimate(sys, model, lam, sys.anchor, dirs)
        mc = mc_probability(sys, model, lam, sys.anchor, 100_000, seed=4)
        se = math.hypot(pe.std_error, binomial_std_error(pe.value, mc.n))
        assert abs(pe.value - mc.value) <= 4 * se + 1e-12


def test_thread_count_does_not_change_results():
    sys = example_6_4()
    model = GaussianModel.standard(2)
    dirs = sample_directions(2, 5000, seed=1, mode="low-discrepancy")
    a = prob_estimate(sys, model, 0.1, [2.0, -0.5], dirs, threads=1)
    b = prob_estimate(sys, model, 0.1, [2.0, -0.5], dirs, threads=4)
    assert a.value == b.value


def test_correlated_noise_matches_monte_carlo():
    sys = example_6_4()
    model = GaussianModel.from_covariance([[1.0, 0.4], [0.4, 0.5]])
    dirs = sample_directions(2, 4000, seed=6)
    pe = prob_estimate(sys, model, 0.0, [1.0, 1.0], dirs)
    mc = mc_probability(sys, model, 0.0, [1.0, 1.0], 200_000, seed=6)
    assert abs(pe.value - mc.value) <= 4 * math.hypot(pe.std_error, binomial_std_error(pe.value, mc.n))


def test_infinite_directions_contribute_full_mass():
    # Only the positive direction hits the constraint.
    pe = prob_estimate(_half_line(0.0001 + 1.0), STD1, 0.0, [0.0], sample_directions(1, 2))
    assert pe.n_infinite == 1
    assert pe.contributions[1] == 1.0


def test_sup_is_below_threshold_along_infinite_rays():
    sys = get_system("probust_demo")
    model = GaussianModel.standard(2)
    dirs = sample_directions(2, 256, seed=3)
    batch = radial_all(sys, model, 0.0, sys.anchor, dirs)
    inf = ~batch.finite
    assert np.any(inf)
    Z = 1e4 * batch.ray[inf]
    assert np.all(np.asarray(sup_value(sys, sys.anchor, Z)) <= batch.h)
