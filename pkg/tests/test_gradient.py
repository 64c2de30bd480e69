import numpy as np
import pytest

from moreau_cc.catalog import SYSTEM_NAMES, example_6_1, example_6_2, example_6_4, get_problem, get_system
from moreau_cc.envelope import Affine
from moreau_cc.gradient import consistency_sweep, direction_gradient, grad_estimate, prob_and_grad
from moreau_cc.oracle import fd_gradient
from moreau_cc.spherical import GaussianModel, chi_cdf, chi_pdf, prob_estimate, radial_solve, sample_directions
from moreau_cc.systems import joint_system

STD1 = GaussianModel.standard(1)
TWO = sample_directions(1, 2)


def _rel(a, b):
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-8))


def test_gradient_needs_positive_lambda():
    with pytest.raises(ValueError):
        grad_estimate(example_6_1(), STD1, 0.0, [0.0], TWO)


def test_no_x_dependence_gives_zero_gradient():
    sys = joint_system(2, 1, [Affine([0.0, 0.0, 1.0], -1.5)])
    for v in (1.0, -1.0):
        np.testing.assert_array_equal(direction_gradient(sys, STD1, 0.1, [0.3, -0.2], [v]), [0.0, 0.0])


def test_flat_region_gives_zero_gradient():
    assert grad_estimate(example_6_1(), STD1, 0.1, [0.0], TWO).gradient[0] == 0.0
    sys = example_6_2()
    dirs = sample_directions(2, 512, seed=1)
    np.testing.assert_array_equal(grad_estimate(sys, GaussianModel.standard(2), 0.1, [1.0, 0.0], dirs).gradient,
                                  [0.0, 0.0])


def test_direction_gradient_matches_radial_cdf_derivative():
    sys = example_6_1()
    lam, x, h = 0.1, 1.25, 1e-5 * 2.25

    def contrib(y):
        return chi_cdf(1, radial_solve(sys, STD1, lam, [y], [1.0]).rho)

    fd = (contrib(x + h) - contrib(x - h)) / (2 * h)
    g = direction_gradient(sys, STD1, lam, [x], [1.0])[0]
    assert g == pytest.approx(fd, rel=1e-5)


def test_symmetric_system_has_zero_gradient_at_origin():
    # example_6_1 is even in x
    g = grad_estimate(example_6_1(), STD1, 0.03, [0.0], TWO).gradient
    assert abs(g[0]) <= 1e-15


def test_affine_system_closed_form():
    # g = <a, x> + z - c: envelope shifts by lam (|a|^2 + 1)/2, so rho = c + shift - <a, x>
    a, c = np.array([0.5, -0.3]), 1.2
    sys = joint_system(2, 1, [Affine([*a, 1.0], -c)])
    x = np.array([0.4, 0.1])
    for lam in (0.1, 0.01, 0.001):
        rho = c + lam * (a @ a + 1) / 2 - a @ x
        g = grad_estimate(sys, STD1, lam, x, TWO).gradient
        np.testing.assert_allclose(g, -0.5 * chi_pdf(1, rho) * a, atol=1e-12)
    # along a decreasing schedule the gradient changes only through the shift
    sweep = consistency_sweep(sys, STD1, x, [1e-5, 1e-6, 1e-7], TWO)
    assert np.all(sweep.gaps <= 1e-6)


def test_example_6_4_matches_finite_differences():
    sys = example_6_4()
    model = GaussianModel.standard(2)
    dirs = sample_directions(2, 4096, seed=0, mode="low-discrepancy")
    x = np.array([2.2, -0.7])
    for mode in ("envelope", "termwise"):
        g = grad_estimate(sys, model, 0.01, x, dirs, mode=mode).gradient
        fd = fd_gradient(lambda y: prob_estimate(sys, model, 0.01, y, dirs, mode=mode).value, x)
        assert _rel(g, fd) <= 1e-4


@pytest.mark.parametrize("name", SYSTEM_NAMES)
def test_saa_gradient_is_exact(name, rng):
    spec = get_problem(name)
    sys, model = spec.system, spec.model
    dirs = sample_directions(sys.m, 512, seed=3)
    checked = 0
    while checked < 4:
        x = spec.x0 + 0.5 * rng.standard_normal(sys.n)
        if spec.slater_gap(x, 0.0) <= 0.05:
            continue
        for lam in (0.1, 0.01):
            mode = spec.constraint_smoothing
            g = grad_estimate(sys, model, lam, x, dirs, mode=mode).gradient
            fd = fd_gradient(lambda y: prob_estimate(sys, model, lam, y, dirs, mode=mode).value, x)
            if np.linalg.norm(fd) < 1e-10:
                assert np.linalg.norm(g) < 1e-8
            else:
                assert _rel(g, fd) <= 1e-4
        checked += 1


def test_implicit_function_identity(rng):
    sys = example_6_4()
    model = GaussianModel.standard(2)
    x = np.array([2.0, -0.5])
    for _ in range(5):
        v = rng.normal(size=2)
        v /= np.linalg.norm(v)
        d = rng.normal(size=2)
        G = direction_gradient(sys, model, 0.1, x, v)
        e0 = chi_cdf(2, radial_solve(sys, model, 0.1, x, v).rho)
        errs = []
        for t in (1e-2, 5e-3, 2.5e-3):
            et = chi_cdf(2, radial_solve(sys, model, 0.1, x + t * d, v).rho)
            errs.append(abs(et - e0 - t * G @ d))
        # second-order remainder: halving t divides the error by about four
        assert errs[1] <= 0.3 * errs[0] + 1e-12
        assert errs[2] <= 0.3 * errs[1] + 1e-12


def test_prob_and_grad_reports_diagnostics():
    sys = example_6_4()
    model = GaussianModel.standard(2)
    dirs = sample_directions(2, 1024, seed=0)
    pe, ge = prob_and_grad(sys, model, 0.1, [2.0, -0.5], dirs)
    assert ge.n_finite + ge.n_infinite == dirs.N
    assert ge.n_infinite == pe.n_infinite
    assert ge.denominators_min > 0
    assert np.isfinite(ge.per_direction_norm_max)


def test_per_direction_norm_stays_bounded_as_lambda_shrinks():
    sys = example_6_4()
    model = GaussianModel.standard(2)
    dirs = sample_directions(2, 1024, seed=0)
    norms = [grad_estimate(sys, model, lam, [2.0, -0.5], dirs).per_direction_norm_max for lam in (0.1, 0.01, 0.001)]
    assert max(norms) <= 2 * min(norms)


def test_gradient_gaps_shrink_along_schedule():
    sys = example_6_4()
    model = GaussianModel.standard(2)
    dirs = sample_directions(2, 2048, seed=0, mode="low-discrepancy")
    sweep = consistency_sweep(sys, model, [2.2, -0.7], [0.1, 0.01, 0.001], dirs)
    assert sweep.gaps[1] < sweep.gaps[0]
    rows = list(sweep.rows())
    assert np.isnan(rows[0][2]) and len(rows) == 3


def test_zero_gradient_point_sweep():
    sweep = consistency_sweep(example_6_1(), STD1, [0.0], [0.1, 0.01, 0.001], TWO)
    assert np.all(sweep.gradients == 0.0)


def test_one_dimensional_gradient_matches_closed_form_derivative():
    from moreau_cc.oracle import analytic_example1

    for lam in (0.1, 0.01):
        for x in (1.5, -2.0, 2.4):
            g = grad_estimate(example_6_1(), STD1, lam, [x], TWO).gradient[0]
            h = 1e-6
            fd = (analytic_example1(x + h, lam) - analytic_example1(x - h, lam)) / (2 * h)
            assert g == pytest.approx(fd, rel=1e-5)
