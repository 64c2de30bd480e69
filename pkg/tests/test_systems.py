import numpy as np
import pytest

from moreau_cc.catalog import SYSTEM_NAMES, example_5_2, example_6_1, example_6_4, get_system
from moreau_cc.envelope import Affine, moreau_eval
from moreau_cc.errors import DimensionMismatch, InvalidGenerator
from moreau_cc.systems import (
    convexity_probe,
    envelope_of_sup,
    joint_system,
    matrix_convexity_probe,
    probust_system,
    scalarized_value,
    semidefinite_system,
    sup_of_envelopes,
    sup_subgradient,
    sup_value,
)


def _diag_semidef():
    # Phi = diag(x1 + z1 - 1, x2 - z1 - 1)
    A0 = -np.eye(2)
    As = np.array([np.diag([1.0, 0.0]), np.diag([0.0, 1.0]), np.diag([1.0, -1.0])])
    return semidefinite_system(2, 1, A0, As)


def test_sup_value_example_6_4_arithmetic():
    sys = example_6_4()
    x = np.array([2.12984, -0.68049])
    expected = max(np.hypot(*x) - 5.0, -3.0)
    assert sup_value(sys, x, [0.0, 0.0]) == pytest.approx(expected, abs=1e-12)
    assert expected == pytest.approx(-2.76409, abs=1e-5)


def test_sup_value_semidefinite_diagonal():
    assert sup_value(_diag_semidef(), [2.0, 0.0], [0.0]) == pytest.approx(1.0)


def test_sup_value_probust_grid():
    sys = probust_system(1, 1, [0.0, 0.5, 1.0], lambda t: Affine([t, -1.0], 0.0))
    assert sup_value(sys, [2.0], [1.0]) == pytest.approx(1.0)


def test_subgradients_of_simple_systems():
    single = joint_system(1, 1, [Affine([0.0, 1.0], -2.0)])
    np.testing.assert_allclose(sup_subgradient(single, [0.3], [0.1]), [0.0, 1.0])
    np.testing.assert_allclose(sup_subgradient(_diag_semidef(), [2.0, 0.0], [0.0]), [1.0, 0.0, 1.0])
    np.testing.assert_allclose(sup_subgradient(example_6_1(), [2.0], [1.0]), [2.0, 2.0])


def test_dimension_mismatch_is_reported():
    with pytest.raises(DimensionMismatch):
        joint_system(2, 1, [Affine([1.0, 1.0], 0.0)])


def test_envelope_of_sup_example_6_1():
    res = envelope_of_sup(example_6_1(), 0.1, [0.0], [1.0])
    assert res.value == pytest.approx(1.0 / 1.2 - 5.0, abs=1e-12)


def test_envelope_of_sup_example_5_2():
    lam = 0.5
    res = envelope_of_sup(example_5_2(), lam, [1.0, 0.0], [0.0])
    assert res.value == pytest.approx(-lam / 2 + 1.0 / (2 * (1 + lam)), abs=1e-12)


@pytest.mark.parametrize("name", SYSTEM_NAMES)
def test_envelope_of_sup_tends_to_sup(name, rng):
    sys = get_system(name)
    for _ in range(5):
        x, z = rng.normal(size=sys.n), rng.normal(size=sys.m)
        s = sup_value(sys, x, z)
        assert envelope_of_sup(sys, 1e-6, x, z).value == pytest.approx(s, abs=1e-3 * (1 + abs(s)))


def test_sup_of_envelopes_identical_components():
    c = Affine([0.5, 1.0], -1.0)
    double = joint_system(1, 1, [c, c])
    one = joint_system(1, 1, [c])
    assert sup_of_envelopes(double, 0.3, [0.2], [0.4]) == pytest.approx(envelope_of_sup(one, 0.3, [0.2], [0.4]).value)


def test_sup_of_envelopes_single_component_is_its_envelope():
    sys = example_6_1()
    w = np.array([1.7, -0.4])
    assert sup_of_envelopes(sys, 0.2, w[:1], w[1:]) == pytest.approx(moreau_eval(sys.sup, 0.2, w).value, abs=1e-12)


def test_sup_of_envelopes_example_6_4():
    sys = example_6_4()
    x, z = [2.0, -0.7], [0.1, 0.2]
    assert sup_of_envelopes(sys, 0.1, x, z) == pytest.approx(envelope_of_sup(sys, 0.1, x, z).value, abs=1e-6)


def test_scalarized_values():
    sys = example_6_4()
    assert scalarized_value(sys, [0.5, 0.5], [0.0, 0.0], [0.0, 0.0]) == pytest.approx(-4.0)
    x, z = np.array([1.0, 2.0]), np.array([0.3, -0.4])
    g1 = np.linalg.norm(x) + 0.3 - 0.4 - 5.0
    assert scalarized_value(sys, [1.0, 0.0], x, z) == pytest.approx(g1)
    sd = _diag_semidef()
    v = np.array([0.6, 0.8])
    phi = np.diag([2.0 + 0.5 - 1.0, 0.0 - 0.5 - 1.0])
    assert scalarized_value(sd, v, [2.0, 0.0], [0.5]) == pytest.approx(v @ phi @ v)


def test_invalid_generators_are_rejected():
    with pytest.raises(InvalidGenerator):
        scalarized_value(example_6_4(), [0.7, 0.7], [0.0, 0.0], [0.0, 0.0])
    with pytest.raises(InvalidGenerator):
        scalarized_value(example_6_4(), [1.5, -0.5], [0.0, 0.0], [0.0, 0.0])
    with pytest.raises(InvalidGenerator):
        scalarized_value(_diag_semidef(), np.eye(2), [0.0, 0.0], [0.0])


@pytest.mark.parametrize("name", [n for n in SYSTEM_NAMES if n != "semidef_demo"])
def test_simplex_weights_never_exceed_sup(name, rng):
    sys = get_system(name)
    s = len(sys.components.convex_parts)
    x, z = rng.normal(size=sys.n), rng.normal(size=sys.m)
    sup = sup_value(sys, x, z)
    W = rng.dirichlet(np.ones(s), size=1000)
    vals = [scalarized_value(sys, w, x, z) for w in W]
    assert max(vals) <= sup + 1e-9
    vertex = max(scalarized_value(sys, e, x, z) for e in np.eye(s))
    assert vertex == pytest.approx(sup, abs=1e-12)


def test_rayleigh_bound_semidefinite(rng):
    sys = get_system("semidef_demo")
    x, z = rng.normal(size=2), rng.normal(size=2)
    lmax = sup_value(sys, x, z)
    V = rng.normal(size=(1000, 2))
    V /= np.linalg.norm(V, axis=1, keepdims=True)
    vals = [scalarized_value(sys, v, x, z) for v in V]
    assert max(vals) <= lmax + 1e-9
    lead = np.linalg.eigh(sys.components.A0 + np.tensordot(sys.join(x, z), sys.components.As, 1))[1][:, -1]
    assert scalarized_value(sys, lead, x, z) == pytest.approx(lmax, abs=1e-7)


@pytest.mark.parametrize("name", SYSTEM_NAMES)
def test_sup_is_jointly_convex(name, rng):
    sys = get_system(name)
    assert convexity_probe(lambda U: np.asarray(sys.sup.value(U)), sys.n + sys.m, rng) <= 1e-9


def test_matrix_convexity_probe(rng):
    assert matrix_convexity_probe(get_system("semidef_demo"), rng, n_pairs=50) <= 1e-9


@pytest.mark.parametrize("name", SYSTEM_NAMES)
def test_anchor_is_a_slater_point(name):
    sys = get_system(name)
    assert sup_value(sys, sys.anchor, np.zeros(sys.m)) < sys.h_value(sys.anchor)


@pytest.mark.parametrize("name", ["example_6_4", "probust_demo"])
def test_envelope_of_sup_equals_sup_of_envelopes_random(name, rng):
    sys = get_system(name)
    for _ in range(5):
        x, z = rng.normal(size=sys.n), rng.normal(size=sys.m)
        lam = float(rng.uniform(0.01, 1.0))
        assert sup_of_envelopes(sys, lam, x, z) == pytest.approx(envelope_of_sup(sys, lam, x, z).value, abs=1e-6)
