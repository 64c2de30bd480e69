"""Built-in constraint systems and problems for the worked examples.

Registry names: ``example_6_1``, ``example_6_2``, ``example_6_4``,
``example_5_2``, ``semidef_demo`` and ``probust_demo``. Each name has a
constraint system (:func:`get_system`) and a problem (:func:`get_problem`)
pairing it with an objective, a level ``p`` and a start point.
"""

from __future__ import annotations

import numpy as np

from .envelope import (
    Affine,
    BallDistance,
    Constant,
    ConvexFunction,
    Quadratic,
    SeparableSum,
    absolute,
    dead_zone,
    lift,
    positive_half_square,
    square_or_negate,
)
from .solver import ProblemSpec
from .spherical import GaussianModel
from .systems import ConstraintSystem, joint_system, probust_system, semidefinite_system

SYSTEM_NAMES = ("example_6_1", "example_6_2", "example_6_4", "example_5_2", "semidef_demo", "probust_demo")


def example_6_1() -> ConstraintSystem:
    """``2 max(|x| - 1, 0) + f2(z) - 5 <= 0`` with ``f2(z) = z^2`` (z >= 0), ``-z`` otherwise."""
    c = SeparableSum(2, [((0,), dead_zone(1.0), 2.0), ((1,), square_or_negate(), 1.0)], None, -5.0)
    return joint_system(1, 1, [c], anchor=[0.0], name="example_6_1")


def example_6_2() -> ConstraintSystem:
    """``max(|x| - 2, 0) + |z1| + z2 - 3 <= 0`` on R^2 x R^2."""
    c = SeparableSum(4, [((0, 1), BallDistance([0.0, 0.0], 2.0)), ((2,), absolute())], [0, 0, 0, 1.0], -3.0)
    return joint_system(2, 2, [c], anchor=[0.0, 0.0], name="example_6_2")


def example_6_4() -> ConstraintSystem:
    """Joint pair ``|x| + |z1| + z2 <= 5`` and ``|z1| + z2 <= 3``."""
    c1 = SeparableSum(4, [((0, 1), BallDistance([0.0, 0.0], 0.0)), ((2,), absolute())], [0, 0, 0, 1.0], -5.0)
    c2 = SeparableSum(4, [((2,), absolute())], [0, 0, 0, 1.0], -3.0)
    return joint_system(2, 2, [c1, c2], anchor=[0.0, 0.0], name="example_6_4")


def example_5_2() -> ConstraintSystem:
    """Nonconvex ``z + f(x1) + x2^2/2 <= 0`` with ``f(x1) = -x1^2/2`` for ``x1 <= 0`` and 0 otherwise.

    Compensated by ``h(x) = x1^2/2``: ``g + h = z + fhat(x1) + x2^2/2`` with
    ``fhat(x1) = x1^2/2`` for ``x1 > 0`` and 0 otherwise.
    """
    c = SeparableSum(3, [((0,), positive_half_square()), ((1,), Quadratic([[1.0]]))], [0, 0, 1.0], 0.0)
    h = Quadratic(np.diag([1.0, 0.0]))
    return joint_system(2, 1, [c], [h], anchor=[-1.0, 0.0], name="example_5_2")


def semidef_demo() -> ConstraintSystem:
    """2x2 matrix inequality ``Phi(x, z) <= 0`` compensated by ``h(x) = x1^2/2``.

    ``Phi = B0 + x1 B1 + x2 B2 + z1 C1 + z2 C2 - h(x) I``; every quadratic
    form ``v' Phi v + h`` is affine, hence convex, for unit ``v``.
    """
    B0 = -2.0 * np.eye(2)
    As = np.array([
        [[1.0, 0.0], [0.0, 0.0]],
        [[0.0, 0.5], [0.5, 1.0]],
        [[1.0, 0.0], [0.0, -1.0]],
        [[0.0, 0.5], [0.5, 0.0]],
    ])
    h = Quadratic(np.diag([1.0, 0.0]))
    return semidefinite_system(2, 2, B0, As, h, anchor=[0.0, 0.0], name="semidef_demo")


def probust_demo(grid_points: int = 7) -> ConstraintSystem:
    """``cos t (x1 + z1) + sin t (x2 + z2) - x2^2/2 - 3 <= 0`` for ``t`` on a grid of ``[0, pi/2]``.

    Compensated by ``h(x) = x2^2/2``, each ``c_t = g(t, .) + h`` is affine.
    """
    grid = np.linspace(0.0, np.pi / 2.0, grid_points)

    def part(t: float):
        c, s = np.cos(t), np.sin(t)
        return Affine([c, s, c, s], -3.0)

    h = Quadratic(np.diag([0.0, 1.0]))
    return probust_system(2, 2, grid, part, h, anchor=[0.0, 0.0], name="probust_demo")


def get_system(name: str) -> ConstraintSystem:
    try:
        return _SYSTEMS[name]()
    except KeyError:
        raise KeyError(f"unknown system {name!r}; known: {', '.join(SYSTEM_NAMES)}") from None


_SYSTEMS = {
    "example_6_1": example_6_1,
    "example_6_2": example_6_2,
    "example_6_4": example_6_4,
    "example_5_2": example_5_2,
    "semidef_demo": semidef_demo,
    "probust_demo": probust_demo,
}


def _half_dist2(target) -> Quadratic:
    """``|x - target|^2 / 2``."""
    t = np.asarray(target, dtype=float)
    return Quadratic(np.eye(t.size), -t, 0.5 * float(t @ t))


def _table_objective() -> tuple[ConvexFunction, tuple]:
    """``|x1 - 5| + x2^2/2 + x2 + 8`` and its four terms."""
    terms = (
        lift(absolute(5.0), [0], 2),
        lift(Quadratic([[1.0]]), [1], 2),
        Affine([0.0, 1.0], 0.0),
        Constant(2, 8.0),
    )
    psi = SeparableSum(2, [((0,), absolute(5.0)), ((1,), Quadratic([[1.0]]))], [0.0, 1.0], 8.0)
    return psi, terms


def get_problem(name: str) -> ProblemSpec:
    """Registry problem: objective, system, standard Gaussian noise, level and start point.

    ``example_6_4`` is the reference continuation problem and smooths
    objective and constraint term by term; the demos use the full envelope.
    """
    sys = get_system(name)
    model = GaussianModel.standard(sys.m)
    if name == "example_6_4":
        psi, terms = _table_objective()
        return ProblemSpec(psi, sys, model, 0.95, [2.0, -0.5], objective_terms=terms,
                           objective_smoothing="termwise", constraint_smoothing="termwise", name=name)
    demo = {
        "example_6_1": (lift(absolute(3.0), [0], 1), 0.9, [0.0]),
        "example_6_2": (_half_dist2([3.0, 3.0]), 0.9, [0.0, 0.0]),
        "example_5_2": (_half_dist2([-0.5, 1.0]), 0.6, [-1.0, 0.0]),
        "semidef_demo": (_half_dist2([2.0, 2.0]), 0.9, [0.0, 0.0]),
        "probust_demo": (_half_dist2([4.0, 0.0]), 0.9, [0.0, 0.0]),
    }
    psi, p, x0 = demo[name]
    return ProblemSpec(psi, sys, model, p, x0, name=name)
