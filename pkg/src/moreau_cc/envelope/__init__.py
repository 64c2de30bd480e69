"""Moreau envelopes and proximal operators of convex functions."""

from .functions import (
    Affine,
    BallDistance,
    CallableFunction,
    Constant,
    ConvexFunction,
    HingeQuadratic,
    MaxAffine,
    MaxEigenvalue,
    NormQuadratic,
    PointwiseMax,
    Quadratic,
    Scaled,
    SeparableSum,
    SumFunction,
    absolute,
    add,
    as_points,
    lift,
    max_eigenvalue,
    prox_batch,
    scale,
)
from .ops import (
    EnvelopeResult,
    black_box,
    envelope_batch,
    moreau_eval,
    moreau_grad,
    prox_point,
    separable_split_check,
    termwise_batch,
)


def dead_zone(radius: float = 1.0) -> BallDistance:
    """Scalar ``u -> max(|u| - radius, 0)``."""
    return BallDistance([0.0], radius)


def square_or_negate() -> HingeQuadratic:
    """Scalar ``u -> u^2`` for ``u >= 0`` and ``-u`` otherwise."""
    return HingeQuadratic(0.0, pos_quad=2.0, pos_lin=0.0, neg_quad=0.0, neg_lin=1.0)


def positive_half_square() -> HingeQuadratic:
    """Scalar ``u -> u^2 / 2`` for ``u > 0`` and ``0`` otherwise."""
    return HingeQuadratic(0.0, pos_quad=1.0, pos_lin=0.0, neg_quad=0.0, neg_lin=0.0)


def builtin_functions() -> dict:
    """Named instances covering every atom with a closed-form prox."""
    return {
        "affine": Affine([3.0, -1.0], 0.5),
        "quadratic": Quadratic([[2.0, 0.5], [0.5, 1.0]], [1.0, -1.0], 0.2),
        "abs": absolute(),
        "dead_zone": dead_zone(1.0),
        "square_or_negate": square_or_negate(),
        "positive_half_square": positive_half_square(),
        "norm": BallDistance([0.0, 0.0], 0.0),
        "ball_distance": BallDistance([0.5, -0.5], 2.0, 1.5),
        "norm_quadratic": NormQuadratic([[1.0, 0.5], [0.0, 2.0]], [0.3, -0.2], 1.2, [[1.0, 0.0], [0.0, 0.5]], [0.1, 0.0]),
        "max_affine": MaxAffine([[1.0, 0.0], [-1.0, 0.5], [0.0, -1.0], [0.7, 0.7]], [0.0, 0.3, -0.2, 0.1]),
        "max_eigenvalue_2x2": max_eigenvalue(
            [[-2.0, 0.0], [0.0, -2.0]],
            [[[1.0, 0.0], [0.0, -1.0]], [[0.0, 0.5], [0.5, 1.0]]],
        ),
        "pointwise_max": PointwiseMax([
            SeparableSum(2, [((0,), dead_zone(1.0))], [0.0, 1.0], -1.0),
            SeparableSum(2, [((0,), dead_zone(1.0), 2.0)], [0.0, 0.0], -0.5),
        ]),
    }


NONSMOOTH_BUILTINS = (
    "abs", "dead_zone", "square_or_negate", "norm", "ball_distance",
    "norm_quadratic", "max_affine", "max_eigenvalue_2x2", "pointwise_max",
)

__all__ = [name for name in dir() if not name.startswith("_")]
