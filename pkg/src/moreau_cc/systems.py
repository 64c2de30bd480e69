"""Scalarized constraint systems and the envelope of their supremum function.

A random conic constraint ``Phi(x, xi) in -K`` is rewritten through a
compact generator set ``C`` of the dual cone as ``S(x, xi) <= h(x)``, where

    S(x, z) = sup_{v in C} <v, Phi(x, z)> + h(x)

and the compensator ``h`` makes every scalarization jointly convex. Three
families are supported:

* ``joint``: finitely many inequalities ``g_i <= 0``, generator set the unit
  simplex. Each pair ``(c_i, h_i)`` has ``c_i = g_i + h_i`` convex, and
  ``S = max_i (c_i + sum_{j != i} h_j)`` with ``h = sum_i h_i``.
* ``semidefinite``: ``Phi(x, z) <= 0`` in the Loewner order, generator set the
  trace-one PSD matrices, ``S = lambda_max(Phi) + h``. The matrix is given by
  its compensated pencil ``Phi + h I = A0 + sum_k u_k A_k`` (affine in
  ``u = (x, z)``), so ``S`` is the largest eigenvalue of the pencil.
* ``probust``: ``g(t, x, z) <= 0`` for every ``t`` on a finite grid, generator
  set the point masses on the grid, ``S = max_t g(t, x, z) + h``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .envelope import (
    ConvexFunction,
    EnvelopeResult,
    MaxAffine,
    PointwiseMax,
    Scaled,
    SumFunction,
    add,
    as_points,
    envelope_batch,
    lift,
    max_eigenvalue,
    moreau_eval,
    termwise_batch,
)
from .envelope.functions import Affine, Constant, SeparableSum, _merge_blocks, as_separable
from .envelope.numeric import project_simplex
from .errors import DimensionMismatch, EigenFailure, InvalidGenerator, NoConvergence

FAMILIES = ("joint", "semidefinite", "probust")
SMOOTHING_MODES = ("envelope", "termwise")


@dataclass(frozen=True)
class JointComponents:
    """Compensated pairs ``(c_i, h_i)`` with ``c_i = g_i + h_i`` jointly convex."""

    convex_parts: tuple
    compensators: tuple

    @property
    def count(self) -> int:
        return len(self.convex_parts)


@dataclass(frozen=True)
class SemidefComponents:
    """Compensated affine pencil ``Phi(x, z) + h(x) I = A0 + sum_k u_k A_k``."""

    A0: np.ndarray
    As: np.ndarray
    eig_tol: float = 1e-12

    @property
    def size(self) -> int:
        return self.A0.shape[0]


@dataclass(frozen=True)
class ProbustComponents:
    """Grid ``t_grid`` and per-point convex parts ``c_t = g(t, .) + h``."""

    t_grid: tuple
    convex_parts: tuple


@dataclass(frozen=True)
class ConstraintSystem:
    """Scalarized constraint data for one of the three families.

    ``sup`` realizes the supremum function on the joint ``(x, z)`` space of
    dimension ``n + m`` and ``h`` is the compensator on the decision space.
    ``anchor`` is a documented Slater point (``S(anchor, 0) < h(anchor)``).
    """

    family: str
    n: int
    m: int
    h: ConvexFunction
    components: object
    sup: ConvexFunction
    anchor: np.ndarray | None = None
    name: str = ""
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}")
        if self.h.dim != self.n or self.sup.dim != self.n + self.m:
            raise DimensionMismatch("h must act on R^n and sup on R^(n+m)")

    def join(self, x, z) -> np.ndarray:
        """Stack ``x`` (shape ``(n,)``) with ``z`` (shape ``(..., m)``) into joint points."""
        x = as_points(x, self.n)
        z = as_points(z, self.m)
        shape = np.broadcast_shapes(x.shape[:-1], z.shape[:-1])
        return np.concatenate([np.broadcast_to(x, shape + (self.n,)), np.broadcast_to(z, shape + (self.m,))], axis=-1)

    def h_value(self, x) -> float:
        return float(self.h.value(as_points(x, self.n)))

    def h_grad(self, x) -> np.ndarray:
        return self.h.subgradient(as_points(x, self.n))

    @property
    def pieces(self) -> list:
        """Convex pieces whose maximum is ``sup`` (joint and probust only)."""
        if self.family == "semidefinite":
            raise ValueError("semidefinite systems have no finite piece list")
        return list(self.metadata["pieces"])


# ---------------------------------------------------------------------------
# Builders
# ---------------------------------------------------------------------------


def _zero(n: int) -> ConvexFunction:
    return Constant(n, 0.0)


def joint_system(n: int, m: int, convex_parts: Sequence[ConvexFunction],
                 compensators: Sequence[ConvexFunction] | None = None,
                 anchor=None, name: str = "") -> ConstraintSystem:
    """Joint family from ``c_i = g_i + h_i`` (on R^(n+m)) and ``h_i`` (on R^n)."""
    convex_parts = list(convex_parts)
    if not convex_parts:
        raise ValueError("a joint system needs at least one inequality")
    comps = list(compensators) if compensators is not None else [_zero(n) for _ in convex_parts]
    if len(comps) != len(convex_parts):
        raise ValueError("one compensator per inequality is required")
    for c in convex_parts:
        if c.dim != n + m:
            raise DimensionMismatch("each c_i must act on R^(n+m)")
    for hc in comps:
        if hc.dim != n:
            raise DimensionMismatch("each h_i must act on R^n")
    lifted = [lift(hc, range(n), n + m) for hc in comps]
    pieces = []
    for i, c in enumerate(convex_parts):
        p = c
        for j, lh in enumerate(lifted):
            if j != i and not _is_zero(comps[j]):
                p = add(p, lh)
        pieces.append(p)
    h = comps[0]
    for hc in comps[1:]:
        h = add(h, hc)
    sup = pieces[0] if len(pieces) == 1 else PointwiseMax(pieces)
    return ConstraintSystem("joint", n, m, h, JointComponents(tuple(convex_parts), tuple(comps)), sup,
                            None if anchor is None else np.asarray(anchor, float), name, {"pieces": tuple(pieces)})


def _is_zero(f: ConvexFunction) -> bool:
    return type(f) in (Affine, Constant) and not np.any(f.a) and f.b == 0.0


def semidefinite_system(n: int, m: int, A0, As, h: ConvexFunction | None = None,
                        anchor=None, name: str = "", eig_tol: float = 1e-12) -> ConstraintSystem:
    """Semidefinite family from the compensated pencil ``A0 + sum_k u_k A_k``."""
    A0 = np.asarray(A0, dtype=float)
    As = np.asarray(As, dtype=float)
    if As.shape[0] != n + m or As.shape[1:] != A0.shape or A0.shape[0] != A0.shape[1]:
        raise DimensionMismatch("pencil must have n+m symmetric matrices of the size of A0")
    if not (np.allclose(A0, A0.T) and np.allclose(As, np.swapaxes(As, 1, 2))):
        raise ValueError("pencil matrices must be symmetric")
    h = _zero(n) if h is None else h
    sup = max_eigenvalue(A0, As)
    return ConstraintSystem("semidefinite", n, m, h, SemidefComponents(A0, As, eig_tol), sup,
                            None if anchor is None else np.asarray(anchor, float), name, {})


def probust_system(n: int, m: int, t_grid: Sequence[float], part_of_t: Callable[[float], ConvexFunction],
                   h: ConvexFunction | None = None, anchor=None, name: str = "") -> ConstraintSystem:
    """Probust family on a finite grid; ``part_of_t(t)`` returns ``c_t = g(t, .) + h``."""
    grid = tuple(float(t) for t in t_grid)
    if not grid:
        raise ValueError("t_grid must be nonempty")
    parts = tuple(part_of_t(t) for t in grid)
    for c in parts:
        if c.dim != n + m:
            raise DimensionMismatch("each c_t must act on R^(n+m)")
    h = _zero(n) if h is None else h
    if all(type(c) in (Affine, Constant) for c in parts):
        sup = MaxAffine([c.a for c in parts], [c.b for c in parts])
    else:
        sup = parts[0] if len(parts) == 1 else PointwiseMax(parts)
    return ConstraintSystem("probust", n, m, h, ProbustComponents(grid, parts), sup,
                            None if anchor is None else np.asarray(anchor, float), name, {"pieces": parts})


# ---------------------------------------------------------------------------
# Operations
# ---------------------------------------------------------------------------


def _scalar_or_array(v):
    return float(v) if np.ndim(v) == 0 else v


def phi_matrix(sys: ConstraintSystem, x, z) -> np.ndarray:
    """The (uncompensated) constraint matrix ``Phi(x, z)`` of a semidefinite system."""
    comp = sys.components
    u = sys.join(x, z)
    pencil = comp.A0 + np.tensordot(u, comp.As, axes=([-1], [0]))
    hx = sys.h.value(as_points(x, sys.n))
    return pencil - np.asarray(hx)[..., None, None] * np.eye(comp.size)


def _eigh(mat: np.ndarray):
    try:
        return np.linalg.eigh(mat)
    except np.linalg.LinAlgError as exc:  # pragma: no cover - LAPACK failure is rare
        raise EigenFailure(str(exc)) from exc


def sup_value(sys: ConstraintSystem, x, z):
    """``S(x, z)``; ``z`` may carry leading batch axes."""
    u = sys.join(x, z)
    if sys.family == "semidefinite":
        vals = _eigh(sys.components.A0 + np.tensordot(u, sys.components.As, axes=([-1], [0])))[0][..., -1]
        return _scalar_or_array(vals)
    return _scalar_or_array(sys.sup.value(u))


def sup_subgradient(sys: ConstraintSystem, x, z) -> np.ndarray:
    """An element of the subdifferential of ``S`` at ``(x, z)`` (joint coordinates).

    Joint and probust families return the gradient of the first active
    piece; the semidefinite family returns ``(v' A_k v)_k`` for a unit
    leading eigenvector ``v`` of the pencil, which equals the pullback of
    ``v v'`` through ``Phi`` plus the gradient of ``h``.
    """
    u = sys.join(x, z)
    if sys.family == "semidefinite":
        _, vecs = _eigh(sys.components.A0 + np.tensordot(u, sys.components.As, axes=([-1], [0])))
        v = vecs[..., :, -1]
        return np.einsum("...i,kij,...j->...k", v, sys.components.As, v)
    return sys.sup.subgradient(u)


def envelope_of_sup(sys: ConstraintSystem, lam: float, x, z) -> EnvelopeResult:
    """Moreau envelope of ``S`` in the joint variables at the single point ``(x, z)``."""
    u = sys.join(x, z)
    if u.ndim != 1:
        raise ValueError("envelope_of_sup takes a single point")
    return moreau_eval(sys.sup, lam, u)


def _combination(sys: ConstraintSystem, alpha: np.ndarray) -> ConvexFunction:
    pieces = sys.pieces
    merged = _merge_blocks([(as_separable(p), float(a)) for p, a in zip(pieces, alpha)])
    if merged is not None:
        blocks, a, c = merged
        return SeparableSum(sys.n + sys.m, blocks, a, c)
    return SumFunction([Scaled(p, float(a)) for p, a in zip(pieces, alpha)])


def sup_of_envelopes(sys: ConstraintSystem, lam: float, x, z, budget: int = 2000, tol: float = 1e-7) -> float:
    """``max over generator weights a of M_lam(sum_i a_i p_i)(x, z)``.

    The dual function is concave on the simplex with gradient
    ``(p_i(prox))_i``, so accelerated projected-gradient ascent with
    backtracking applies; the Frank-Wolfe gap ``max_i grad_i - a.grad`` bounds
    the suboptimality and is the stopping certificate.
    """
    if sys.family == "semidefinite":
        raise ValueError("sup_of_envelopes covers the joint and probust families")
    pieces = sys.pieces
    s = len(pieces)
    if s > 8:
        raise ValueError("sup_of_envelopes is a cross-check for at most 8 components")
    if lam <= 0:
        raise ValueError("lambda must be positive")
    w = sys.join(x, z)
    if w.ndim != 1:
        raise ValueError("sup_of_envelopes takes a single point")

    def dual(alpha):
        res = moreau_eval(_combination(sys, alpha), lam, w)
        grad = np.array([float(p.value(res.prox_point[None, :])[0]) for p in pieces])
        return res.value, grad

    # Start from the best vertex.
    best = None
    for i in range(s):
        e = np.eye(s)[i]
        val, grad = dual(e)
        if best is None or val > best[1]:
            best = (e, val, grad)
    alpha, val, grad = best
    if s == 1:
        return float(val)
    step = 1.0
    for _ in range(budget):
        fw_gap = float(np.max(grad) - alpha @ grad)
        if fw_gap <= 1e-3 * tol * (1.0 + abs(val)):
            return float(val)
        while True:
            cand = project_simplex(alpha + step * grad)[0]
            d = cand - alpha
            c_val, c_grad = dual(cand)
            # Sufficient increase for a concave function with step 1/L.
            if c_val >= val + grad @ d - (d @ d) / (2.0 * step) - 1e-14 * (1.0 + abs(val)) or step < 1e-12:
                break
            step *= 0.5
        if c_val >= val:
            alpha, val, grad = cand, c_val, c_grad
        step *= 2.0
    fw_gap = float(np.max(grad) - alpha @ grad)
    if fw_gap > tol * (1.0 + abs(val)):
        raise NoConvergence(f"sup_of_envelopes: Frank-Wolfe gap {fw_gap:.3e} after {budget} iterations")
    return float(val)


def scalarized_value(sys: ConstraintSystem, v_star, x, z, tol: float = 1e-9) -> float:
    """``<v*, Phi(x, z)> + h(x)`` for a generator element ``v*``.

    ``v*`` is a weight vector on the simplex (joint), a probability vector on
    the grid (probust), or a trace-one PSD matrix (semidefinite). A unit
    vector is accepted for the semidefinite family as shorthand for ``v v'``.
    """
    hx = sys.h_value(x)
    if sys.family == "semidefinite":
        A = np.asarray(v_star, dtype=float)
        p = sys.components.size
        if A.shape == (p,):
            if abs(np.linalg.norm(A) - 1.0) > tol:
                raise InvalidGenerator("unit vector expected")
            A = np.outer(A, A)
        if A.shape != (p, p) or not np.allclose(A, A.T, atol=tol):
            raise InvalidGenerator("generator must be a symmetric p x p matrix")
        if abs(np.trace(A) - 1.0) > tol or np.linalg.eigvalsh(A)[0] < -tol:
            raise InvalidGenerator("generator must be PSD with unit trace")
        return float(np.sum(A * phi_matrix(sys, x, z))) + hx
    wts = np.asarray(v_star, dtype=float).reshape(-1)
    parts = sys.components.convex_parts
    if wts.size != len(parts):
        raise InvalidGenerator(f"expected {len(parts)} weights")
    if np.any(wts < -tol) or abs(wts.sum() - 1.0) > tol:
        raise InvalidGenerator("weights must be nonnegative and sum to one")
    u = sys.join(x, z)
    xp = as_points(x, sys.n)
    if sys.family == "joint":
        g = [float(c.value(u)) - float(hc.value(xp)) for c, hc in zip(parts, sys.components.compensators)]
    else:
        g = [float(c.value(u)) - hx for c in parts]
    return float(np.dot(wts, g)) + hx


# ---------------------------------------------------------------------------
# Batched evaluator used by the radial and gradient machinery
# ---------------------------------------------------------------------------


class RegularizedConstraint:
    """Smoothed constraint ``(x, z) -> M(x, z)`` with gradients, batched in ``z``.

    ``lam = 0`` evaluates ``S`` itself with a subgradient. For ``lam > 0``
    the ``envelope`` mode uses the Moreau envelope of ``S`` and ``termwise``
    replaces each nonsmooth atom by its own envelope (see
    :func:`moreau_cc.envelope.termwise_batch`).
    """

    def __init__(self, sys: ConstraintSystem, lam: float, mode: str = "envelope"):
        if lam < 0:
            raise ValueError("lambda must be nonnegative")
        if mode not in SMOOTHING_MODES:
            raise ValueError(f"smoothing mode must be one of {SMOOTHING_MODES}")
        self.sys = sys
        self.lam = float(lam)
        self.mode = mode

    def evaluate(self, x, Z: np.ndarray):
        """Values and gradients (``grad_x``, ``grad_z``) at ``(x, z)`` for each row ``z`` of ``Z``."""
        U = self.sys.join(x, Z)
        n = self.sys.n
        if self.lam == 0.0:
            vals = np.asarray(sup_value(self.sys, x, Z), dtype=float)
            G = sup_subgradient(self.sys, x, Z)
        elif self.mode == "termwise":
            vals, G = termwise_batch(self.sys.sup, self.lam, U)
        else:
            vals, _, G = envelope_batch(self.sys.sup, self.lam, U)
        return vals, G[..., :n], G[..., n:]

    def value(self, x, Z) -> np.ndarray:
        return self.evaluate(x, Z)[0]

    def threshold(self, x):
        """``(h(x), grad h(x))``."""
        xp = as_points(x, self.sys.n)
        return float(self.sys.h.value(xp)), self.sys.h.subgradient(xp)


def convexity_probe(fn: Callable[[np.ndarray], np.ndarray], dim: int, rng: np.random.Generator,
                    n_pairs: int = 200, box: float = 3.0) -> float:
    """Largest midpoint-convexity violation ``f(mid) - (f(a) + f(b))/2`` on random segments.

    A heuristic certificate only: a nonpositive result is evidence of
    convexity along the sampled segments, not a proof.
    """
    A = rng.uniform(-box, box, size=(n_pairs, dim))
    B = rng.uniform(-box, box, size=(n_pairs, dim))
    fa, fb, fm = fn(A), fn(B), fn(0.5 * (A + B))
    return float(np.max(fm - 0.5 * (fa + fb)))


def matrix_convexity_probe(sys: ConstraintSystem, rng: np.random.Generator, n_pairs: int = 200,
                           box: float = 3.0) -> float:
    """Midpoint-convexity probe of ``(x, z) -> v' Phi(x, z) v + h(x)`` for random unit ``v``."""
    if sys.family != "semidefinite":
        raise ValueError("matrix convexity probe applies to semidefinite systems")
    worst = -np.inf
    p = sys.components.size
    for _ in range(n_pairs):
        v = rng.normal(size=p)
        v /= np.linalg.norm(v)

        def fn(U, v=v):
            x, z = U[..., : sys.n], U[..., sys.n:]
            mats = np.stack([phi_matrix(sys, xi, zi) for xi, zi in zip(x, z)])
            hx = sys.h.value(x)
            return np.einsum("i,kij,j->k", v, mats, v) + hx

        worst = max(worst, convexity_probe(fn, sys.n + sys.m, rng, n_pairs=4, box=box))
    return float(worst)
