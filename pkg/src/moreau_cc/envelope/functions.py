"""Convex function atoms and combinators with batched oracles.

Every function acts on arrays of shape ``(..., dim)``: ``value`` returns shape
``(...)`` and ``subgradient`` / ``analytic_prox`` return ``(..., dim)``. The
prox parameter ``lam`` may be a scalar or an array broadcastable against the
batch shape, which lets combinators rescale blocks per point.
"""

from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np

from ..errors import DimensionMismatch
from . import numeric


def as_points(u, dim: int) -> np.ndarray:
    """Coerce ``u`` to a float array whose trailing axis has length ``dim``."""
    arr = np.asarray(u, dtype=float)
    if dim == 1 and (arr.ndim == 0 or arr.shape[-1] != 1):
        arr = arr[..., None]
    if arr.shape[-1] != dim:
        raise DimensionMismatch(f"expected trailing dimension {dim}, got shape {arr.shape}")
    return arr


def _lam_col(lam, batch_shape) -> np.ndarray:
    lam = np.asarray(lam, dtype=float)
    return np.broadcast_to(lam, batch_shape)[..., None] if lam.ndim else lam


def _key_array(a) -> tuple:
    a = np.asarray(a, dtype=float)
    return (a.shape, a.tobytes())


class ConvexFunction:
    """A proper closed convex function on R^dim.

    Subclasses provide ``value`` and ``subgradient``. Those with a closed-form
    proximal operator set ``prox_kind = "analytic"`` and implement
    ``analytic_prox``; the rest are handled by the numeric solvers.
    """

    dim: int = 1
    prox_kind: str = "numeric"

    def value(self, u: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def subgradient(self, u: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def analytic_prox(self, lam, w: np.ndarray) -> np.ndarray:
        raise NotImplementedError(f"{type(self).__name__} has no closed-form prox")

    def key(self) -> tuple:
        """Structural identity used to merge equal atoms; defaults to object identity."""
        return ("id", id(self))

    def __call__(self, u):
        arr = as_points(u, self.dim)
        out = self.value(arr)
        return float(out) if np.ndim(out) == 0 else out

    def __add__(self, other: "ConvexFunction") -> "ConvexFunction":
        return add(self, other)

    def __rmul__(self, c: float) -> "ConvexFunction":
        return scale(self, c)

    def __mul__(self, c: float) -> "ConvexFunction":
        return scale(self, c)


class Affine(ConvexFunction):
    """``u -> a.u + b``."""

    prox_kind = "analytic"

    def __init__(self, a, b: float = 0.0):
        self.a = np.atleast_1d(np.asarray(a, dtype=float)).copy()
        self.b = float(b)
        self.dim = self.a.size

    def value(self, u):
        return u @ self.a + self.b

    def subgradient(self, u):
        return np.broadcast_to(self.a, u.shape).copy()

    def analytic_prox(self, lam, w):
        return w - _lam_col(lam, w.shape[:-1]) * self.a

    def key(self):
        return ("affine", _key_array(self.a), self.b)


class Constant(Affine):
    """The constant function ``c`` on R^dim."""

    def __init__(self, dim: int, c: float = 0.0):
        super().__init__(np.zeros(dim), c)


class Quadratic(ConvexFunction):
    """``u -> u.Q.u / 2 + a.u + c`` with ``Q`` symmetric positive semidefinite."""

    prox_kind = "analytic"

    def __init__(self, Q, a=None, c: float = 0.0):
        Q = np.atleast_2d(np.asarray(Q, dtype=float))
        if Q.shape[0] != Q.shape[1]:
            raise DimensionMismatch("Q must be square")
        self.Q = 0.5 * (Q + Q.T)
        self.dim = Q.shape[0]
        self.a = np.zeros(self.dim) if a is None else np.atleast_1d(np.asarray(a, dtype=float)).copy()
        self.c = float(c)

    def value(self, u):
        return 0.5 * np.einsum("...i,ij,...j->...", u, self.Q, u) + u @ self.a + self.c

    def subgradient(self, u):
        return u @ self.Q + self.a

    def analytic_prox(self, lam, w):
        lam = np.asarray(lam, dtype=float)
        eye = np.eye(self.dim)
        if lam.ndim == 0:
            rhs = w - lam * self.a
            return np.linalg.solve(eye + lam * self.Q, rhs.reshape(-1, self.dim).T).T.reshape(w.shape)
        lam_b = np.broadcast_to(lam, w.shape[:-1])
        rhs = w - lam_b[..., None] * self.a
        mats = eye + lam_b[..., None, None] * self.Q
        return np.linalg.solve(mats, rhs[..., None])[..., 0]

    def key(self):
        return ("quadratic", _key_array(self.Q), _key_array(self.a), self.c)


class HingeQuadratic(ConvexFunction):
    """Piecewise quadratic scalar function with one kink at ``center``.

    With ``t = u - center``::

        f(u) = pos_quad t^2 / 2 + pos_lin t     for t >= 0
        f(u) = neg_quad t^2 / 2 - neg_lin t     for t <= 0

    plus ``offset``. Convexity needs nonnegative curvatures and
    ``pos_lin + neg_lin >= 0``. Special cases: ``|u|`` (linear slopes 1),
    ``z^2`` on the right and ``-z`` on the left, or a one-sided quadratic.
    """

    prox_kind = "analytic"
    dim = 1

    def __init__(self, center=0.0, pos_quad=0.0, pos_lin=1.0, neg_quad=0.0, neg_lin=1.0, offset=0.0):
        self.center = float(center)
        self.pq, self.pl = float(pos_quad), float(pos_lin)
        self.nq, self.nl = float(neg_quad), float(neg_lin)
        self.offset = float(offset)
        if self.pq < 0 or self.nq < 0 or self.pl + self.nl < 0:
            raise ValueError("HingeQuadratic parameters do not define a convex function")

    def value(self, u):
        t = u[..., 0] - self.center
        return np.where(t >= 0, 0.5 * self.pq * t * t + self.pl * t, 0.5 * self.nq * t * t - self.nl * t) + self.offset

    def subgradient(self, u):
        t = u[..., 0] - self.center
        g = np.where(t > 0, self.pq * t + self.pl, np.where(t < 0, self.nq * t - self.nl, np.clip(0.0, -self.nl, self.pl)))
        return g[..., None]

    def analytic_prox(self, lam, w):
        lam = np.broadcast_to(np.asarray(lam, dtype=float), w.shape[:-1])
        t = w[..., 0] - self.center
        right = (t - lam * self.pl) / (1.0 + lam * self.pq)
        left = (t + lam * self.nl) / (1.0 + lam * self.nq)
        out = np.where(t > lam * self.pl, right, np.where(t < -lam * self.nl, left, 0.0))
        return (out + self.center)[..., None]

    def key(self):
        return ("hinge", self.center, self.pq, self.pl, self.nq, self.nl, self.offset)


def absolute(center: float = 0.0) -> HingeQuadratic:
    """``u -> |u - center|``."""
    return HingeQuadratic(center, 0.0, 1.0, 0.0, 1.0)


class BallDistance(ConvexFunction):
    """``u -> scale * max(|u - center| - radius, 0)`` (distance to a Euclidean ball)."""

    prox_kind = "analytic"

    def __init__(self, center, radius: float = 0.0, scale: float = 1.0):
        self.center = np.atleast_1d(np.asarray(center, dtype=float)).copy()
        self.dim = self.center.size
        self.radius = float(radius)
        self.scale = float(scale)
        if self.radius < 0 or self.scale < 0:
            raise ValueError("radius and scale must be nonnegative")

    def value(self, u):
        n = np.linalg.norm(u - self.center, axis=-1)
        return self.scale * np.maximum(n - self.radius, 0.0)

    def subgradient(self, u):
        d = u - self.center
        n = np.linalg.norm(d, axis=-1, keepdims=True)
        safe = np.where(n > 0, n, 1.0)
        return np.where(n > self.radius, self.scale * d / safe, 0.0)

    def analytic_prox(self, lam, w):
        lam = _lam_col(lam, w.shape[:-1])
        d = w - self.center
        n = np.linalg.norm(d, axis=-1, keepdims=True)
        safe = np.where(n > 0, n, 1.0)
        on_ball = self.center + self.radius * d / safe
        shrunk = w - lam * self.scale * d / safe
        return np.where(n <= self.radius, w, np.where(n <= self.radius + lam * self.scale, on_ball, shrunk))

    def key(self):
        return ("ball", _key_array(self.center), self.radius, self.scale)


class NormQuadratic(ConvexFunction):
    """``u -> scale |M u + b| + u.Q.u / 2 + a.u + c``.

    The prox is computed through its dual, a trust-region subproblem over
    the ball of radius ``scale`` solved by a secular equation.
    """

    prox_kind = "analytic"

    def __init__(self, M, b=None, scale: float = 1.0, Q=None, a=None, c: float = 0.0):
        self.M = np.atleast_2d(np.asarray(M, dtype=float)).copy()
        k, self.dim = self.M.shape
        self.b = np.zeros(k) if b is None else np.atleast_1d(np.asarray(b, dtype=float)).copy()
        self.scale = float(scale)
        self.Q = None if Q is None else 0.5 * (np.asarray(Q, float) + np.asarray(Q, float).T)
        self.a = np.zeros(self.dim) if a is None else np.atleast_1d(np.asarray(a, dtype=float)).copy()
        self.c = float(c)

    def _smooth(self, u):
        q = 0.0 if self.Q is None else 0.5 * np.einsum("...i,ij,...j->...", u, self.Q, u)
        return q + u @ self.a + self.c

    def value(self, u):
        y = u @ self.M.T + self.b
        return self.scale * np.linalg.norm(y, axis=-1) + self._smooth(u)

    def subgradient(self, u):
        y = u @ self.M.T + self.b
        n = np.linalg.norm(y, axis=-1, keepdims=True)
        g = self.scale * np.where(n > 0, y / np.where(n > 0, n, 1.0), 0.0) @ self.M
        if self.Q is not None:
            g = g + u @ self.Q
        return g + self.a

    def _prox_scalar(self, lam: float, W: np.ndarray) -> np.ndarray:
        if self.Q is None:
            P = lam * np.eye(self.dim)
        else:
            P = np.linalg.inv(self.Q + np.eye(self.dim) / lam)
        base = (W / lam - self.a) @ P.T
        if self.scale == 0.0:
            return base
        MP = self.M @ P
        K = MP @ self.M.T
        kappa, V = np.linalg.eigh(0.5 * (K + K.T))
        kappa = np.maximum(kappa, 0.0)
        G = self.b + base @ self.M.T
        S = numeric.trust_region_dual(kappa, V, G, self.scale)
        return base - S @ MP

    def analytic_prox(self, lam, w):
        lam = np.asarray(lam, dtype=float)
        flat = w.reshape(-1, self.dim)
        if lam.ndim == 0:
            return self._prox_scalar(float(lam), flat).reshape(w.shape)
        lam_flat = np.broadcast_to(lam, w.shape[:-1]).reshape(-1)
        out = np.empty_like(flat)
        for val in np.unique(lam_flat):
            idx = lam_flat == val
            out[idx] = flat[idx] if val == 0.0 else self._prox_scalar(float(val), flat[idx])
        return out.reshape(w.shape)

    def key(self):
        q = None if self.Q is None else _key_array(self.Q)
        return ("normquad", _key_array(self.M), _key_array(self.b), self.scale, q, _key_array(self.a), self.c)


class MaxAffine(ConvexFunction):
    """``u -> max_i (A_i.u + b_i) + u.Q.u / 2``.

    The prox solves the dual quadratic program over the unit simplex by
    exact active-set enumeration, falling back to accelerated projected
    gradient only for rows that rounding leaves uncertified.
    """

    prox_kind = "analytic"

    def __init__(self, A, b, Q=None):
        self.A = np.atleast_2d(np.asarray(A, dtype=float)).copy()
        self.b = np.atleast_1d(np.asarray(b, dtype=float)).copy()
        self.dim = self.A.shape[1]
        if self.b.size != self.A.shape[0]:
            raise DimensionMismatch("A and b disagree on the number of pieces")
        self.Q = None if Q is None else 0.5 * (np.asarray(Q, float) + np.asarray(Q, float).T)

    def pieces(self, u):
        return u @ self.A.T + self.b

    def value(self, u):
        v = np.max(self.pieces(u), axis=-1)
        if self.Q is not None:
            v = v + 0.5 * np.einsum("...i,ij,...j->...", u, self.Q, u)
        return v

    def subgradient(self, u):
        i = np.argmax(self.pieces(u), axis=-1)
        g = self.A[i]
        if self.Q is not None:
            g = g + u @ self.Q
        return g

    def _prox_scalar(self, lam: float, W: np.ndarray) -> np.ndarray:
        if self.Q is None:
            P = lam * np.eye(self.dim)
        else:
            P = np.linalg.inv(self.Q + np.eye(self.dim) / lam)
        AP = self.A @ P
        H = AP @ self.A.T
        C = self.b + (W / lam) @ AP.T
        alpha, ok = numeric.simplex_qp_active_set(H, C, max_support=min(self.b.size, self.dim + 1))
        if not np.all(ok):
            alpha[~ok] = numeric.simplex_qp_projected_gradient(H, C[~ok])
        return (W / lam) @ P.T - alpha @ AP

    def analytic_prox(self, lam, w):
        lam = np.asarray(lam, dtype=float)
        flat = w.reshape(-1, self.dim)
        if lam.ndim == 0:
            return self._prox_scalar(float(lam), flat).reshape(w.shape)
        lam_flat = np.broadcast_to(lam, w.shape[:-1]).reshape(-1)
        out = np.empty_like(flat)
        for val in np.unique(lam_flat):
            idx = lam_flat == val
            out[idx] = flat[idx] if val == 0.0 else self._prox_scalar(float(val), flat[idx])
        return out.reshape(w.shape)

    def key(self):
        q = None if self.Q is None else _key_array(self.Q)
        return ("maxaffine", _key_array(self.A), _key_array(self.b), q)


class MaxEigenvalue(ConvexFunction):
    """``u -> lambda_max(A0 + sum_k u_k A_k)`` for symmetric matrices (numeric prox).

    Use :func:`max_eigenvalue` to get a closed-form prox in the 2x2 case.
    """

    def __init__(self, A0, As):
        self.A0 = np.asarray(A0, dtype=float)
        self.As = np.asarray(As, dtype=float)
        self.dim = self.As.shape[0]

    def matrix(self, u):
        return self.A0 + np.tensordot(u, self.As, axes=([-1], [0]))

    def value(self, u):
        return np.linalg.eigvalsh(self.matrix(u))[..., -1]

    def subgradient(self, u):
        _, vecs = np.linalg.eigh(self.matrix(u))
        v = vecs[..., :, -1]
        return np.einsum("...i,kij,...j->...k", v, self.As, v)

    def key(self):
        return ("maxeig", _key_array(self.A0), _key_array(self.As))


def max_eigenvalue(A0, As) -> ConvexFunction:
    """Largest eigenvalue of an affine symmetric matrix pencil.

    For 2x2 pencils the eigenvalue is ``tr/2 + |((a - c)/2, b)|`` with
    entries affine in ``u``, which is a :class:`NormQuadratic` with an exact
    prox. Larger pencils fall back to :class:`MaxEigenvalue`.
    """
    A0 = np.asarray(A0, dtype=float)
    As = np.asarray(As, dtype=float)
    if A0.shape == (2, 2):
        M = np.stack([(As[:, 0, 0] - As[:, 1, 1]) / 2.0, As[:, 0, 1]])
        b = np.array([(A0[0, 0] - A0[1, 1]) / 2.0, A0[0, 1]])
        a = (As[:, 0, 0] + As[:, 1, 1]) / 2.0
        return NormQuadratic(M, b, 1.0, None, a, (A0[0, 0] + A0[1, 1]) / 2.0)
    return MaxEigenvalue(A0, As)


class Scaled(ConvexFunction):
    """``u -> coef * f(u)`` for ``coef >= 0``; ``prox_{lam}(coef f) = prox_{coef lam} f``."""

    def __init__(self, f: ConvexFunction, coef: float):
        if coef < 0:
            raise ValueError("scaling must be nonnegative to preserve convexity")
        self.f = f
        self.coef = float(coef)
        self.dim = f.dim
        self.prox_kind = f.prox_kind if coef > 0 else "analytic"

    def value(self, u):
        return self.coef * self.f.value(u)

    def subgradient(self, u):
        return self.coef * self.f.subgradient(u)

    def analytic_prox(self, lam, w):
        if self.coef == 0.0:
            return w.copy()
        return self.f.analytic_prox(self.coef * np.asarray(lam, dtype=float), w)

    def key(self):
        return ("scaled", self.coef, self.f.key())


class SeparableSum(ConvexFunction):
    """``u -> sum_k coef_k f_k(u[idx_k]) + a.u + c`` over disjoint index blocks.

    The prox of the affine part is a shift, and the prox of a block sum
    splits blockwise, so the whole prox is exact whenever every block atom
    has one. Blocks without an analytic prox are solved numerically in their
    own (small) dimension.
    """

    def __init__(self, dim: int, blocks: Sequence[tuple] = (), a=None, c: float = 0.0):
        self.dim = int(dim)
        norm_blocks = []
        seen: set[int] = set()
        for blk in blocks:
            idx, atom = blk[0], blk[1]
            coef = float(blk[2]) if len(blk) > 2 else 1.0
            idx = tuple(int(i) for i in np.atleast_1d(idx))
            if len(idx) != atom.dim:
                raise DimensionMismatch(f"block {idx} does not match atom dimension {atom.dim}")
            if seen.intersection(idx) or min(idx) < 0 or max(idx) >= self.dim:
                raise DimensionMismatch(f"block indices {idx} overlap or fall outside 0..{self.dim - 1}")
            seen.update(idx)
            if coef < 0:
                raise ValueError("block coefficients must be nonnegative")
            norm_blocks.append((idx, atom, coef))
        self.blocks = norm_blocks
        self.a = np.zeros(self.dim) if a is None else np.atleast_1d(np.asarray(a, dtype=float)).copy()
        self.c = float(c)
        self.prox_kind = "analytic"

    def value(self, u):
        out = u @ self.a + self.c
        for idx, atom, coef in self.blocks:
            out = out + coef * atom.value(u[..., list(idx)])
        return out

    def subgradient(self, u):
        g = np.broadcast_to(self.a, u.shape).copy()
        for idx, atom, coef in self.blocks:
            g[..., list(idx)] += coef * atom.subgradient(u[..., list(idx)])
        return g

    def analytic_prox(self, lam, w):
        lam = np.asarray(lam, dtype=float)
        v = w - _lam_col(lam, w.shape[:-1]) * self.a
        out = v.copy()
        for idx, atom, coef in self.blocks:
            cols = list(idx)
            out[..., cols] = prox_batch(atom, coef * lam, v[..., cols])
        return out

    def key(self):
        return ("sepsum", self.dim, tuple((idx, atom.key(), coef) for idx, atom, coef in self.blocks),
                _key_array(self.a), self.c)


class SumFunction(ConvexFunction):
    """Sum of convex functions with no exploitable structure (numeric prox)."""

    def __init__(self, parts: Sequence[ConvexFunction]):
        self.parts = list(parts)
        self.dim = self.parts[0].dim
        if any(p.dim != self.dim for p in self.parts):
            raise DimensionMismatch("summands must share a dimension")

    def value(self, u):
        return sum(p.value(u) for p in self.parts)

    def subgradient(self, u):
        return sum(p.subgradient(u) for p in self.parts)

    def key(self):
        return ("sum", tuple(p.key() for p in self.parts))


class CallableFunction(ConvexFunction):
    """Black-box convex function built from point-wise callables.

    ``fn`` maps a point of shape ``(dim,)`` to a float and ``subgrad`` to a
    vector; an optional ``prox(lam, w)`` callable marks the prox as analytic.
    """

    def __init__(self, dim: int, fn: Callable, subgrad: Callable, prox: Callable | None = None):
        self.dim = int(dim)
        self._fn, self._sg, self._prox = fn, subgrad, prox
        self.prox_kind = "analytic" if prox is not None else "numeric"

    def value(self, u):
        flat = u.reshape(-1, self.dim)
        return np.array([float(self._fn(p)) for p in flat]).reshape(u.shape[:-1])

    def subgradient(self, u):
        flat = u.reshape(-1, self.dim)
        return np.array([np.asarray(self._sg(p), dtype=float).reshape(self.dim) for p in flat]).reshape(u.shape)

    def analytic_prox(self, lam, w):
        flat = w.reshape(-1, self.dim)
        lam_flat = np.broadcast_to(np.asarray(lam, dtype=float), w.shape[:-1]).reshape(-1)
        return np.array([np.asarray(self._prox(float(lv), p), dtype=float).reshape(self.dim)
                         for lv, p in zip(lam_flat, flat)]).reshape(w.shape)


# ---------------------------------------------------------------------------
# Structural helpers
# ---------------------------------------------------------------------------


def as_separable(f: ConvexFunction) -> SeparableSum:
    """View ``f`` as a :class:`SeparableSum` (single full block if nothing finer)."""
    if isinstance(f, SeparableSum):
        return f
    if type(f) in (Affine, Constant):
        return SeparableSum(f.dim, [], f.a, f.b)
    if isinstance(f, Scaled):
        inner = as_separable(f.f)
        return SeparableSum(f.dim, [(i, a, c * f.coef) for i, a, c in inner.blocks], inner.a * f.coef, inner.c * f.coef)
    return SeparableSum(f.dim, [(tuple(range(f.dim)), f, 1.0)])


def lift(f: ConvexFunction, indices: Sequence[int], dim: int) -> SeparableSum:
    """Embed ``f`` acting on ``u[indices]`` into R^dim."""
    idx = [int(i) for i in indices]
    if len(idx) != f.dim:
        raise DimensionMismatch("lift indices do not match the function dimension")
    inner = as_separable(f)
    a = np.zeros(dim)
    a[idx] = inner.a
    blocks = [(tuple(idx[j] for j in bidx), atom, coef) for bidx, atom, coef in inner.blocks]
    return SeparableSum(dim, blocks, a, inner.c)


def add(f: ConvexFunction, g: ConvexFunction) -> ConvexFunction:
    """Sum of two convex functions, keeping separable structure when possible."""
    if f.dim != g.dim:
        raise DimensionMismatch("cannot add functions of different dimension")
    sf, sg = as_separable(f), as_separable(g)
    merged = _merge_blocks([(sf, 1.0), (sg, 1.0)])
    if merged is None:
        parts = (f.parts if isinstance(f, SumFunction) else [f]) + (g.parts if isinstance(g, SumFunction) else [g])
        return SumFunction(parts)
    blocks, a, c = merged
    out = SeparableSum(f.dim, blocks, a, c)
    return out


def scale(f: ConvexFunction, c: float) -> ConvexFunction:
    c = float(c)
    if isinstance(f, (SeparableSum, Affine)):
        s = as_separable(f)
        return SeparableSum(s.dim, [(i, a, k * c) for i, a, k in s.blocks], s.a * c, s.c * c)
    return Scaled(f, c)


def _merge_blocks(weighted: Sequence[tuple]):
    """Combine weighted SeparableSums block by block.

    Returns ``(blocks, a, c)`` or ``None`` when two blocks overlap without
    being identical atoms on the same indices (or two quadratics there).
    """
    table: dict[tuple, list] = {}
    dim = weighted[0][0].dim
    a = np.zeros(dim)
    c = 0.0
    for s, w in weighted:
        a = a + w * s.a
        c += w * s.c
        for idx, atom, coef in s.blocks:
            table.setdefault(idx, []).append((atom, coef * w))
    keys = list(table)
    for i in range(len(keys)):
        for j in range(i + 1, len(keys)):
            if set(keys[i]) & set(keys[j]):
                return None
    blocks = []
    for idx, entries in table.items():
        k0 = entries[0][0].key()
        if all(atom.key() == k0 for atom, _ in entries):
            blocks.append((idx, entries[0][0], sum(cf for _, cf in entries)))
        elif all(isinstance(atom, Quadratic) for atom, _ in entries):
            Q = sum(cf * atom.Q for atom, cf in entries)
            qa = sum(cf * atom.a for atom, cf in entries)
            qc = sum(cf * atom.c for atom, cf in entries)
            blocks.append((idx, Quadratic(Q, qa, qc), 1.0))
        else:
            return None
    return blocks, a, c


class PointwiseMax(ConvexFunction):
    """``u -> max_i p_i(u)`` over finitely many convex pieces.

    Prox strategy, most specific first:

    * all pieces affine: delegate to :class:`MaxAffine`;
    * pieces sharing a separable block structure: solve the dual over the
      simplex of piece weights. Each weighted combination of the pieces is a
      :class:`SeparableSum` with an exact prox, single pieces and pairs are
      tried in turn (pairs by a safeguarded regula falsi on the weight,
      whose derivative is ``p_i(u) - p_j(u)``), and only points with three
      or more active pieces fall back to the numeric solver;
    * otherwise: numeric prox throughout.
    """

    def __init__(self, pieces: Sequence[ConvexFunction]):
        self.pieces = list(pieces)
        self.dim = self.pieces[0].dim
        if any(p.dim != self.dim for p in self.pieces):
            raise DimensionMismatch("pieces must share a dimension")
        self._affine = None
        self._structure = None
        if all(type(p) in (Affine, Constant) for p in self.pieces):
            self._affine = MaxAffine([p.a for p in self.pieces], [p.b for p in self.pieces])
        else:
            self._structure = self._build_structure()
        self.prox_kind = "analytic" if (self._affine is not None or self._structure is not None) else "numeric"

    def _build_structure(self):
        seps = [as_separable(p) for p in self.pieces]
        atoms: dict[tuple, ConvexFunction] = {}
        for s in seps:
            for idx, atom, _ in s.blocks:
                if idx in atoms:
                    if atoms[idx].key() != atom.key():
                        return None
                else:
                    atoms[idx] = atom
        keys = list(atoms)
        for i in range(len(keys)):
            for j in range(i + 1, len(keys)):
                if set(keys[i]) & set(keys[j]):
                    return None
        # coef[i, k]: weight of block k inside piece i.
        coef = np.zeros((len(seps), len(keys)))
        for i, s in enumerate(seps):
            for idx, _, cf in s.blocks:
                coef[i, keys.index(idx)] = cf
        A = np.array([s.a for s in seps])
        cvec = np.array([s.c for s in seps])
        return keys, [atoms[k] for k in keys], coef, A, cvec

    def value(self, u):
        return np.max(np.stack([p.value(u) for p in self.pieces], axis=-1), axis=-1)

    def piece_values(self, u):
        return np.stack([p.value(u) for p in self.pieces], axis=-1)

    def subgradient(self, u):
        vals = self.piece_values(u)
        i = np.argmax(vals, axis=-1)
        grads = np.stack([p.subgradient(u) for p in self.pieces], axis=-2)
        return np.take_along_axis(grads, i[..., None, None], axis=-2)[..., 0, :]

    def key(self):
        return ("max", tuple(p.key() for p in self.pieces))

    # -- dual machinery ----------------------------------------------------

    def combined_prox(self, lam: float, alpha: np.ndarray, W: np.ndarray) -> np.ndarray:
        """Prox of ``sum_i alpha_i p_i`` at rows of ``W`` (``alpha`` per row)."""
        keys, atoms, coef, A, cvec = self._structure
        a = alpha @ A
        V = W - lam * a
        out = V.copy()
        scales = alpha @ coef
        for k, (idx, atom) in enumerate(zip(keys, atoms)):
            cols = list(idx)
            sc = scales[:, k]
            active = sc > 0
            if np.any(active):
                out[np.ix_(active, cols)] = prox_batch(atom, lam * sc[active], V[np.ix_(active, cols)])
        return out

    def analytic_prox(self, lam, w):
        if self._affine is not None:
            return self._affine.analytic_prox(lam, w)
        lam = np.asarray(lam, dtype=float)
        flat = w.reshape(-1, self.dim)
        if lam.ndim == 0:
            return self._prox_dual(float(lam), flat).reshape(w.shape)
        lam_flat = np.broadcast_to(lam, w.shape[:-1]).reshape(-1)
        out = np.empty_like(flat)
        for val in np.unique(lam_flat):
            idx = lam_flat == val
            out[idx] = flat[idx] if val == 0.0 else self._prox_dual(float(val), flat[idx])
        return out.reshape(w.shape)

    def _prox_dual(self, lam: float, W: np.ndarray) -> np.ndarray:
        N = W.shape[0]
        s = len(self.pieces)
        U = np.empty_like(W)
        done = np.zeros(N, dtype=bool)
        eye = np.eye(s)

        def accept(cand, rows, active_vals):
            vals = self.piece_values(cand)
            top = np.max(vals, axis=1)
            tol = 1e-12 * (1.0 + np.abs(active_vals))
            return top <= active_vals + tol

        singles = []
        for i in range(s):
            todo = np.flatnonzero(~done)
            if todo.size == 0:
                break
            cand = self.combined_prox(lam, np.tile(eye[i], (todo.size, 1)), W[todo])
            vi = self.pieces[i].value(cand)
            ok = accept(cand, todo, vi)
            U[todo[ok]] = cand[ok]
            done[todo[ok]] = True
            singles.append(i)
        for i in range(s):
            for j in range(i + 1, s):
                todo = np.flatnonzero(~done)
                if todo.size == 0:
                    break
                cand, ok = self._pair(lam, i, j, W[todo])
                U[todo[ok]] = cand[ok]
                done[todo[ok]] = True
        rest = np.flatnonzero(~done)
        for r in rest:
            U[r] = prox_numeric(self, lam, W[r])
        return U

    def _pair(self, lam: float, i: int, j: int, W: np.ndarray):
        """Two-piece dual: find ``t`` with ``p_i(u(t)) = p_j(u(t))``, ``alpha = t e_i + (1-t) e_j``."""
        n = W.shape[0]
        s = len(self.pieces)

        def evaluate(t):
            alpha = np.zeros((n, s))
            alpha[:, i] = t
            alpha[:, j] = 1.0 - t
            u = self.combined_prox(lam, alpha, W)
            return u, self.pieces[i].value(u) - self.pieces[j].value(u)

        u0, f0 = evaluate(np.zeros(n))
        u1, f1 = evaluate(np.ones(n))
        valid = (f0 > 0) & (f1 < 0)
        a = np.zeros(n)
        b = np.ones(n)
        fa, fb = f0.copy(), f1.copy()
        t = np.full(n, 0.5)
        u = u0.copy()
        side = np.zeros(n, dtype=int)
        active = valid.copy()
        for it in range(200):
            if not np.any(active):
                break
            denom = fa - fb
            cand = np.where(denom > 0, a + fa * (b - a) / np.where(denom > 0, denom, 1.0), 0.5 * (a + b))
            # Every fourth step is a plain bisection to guarantee progress.
            if it % 4 == 3:
                cand = 0.5 * (a + b)
            cand = np.clip(cand, a, b)
            t = np.where(active, cand, t)
            un, ft = evaluate(t)
            u = np.where(active[:, None], un, u)
            scale_f = 1.0 + np.abs(self.pieces[i].value(un))
            conv = (np.abs(ft) <= 4 * np.finfo(float).eps * scale_f) | (b - a <= 1e-15)
            pos = ft > 0
            new_a = np.where(active & pos, t, a)
            new_b = np.where(active & ~pos, t, b)
            # Illinois modification: halve the stale endpoint's value.
            fa = np.where(active & pos, ft, np.where(active & ~pos & (side == -1), fa / 2.0, fa))
            fb = np.where(active & ~pos, ft, np.where(active & pos & (side == 1), fb / 2.0, fb))
            side = np.where(active, np.where(pos, 1, -1), side)
            a, b = new_a, new_b
            active = active & ~conv
        vals = self.piece_values(u)
        top = np.max(vals, axis=1)
        ref = np.maximum(vals[:, i], vals[:, j])
        ok = valid & (top <= ref + 1e-12 * (1.0 + np.abs(ref)))
        return u, ok


# ---------------------------------------------------------------------------
# Prox dispatch
# ---------------------------------------------------------------------------


def prox_numeric(f: ConvexFunction, lam: float, w: np.ndarray, tol: float = 1e-8) -> np.ndarray:
    """Numeric prox of ``f`` at a single point ``w`` (shape ``(dim,)``)."""
    w = np.asarray(w, dtype=float).reshape(f.dim)
    if f.dim == 1:
        u = numeric.golden_prox_1d(lambda t: float(f.value(np.array([t]))),
                                   lambda t: float(f.subgradient(np.array([t]))[0]),
                                   float(lam), float(w[0]))
        return np.array([u])
    return numeric.ellipsoid_prox(lambda p: float(f.value(p)), lambda p: f.subgradient(p), float(lam), w, tol=tol)


def prox_batch(f: ConvexFunction, lam, W: np.ndarray) -> np.ndarray:
    """Prox of ``f`` at every row of ``W``; ``lam`` scalar or per row."""
    if f.prox_kind == "analytic":
        return f.analytic_prox(lam, W)
    flat = W.reshape(-1, f.dim)
    lam_flat = np.broadcast_to(np.asarray(lam, dtype=float), W.shape[:-1]).reshape(-1)
    out = np.empty_like(flat)
    for k in range(flat.shape[0]):
        out[k] = flat[k] if lam_flat[k] == 0.0 else prox_numeric(f, lam_flat[k], flat[k])
    return out.reshape(W.shape)
