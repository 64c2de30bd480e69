"""Moreau envelope, proximal point and envelope gradient."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import NonFinite
from .functions import (
    CallableFunction,
    ConvexFunction,
    PointwiseMax,
    Scaled,
    SeparableSum,
    as_points,
    prox_batch,
    prox_numeric,
)


@dataclass(frozen=True)
class EnvelopeResult:
    """Envelope value, proximal point and envelope gradient at one query point."""

    value: float
    prox_point: np.ndarray
    gradient: np.ndarray


def _check_lam(lam) -> float:
    lam = float(lam)
    if not np.isfinite(lam) or lam < 0:
        raise ValueError(f"lambda must be a nonnegative finite number, got {lam}")
    return lam


def prox_point(f: ConvexFunction, lam: float, w, tol: float = 1e-8) -> np.ndarray:
    """Minimizer of ``f(u) + |w - u|^2 / (2 lam)``.

    Closed-form proxes are used when ``f`` provides one; otherwise a bracketed
    golden-section search (dimension 1) or the ellipsoid method certifies the
    result to ``tol``. ``lam = 0`` returns ``w`` itself.
    """
    lam = _check_lam(lam)
    W = as_points(w, f.dim)
    if lam == 0.0:
        return W.copy()
    if f.prox_kind == "analytic":
        U = f.analytic_prox(lam, W)
    else:
        flat = W.reshape(-1, f.dim)
        U = np.array([prox_numeric(f, lam, p, tol=tol) for p in flat]).reshape(W.shape)
    if not np.all(np.isfinite(U)):
        raise NonFinite("proximal point is not finite")
    return U


def envelope_batch(f: ConvexFunction, lam: float, W: np.ndarray):
    """Envelope values, proximal points and gradients at the rows of ``W``.

    ``lam = 0`` evaluates ``f`` directly and returns a subgradient in place
    of the envelope gradient.
    """
    lam = _check_lam(lam)
    W = as_points(W, f.dim)
    if lam == 0.0:
        vals = f.value(W)
        return vals, W.copy(), f.subgradient(W)
    U = prox_batch(f, lam, W)
    D = W - U
    vals = f.value(U) + np.sum(D * D, axis=-1) / (2.0 * lam)
    if not np.all(np.isfinite(vals)):
        raise NonFinite("envelope value is not finite")
    return vals, U, D / lam


def moreau_eval(f: ConvexFunction, lam: float, w) -> EnvelopeResult:
    """Moreau envelope of ``f`` with parameter ``lam`` at a single point ``w``."""
    W = as_points(w, f.dim)
    if W.ndim != 1:
        raise ValueError("moreau_eval takes a single point; use envelope_batch for batches")
    vals, U, G = envelope_batch(f, lam, W[None, :])
    return EnvelopeResult(float(vals[0]), U[0], G[0])


def moreau_grad(f: ConvexFunction, lam: float, w) -> np.ndarray:
    """Gradient ``(w - prox)/lam`` of the Moreau envelope."""
    return moreau_eval(f, lam, w).gradient


def termwise_batch(f: ConvexFunction, lam: float, W: np.ndarray):
    """Smoothing that replaces each nonsmooth atom by its own envelope.

    For a :class:`SeparableSum` every block atom is replaced by its Moreau
    envelope while the affine part is kept exact; a :class:`PointwiseMax` is
    smoothed piece by piece and the maximum taken afterwards. Any other
    function gets its ordinary envelope. The result is a smooth function
    that lies between the true envelope and ``f``. Returns values and
    gradients.
    """
    lam = _check_lam(lam)
    W = as_points(W, f.dim)
    if lam == 0.0:
        return f.value(W), f.subgradient(W)
    if isinstance(f, SeparableSum):
        vals = W @ f.a + f.c
        grads = np.broadcast_to(f.a, W.shape).copy()
        for idx, atom, coef in f.blocks:
            cols = list(idx)
            if coef == 0.0:
                continue
            v, _, g = envelope_batch(atom, coef * lam, W[..., cols])
            vals = vals + coef * v
            grads[..., cols] += coef * g
        return vals, grads
    if isinstance(f, PointwiseMax):
        results = [termwise_batch(p, lam, W) for p in f.pieces]
        vals = np.stack([r[0] for r in results], axis=-1)
        k = np.argmax(vals, axis=-1)
        grads = np.stack([r[1] for r in results], axis=-2)
        return np.max(vals, axis=-1), np.take_along_axis(grads, k[..., None, None], axis=-2)[..., 0, :]
    if isinstance(f, Scaled):
        v, g = termwise_batch(f.f, f.coef * lam, W)
        return f.coef * v, f.coef * g
    v, _, g = envelope_batch(f, lam, W)
    return v, g


def black_box(f: ConvexFunction) -> CallableFunction:
    """Hide the structure of ``f`` so that only numeric prox routes apply."""
    return CallableFunction(f.dim, lambda p: float(f.value(p[None, :])[0]), lambda p: f.subgradient(p[None, :])[0])


def separable_split_check(fx: ConvexFunction, fz: ConvexFunction, lam: float, w, scaling: float = 2.0) -> float:
    """Largest discrepancy between two envelope identities at ``w = (x, z)``.

    1. ``M_lam(fx + fz)(x, z) = M_lam fx(x) + M_lam fz(z)``: the joint side is
       computed by the numeric prox on a black-box version of the separable
       sum, the other side by the usual dispatch.
    2. ``M_lam(c fx)(x) = c M_{c lam} fx(x)`` for ``c = scaling``, again with
       the left side computed numerically.
    """
    lam = _check_lam(lam)
    w = np.asarray(w, dtype=float).reshape(-1)
    nx, nz = fx.dim, fz.dim
    if w.size != nx + nz:
        raise ValueError("w must have length fx.dim + fz.dim")
    x, z = w[:nx], w[nx:]
    joint = black_box(SeparableSum(nx + nz, [(tuple(range(nx)), fx), (tuple(range(nx, nx + nz)), fz)]))
    lhs = moreau_eval(joint, lam, w).value
    rhs = moreau_eval(fx, lam, x).value + moreau_eval(fz, lam, z).value
    split = abs(lhs - rhs)
    c = float(scaling)
    scaled = black_box(Scaled(fx, c))
    scale_gap = abs(moreau_eval(scaled, lam, x).value - c * moreau_eval(fx, c * lam, x).value)
    return max(split, scale_gap)
