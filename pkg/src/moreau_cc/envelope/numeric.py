"""Numerical kernels behind the proximal operators.

Everything here works on plain arrays: the function classes in
:mod:`moreau_cc.envelope.functions` decide which kernel applies.
"""

from __future__ import annotations

import itertools
import math
from typing import Callable

import numpy as np

from ..errors import NoConvergence, NonFinite

_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


def _finite(value, what: str):
    arr = np.asarray(value, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise NonFinite(f"non-finite {what}: {arr!r}")
    return arr


def golden_prox_1d(
    f: Callable[[float], float],
    subgrad: Callable[[float], float],
    lam: float,
    w: float,
    tol: float = 1e-12,
    max_iter: int = 400,
) -> float:
    """Proximal point of a convex scalar function by golden-section search.

    The minimizer of ``f(u) + (u - w)**2 / (2 lam)`` lies between ``w`` and
    ``w - lam * g`` for any subgradient ``g`` of ``f`` at ``w``, which gives
    a finite bracket without any tuning.
    """
    g = float(_finite(subgrad(w), "subgradient"))
    if g == 0.0:
        return float(w)
    lo, hi = sorted((w, w - lam * g))

    def obj(u: float) -> float:
        return float(_finite(f(u), "function value")) + (u - w) ** 2 / (2.0 * lam)

    a, b = lo, hi
    c = b - _GOLDEN * (b - a)
    d = a + _GOLDEN * (b - a)
    fc, fd = obj(c), obj(d)
    for _ in range(max_iter):
        if b - a <= tol * (1.0 + abs(a) + abs(b)):
            break
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - _GOLDEN * (b - a)
            fc = obj(c)
        else:
            a, c, fc = c, d, fd
            d = a + _GOLDEN * (b - a)
            fd = obj(d)
    # The bracket endpoints themselves are admissible candidates (kinks of
    # f often sit exactly there).
    cands = [a, b, c, d, lo, hi]
    vals = [obj(u) for u in cands]
    return float(cands[int(np.argmin(vals))])


def ellipsoid_prox(
    f: Callable[[np.ndarray], float],
    subgrad: Callable[[np.ndarray], np.ndarray],
    lam: float,
    w: np.ndarray,
    tol: float = 1e-8,
    max_iter: int = 10_000,
) -> np.ndarray:
    """Proximal point of a convex function by the central-cut ellipsoid method.

    The prox objective ``F(u) = f(u) + |u - w|^2 / (2 lam)`` is minimized over
    the ball ``|u - w| <= lam |g(w)|``, which is known to contain the
    minimizer. The ellipsoid lower bound on ``min F`` gives an optimality gap,
    and ``1/lam``-strong convexity converts the gap into a distance bound
    ``|u - u*| <= sqrt(2 lam gap)``. Iteration stops once that bound is below
    ``tol * (1 + |w|)``, or once the gap reaches the rounding floor of ``F``.
    """
    w = np.asarray(w, dtype=float)
    d = w.size
    g0 = _finite(subgrad(w), "subgradient")
    r0 = lam * float(np.linalg.norm(g0))
    if r0 == 0.0:
        return w.copy()

    def obj(u):
        return float(_finite(f(u), "function value")) + float(np.dot(u - w, u - w)) / (2.0 * lam)

    if d == 1:
        return np.array([golden_prox_1d(lambda t: obj(np.array([t])) - (t - w[0]) ** 2 / (2 * lam),
                                        lambda t: float(subgrad(np.array([t]))[0]),
                                        lam, float(w[0]))])

    # Slightly inflate the initial ball so the minimizer is interior.
    P = np.eye(d) * (1.01 * r0) ** 2
    c = w.copy()
    best_u = w.copy()
    best_f = obj(w)
    lower = -np.inf
    target = tol * (1.0 + float(np.linalg.norm(w)))
    fac = d * d / (d * d - 1.0)
    for _ in range(max_iter):
        fc = obj(c)
        if fc < best_f:
            best_f, best_u = fc, c.copy()
        g = _finite(subgrad(c), "subgradient") + (c - w) / lam
        gPg = float(g @ P @ g)
        if gPg <= 0.0:
            return c.copy()
        lower = max(lower, fc - math.sqrt(gPg))
        gap = best_f - lower
        floor = 64.0 * np.finfo(float).eps * (1.0 + abs(best_f))
        if math.sqrt(max(2.0 * lam * gap, 0.0)) <= target or gap <= floor:
            return best_u
        b = P @ g / math.sqrt(gPg)
        c = c - b / (d + 1.0)
        P = fac * (P - (2.0 / (d + 1.0)) * np.outer(b, b))
        P = 0.5 * (P + P.T)
    raise NoConvergence(f"ellipsoid prox: gap {best_f - lower:.3e} after {max_iter} iterations")


def project_simplex(y: np.ndarray) -> np.ndarray:
    """Euclidean projection of each row of ``y`` onto the unit simplex."""
    y = np.atleast_2d(np.asarray(y, dtype=float))
    n = y.shape[-1]
    srt = -np.sort(-y, axis=-1)
    css = np.cumsum(srt, axis=-1) - 1.0
    idx = np.arange(1, n + 1)
    cond = srt - css / idx > 0
    rho = n - 1 - np.argmax(cond[..., ::-1], axis=-1)
    theta = np.take_along_axis(css, rho[..., None], axis=-1) / (rho[..., None] + 1.0)
    return np.maximum(y - theta, 0.0)


def simplex_qp_active_set(H: np.ndarray, C: np.ndarray, max_support: int | None = None):
    """Maximize ``a.c - a.H.a / 2`` over the unit simplex for each row ``c`` of ``C``.

    ``H`` is positive semidefinite and shared by all rows. Supports are
    enumerated by increasing size. For a support ``S`` the KKT system
    ``H_SS a_S + mu 1 = c_S, 1.a_S = 1`` is solved with a precomputed
    pseudo-inverse, and the candidate is accepted when ``a_S >= 0`` and every
    inactive index satisfies ``c_j - (H a)_j <= mu``.

    Returns ``(alpha, resolved)``. Rows that no support certified (only
    possible through rounding) are left for a fallback solver.
    """
    C = np.atleast_2d(np.asarray(C, dtype=float))
    N, s = C.shape
    alpha = np.zeros((N, s))
    resolved = np.zeros(N, dtype=bool)
    if max_support is None:
        max_support = s
    scale = 1.0 + np.max(np.abs(C), axis=1)
    tol = 1e-11 * scale * (1.0 + float(np.max(np.abs(H))) if H.size else 1.0)
    for k in range(1, min(s, max_support) + 1):
        for S in itertools.combinations(range(s), k):
            todo = np.flatnonzero(~resolved)
            if todo.size == 0:
                return alpha, resolved
            S = list(S)
            K = np.zeros((k + 1, k + 1))
            K[:k, :k] = H[np.ix_(S, S)]
            K[:k, k] = 1.0
            K[k, :k] = 1.0
            Kinv = np.linalg.pinv(K)
            rhs = np.concatenate([C[todo][:, S], np.ones((todo.size, 1))], axis=1)
            sol = rhs @ Kinv.T
            a_s = sol[:, :k]
            mu = sol[:, k]
            # The pseudo-inverse may return a least-squares point for a
            # singular system, so verify the equations as well.
            resid = np.max(np.abs(a_s @ K[:k, :k].T + mu[:, None] - C[todo][:, S]), axis=1)
            resid = np.maximum(resid, np.abs(a_s.sum(axis=1) - 1.0))
            full = np.zeros((todo.size, s))
            full[:, S] = a_s
            slack = C[todo] - full @ H.T - mu[:, None]
            slack[:, S] = -np.inf
            t = tol[todo]
            ok = (np.min(a_s, axis=1) >= -t) & (np.max(slack, axis=1) <= t) & (resid <= t)
            if np.any(ok):
                rows = todo[ok]
                a_ok = np.maximum(full[ok], 0.0)
                alpha[rows] = a_ok / a_ok.sum(axis=1, keepdims=True)
                resolved[rows] = True
    return alpha, resolved


def simplex_qp_projected_gradient(H: np.ndarray, C: np.ndarray, iters: int = 5000, tol: float = 1e-15):
    """Accelerated projected-gradient ascent for the same simplex QP (fallback)."""
    C = np.atleast_2d(np.asarray(C, dtype=float))
    N, s = C.shape
    Lh = max(float(np.linalg.eigvalsh(H).max()) if s else 0.0, 1e-300)
    a = np.full((N, s), 1.0 / s)
    y = a.copy()
    t = 1.0
    for _ in range(iters):
        grad = C - y @ H.T
        a_new = project_simplex(y + grad / Lh)
        t_new = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t * t))
        y = a_new + ((t - 1.0) / t_new) * (a_new - a)
        if np.max(np.abs(a_new - a)) <= tol:
            a = a_new
            break
        a, t = a_new, t_new
    return a


def trust_region_dual(kappa: np.ndarray, V: np.ndarray, G: np.ndarray, radius: float) -> np.ndarray:
    """Maximize ``s.g - s.K.s / 2`` subject to ``|s| <= radius`` for each row ``g``.

    ``K = V diag(kappa) V^T`` is positive semidefinite. The solution is
    ``s = (K + mu I)^-1 g`` with ``mu >= 0`` chosen by the secular equation
    ``|s(mu)| = radius`` whenever the unconstrained maximizer is infeasible.
    Newton's method on ``1/|s(mu)| - 1/radius`` (concave, increasing) started
    left of the root converges monotonically; a bisection guard keeps the
    iterate inside the bracket.
    """
    G = np.atleast_2d(np.asarray(G, dtype=float))
    gh = G @ V
    kap = np.asarray(kappa, dtype=float)
    kmax = float(np.max(kap)) if kap.size else 0.0
    pos = kap > 1e-14 * max(kmax, 1.0)
    # Unconstrained (mu = 0) candidate on the range of K.
    s0 = np.where(pos, gh / np.where(pos, kap, 1.0), 0.0)
    null_mass = np.sum(np.where(pos, 0.0, gh * gh), axis=1)
    n0 = np.sqrt(np.sum(s0 * s0, axis=1))
    interior = (n0 <= radius) & (null_mass <= (1e-28 * (1.0 + np.sum(gh * gh, axis=1))))
    out = np.empty_like(gh)
    out[interior] = s0[interior]
    rows = np.flatnonzero(~interior)
    if rows.size:
        g2 = gh[rows] ** 2
        gnorm = np.sqrt(g2.sum(axis=1))
        hi = gnorm / radius
        lo = np.maximum(hi - kmax, 0.0)
        mu = lo.copy()
        for _ in range(200):
            den = kap[None, :] + mu[:, None]
            den = np.where(den > 0.0, den, np.finfo(float).tiny)
            snorm2 = np.sum(g2 / den**2, axis=1)
            snorm = np.sqrt(snorm2)
            phi = 1.0 / snorm - 1.0 / radius
            dphi = np.sum(g2 / den**3, axis=1) / (snorm2 * snorm)
            lo = np.where(phi <= 0.0, np.maximum(lo, mu), lo)
            hi = np.where(phi > 0.0, np.minimum(hi, mu), hi)
            step = mu - phi / np.where(dphi > 0, dphi, np.inf)
            bad = ~np.isfinite(step) | (step <= lo) | (step >= hi)
            new = np.where(bad, 0.5 * (lo + hi), step)
            done = np.abs(new - mu) <= 4.0 * np.finfo(float).eps * (1.0 + np.abs(mu))
            mu = new
            if np.all(done):
                break
        den = kap[None, :] + mu[:, None]
        den = np.where(den > 0.0, den, np.finfo(float).tiny)
        s = gh[rows] / den
        # Renormalize to remove the last rounding drift from the boundary.
        nrm = np.linalg.norm(s, axis=1)
        s *= (radius / np.where(nrm > 0, nrm, 1.0))[:, None]
        out[rows] = s
    return out @ V.T
