"""Independent reference computations.

Nothing here touches the spherical-radial or gradient code: probabilities
come from direct Monte Carlo or from closed forms built on the normal CDF,
so agreement with the main estimators is a genuine cross-check.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy import special

from .errors import NotFound
from .systems import ConstraintSystem, RegularizedConstraint

MC_CHUNK = 1 << 16


def normal_cdf(r):
    """Standard normal CDF via ``erfc`` (accurate in both tails)."""
    return 0.5 * special.erfc(-np.asarray(r, dtype=float) / math.sqrt(2.0))


@dataclass(frozen=True)
class MCEstimate:
    value: float
    std_error: float
    n: int


def mc_probability(sys: ConstraintSystem, model, lam: float, x, n: int = 10**6, seed: int = 0,
                   mode: str = "envelope") -> MCEstimate:
    """Frequency of ``M(x, xi) <= h(x)`` over ``n`` draws ``xi = L g``, ``g`` standard normal.

    ``lam = 0`` tests the supremum function itself. The standard error is the
    binomial one, ``sqrt(p (1 - p) / n)``.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    con = RegularizedConstraint(sys, lam, mode)
    hx, _ = con.threshold(x)
    L = np.atleast_2d(np.asarray(model.L, dtype=float))
    rng = np.random.default_rng(seed)
    hits = 0
    done = 0
    while done < n:
        k = min(MC_CHUNK, n - done)
        Z = rng.standard_normal((k, L.shape[0])) @ L.T
        hits += int(np.count_nonzero(con.value(x, Z) <= hx))
        done += k
    p = hits / n
    return MCEstimate(p, math.sqrt(p * (1.0 - p) / n), n)


def binomial_std_error(p: float, n: int) -> float:
    """Std error of a frequency from ``n`` draws when the true probability is ``p``.

    Comparing an estimate ``p_ref`` against Monte Carlo with
    ``binomial_std_error(p_ref, n)`` is a score test. It stays meaningful
    when ``p_ref`` is so close to 0 or 1 that the sample shows no misses,
    where the plug-in error ``sqrt(phat (1 - phat) / n)`` collapses to 0.
    """
    p = min(max(float(p), 0.0), 1.0)
    return math.sqrt(p * (1.0 - p) / n)


def grid_prox_1d(f: Callable[[np.ndarray], np.ndarray], lam: float, w: float, half_width: float = 10.0,
                 points: int = 20001, refinements: int = 6) -> float:
    """Brute-force prox of a scalar function by repeatedly refined grid search."""
    lo, hi = w - half_width, w + half_width
    best = w
    for _ in range(refinements):
        u = np.linspace(lo, hi, points)
        obj = f(u) + (u - w) ** 2 / (2.0 * lam)
        k = int(np.argmin(obj))
        best = float(u[k])
        step = (hi - lo) / (points - 1)
        lo, hi = best - 2 * step, best + 2 * step
    return best


# ---------------------------------------------------------------------------
# Closed forms for the worked examples
# ---------------------------------------------------------------------------


def envelope_dead_zone(x, mu: float):
    """Envelope of ``max(|x| - 1, 0)`` with parameter ``mu``."""
    d = np.maximum(np.abs(np.asarray(x, dtype=float)) - 1.0, 0.0)
    if mu == 0:
        return d
    with np.errstate(over="ignore"):
        return np.where(d <= mu, d * d / (2.0 * mu), d - mu / 2.0)


def envelope_square_or_negate(z, lam: float):
    """Envelope of ``z^2`` (z >= 0), ``-z`` (z < 0)."""
    z = np.asarray(z, dtype=float)
    if lam == 0:
        return np.where(z >= 0, z * z, -z)
    return np.where(z >= 0, z * z / (1.0 + 2.0 * lam),
                    np.where(z >= -lam, z * z / (2.0 * lam), -z - lam / 2.0))


def analytic_example1(x, lam: float):
    """``P(M_lam f2(xi) <= 5 - 2 M_{2 lam} f1(x))`` for standard normal ``xi``.

    The sublevel set of ``M_lam f2`` at level ``t >= 0`` is the interval
    ``[a, b]`` with ``b = sqrt(t (1 + 2 lam))`` and ``a = -(t + lam/2)`` when
    ``t >= lam/2``, otherwise ``a = -sqrt(2 lam t)``.
    """
    if lam < 0:
        raise ValueError("lambda must be nonnegative")
    t = 5.0 - 2.0 * envelope_dead_zone(x, 2.0 * lam)
    tp = np.maximum(t, 0.0)
    b = np.sqrt(tp * (1.0 + 2.0 * lam))
    a = np.where(tp >= lam / 2.0, -(tp + lam / 2.0), -np.sqrt(2.0 * lam * tp))
    # Phi(b) - Phi(a) written with erfc of the smaller tail for accuracy.
    val = 1.0 - normal_cdf(-b) - normal_cdf(a)
    val = np.where(t < 0, 0.0, val)
    return float(val) if np.ndim(val) == 0 else val


def right_slope_example1() -> float:
    """Closed-form right derivative of the nominal Example 6.1 probability at ``x = 1``."""
    return -(1.0 / math.sqrt(2.0 * math.pi)) * (math.exp(-2.5) / math.sqrt(5.0) + 2.0 * math.exp(-12.5))


@dataclass(frozen=True)
class SlopeWitness:
    point: float
    steps: tuple
    left_slopes: tuple
    right_slopes: tuple
    right_reference: float


def nonsmoothness_witness_example1(point: float = 1.0, steps: Sequence[float] = (1e-3, 1e-4, 1e-5)) -> SlopeWitness:
    """One-sided difference quotients of the nominal probability at a kink (``+1`` or ``-1``)."""
    f0 = analytic_example1(point, 0.0)
    left = tuple((f0 - analytic_example1(point - h, 0.0)) / h for h in steps)
    right = tuple((analytic_example1(point + h, 0.0) - f0) / h for h in steps)
    ref = right_slope_example1()
    # The function is even, so at -1 the outward (left) side carries the slope.
    if point < 0:
        ref = -ref
    return SlopeWitness(point, tuple(steps), left, right, ref)


def envelope_example2(x, z, lam: float) -> float:
    """Envelope of ``max(|x| - 2, 0) + |z1| + z2 - 3`` on ``R^2 x R^2``."""
    x = np.asarray(x, dtype=float)
    z = np.asarray(z, dtype=float)
    d = max(float(np.linalg.norm(x)) - 2.0, 0.0)
    a = abs(float(z[0]))
    if lam == 0:
        return d + a + float(z[1]) - 3.0
    ball = d * d / (2 * lam) if d <= lam else d - lam / 2
    huber = a * a / (2 * lam) if a <= lam else a - lam / 2
    return ball + huber + float(z[1]) - lam / 2 - 3.0


def analytic_example52(x, lam: float):
    """Probability for the nonconvex Example 5.2 constraint under standard normal noise.

    With ``fhat(x1) = max(x1, 0)^2 / 2`` the smoothed event is
    ``xi <= x1^2/2 + lam/2 - M_lam fhat(x1) - x2^2 / (2 (1 + lam))``.
    """
    X = np.asarray(x, dtype=float)
    x1, x2 = X[..., 0], X[..., 1]
    pos = np.maximum(x1, 0.0)
    thr = 0.5 * x1 * x1 + lam / 2.0 - pos * pos / (2.0 * (1.0 + lam)) - x2 * x2 / (2.0 * (1.0 + lam))
    return normal_cdf(thr)


# ---------------------------------------------------------------------------
# Level-set nonconvexity witness
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LevelSetWitness:
    p: float
    x_a: np.ndarray
    x_b: np.ndarray
    midpoint: np.ndarray
    phi_a: float
    phi_b: float
    phi_mid: float
    box: float
    pitch: float


def _line_witness(vals: np.ndarray, p: float, margin: float):
    """Best ``(i, j)`` on one line with both ends at least ``p`` and the midpoint below ``p - margin``."""
    ok = np.flatnonzero(vals >= p)
    if ok.size < 2:
        return None
    a, b = np.meshgrid(ok, ok, indexing="ij")
    sel = (b > a + 1) & ((b - a) % 2 == 0)
    a, b = a[sel], b[sel]
    if a.size == 0:
        return None
    mid = (a + b) // 2
    score = np.minimum(np.minimum(vals[a], vals[b]) - p, p - vals[mid])
    good = vals[mid] < p - margin
    if not np.any(good):
        return None
    k = np.flatnonzero(good)[np.argmax(score[good])]
    return float(score[k]), int(a[k]), int(b[k])


def _grid_search(phi, p: float, box: float, pitch: float, margin: float):
    ticks = np.arange(-box, box + pitch / 2, pitch)
    X1, X2 = np.meshgrid(ticks, ticks, indexing="ij")
    V = np.asarray(phi(np.stack([X1, X2], axis=-1)), dtype=float)
    k = ticks.size
    lines = []
    for i in range(k):
        lines.append([(i, j) for j in range(k)])
        lines.append([(j, i) for j in range(k)])
    for off in range(-(k - 1), k):
        diag = [(i, i + off) for i in range(k) if 0 <= i + off < k]
        anti = [(i, k - 1 - i - off) for i in range(k) if 0 <= k - 1 - i - off < k]
        lines.extend([diag, anti])
    best = None
    for line in lines:
        if len(line) < 3:
            continue
        idx = np.array(line)
        found = _line_witness(V[idx[:, 0], idx[:, 1]], p, margin)
        if found is not None and (best is None or found[0] > best[0]):
            best = (found[0], idx[found[1]], idx[found[2]], idx[(found[1] + found[2]) // 2])
    if best is None:
        return None
    _, ia, ib, im = best
    pts = [np.array([ticks[i[0]], ticks[i[1]]]) for i in (ia, ib, im)]
    return LevelSetWitness(p, pts[0], pts[1], pts[2], float(V[tuple(ia)]), float(V[tuple(ib)]),
                           float(V[tuple(im)]), box, pitch)


def nonconvex_levelset_witness(lam: float = 0.5, p=(0.5, 0.6, 0.7, 0.8, 0.9, 0.95), phi=None, box: float = 3.0,
                               pitch: float = 0.05, margin: float = 0.005, widenings: int = 2) -> LevelSetWitness:
    """Two points of an upper level set ``{phi >= p}`` whose midpoint falls out of it.

    Scans rows, columns and both diagonals of a grid on ``[-box, box]^2``.
    Without a hit the box and pitch are doubled (same grid size), up to
    ``widenings`` times, for every level in ``p``. ``phi`` maps ``(..., 2)``
    arrays to probabilities and defaults to the Example 5.2 closed form.
    """
    if phi is None:
        if lam <= 0:
            raise ValueError("lambda must be positive")
        phi = lambda X: analytic_example52(X, lam)  # noqa: E731
    levels = [float(p)] if np.isscalar(p) else [float(v) for v in p]
    for k in range(widenings + 1):
        for level in levels:
            w = _grid_search(phi, level, box * 2**k, pitch * 2**k, margin)
            if w is not None:
                return w
    raise NotFound(f"no level-set nonconvexity witness for p in {levels}")


@dataclass(frozen=True)
class WitnessCheck:
    mc_a: MCEstimate
    mc_b: MCEstimate
    mc_mid: MCEstimate
    confirmed: bool


def verify_witness(w: LevelSetWitness, sys: ConstraintSystem, model, lam: float, n: int = 10**6,
                   seed: int = 0, mode: str = "envelope", n_sigma: float = 3.0) -> WitnessCheck:
    """Re-evaluate the three witness points by Monte Carlo."""
    a = mc_probability(sys, model, lam, w.x_a, n, seed, mode)
    b = mc_probability(sys, model, lam, w.x_b, n, seed + 1, mode)
    mid = mc_probability(sys, model, lam, w.midpoint, n, seed + 2, mode)
    ok = (a.value >= w.p - n_sigma * a.std_error and b.value >= w.p - n_sigma * b.std_error
          and mid.value < w.p - n_sigma * mid.std_error)
    return WitnessCheck(a, b, mid, bool(ok))


def fd_gradient(fn: Callable[[np.ndarray], float], x, step: float | None = None) -> np.ndarray:
    """Central finite differences with step ``1e-5 (1 + |x|)`` by default."""
    x = np.asarray(x, dtype=float).ravel()
    h = 1e-5 * (1.0 + np.linalg.norm(x)) if step is None else float(step)
    g = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (fn(x + e) - fn(x - e)) / (2.0 * h)
    return g
