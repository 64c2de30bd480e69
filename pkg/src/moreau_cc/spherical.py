"""Spherical-radial machinery for zero-mean Gaussian noise.

Write ``xi = R L v`` with ``R`` chi-distributed (``m`` degrees of freedom) and
``v`` uniform on the unit sphere. For a constraint ``M(x, z) <= h(x)`` that is
convex in ``z`` and strict at ``z = 0``, the feasible part of the ray
``{r L v : r >= 0}`` is an interval ``[0, rho(x, v)]``, so

    P(M(x, xi) <= h(x)) = E_v[ chi_cdf(m, rho(x, v)) ]

with ``chi_cdf(m, inf) = 1``. Averaging over a fixed set of directions gives
the sample-average estimator used throughout the package.
"""

from __future__ import annotations

import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import special
from scipy.stats import qmc

from .errors import NonMonotoneBracket, SlaterViolation
from .systems import ConstraintSystem, RegularizedConstraint

MODES = ("pseudo-random", "low-discrepancy")
CHUNK = 2048


@dataclass(frozen=True)
class GaussianModel:
    """Zero-mean Gaussian law ``N(0, L L')`` with lower-triangular ``L``."""

    L: np.ndarray

    def __post_init__(self):
        L = np.atleast_2d(np.asarray(self.L, dtype=float))
        if L.shape[0] != L.shape[1]:
            raise ValueError("L must be square")
        if not np.allclose(L, np.tril(L)):
            raise ValueError("L must be lower triangular")
        if np.any(np.diag(L) <= 0):
            raise ValueError("L must have a positive diagonal")
        object.__setattr__(self, "L", L)

    @property
    def m(self) -> int:
        return self.L.shape[0]

    @property
    def covariance(self) -> np.ndarray:
        return self.L @ self.L.T

    @classmethod
    def standard(cls, m: int) -> "GaussianModel":
        return cls(np.eye(m))

    @classmethod
    def from_covariance(cls, cov) -> "GaussianModel":
        return cls(np.linalg.cholesky(np.asarray(cov, dtype=float)))


@dataclass(frozen=True)
class DirectionSet:
    """A fixed sample of unit directions with the metadata that produced it."""

    directions: np.ndarray
    seed: int
    mode: str

    @property
    def N(self) -> int:
        return self.directions.shape[0]

    @property
    def m(self) -> int:
        return self.directions.shape[1]


@dataclass(frozen=True)
class RadialResult:
    """Root of ``r -> M(x, r L v) - h(x)`` along one direction."""

    kind: str
    rho: float
    residual: float

    @property
    def finite(self) -> bool:
        return self.kind == "finite"


@dataclass(frozen=True)
class RadialBatch:
    """Radial roots for a batch of directions (``inf`` marks infinite directions)."""

    rho: np.ndarray
    residual: np.ndarray
    h: float
    directions: np.ndarray
    ray: np.ndarray

    @property
    def finite(self) -> np.ndarray:
        return np.isfinite(self.rho)


@dataclass(frozen=True)
class ProbEstimate:
    """Spherical-radial probability estimate."""

    value: float
    std_error: float
    n_finite: int
    n_infinite: int
    contributions: np.ndarray = field(repr=False, default=None)


@dataclass(frozen=True)
class RadialOptions:
    """Bracketing and root tolerances for the radial solve."""

    r_max: float = 1e4
    xtol: float = 1e-10
    ftol: float = 1e-8
    max_iter: int = 200


def sample_directions(m: int, N: int, seed: int = 0, mode: str = "pseudo-random") -> DirectionSet:
    """Unit directions on the sphere in R^m.

    ``pseudo-random`` normalizes standard normal draws from a Philox
    (counter-based) generator keyed by ``seed``. ``low-discrepancy`` maps
    scrambled Sobol points through the inverse normal CDF and normalizes.
    For ``m = 1`` the sphere is ``{+1, -1}`` and both points are returned with
    equal weight regardless of ``N``; the resulting average is exact.
    """
    if m < 1 or N < 1:
        raise ValueError("m and N must be positive")
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    if m == 1:
        return DirectionSet(np.array([[1.0], [-1.0]]), int(seed), mode)
    if mode == "pseudo-random":
        rng = np.random.Generator(np.random.Philox(int(seed)))
        g = rng.standard_normal((N, m))
    else:
        sob = qmc.Sobol(d=m, scramble=True, seed=int(seed))
        with warnings.catch_warnings():
            # Sobol balance properties only hold for powers of two; other
            # sizes are still valid point sets.
            warnings.simplefilter("ignore", UserWarning)
            pts = sob.random(N)
        eps = np.finfo(float).eps
        g = special.ndtri(np.clip(pts, eps, 1.0 - eps))
    norms = np.linalg.norm(g, axis=1, keepdims=True)
    bad = norms[:, 0] == 0.0
    if np.any(bad):  # pragma: no cover - probability zero
        g[bad] = 1.0
        norms[bad] = np.sqrt(m)
    return DirectionSet(g / norms, int(seed), mode)


def chi_cdf(m: int, r):
    """CDF of the chi distribution with ``m`` degrees of freedom, ``P(m/2, r^2/2)``."""
    r = np.asarray(r, dtype=float)
    out = np.where(np.isinf(r), 1.0, special.gammainc(m / 2.0, np.where(np.isinf(r), 0.0, r) ** 2 / 2.0))
    return float(out) if out.ndim == 0 else out


def chi_pdf(m: int, r):
    """Density of the chi distribution: ``r^(m-1) exp(-r^2/2) / (2^(m/2-1) Gamma(m/2))``."""
    r = np.asarray(r, dtype=float)
    safe = np.where(np.isfinite(r) & (r > 0), r, 1.0)
    logp = (m - 1) * np.log(safe) - safe**2 / 2.0 - (m / 2.0 - 1.0) * np.log(2.0) - special.gammaln(m / 2.0)
    out = np.where(np.isfinite(r) & (r > 0), np.exp(logp), 0.0)
    if m == 1:
        out = np.where(r == 0, np.sqrt(2.0 / np.pi), out)
    return float(out) if out.ndim == 0 else out


def _threads(threads: int | None) -> int:
    if threads is None:
        threads = int(os.environ.get("MOREAU_CC_THREADS", "1") or 1)
    return max(1, int(threads))


def radial_roots(con: RegularizedConstraint, model: GaussianModel, x, V: np.ndarray,
                 opts: RadialOptions = RadialOptions(), check_slater: bool = True) -> RadialBatch:
    """Radial roots for every row ``v`` of ``V``.

    Bracketing doubles ``r = 1, 2, 4, ...`` up to ``r_max``; directions whose
    envelope never exceeds ``h(x)`` are infinite. Inside a bracket the
    function ``F(r) = M(x, r L v) - h(x)`` is convex and increasing past the
    root, so Newton steps from the right endpoint stay right of the root and
    converge monotonically. Once a step is shorter than ``xtol`` the point
    ``xtol`` to its left is probed to certify a bracket of that width.
    Converged rows are frozen, so each row's result is independent of which
    other rows share the batch.
    """
    V = np.atleast_2d(np.asarray(V, dtype=float))
    N = V.shape[0]
    hx, _ = con.threshold(x)
    D = V @ model.L.T
    ftol = opts.ftol * (1.0 + abs(hx))
    if check_slater:
        m0 = float(con.value(x, np.zeros((1, model.m)))[0])
        if not m0 < hx:
            raise SlaterViolation(f"constraint not strict at the mean: M(x,0) = {m0:.6g} >= h(x) = {hx:.6g}")

    def F(idx, r):
        vals, _, gz = con.evaluate(x, r[:, None] * D[idx])
        return vals - hx, np.einsum("ij,ij->i", gz, D[idx])

    lo = np.zeros(N)
    hi = np.full(N, np.inf)
    f_lo = np.full(N, float(con.value(x, np.zeros((1, model.m)))[0]) - hx)
    f_hi = np.zeros(N)
    g_hi = np.zeros(N)
    radii = [float(2**k) for k in range(64) if 2**k < opts.r_max] + [float(opts.r_max)]
    open_rows = np.arange(N)
    for r in radii:
        if open_rows.size == 0:
            break
        fr, gr = F(open_rows, np.full(open_rows.size, r))
        hit = fr > 0
        rows = open_rows[hit]
        hi[rows], f_hi[rows], g_hi[rows] = r, fr[hit], gr[hit]
        lo[open_rows[~hit]], f_lo[open_rows[~hit]] = r, fr[~hit]
        open_rows = open_rows[~hit]

    rho = np.full(N, np.inf)
    residual = np.zeros(N)
    active = np.flatnonzero(np.isfinite(hi))
    eps = np.finfo(float).eps
    for _ in range(opts.max_iter):
        if active.size == 0:
            break
        a_lo, a_hi = lo[active], hi[active]
        xt = opts.xtol * (1.0 + a_hi)
        with np.errstate(divide="ignore", invalid="ignore"):
            newton = a_hi - f_hi[active] / g_hi[active]
            secant = a_lo - f_lo[active] * (a_hi - a_lo) / (f_hi[active] - f_lo[active])
        mid = 0.5 * (a_lo + a_hi)
        secant = np.where(np.isfinite(secant), np.clip(secant, a_lo + 0.5 * xt, a_hi - 0.5 * xt), mid)
        slope_ok = np.isfinite(newton) & (g_hi[active] > 0)
        ok_newton = slope_ok & (newton > a_lo) & (newton <= a_hi)
        cand = np.where(ok_newton, newton, mid)
        short = ok_newton & (a_hi - newton <= 0.5 * xt)
        # Certification probe: one xtol to the left of the converged Newton point.
        cand = np.where(short, np.maximum(newton - 0.5 * xt, a_lo), cand)
        # Newton returning to (or below) ``lo`` means ``lo`` sits within
        # rounding of the root; the chord through both ends then finishes.
        cand = np.where(slope_ok & ~ok_newton & (a_hi - a_lo > xt), secant, cand)
        fc, gc = F(active, cand)
        # A tangent taken right of the root of a convex function cannot land
        # left of it; a clearly negative value means the envelope is noisy.
        # The slope comes from (w - prox) / lam, whose rounding grows like
        # eps |w| / lam, so the allowance scales with the step length.
        w_norm = 1.0 + np.linalg.norm(x) + a_hi * np.linalg.norm(D[active], axis=1)
        slope_noise = 16.0 * eps * w_norm / max(con.lam, eps)
        allowance = ftol + slope_noise * np.abs(a_hi - cand)
        if np.any(ok_newton & ~short & (fc < -allowance)):
            raise NonMonotoneBracket("Newton step from the right crossed the root; prox tolerance too loose")
        right = fc > 0
        r_rows = active[right]
        hi[r_rows], f_hi[r_rows], g_hi[r_rows] = cand[right], fc[right], gc[right]
        l_rows = active[~right]
        lo[l_rows], f_lo[l_rows] = cand[~right], fc[~right]
        width = hi[active] - lo[active]
        done = width <= xt
        if np.any(done):
            rows = active[done]
            with np.errstate(divide="ignore", invalid="ignore"):
                est = hi[rows] - f_hi[rows] / g_hi[rows]
            est = np.where(np.isfinite(est) & (est >= lo[rows]) & (est <= hi[rows]), est, hi[rows])
            rho[rows] = est
        active = active[~done]
    if active.size:
        rho[active] = hi[active]
    fin = np.flatnonzero(np.isfinite(rho))
    if fin.size:
        fr, _ = F(fin, rho[fin])
        residual[fin] = np.abs(fr)
    return RadialBatch(rho, residual, hx, V, D)


def radial_solve(sys: ConstraintSystem, model: GaussianModel, lam: float, x, v,
                 opts: RadialOptions = RadialOptions(), mode: str = "envelope") -> RadialResult:
    """Radial function ``rho_lam(x, v)`` for a single unit direction ``v``."""
    v = np.asarray(v, dtype=float).reshape(1, -1)
    if abs(np.linalg.norm(v) - 1.0) > 1e-10:
        raise ValueError("v must be a unit vector")
    batch = radial_roots(RegularizedConstraint(sys, lam, mode), model, x, v, opts)
    rho = float(batch.rho[0])
    if np.isfinite(rho):
        return RadialResult("finite", rho, float(batch.residual[0]))
    return RadialResult("infinite", float("inf"), 0.0)


def _chunks(N: int):
    return [(s, min(s + CHUNK, N)) for s in range(0, N, CHUNK)]


def map_chunks(fn, N: int, threads: int | None = None):
    """Apply ``fn(start, stop)`` over fixed-size chunks in order (optionally threaded)."""
    spans = _chunks(N)
    t = _threads(threads)
    if t == 1 or len(spans) == 1:
        return [fn(a, b) for a, b in spans]
    with ThreadPoolExecutor(max_workers=t) as pool:
        return list(pool.map(lambda ab: fn(*ab), spans))


def radial_all(sys: ConstraintSystem, model: GaussianModel, lam: float, x, dirs: DirectionSet,
               opts: RadialOptions = RadialOptions(), mode: str = "envelope",
               threads: int | None = None) -> RadialBatch:
    """Radial roots for a whole direction set, chunked with an ordered reduction."""
    con = RegularizedConstraint(sys, lam, mode)
    m0 = float(con.value(x, np.zeros((1, model.m)))[0])
    hx, _ = con.threshold(x)
    if not m0 < hx:
        raise SlaterViolation(f"constraint not strict at the mean: M(x,0) = {m0:.6g} >= h(x) = {hx:.6g}")
    parts = map_chunks(lambda a, b: radial_roots(con, model, x, dirs.directions[a:b], opts, check_slater=False),
                       dirs.N, threads)
    return RadialBatch(np.concatenate([p.rho for p in parts]), np.concatenate([p.residual for p in parts]),
                       hx, dirs.directions, dirs.directions @ model.L.T)


def estimate_from_roots(batch: RadialBatch, model: GaussianModel, dirs: DirectionSet) -> ProbEstimate:
    contrib = chi_cdf(model.m, batch.rho)
    contrib = np.atleast_1d(contrib)
    N = contrib.size
    value = float(np.mean(contrib))
    if model.m == 1:
        se = 0.0
    elif dirs.mode == "pseudo-random" and N > 1:
        se = float(np.std(contrib, ddof=1) / np.sqrt(N))
    else:
        se = float("nan")
    n_fin = int(np.count_nonzero(np.isfinite(batch.rho)))
    return ProbEstimate(value, se, n_fin, N - n_fin, contrib)


def prob_estimate(sys: ConstraintSystem, model: GaussianModel, lam: float, x, dirs: DirectionSet,
                  opts: RadialOptions = RadialOptions(), mode: str = "envelope",
                  threads: int | None = None) -> ProbEstimate:
    """Spherical-radial estimate of ``phi_lam(x)`` (``lam = 0``: nominal ``phi``).

    The standard error is the sample standard deviation over ``sqrt(N)`` for
    pseudo-random directions, ``0`` for the exact two-point rule when
    ``m = 1``, and ``nan`` for low-discrepancy sets (no i.i.d. error model).
    """
    if lam < 0:
        raise ValueError("lambda must be nonnegative")
    batch = radial_all(sys, model, lam, x, dirs, opts, mode, threads)
    return estimate_from_roots(batch, model, dirs)


def radial_min_formula(sys: ConstraintSystem, model: GaussianModel, lam: float, x, v,
                       opts: RadialOptions = RadialOptions()) -> float:
    """Radial function as a minimum over generator weights.

    For joint systems, the envelope of the supremum equals the supremum over
    simplex weights ``a`` of the envelopes of ``sum_i a_i p_i``. Each weight
    gives its own radial root ``rho^a``, and the root of the supremum is the
    minimum of these over the simplex. Vertices are evaluated first. For two
    components the minimum along the edge is found by golden-section search
    (``rho^a`` is quasiconvex in ``a``); with more components the best
    vertex seeds a Nelder-Mead search over softmax coordinates.
    """
    from scipy.optimize import minimize

    from .systems import _combination, joint_system

    if sys.family != "joint":
        raise ValueError("radial_min_formula applies to joint systems")
    v = np.asarray(v, dtype=float).reshape(1, -1)
    s = len(sys.pieces)
    n, m = sys.n, sys.m
    hx = sys.h_value(x)

    def rho_of(alpha):
        alpha = np.maximum(np.asarray(alpha, dtype=float), 0.0)
        alpha = alpha / alpha.sum()
        comb = _combination(sys, alpha)
        # Scalarized system: a single inequality with the same threshold.
        single = joint_system(n, m, [comb], [sys.h], name="scalarized")
        con = RegularizedConstraint(single, lam, "envelope")
        try:
            return float(radial_roots(con, model, x, v, opts).rho[0])
        except SlaterViolation:
            return 0.0

    vertex = [rho_of(np.eye(s)[i]) for i in range(s)]
    best = min(vertex)
    if s == 1:
        return best
    if s == 2:
        g = (np.sqrt(5.0) - 1.0) / 2.0
        a, b = 0.0, 1.0
        c, d = b - g * (b - a), a + g * (b - a)
        fc, fd = rho_of([c, 1 - c]), rho_of([d, 1 - d])
        for _ in range(80):
            if fc <= fd:
                b, d, fd = d, c, fc
                c = b - g * (b - a)
                fc = rho_of([c, 1 - c])
            else:
                a, c, fc = c, d, fd
                d = a + g * (b - a)
                fd = rho_of([d, 1 - d])
            if b - a < 1e-12:
                break
        return float(min(best, fc, fd))
    i0 = int(np.argmin(vertex))
    start = np.full(s, -2.0)
    start[i0] = 2.0

    def soft(y):
        e = np.exp(y - np.max(y))
        return e / e.sum()

    res = minimize(lambda y: rho_of(soft(y)), start, method="Nelder-Mead",
                   options={"xatol": 1e-10, "fatol": 1e-12, "maxiter": 4000})
    return float(min(best, res.fun))
