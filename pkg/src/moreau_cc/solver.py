"""Regularized chance-constrained problems and lambda-continuation.

For a fixed direction set the smoothed problem

    minimize  M_lam psi(x)   subject to   phi_lam(x) >= p

is deterministic and smooth, so a quadratic penalty with a BFGS inner
solver applies directly. Continuation along a decreasing ``lam`` schedule
warm-starts each stage from the previous minimizer.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .envelope import ConvexFunction, envelope_batch, termwise_batch
from .errors import DegenerateDenominator, InfeasibleStart, LineSearchFailure, MaxPenaltyReached, SlaterViolation
from .gradient import prob_and_grad
from .spherical import DirectionSet, GaussianModel, RadialOptions, prob_estimate, sample_directions
from .systems import SMOOTHING_MODES, ConstraintSystem, RegularizedConstraint

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ProblemSpec:
    """Objective, constraint system, Gaussian model, level ``p`` and start ``x0``.

    ``objective_smoothing`` chooses how ``psi`` is smoothed: ``envelope`` uses
    its Moreau envelope; ``termwise`` sums the envelopes of
    ``objective_terms`` (each a convex function on the decision space).
    ``constraint_smoothing`` is passed to :class:`RegularizedConstraint`.
    """

    objective: ConvexFunction
    system: ConstraintSystem
    model: GaussianModel
    p: float
    x0: np.ndarray
    bounds: tuple | None = None
    objective_terms: tuple | None = None
    objective_smoothing: str = "envelope"
    constraint_smoothing: str = "envelope"
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "x0", np.asarray(self.x0, dtype=float).reshape(self.system.n))
        if not 0.0 <= self.p < 1.0:
            raise ValueError("p must lie in [0, 1)")
        if self.objective.dim != self.system.n:
            raise ValueError("objective dimension differs from the decision dimension")
        if self.model.m != self.system.m:
            raise ValueError("Gaussian model dimension differs from the noise dimension")
        if self.objective_smoothing not in SMOOTHING_MODES or self.constraint_smoothing not in SMOOTHING_MODES:
            raise ValueError(f"smoothing modes must be in {SMOOTHING_MODES}")
        if self.objective_smoothing == "termwise" and not self.objective_terms:
            raise ValueError("termwise objective smoothing needs objective_terms")
        if self.bounds is not None:
            lo, hi = (np.asarray(b, dtype=float).reshape(self.system.n) for b in self.bounds)
            if np.any(lo > hi):
                raise ValueError("lower bounds exceed upper bounds")
            object.__setattr__(self, "bounds", (lo, hi))

    def smoothed_objective(self, lam: float, x) -> tuple[float, np.ndarray]:
        """Value and gradient of the smoothed objective (``lam = 0``: ``psi`` and a subgradient)."""
        X = np.asarray(x, dtype=float).reshape(1, -1)
        if self.objective_smoothing == "termwise" and lam > 0:
            val, grad = 0.0, np.zeros(X.shape[1])
            for term in self.objective_terms:
                v, _, g = envelope_batch(term, lam, X)
                val += float(v[0])
                grad += g[0]
            return val, grad
        v, _, g = envelope_batch(self.objective, lam, X)
        return float(v[0]), g[0]

    def slater_gap(self, x, lam: float = 0.0) -> float:
        """``h(x) - M(x, 0)``; positive iff the Slater condition holds at ``x``."""
        con = RegularizedConstraint(self.system, lam, self.constraint_smoothing)
        hx, _ = con.threshold(x)
        return hx - float(con.value(x, np.zeros((1, self.system.m)))[0])


@dataclass(frozen=True)
class SolverOptions:
    """Penalty, stopping and line-search settings."""

    penalty_start: float = 10.0
    penalty_factor: float = 10.0
    penalty_max: float = 1e7
    feas_tol: float = 1e-6
    gtol: float = 1e-6
    max_inner: int = 500
    armijo: float = 1e-4
    max_backtracks: int = 60
    stall_tol: float = 1e-13
    raise_on_max_penalty: bool = False
    multistart: int = 0
    multistart_scale: float = 0.1
    multistart_seed: int = 0
    radial: RadialOptions = field(default_factory=RadialOptions)
    threads: int | None = None


@dataclass(frozen=True)
class SolveResult:
    """Outcome of one regularized solve."""

    x: np.ndarray
    value: float
    phi: float
    status: str
    penalty: float
    iterations: int
    wall_time: float


@dataclass(frozen=True)
class SolveRecord:
    """One row of a continuation trace."""

    lam: float
    value: float
    x: np.ndarray
    phi: float
    penalty: float
    iterations: int
    wall_time: float
    status: str


@dataclass(frozen=True)
class NominalValue:
    """Unsmoothed objective and probability at a point, by two independent routes."""

    psi_value: float
    phi_value: float
    phi_std_error: float
    phi_mc: float
    phi_mc_std_error: float
    feasible: bool


@dataclass(frozen=True)
class SolveTrace:
    """Per-lambda records plus the nominal evaluation at the final iterate."""

    records: tuple
    nominal: NominalValue | None
    aborted: str | None = None


class _PenaltyObjective:
    """``F_c(x) = M_lam psi(x) + c max(0, p - phi_lam(x))^2`` with caching of the last point."""

    def __init__(self, spec: ProblemSpec, lam: float, dirs: DirectionSet, opts: SolverOptions):
        self.spec, self.lam, self.dirs, self.opts = spec, lam, dirs, opts
        self._cache: dict[bytes, tuple] = {}

    def parts(self, x):
        key = np.asarray(x, dtype=float).tobytes()
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        spec = self.spec
        fval, fgrad = spec.smoothed_objective(self.lam, x)
        try:
            pe, ge = prob_and_grad(spec.system, spec.model, self.lam, x, self.dirs, self.opts.radial,
                                   spec.constraint_smoothing, self.opts.threads)
            out = (fval, fgrad, pe.value, ge.gradient)
        except (SlaterViolation, DegenerateDenominator):
            out = (fval, fgrad, -np.inf, None)
        if len(self._cache) > 64:
            self._cache.clear()
        self._cache[key] = out
        return out

    def __call__(self, x, c: float):
        fval, fgrad, phi, gphi = self.parts(x)
        if gphi is None:
            return np.inf, None
        short = max(0.0, self.spec.p - phi)
        return fval + c * short * short, fgrad - 2.0 * c * short * gphi


def _project(spec: ProblemSpec, x):
    if spec.bounds is None:
        return x
    return np.clip(x, spec.bounds[0], spec.bounds[1])


def _proj_grad_norm(spec: ProblemSpec, x, g) -> float:
    if spec.bounds is None:
        return float(np.linalg.norm(g))
    return float(np.linalg.norm(x - _project(spec, x - g)))


def _bfgs(F: _PenaltyObjective, x, c: float, opts: SolverOptions):
    spec = F.spec
    f, g = F(x, c)
    H = np.eye(x.size)
    scaled = False
    stalled = 0
    its = 0
    for its in range(1, opts.max_inner + 1):
        if _proj_grad_norm(spec, x, g) <= opts.gtol * (1.0 + abs(f)):
            return x, f, its - 1
        d = -H @ g
        if g @ d >= 0:
            H = np.eye(x.size)
            d = -g
        step = 1.0
        accepted = False
        for attempt in range(2):
            step = 1.0
            for _ in range(opts.max_backtracks):
                xn = _project(spec, x + step * d)
                fn, gn = F(xn, c)
                if np.isfinite(fn) and fn <= f + opts.armijo * (g @ (xn - x)):
                    accepted = True
                    break
                step *= 0.5
            if accepted:
                break
            # Retry once along steepest descent with a fresh metric.
            H = np.eye(x.size)
            d = -g
        if not accepted:
            if _proj_grad_norm(spec, x, g) <= 1e3 * opts.gtol * (1.0 + abs(f)):
                # Objective differences are at rounding level: accept as stationary.
                return x, f, its
            raise LineSearchFailure(f"no sufficient decrease at x={x.tolist()} (|grad|={np.linalg.norm(g):.3e})")
        # Relative decrease at rounding level twice in a row: the penalty
        # curvature has pushed the reachable gradient norm above gtol.
        stalled = stalled + 1 if f - fn <= opts.stall_tol * (1.0 + abs(f)) else 0
        if stalled >= 2:
            return xn, fn, its
        s = xn - x
        y = gn - g
        sy = float(s @ y)
        if sy > 1e-12 * np.linalg.norm(s) * np.linalg.norm(y):
            if not scaled:
                H = np.eye(x.size) * (sy / float(y @ y))
                scaled = True
            rho = 1.0 / sy
            V = np.eye(x.size) - rho * np.outer(s, y)
            H = V @ H @ V.T + rho * np.outer(s, s)
        x, f, g = xn, fn, gn
    return x, f, its


def solve_regularized(spec: ProblemSpec, lam: float, dirs: DirectionSet, opts: SolverOptions = SolverOptions(),
                      x_start=None) -> SolveResult:
    """Approximate KKT point of the smoothed sample-average problem.

    Quadratic-penalty outer loop (weight multiplied by ``penalty_factor`` per
    round from ``penalty_start`` up to ``penalty_max``) around BFGS with
    Armijo backtracking. Stops once the inner gradient is below
    ``gtol (1 + |F|)`` and the constraint violation ``max(0, p - phi)`` is at
    most ``feas_tol``. Hitting the penalty ceiling returns the last iterate
    with status ``max-penalty`` (or raises when ``raise_on_max_penalty``).
    """
    if lam <= 0:
        raise ValueError("lambda must be positive")
    x = np.asarray(spec.x0 if x_start is None else x_start, dtype=float).reshape(spec.system.n).copy()
    if spec.slater_gap(x, lam) <= 0:
        raise InfeasibleStart(f"Slater condition fails at the start point {x.tolist()}")
    if opts.multistart > 0:
        return _multistart(spec, lam, dirs, opts, x)
    t0 = time.perf_counter()
    F = _PenaltyObjective(spec, lam, dirs, opts)
    c = opts.penalty_start
    total = 0
    status = "converged"
    while True:
        x, _, its = _bfgs(F, x, c, opts)
        total += its
        fval, _, phi, _ = F.parts(x)
        log.debug("lam=%g c=%.0e iterations=%d value=%.9g phi=%.9g x=%s", lam, c, its, fval, phi, x)
        if spec.p - phi <= opts.feas_tol:
            break
        if c >= opts.penalty_max:
            status = "max-penalty"
            if opts.raise_on_max_penalty:
                raise MaxPenaltyReached(f"violation {spec.p - phi:.3e} at penalty {c:.1e}")
            break
        c = min(c * opts.penalty_factor, opts.penalty_max)
    fval, _, phi, _ = F.parts(x)
    return SolveResult(x, fval, phi, status, c, total, time.perf_counter() - t0)


def _multistart(spec, lam, dirs, opts, x):
    rng = np.random.default_rng(opts.multistart_seed)
    base = replace(opts, multistart=0)
    starts = [x] + [x + opts.multistart_scale * rng.standard_normal(x.size) for _ in range(opts.multistart)]
    best = None
    for s in starts:
        if spec.slater_gap(s, lam) <= 0:
            continue
        try:
            res = solve_regularized(spec, lam, dirs, base, s)
        except LineSearchFailure:
            continue
        feasible = spec.p - res.phi <= opts.feas_tol
        key = (not feasible, res.value if feasible else spec.p - res.phi)
        if best is None or key < best[0]:
            best = (key, res)
    if best is None:
        raise LineSearchFailure("all multistart runs failed")
    return best[1]


def nominal_value(spec: ProblemSpec, x, n_mc: int = 10**6, seed: int = 0, dirs: DirectionSet | None = None,
                  threads: int | None = None, feas_tol: float = 1e-6) -> NominalValue:
    """``psi(x)`` exactly and ``phi(x)`` by spherical-radial and by direct Monte Carlo.

    ``feasible`` holds when the spherical-radial value is at least
    ``p - feas_tol`` or the Monte Carlo value is within three standard errors
    of ``p`` or above; ``p = 0`` is always feasible.
    """
    from .oracle import mc_probability

    x = np.asarray(x, dtype=float).reshape(spec.system.n)
    psi = float(spec.objective.value(x[None, :])[0])
    if dirs is None:
        dirs = sample_directions(spec.system.m, 8192, seed, "low-discrepancy")
    try:
        pe = prob_estimate(spec.system, spec.model, 0.0, x, dirs, threads=threads)
        phi, se = pe.value, pe.std_error
    except SlaterViolation:
        phi, se = float("nan"), float("nan")
    mc = mc_probability(spec.system, spec.model, 0.0, x, n_mc, seed)
    feasible = spec.p == 0.0 or phi >= spec.p - feas_tol or mc.value + 3.0 * mc.std_error >= spec.p
    return NominalValue(psi, phi, se, mc.value, mc.std_error, bool(feasible))


def continuation(spec: ProblemSpec, lambda_schedule, dirs: DirectionSet, opts: SolverOptions = SolverOptions(),
                 n_mc: int = 10**6, mc_seed: int = 0) -> SolveTrace:
    """Solve along a strictly decreasing ``lam`` schedule with warm starts.

    A stage that raises ends the run; the trace then holds the finished
    stages and the error message in ``aborted``.
    """
    lams = [float(v) for v in lambda_schedule]
    if any(v <= 0 for v in lams) or any(b >= a for a, b in zip(lams, lams[1:])):
        raise ValueError("lambda schedule must be positive and strictly decreasing")
    records = []
    x = spec.x0.copy()
    for lam in lams:
        try:
            res = solve_regularized(spec, lam, dirs, opts, x)
        except Exception as exc:  # noqa: BLE001 - the partial trace is the product here
            return SolveTrace(tuple(records), None, f"lambda={lam:g}: {type(exc).__name__}: {exc}")
        records.append(SolveRecord(lam, res.value, res.x.copy(), res.phi, res.penalty, res.iterations,
                                   res.wall_time, res.status))
        x = res.x
    nominal = nominal_value(spec, x, n_mc, mc_seed, dirs, opts.threads, opts.feas_tol)
    return SolveTrace(tuple(records), nominal)
