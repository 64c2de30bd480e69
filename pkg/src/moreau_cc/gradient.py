"""Exact gradient of the spherical-radial probability estimate.

Along a finite direction ``v`` the radial root ``rho(x, v)`` solves
``M(x, rho L v) = h(x)``, so by the implicit function theorem

    d rho / dx = -(grad_x M - grad h) / <grad_z M, L v>

and the direction's contribution ``chi_cdf(m, rho)`` has gradient

    G(x, v) = -chi_pdf(m, rho) (grad_x M - grad h) / <grad_z M, L v>.

Infinite directions contribute the zero vector. For a fixed direction set
the mean of ``G`` is the exact gradient of the sample-average estimate.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateDenominator
from .spherical import (
    DirectionSet,
    GaussianModel,
    ProbEstimate,
    RadialBatch,
    RadialOptions,
    chi_pdf,
    estimate_from_roots,
    radial_all,
    radial_roots,
)
from .systems import ConstraintSystem, RegularizedConstraint


@dataclass(frozen=True)
class GradientEstimate:
    """Mean gradient over a direction set with per-direction diagnostics."""

    gradient: np.ndarray
    per_direction_norm_max: float
    denominators_min: float
    n_finite: int
    n_infinite: int


def _gradients_from_roots(con: RegularizedConstraint, model: GaussianModel, x, batch: RadialBatch,
                          denom_floor: float = 1e-12):
    n = con.sys.n
    N = batch.rho.size
    G = np.zeros((N, n))
    fin = np.flatnonzero(batch.finite)
    denom_min = float("inf")
    if fin.size:
        rho = batch.rho[fin]
        D = batch.ray[fin]
        _, gx, gz = con.evaluate(x, rho[:, None] * D)
        _, grad_h = con.threshold(x)
        denom = np.einsum("ij,ij->i", gz, D)
        theta = chi_pdf(model.m, rho)
        theta = np.atleast_1d(theta)
        floor = denom_floor * (1.0 + theta)
        bad = denom <= floor
        if np.any(bad):
            idx = fin[bad]
            raise DegenerateDenominator(
                f"radial derivative <= floor at direction indices {idx[:10].tolist()}"
                f"{' ...' if idx.size > 10 else ''}; x is too close to violating the Slater condition")
        G[fin] = -(theta / denom)[:, None] * (gx - grad_h)
        denom_min = float(np.min(denom))
    return G, denom_min


def _summarize(G: np.ndarray, denom_min: float, batch: RadialBatch) -> GradientEstimate:
    norms = np.linalg.norm(G, axis=1) if G.size else np.zeros(0)
    n_fin = int(np.count_nonzero(batch.finite))
    return GradientEstimate(G.mean(axis=0), float(norms.max()) if norms.size else 0.0, denom_min,
                            n_fin, batch.rho.size - n_fin)


def _require_positive(lam: float):
    if not lam > 0:
        raise ValueError("the gradient formula needs lambda > 0")


def direction_gradient(sys: ConstraintSystem, model: GaussianModel, lam: float, x, v,
                       opts: RadialOptions = RadialOptions(), mode: str = "envelope") -> np.ndarray:
    """Per-direction gradient ``G_lam(x, v)`` (zero for infinite directions)."""
    _require_positive(lam)
    con = RegularizedConstraint(sys, lam, mode)
    v = np.asarray(v, dtype=float).reshape(1, -1)
    batch = radial_roots(con, model, x, v, opts)
    G, _ = _gradients_from_roots(con, model, x, batch)
    return G[0]


def prob_and_grad(sys: ConstraintSystem, model: GaussianModel, lam: float, x, dirs: DirectionSet,
                  opts: RadialOptions = RadialOptions(), mode: str = "envelope",
                  threads: int | None = None) -> tuple[ProbEstimate, GradientEstimate]:
    """Probability estimate and its exact gradient from a single radial solve."""
    _require_positive(lam)
    batch = radial_all(sys, model, lam, x, dirs, opts, mode, threads)
    con = RegularizedConstraint(sys, lam, mode)
    G, denom_min = _gradients_from_roots(con, model, x, batch)
    return estimate_from_roots(batch, model, dirs), _summarize(G, denom_min, batch)


def grad_estimate(sys: ConstraintSystem, model: GaussianModel, lam: float, x, dirs: DirectionSet,
                  opts: RadialOptions = RadialOptions(), mode: str = "envelope",
                  threads: int | None = None) -> GradientEstimate:
    """Mean of ``G_lam(x, v)`` over ``dirs``: the gradient of the sample-average ``phi_lam``."""
    return prob_and_grad(sys, model, lam, x, dirs, opts, mode, threads)[1]


@dataclass(frozen=True)
class SweepTable:
    """Gradients along a decreasing ``lambda`` schedule and their successive gaps."""

    lambdas: tuple
    gradients: np.ndarray
    gaps: np.ndarray

    def rows(self):
        for k, lam in enumerate(self.lambdas):
            gap = float("nan") if k == 0 else float(self.gaps[k - 1])
            yield lam, self.gradients[k], gap


def consistency_sweep(sys: ConstraintSystem, model: GaussianModel, x, lambda_schedule, dirs: DirectionSet,
                      opts: RadialOptions = RadialOptions(), mode: str = "envelope") -> SweepTable:
    """Gradient estimates for each ``lambda`` and the norms of consecutive differences."""
    lams = tuple(float(v) for v in lambda_schedule)
    if any(b >= a for a, b in zip(lams, lams[1:])) or any(v <= 0 for v in lams):
        raise ValueError("lambda schedule must be positive and strictly decreasing")
    grads = np.array([grad_estimate(sys, model, lam, x, dirs, opts, mode).gradient for lam in lams])
    gaps = np.linalg.norm(np.diff(grads, axis=0), axis=1)
    return SweepTable(lams, grads, gaps)
