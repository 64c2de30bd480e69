"""Command-line front end: ``moreau-cc <eval|grad|solve|check> --config FILE``.

Every command reads a JSON config (see ``docs/config.md``), writes CSV
with ``%.9g`` numbers to ``--out`` (or the config's output path, or
stdout) and exits nonzero on failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import itertools
import math
import sys
import time
from typing import Sequence

import numpy as np

from . import __version__
from .config import RunConfig, build_problem, load_config
from .errors import MoreauCCError
from .gradient import prob_and_grad
from .oracle import (
    analytic_example1,
    binomial_std_error,
    fd_gradient,
    mc_probability,
    nonconvex_levelset_witness,
)
from .solver import ProblemSpec, continuation
from .spherical import DirectionSet, prob_estimate, sample_directions
from .systems import RegularizedConstraint, envelope_of_sup, sup_of_envelopes, sup_value

FLOAT_FMT = "%.9g"


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return FLOAT_FMT % float(v)
    return str(v)


def write_csv(header: Sequence[str], rows, path: str | None) -> str:
    """Write rows under ``header``; returns the CSV text."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    text = buf.getvalue()
    if path:
        with open(path, "w", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return text


def _x_cols(n: int, prefix: str = "x") -> list:
    return [f"{prefix}{i + 1}" for i in range(n)]


def _directions(cfg: RunConfig, spec: ProblemSpec) -> DirectionSet:
    return sample_directions(spec.system.m, cfg.directions, cfg.seed, cfg.mode)


def _points(section: dict, spec: ProblemSpec) -> list:
    if section.get("points") is not None:
        return [np.asarray(p, dtype=float) for p in section["points"]]
    grid = section.get("grid")
    if grid is not None:
        axes = [np.linspace(lo, hi, num) for lo, hi, num in zip(grid["lo"], grid["hi"], grid["num"])]
        return [np.array(p) for p in itertools.product(*axes)]
    return [spec.x0.copy()]


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

EVAL_COLUMNS = ("lambda", "phi_lambda", "std_error")


def cmd_eval(cfg: RunConfig) -> int:
    """Rows ``x..., lambda, phi_lambda, std_error`` for every lambda and point.

    Points where the Slater condition fails get ``nan`` probabilities.
    """
    spec = build_problem(cfg.problem)
    dirs = _directions(cfg, spec)
    pts = _points(cfg.eval, spec)
    rows = []
    for lam in cfg.eval["lambdas"]:
        for x in pts:
            try:
                pe = prob_estimate(spec.system, spec.model, lam, x, dirs, mode=spec.constraint_smoothing,
                                   threads=cfg.sampling["threads"])
                rows.append([*x, lam, pe.value, pe.std_error])
            except MoreauCCError:
                rows.append([*x, lam, math.nan, math.nan])
    write_csv(_x_cols(spec.system.n) + list(EVAL_COLUMNS), rows, cfg.output_path)
    return 0


def cmd_grad(cfg: RunConfig) -> int:
    """Rows ``x..., lambda, g..., fd..., rel_error`` comparing the exact SAA gradient with differences."""
    spec = build_problem(cfg.problem)
    dirs = _directions(cfg, spec)
    n = spec.system.n
    mode = spec.constraint_smoothing
    rows = []
    for lam in cfg.grad["lambdas"]:
        for x in _points(cfg.grad, spec):
            try:
                _, ge = prob_and_grad(spec.system, spec.model, lam, x, dirs, mode=mode,
                                      threads=cfg.sampling["threads"])
                fd = fd_gradient(lambda y: prob_estimate(spec.system, spec.model, lam, y, dirs, mode=mode).value,
                                 x, cfg.grad["fd_step"])
                g = ge.gradient
                rel = float(np.linalg.norm(g - fd) / max(np.linalg.norm(fd), np.linalg.norm(g), 1e-300))
            except MoreauCCError:
                g = fd = np.full(n, math.nan)
                rel = math.nan
            rows.append([*x, lam, *g, *fd, rel])
    header = _x_cols(n) + ["lambda"] + _x_cols(n, "g") + _x_cols(n, "fd") + ["rel_error"]
    write_csv(header, rows, cfg.output_path)
    return 0


def solve_header(n: int) -> list:
    return ["lambda", "value"] + _x_cols(n) + ["phi_lambda", "phi_mc", "penalty", "iterations", "status"]


def cmd_solve(cfg: RunConfig) -> int:
    """Continuation trace; the last row (``lambda = 0``) is the nominal evaluation.

    Wall times go to stderr so that reruns produce identical CSV files.
    """
    spec = build_problem(cfg.problem)
    dirs = _directions(cfg, spec)
    opts = cfg.solver_options()
    t0 = time.perf_counter()
    trace = continuation(spec, cfg.lambda_schedule, dirs, opts, n_mc=cfg.solver["mc_samples"],
                         mc_seed=cfg.solver["mc_seed"])
    rows = [[r.lam, r.value, *r.x, r.phi, math.nan, r.penalty, r.iterations, r.status] for r in trace.records]
    for r in trace.records:
        print(f"lambda={r.lam:g}: {r.wall_time:.2f}s", file=sys.stderr)
    if trace.nominal is not None:
        nv = trace.nominal
        x_final = trace.records[-1].x
        status = "nominal-feasible" if nv.feasible else "nominal-infeasible"
        rows.append([0.0, nv.psi_value, *x_final, nv.phi_value, nv.phi_mc, math.nan, 0, status])
    write_csv(solve_header(spec.system.n), rows, cfg.output_path)
    print(f"total: {time.perf_counter() - t0:.2f}s", file=sys.stderr)
    if trace.aborted:
        print(f"error: continuation aborted at {trace.aborted}", file=sys.stderr)
        return 1
    return 0


# ---------------------------------------------------------------------------
# Check suite
# ---------------------------------------------------------------------------


def _slater_points(spec: ProblemSpec, rng: np.random.Generator, k: int, radius: float = 1.0) -> list:
    pts = [spec.x0.copy()]
    tries = 0
    while len(pts) < k and tries < 50 * k:
        tries += 1
        y = spec.x0 + radius * rng.standard_normal(spec.system.n)
        if spec.slater_gap(y, 0.0) > 1e-3:
            pts.append(y)
    return pts


def run_checks(cfg: RunConfig) -> list:
    """Oracle and invariant checks for the configured problem: ``[(name, passed, detail)]``."""
    spec = build_problem(cfg.problem)
    sys_ = spec.system
    mode = spec.constraint_smoothing
    results = []
    gap = spec.slater_gap(spec.x0, 0.0)
    if not gap > 0:
        hx = sys_.h_value(spec.x0)
        results.append(("slater-at-x0", False,
                        f"Slater condition violated at x0={spec.x0.tolist()}: S(x0, 0) = {hx - gap:.6g} "
                        f">= h(x0) = {hx:.6g}; the constraint must hold strictly at the noise mean"))
        return results
    results.append(("slater-at-x0", True, f"margin {gap:.6g}"))

    rng = np.random.default_rng(cfg.seed)
    dirs = _directions(cfg, spec)
    pr_dirs = sample_directions(sys_.m, cfg.directions, cfg.seed, "pseudo-random")
    n_mc = cfg.solver["mc_samples"]
    pts = _slater_points(spec, rng, 3)

    worst = 0.0
    for i, x in enumerate(pts):
        for lam in (0.0, 0.1):
            pe = prob_estimate(sys_, spec.model, lam, x, pr_dirs, mode=mode)
            mc = mc_probability(sys_, spec.model, lam, x, n_mc, cfg.seed + 7 * i, mode)
            se = math.hypot(pe.std_error if np.isfinite(pe.std_error) else 0.0, binomial_std_error(pe.value, mc.n))
            worst = max(worst, abs(pe.value - mc.value) / max(se, 1e-12))
    results.append(("spherical-vs-monte-carlo", worst <= 4.0, f"max deviation {worst:.2f} combined std errors"))

    lams = (0.3, 0.1, 0.03, 0.01, 0.0)
    vals = [prob_estimate(sys_, spec.model, lam, spec.x0, dirs, mode=mode).value for lam in lams]
    drops = [a - b for a, b in zip(vals, vals[1:])]
    results.append(("monotone-in-lambda", min(drops) >= -1e-12,
                    "phi at lambda " + ", ".join(f"{lam:g}: {v:.9g}" for lam, v in zip(lams, vals))))

    Z = rng.standard_normal((200, sys_.m)) * 2.0
    con = RegularizedConstraint(sys_, 0.1, mode)
    excess = float(np.max(con.value(spec.x0, Z) - np.asarray(sup_value(sys_, spec.x0, Z))))
    results.append(("envelope-below-sup", excess <= 1e-9, f"max(M - S) = {excess:.3g}"))

    grad_dirs = dirs if dirs.N <= 4096 else sample_directions(sys_.m, 4096, cfg.seed, cfg.mode)
    rel = 0.0
    for x in pts:
        try:
            _, ge = prob_and_grad(sys_, spec.model, 0.1, x, grad_dirs, mode=mode)
        except MoreauCCError:
            continue
        fd = fd_gradient(lambda y: prob_estimate(sys_, spec.model, 0.1, y, grad_dirs, mode=mode).value, x)
        rel = max(rel, float(np.linalg.norm(ge.gradient - fd) / max(np.linalg.norm(fd), 1e-8)))
    results.append(("gradient-vs-finite-differences", rel <= 1e-4, f"max relative error {rel:.3g}"))

    if sys_.family != "semidefinite" and len(sys_.pieces) <= 8:
        diff = 0.0
        for _ in range(5):
            z = rng.standard_normal(sys_.m)
            env = envelope_of_sup(sys_, 0.1, spec.x0, z).value
            diff = max(diff, abs(env - sup_of_envelopes(sys_, 0.1, spec.x0, z)))
        results.append(("envelope-of-sup-vs-sup-of-envelopes", diff <= 1e-6, f"max difference {diff:.3g}"))

    name = cfg.problem.get("registry")
    if name == "example_6_1" and mode == "envelope":
        xs = np.linspace(-3, 3, 25)
        two = sample_directions(1, 2)
        err = max(abs(prob_estimate(sys_, spec.model, lam, [x], two).value - analytic_example1(x, lam))
                  for lam in (0.0, 0.1) for x in xs)
        results.append(("closed-form-example-6-1", err <= 1e-9, f"max error {err:.3g}"))
    if name == "example_5_2":
        try:
            w = nonconvex_levelset_witness(0.5)
            results.append(("levelset-nonconvexity-witness", True,
                            f"p={w.p:g}: phi={w.phi_a:.4f}, {w.phi_b:.4f} at the ends, {w.phi_mid:.4f} midway"))
        except MoreauCCError as exc:
            results.append(("levelset-nonconvexity-witness", False, str(exc)))
    return results


def cmd_check(cfg: RunConfig) -> int:
    results = run_checks(cfg)
    lines = [f"{'PASS' if ok else 'FAIL'} {name}: {detail}" for name, ok, detail in results]
    ok = all(r[1] for r in results)
    lines.append(f"{sum(r[1] for r in results)}/{len(results)} checks passed")
    text = "\n".join(lines) + "\n"
    if cfg.output_path:
        with open(cfg.output_path, "w") as fh:
            fh.write(text)
    sys.stdout.write(text)
    return 0 if ok else 1


COMMANDS = {"eval": cmd_eval, "grad": cmd_grad, "solve": cmd_solve, "check": cmd_check}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="moreau-cc", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--config", required=True, help="JSON run configuration")
    ap.add_argument("--out", help="output file (default: config output.path, else stdout)")
    ap.add_argument("--seed", type=int, help="direction seed (overrides sampling.seed)")
    ap.add_argument("--directions", type=int, help="number of directions (overrides sampling.directions)")
    ap.add_argument("--threads", type=int, help="worker threads (overrides sampling.threads and MOREAU_CC_THREADS)")
    return ap


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config).with_overrides(args.seed, args.directions, args.threads, args.out)
        return COMMANDS[args.command](cfg)
    except MoreauCCError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2 if isinstance(exc, ValueError) else 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
