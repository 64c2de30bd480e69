"""JSON run configuration: parsing, validation, serialization and problem building.

A config is one JSON object with the sections ``problem``, ``sampling``,
``solver``, ``eval``, ``grad`` and ``output``. Only ``problem`` is required.
``parse_config`` fills defaults and validates; ``to_dict`` returns the
normalized document, so ``parse_config(to_dict(parse_config(d)))`` equals
``parse_config(d)``.

Problems either name a registry entry (``{"registry": "example_6_4"}``,
optionally overriding ``p``, ``x0``, ``bounds`` and the smoothing modes) or
spell out a system and objective with the expression form described in
``docs/config.md``.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .catalog import SYSTEM_NAMES, get_problem
from .envelope import (
    Affine,
    BallDistance,
    Constant,
    ConvexFunction,
    HingeQuadratic,
    PointwiseMax,
    Quadratic,
    absolute,
    add,
    lift,
    scale,
)
from .errors import ConfigError
from .solver import ProblemSpec, SolverOptions
from .spherical import MODES, GaussianModel, RadialOptions
from .systems import FAMILIES, SMOOTHING_MODES, joint_system, probust_system, semidefinite_system

SECTIONS = ("problem", "sampling", "solver", "eval", "grad", "output")

_SAMPLING_DEFAULTS = {"directions": 4096, "seed": 0, "mode": "low-discrepancy", "threads": None}
_SOLVER_DEFAULTS = {
    "lambda_schedule": [1.0, 0.1, 0.01, 0.001],
    "penalty_start": 10.0,
    "penalty_factor": 10.0,
    "penalty_max": 1e7,
    "feas_tol": 1e-6,
    "gtol": 1e-6,
    "max_inner": 500,
    "multistart": 0,
    "mc_samples": 10**6,
    "mc_seed": 0,
}
_EVAL_DEFAULTS = {"lambdas": [0.0], "points": None, "grid": None}
_GRAD_DEFAULTS = {"lambdas": [0.1, 0.01], "points": None, "fd_step": None}
_OUTPUT_DEFAULTS = {"path": None}
_PROBLEM_OVERRIDES = ("p", "x0", "bounds", "objective_smoothing", "constraint_smoothing")


@dataclass(frozen=True)
class RunConfig:
    """Normalized configuration; sections are plain JSON-compatible dicts."""

    problem: dict
    sampling: dict = field(default_factory=lambda: dict(_SAMPLING_DEFAULTS))
    solver: dict = field(default_factory=lambda: dict(_SOLVER_DEFAULTS))
    eval: dict = field(default_factory=lambda: dict(_EVAL_DEFAULTS))
    grad: dict = field(default_factory=lambda: dict(_GRAD_DEFAULTS))
    output: dict = field(default_factory=lambda: dict(_OUTPUT_DEFAULTS))

    @property
    def lambda_schedule(self) -> list:
        return list(self.solver["lambda_schedule"])

    @property
    def directions(self) -> int:
        return int(self.sampling["directions"])

    @property
    def seed(self) -> int:
        return int(self.sampling["seed"])

    @property
    def mode(self) -> str:
        return self.sampling["mode"]

    @property
    def output_path(self) -> str | None:
        return self.output["path"]

    def solver_options(self) -> SolverOptions:
        s = self.solver
        return SolverOptions(
            penalty_start=float(s["penalty_start"]),
            penalty_factor=float(s["penalty_factor"]),
            penalty_max=float(s["penalty_max"]),
            feas_tol=float(s["feas_tol"]),
            gtol=float(s["gtol"]),
            max_inner=int(s["max_inner"]),
            multistart=int(s["multistart"]),
            radial=RadialOptions(),
            threads=self.sampling["threads"],
        )

    def with_overrides(self, seed=None, directions=None, threads=None, out=None) -> "RunConfig":
        d = to_dict(self)
        if seed is not None:
            d["sampling"]["seed"] = int(seed)
        if directions is not None:
            d["sampling"]["directions"] = int(directions)
        if threads is not None:
            d["sampling"]["threads"] = int(threads)
        if out is not None:
            d["output"]["path"] = str(out)
        return parse_config(d)


def _section(raw: dict, name: str, defaults: dict) -> dict:
    got = raw.get(name) or {}
    if not isinstance(got, dict):
        raise ConfigError(f"section {name!r} must be an object")
    unknown = set(got) - set(defaults)
    if unknown:
        raise ConfigError(f"unknown keys in {name!r}: {sorted(unknown)}")
    out = copy.deepcopy(defaults)
    out.update(copy.deepcopy(got))
    return out


def _float_list(v, what: str) -> list:
    try:
        out = [float(t) for t in v]
    except (TypeError, ValueError):
        raise ConfigError(f"{what} must be a list of numbers") from None
    if not all(np.isfinite(out)):
        raise ConfigError(f"{what} must be finite")
    return out


def _check_schedule(lams: list, what: str, allow_zero: bool = False):
    lo_ok = (lambda v: v >= 0) if allow_zero else (lambda v: v > 0)
    if not all(lo_ok(v) for v in lams):
        raise ConfigError(f"{what} must be {'nonnegative' if allow_zero else 'positive'}")


def parse_config(raw) -> RunConfig:
    """Validate a config given as a dict, a JSON string or a path."""
    if isinstance(raw, (str, Path)):
        text = str(raw)
        if isinstance(raw, Path) or not text.lstrip().startswith("{"):
            return load_config(raw)
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    unknown = set(raw) - set(SECTIONS)
    if unknown:
        raise ConfigError(f"unknown sections: {sorted(unknown)}")
    if "problem" not in raw or not isinstance(raw["problem"], dict):
        raise ConfigError("missing 'problem' section")
    problem = copy.deepcopy(raw["problem"])
    sampling = _section(raw, "sampling", _SAMPLING_DEFAULTS)
    solver = _section(raw, "solver", _SOLVER_DEFAULTS)
    ev = _section(raw, "eval", _EVAL_DEFAULTS)
    gr = _section(raw, "grad", _GRAD_DEFAULTS)
    output = _section(raw, "output", _OUTPUT_DEFAULTS)

    if not isinstance(sampling["directions"], int) or sampling["directions"] < 1:
        raise ConfigError("sampling.directions must be an integer >= 1")
    if not isinstance(sampling["seed"], int):
        raise ConfigError("sampling.seed must be an integer")
    if sampling["mode"] not in MODES:
        raise ConfigError(f"sampling.mode must be one of {MODES}")
    if sampling["threads"] is not None and (not isinstance(sampling["threads"], int) or sampling["threads"] < 1):
        raise ConfigError("sampling.threads must be a positive integer or null")

    sched = _float_list(solver["lambda_schedule"], "solver.lambda_schedule")
    _check_schedule(sched, "solver.lambda_schedule")
    if any(b >= a for a, b in zip(sched, sched[1:])):
        raise ConfigError("solver.lambda_schedule must be strictly decreasing")
    solver["lambda_schedule"] = sched
    for key in ("penalty_start", "penalty_factor", "penalty_max", "feas_tol", "gtol"):
        try:
            solver[key] = float(solver[key])
        except (TypeError, ValueError):
            raise ConfigError(f"solver.{key} must be a number") from None
        if not solver[key] > 0:
            raise ConfigError(f"solver.{key} must be positive")
    for key in ("max_inner", "multistart", "mc_samples", "mc_seed"):
        if not isinstance(solver[key], int) or solver[key] < 0:
            raise ConfigError(f"solver.{key} must be a nonnegative integer")

    ev["lambdas"] = _float_list(ev["lambdas"], "eval.lambdas")
    _check_schedule(ev["lambdas"], "eval.lambdas", allow_zero=True)
    gr["lambdas"] = _float_list(gr["lambdas"], "grad.lambdas")
    _check_schedule(gr["lambdas"], "grad.lambdas")
    if gr["fd_step"] is not None:
        gr["fd_step"] = float(gr["fd_step"])
    if ev["grid"] is not None:
        g = ev["grid"]
        if not isinstance(g, dict) or set(g) != {"lo", "hi", "num"}:
            raise ConfigError("eval.grid needs exactly 'lo', 'hi' and 'num'")
        ev["grid"] = {"lo": _float_list(g["lo"], "eval.grid.lo"), "hi": _float_list(g["hi"], "eval.grid.hi"),
                      "num": [int(k) for k in g["num"]]}
    for sec, name in ((ev, "eval"), (gr, "grad")):
        if sec["points"] is not None:
            sec["points"] = [_float_list(pt, f"{name}.points") for pt in sec["points"]]

    cfg = RunConfig(problem, sampling, solver, ev, gr, output)
    spec = build_problem(cfg.problem)  # validates the problem section
    n = spec.system.n
    for sec, name in ((ev, "eval"), (gr, "grad")):
        for pt in sec["points"] or []:
            if len(pt) != n:
                raise ConfigError(f"{name}.points entries must have length {n}")
    if ev["grid"] is not None and not (len(ev["grid"]["lo"]) == len(ev["grid"]["hi"]) == len(ev["grid"]["num"]) == n):
        raise ConfigError(f"eval.grid entries must have length {n}")
    return cfg


def to_dict(cfg: RunConfig) -> dict:
    return {name: copy.deepcopy(getattr(cfg, name)) for name in SECTIONS}


def dumps(cfg: RunConfig) -> str:
    return json.dumps(to_dict(cfg), indent=2, sort_keys=True)


def load_config(path) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text)


# ---------------------------------------------------------------------------
# Expressions
# ---------------------------------------------------------------------------


def _arr(v, what: str) -> np.ndarray:
    try:
        a = np.asarray(v, dtype=float)
    except (TypeError, ValueError):
        raise ConfigError(f"{what} must be numeric") from None
    if not np.all(np.isfinite(a)):
        raise ConfigError(f"{what} must be finite")
    return a


def build_expression(expr, dim: int) -> ConvexFunction:
    """Build a convex function on ``R^dim`` from the restricted expression form.

    Forms (one key per object): ``affine {a, b}``, ``constant c``,
    ``quadratic {Q, a, c}``, ``norm {indices, center, radius, scale}``,
    ``abs {index, center}``, ``hinge {index, center, pos_quad, pos_lin,
    neg_quad, neg_lin}``, ``sum [...]``, ``max [...]``, ``scale {coef, of}``.
    """
    if isinstance(expr, (int, float)):
        return Constant(dim, float(expr))
    if not isinstance(expr, dict) or len(expr) != 1:
        raise ConfigError(f"expression must be an object with exactly one key, got {expr!r}")
    (kind, body), = expr.items()
    try:
        if kind == "constant":
            return Constant(dim, float(body))
        if kind == "affine":
            a = _arr(body.get("a", np.zeros(dim)), "affine.a")
            if a.shape != (dim,):
                raise ConfigError(f"affine.a must have length {dim}")
            return Affine(a, float(body.get("b", 0.0)))
        if kind == "quadratic":
            Q = _arr(body["Q"], "quadratic.Q")
            if Q.shape != (dim, dim):
                raise ConfigError(f"quadratic.Q must be {dim}x{dim}")
            if np.min(np.linalg.eigvalsh(0.5 * (Q + Q.T))) < -1e-12:
                raise ConfigError("quadratic.Q must be positive semidefinite")
            a = _arr(body.get("a", np.zeros(dim)), "quadratic.a")
            return Quadratic(Q, a, float(body.get("c", 0.0)))
        if kind == "norm":
            idx = [int(i) for i in body.get("indices", range(dim))]
            center = _arr(body.get("center", np.zeros(len(idx))), "norm.center")
            ball = BallDistance(center, float(body.get("radius", 0.0)), float(body.get("scale", 1.0)))
            return lift(ball, idx, dim)
        if kind == "abs":
            return lift(absolute(float(body.get("center", 0.0))), [int(body["index"])], dim)
        if kind == "hinge":
            h = HingeQuadratic(float(body.get("center", 0.0)), float(body.get("pos_quad", 0.0)),
                               float(body.get("pos_lin", 0.0)), float(body.get("neg_quad", 0.0)),
                               float(body.get("neg_lin", 0.0)))
            return lift(h, [int(body["index"])], dim)
        if kind == "sum":
            if not body:
                raise ConfigError("sum needs at least one term")
            out = build_expression(body[0], dim)
            for term in body[1:]:
                out = add(out, build_expression(term, dim))
            return out
        if kind == "max":
            if not body:
                raise ConfigError("max needs at least one piece")
            pieces = [build_expression(t, dim) for t in body]
            return pieces[0] if len(pieces) == 1 else PointwiseMax(pieces)
        if kind == "scale":
            coef = float(body["coef"])
            if coef < 0:
                raise ConfigError("scale.coef must be nonnegative (convexity)")
            return scale(build_expression(body["of"], dim), coef)
    except ConfigError:
        raise
    except (KeyError, TypeError, ValueError, IndexError) as exc:
        raise ConfigError(f"bad {kind!r} expression: {exc}") from None
    raise ConfigError(f"unknown expression kind {kind!r}")


def _build_system(s: dict):
    family = s.get("family")
    if family not in FAMILIES:
        raise ConfigError(f"system.family must be one of {FAMILIES}")
    try:
        n, m = int(s["n"]), int(s["m"])
    except (KeyError, TypeError, ValueError):
        raise ConfigError("system needs integer 'n' and 'm'") from None
    anchor = s.get("anchor")
    h = build_expression(s["h"], n) if s.get("h") is not None else None
    if family == "joint":
        parts = [build_expression(e, n + m) for e in s.get("parts", [])]
        if not parts:
            raise ConfigError("joint system needs at least one part")
        comps = [build_expression(e, n) for e in s["compensators"]] if s.get("compensators") else None
        return joint_system(n, m, parts, comps, anchor=anchor, name=s.get("name", "joint"))
    if family == "semidefinite":
        return semidefinite_system(n, m, _arr(s["A0"], "A0"), _arr(s["As"], "As"), h, anchor=anchor,
                                   name=s.get("name", "semidefinite"))
    grid = _arr(s["t_grid"], "t_grid")
    a = _arr(s["a"], "probust.a")
    b = _arr(s.get("b", [0.0, 0.0, 0.0]), "probust.b")
    if a.shape != (3, n + m) or b.shape != (3,):
        raise ConfigError(f"probust.a must be 3x{n + m} and probust.b length 3")

    def part(t: float):
        basis = np.array([1.0, np.cos(t), np.sin(t)])
        return Affine(basis @ a, float(basis @ b))

    return probust_system(n, m, grid, part, h, anchor=anchor, name=s.get("name", "probust"))


def build_problem(problem: dict) -> ProblemSpec:
    """Turn a ``problem`` section into a :class:`ProblemSpec`."""
    try:
        if "registry" in problem:
            name = problem["registry"]
            if name not in SYSTEM_NAMES:
                raise ConfigError(f"unknown registry problem {name!r}; known: {', '.join(SYSTEM_NAMES)}")
            extra = set(problem) - {"registry", *_PROBLEM_OVERRIDES}
            if extra:
                raise ConfigError(f"unknown keys for a registry problem: {sorted(extra)}")
            base = get_problem(name)
            kw = {k: problem[k] for k in _PROBLEM_OVERRIDES if k in problem}
            return _replace_spec(base, kw)
        allowed = {"system", "objective", "objective_terms", "p", "x0", "bounds", "noise",
                   "objective_smoothing", "constraint_smoothing", "name"}
        extra = set(problem) - allowed
        if extra:
            raise ConfigError(f"unknown problem keys: {sorted(extra)}")
        sys = _build_system(problem["system"])
        psi = build_expression(problem["objective"], sys.n)
        terms = None
        if problem.get("objective_terms"):
            terms = tuple(build_expression(e, sys.n) for e in problem["objective_terms"])
        noise = problem.get("noise") or {}
        if "L" in noise:
            model = GaussianModel(_arr(noise["L"], "noise.L"))
        elif "covariance" in noise:
            model = GaussianModel.from_covariance(_arr(noise["covariance"], "noise.covariance"))
        else:
            model = GaussianModel.standard(sys.m)
        return ProblemSpec(psi, sys, model, float(problem["p"]), _arr(problem["x0"], "x0"),
                           bounds=problem.get("bounds"), objective_terms=terms,
                           objective_smoothing=problem.get("objective_smoothing", "envelope"),
                           constraint_smoothing=problem.get("constraint_smoothing", "envelope"),
                           name=problem.get("name", ""))
    except ConfigError:
        raise
    except (KeyError, TypeError, ValueError, np.linalg.LinAlgError) as exc:
        raise ConfigError(f"invalid problem section: {exc}") from None


def _replace_spec(base: ProblemSpec, kw: dict) -> ProblemSpec:
    for mode_key in ("objective_smoothing", "constraint_smoothing"):
        if mode_key in kw and kw[mode_key] not in SMOOTHING_MODES:
            raise ConfigError(f"{mode_key} must be one of {SMOOTHING_MODES}")
    if kw.get("objective_smoothing") == "termwise" and not base.objective_terms:
        raise ConfigError("termwise objective smoothing needs objective_terms")
    return ProblemSpec(
        base.objective, base.system, base.model,
        float(kw.get("p", base.p)),
        _arr(kw["x0"], "x0") if "x0" in kw else base.x0,
        bounds=kw.get("bounds", base.bounds),
        objective_terms=base.objective_terms,
        objective_smoothing=kw.get("objective_smoothing", base.objective_smoothing),
        constraint_smoothing=kw.get("constraint_smoothing", base.constraint_smoothing),
        name=base.name,
    )
