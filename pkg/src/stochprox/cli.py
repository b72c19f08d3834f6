"""Command-line experiment runner: ``stochprox run|validate|selftest``.

Configs are INI files with ``[problem]``, ``[solver]`` and ``[output]``
sections. Exit codes: 0 success, 1 selftest failure, 2 configuration error,
3 non-finite iterate, 4 no reference solution.
"""

from __future__ import annotations

import argparse
import ast
import configparser
import csv
import hashlib
import json
import os
import re
import sys
import time
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from . import apps
from . import operators as ops
from .core import (
    ComponentPair, NonFiniteError, RngStream, ScheduleError, StepSchedule, ValidationError,
    make_finite_distribution, validate_schedule,
)
from .diagnostics import QUANTILES, replicate
from .operators import BruteForceError, ConvexSet
from .solvers import (
    SolverConfig, _schedule_gate, check_assumption1, check_psi_bound, fb_run, spg_run,
)

EXIT_OK, EXIT_SELFTEST, EXIT_CONFIG, EXIT_ABORT, EXIT_REFERENCE = 0, 1, 2, 3, 4

KINDS = ("classification", "feasibility", "custom-quadratic")
ALGORITHMS = ("spg", "spp", "sgd", "fb")
FAMILIES = ("power", "constant", "explicit")


class ConfigError(ValueError):
    """Invalid configuration; the message names the key and its line."""


# ---------------------------------------------------------------------------
# Set expressions: box([lo], [hi]), ball([c], r), halfspace([a], b),
# hyperplane([a], b), singleton([p]), whole(dim)

_SET_BUILDERS = {
    "box": ConvexSet.box, "ball": ConvexSet.ball, "halfspace": ConvexSet.halfspace,
    "hyperplane": ConvexSet.hyperplane, "singleton": ConvexSet.singleton,
    "whole": ConvexSet.whole_space,
}


def parse_set(text):
    """Build a :class:`ConvexSet` from its text form, e.g. ``box([0.5], [inf])``."""
    try:
        node = ast.parse(re.sub(r"\binf\b", "1e999", text.strip()), mode="eval").body
    except SyntaxError:
        raise ValueError(f"cannot parse set expression {text.strip()!r}") from None
    if not (isinstance(node, ast.Call) and isinstance(node.func, ast.Name)
            and node.func.id in _SET_BUILDERS and not node.keywords):
        raise ValueError(f"set must be one of {', '.join(_SET_BUILDERS)}(...), "
                         f"got {text.strip()!r}")
    args = [ast.literal_eval(a) for a in node.args]
    return _SET_BUILDERS[node.func.id](*args)


def _split_sets(text):
    return [t for t in (s.strip() for s in text.split(";")) if t]


# ---------------------------------------------------------------------------
# Experiment configuration

@dataclass
class ExperimentConfig:
    kind: str
    # classification
    dataset: Optional[str] = None
    alpha: Optional[float] = None
    # feasibility
    constraint: Optional[str] = None
    sets: Optional[str] = None
    # feasibility and custom-quadratic
    weights: Optional[list] = None
    # custom-quadratic
    centers: Optional[list] = None
    proximal: bool = False
    # solver
    algorithm: str = "spg"
    schedule: str = "power"
    gamma0: float = 1.0
    p: float = 1.0
    steps: Optional[list] = None
    budget: int = 1000
    record_every: int = 1
    x0: Optional[list] = None
    x0_noise: float = 0.0
    seed: int = 0
    replications: int = 1
    allow_invalid_schedule: bool = False
    # output
    directory: str = "output"
    formats: str = "csv,json"
    base_dir: str = "."

    def schedule_obj(self):
        if self.schedule == "power":
            return StepSchedule.power(self.gamma0, self.p)
        if self.schedule == "constant":
            return StepSchedule.constant(self.gamma0)
        return StepSchedule.explicit(self.steps)

    def resolve(self, path):
        p = Path(path)
        return p if p.is_absolute() else Path(self.base_dir) / p


def _list(v):
    out = ast.literal_eval(v)
    if not isinstance(out, (list, tuple)):
        out = [out]
    return [float(x) if not isinstance(x, (list, tuple)) else [float(y) for y in x] for x in out]


def _bool(v):
    low = v.strip().lower()
    if low in ("true", "yes", "1", "on"):
        return True
    if low in ("false", "no", "0", "off"):
        return False
    raise ValueError(f"expected a boolean, got {v!r}")


def _choice(options):
    def parse(v):
        v = v.strip()
        if v not in options:
            raise ValueError(f"expected one of {', '.join(options)}, got {v!r}")
        return v
    return parse


# section -> key -> value parser
_SCHEMA = {
    "problem": {
        "kind": _choice(KINDS), "dataset": str.strip, "alpha": float, "constraint": str.strip,
        "sets": str.strip, "weights": _list, "centers": _list, "proximal": _bool,
    },
    "solver": {
        "algorithm": _choice(ALGORITHMS), "schedule": _choice(FAMILIES), "gamma0": float,
        "p": float, "steps": _list, "budget": int, "record_every": int, "x0": _list,
        "x0_noise": float, "seed": int, "replications": int, "allow_invalid_schedule": _bool,
    },
    "output": {"directory": str.strip, "formats": str.strip},
}


def _line_numbers(text):
    """Map ``(section, key)`` to the 1-based line where it is defined."""
    lines, section = {}, None
    for i, raw in enumerate(text.splitlines(), start=1):
        s = raw.strip()
        if not s or s[0] in "#;":
            continue
        if s.startswith("[") and s.endswith("]"):
            section = s[1:-1].strip()
            lines[(section, None)] = i
        elif section is not None and not raw[:1].isspace():
            for sep in ("=", ":"):
                if sep in s:
                    lines[(section, s.split(sep, 1)[0].strip().lower())] = i
                    break
    return lines


def parse_config(text, base_dir=".", allow_invalid_schedule=False):
    """Parse INI text into an :class:`ExperimentConfig`.

    ``allow_invalid_schedule`` mirrors the command-line override and is applied
    before the schedule is checked.

    Raises
    ------
    ConfigError
        Unknown section or key, malformed value, or a value out of range.
        The message names the key and its line.
    """
    parser = configparser.ConfigParser(interpolation=None, strict=True)
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    lines = _line_numbers(text)

    def where(section, key=None):
        line = lines.get((section, key), lines.get((section, None), "?"))
        return f"[{section}] {key}, line {line}" if key else f"[{section}], line {line}"

    for section in parser.sections():
        if section not in _SCHEMA:
            raise ConfigError(f"unknown section {where(section)}")
    if "problem" not in parser or "kind" not in parser["problem"]:
        raise ConfigError("missing required key [problem] kind")
    values = {}
    for section in parser.sections():
        for key, raw in parser[section].items():
            if key not in _SCHEMA[section]:
                raise ConfigError(f"unknown key {where(section, key)}")
            try:
                values[key] = _SCHEMA[section][key](raw)
            except (ValueError, SyntaxError, TypeError) as exc:
                raise ConfigError(f"invalid value for {where(section, key)}: {exc}") from None
    cfg = ExperimentConfig(base_dir=str(base_dir), **values)
    if allow_invalid_schedule:
        cfg.allow_invalid_schedule = True
    try:
        check_config(cfg)
    except ConfigError as exc:
        key = getattr(exc, "key", None)
        section = next((s for s, keys in _SCHEMA.items() if key in keys), "problem")
        raise ConfigError(f"{where(section, key)}: {exc}") from None
    return cfg


def _fail(key, message):
    err = ConfigError(message)
    err.key = key
    return err


def check_config(cfg: ExperimentConfig):
    """Range and consistency checks that do not need to build the problem."""
    if cfg.kind == "classification":
        if cfg.dataset is None:
            raise _fail("dataset", "classification needs a dataset path")
        if cfg.alpha is None or not 0.0 < cfg.alpha < 1.0:
            raise _fail("alpha", f"alpha must lie in (0, 1), got {cfg.alpha}")
    elif cfg.kind == "feasibility":
        if cfg.constraint is None:
            raise _fail("constraint", "feasibility needs a constraint set")
        if not cfg.sets:
            raise _fail("sets", "feasibility needs at least one set")
    elif not cfg.centers:
        raise _fail("centers", "custom-quadratic needs centers")
    if cfg.budget < 1:
        raise _fail("budget", "budget must be positive")
    if cfg.record_every < 1:
        raise _fail("record_every", "record_every must be positive")
    if cfg.replications < 1:
        raise _fail("replications", "replications must be positive")
    if cfg.seed < 0:
        raise _fail("seed", "seed must be nonnegative")
    if cfg.schedule == "explicit" and not cfg.steps:
        raise _fail("steps", "explicit schedule needs steps")
    try:
        sched = cfg.schedule_obj()
        sched.check()
    except (ScheduleError, ValidationError) as exc:
        raise _fail("gamma0" if cfg.schedule != "explicit" else "steps", str(exc)) from None
    if cfg.algorithm != "fb":
        try:
            _schedule_gate(sched, cfg.allow_invalid_schedule)
        except ScheduleError as exc:
            raise _fail("p" if cfg.schedule == "power" else "schedule", str(exc)) from None


def format_config(cfg: ExperimentConfig):
    """Serialize to INI text; ``parse_config`` inverts it exactly."""
    out = []
    for section, keys in _SCHEMA.items():
        out.append(f"[{section}]")
        for key in keys:
            v = getattr(cfg, key)
            if v is None:
                continue
            if isinstance(v, bool):
                v = "true" if v else "false"
            elif isinstance(v, float):
                v = repr(v)
            out.append(f"{key} = {v}")
        out.append("")
    return "\n".join(out)


def load_config(path, allow_invalid_schedule=False):
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text, base_dir=path.parent,
                        allow_invalid_schedule=allow_invalid_schedule)


# ---------------------------------------------------------------------------
# Problem construction

def build_problem(cfg: ExperimentConfig):
    """Returns ``(dist, reference_fn, selection_fn, psi)``."""
    if cfg.kind == "classification":
        path = cfg.resolve(cfg.dataset)
        if not path.is_file():
            raise ConfigError(f"[problem] dataset: file not found: {path}")
        try:
            samples = apps.load_dataset(path)
            dist = apps.make_classification_problem(samples, cfg.alpha)
        except ValidationError as exc:
            raise ConfigError(f"[problem] dataset {path}: {exc}") from None
        return dist, lambda ref: apps.classification_subgradients(dist, ref), \
            apps.classification_psi(dist)
    if cfg.kind == "feasibility":
        try:
            C = parse_set(cfg.constraint)
        except (ValueError, ValidationError) as exc:
            raise ConfigError(f"[problem] constraint: {exc}") from None
        try:
            sets = [parse_set(s) for s in _split_sets(cfg.sets)]
            dist = apps.make_feasibility_problem(apps.FeasibilitySpec(C, sets, cfg.weights))
        except (ValueError, ValidationError) as exc:
            raise ConfigError(f"[problem] sets: {exc}") from None
        return dist, lambda ref: apps.feasibility_subgradients(dist, ref), \
            apps.feasibility_psi(dist)
    try:
        dist = apps.make_quadratic_problem(cfg.centers, cfg.weights, cfg.proximal)
    except (ValueError, ValidationError) as exc:
        raise ConfigError(f"[problem] centers: {exc}") from None
    centers = dist.centers

    def selection(ref):
        if cfg.proximal:
            return [ref - c for c in centers]
        return [np.zeros_like(ref)] * len(centers)

    second = float(dist.weights @ np.sum(centers ** 2, axis=1))
    return dist, selection, lambda r: 2.0 * second + 2.0 * r * r


def compute_reference(cfg, dist):
    if cfg.kind == "custom-quadratic":
        ref = dist.analytic_minimizer
        return apps.Reference(point=ref, unique=True, converged=True,
                              endpoints=ref[None, :], iterations=[0], spread=0.0)
    return apps.reference_minimizer(dist, seed=cfg.seed)


def _x0(cfg, dist):
    if cfg.x0 is None:
        return np.zeros(dist.dim)
    x0 = np.asarray(cfg.x0, dtype=float)
    if x0.shape != (dist.dim,):
        raise ConfigError(f"[solver] x0: expected {dist.dim} coordinates, got {x0.size}")
    return x0


# ---------------------------------------------------------------------------
# Output

def _num(v):
    if v is None or (isinstance(v, float) and np.isnan(v)):
        return ""
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def write_trace(path, ens, gaps_available):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["replication", "n", "gamma_n", "k_n", "dist_to_ref", "objective_gap",
                    "running_min_gap"])
        rmin = ens.running_min_gap
        for r, sid in enumerate(ens.stream_ids):
            for c, n in enumerate(ens.steps):
                k = int(ens.recorded_indices[r, c])
                w.writerow([sid, int(n), _num(ens.gammas[c]), "" if k < 0 else k,
                            _num(ens.dist[r, c]) if ens.dist is not None else "",
                            _num(ens.gap[r, c]) if gaps_available else "",
                            _num(rmin[r, c]) if gaps_available else ""])


def write_ensemble(path, ens):
    metrics = [m for m in ("dist", "gap", "running_min_gap")
               if (ens.dist if m == "dist" else ens.gap) is not None]
    stats = {m: ens.summary(m) for m in metrics}
    cols = ["mean"] + [f"q{int(round(q * 100)):02d}" for q in QUANTILES]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["n", "gamma_n", "replications"]
                   + [f"{m}_{c}" for m in metrics for c in cols])
        R = int(ens.completed.sum())
        for i, n in enumerate(ens.steps):
            w.writerow([int(n), _num(ens.gammas[i]), R]
                       + [_num(stats[m][c][i]) for m in metrics for c in cols])


def _jsonable(v):
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    return v


# ---------------------------------------------------------------------------
# Commands

def _load(args):
    cfg = load_config(args.config, getattr(args, "allow_invalid_schedule", False))
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "output", None) is not None:
        cfg.directory = str(Path(args.output).resolve())
    return cfg


def _fb_ensemble(cfg, dist, ref):
    """Wrap a deterministic forward-backward run in ensemble form."""
    from .diagnostics import EnsembleStats
    sched = cfg.schedule_obj()
    t0 = time.perf_counter()
    rec = fb_run(dist.f_mixture, dist.g_mixture, sched, cfg.budget, _x0(cfg, dist),
                 record_every=cfg.record_every)
    it = rec.iterates[None]
    steps = rec.steps
    gam = np.array([sched.gammas(int(s), int(s) + 1)[0] if s < cfg.budget else np.nan
                    for s in steps])
    dist_mat = np.linalg.norm(it - ref, axis=-1) if ref is not None else None
    gap = (dist.objective(rec.iterates) - dist.objective(ref))[None] if ref is not None else None
    return EnsembleStats(
        algorithm="fb", steps=steps, gammas=gam, seed=cfg.seed, stream_ids=[0], iterates=it,
        recorded_indices=np.full((1, len(steps)), -1), reference=ref, dist=dist_mat, gap=gap,
        gradient_sums=None, schedule_class=rec.schedule_class,
        wall_clock=time.perf_counter() - t0)


def cmd_run(args):
    try:
        cfg = _load(args)
        dist, _, _ = build_problem(cfg)
        x0 = _x0(cfg, dist)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    t0 = time.perf_counter()
    try:
        ref = compute_reference(cfg, dist)
    except apps.ReferenceError as exc:
        print(f"reference failure: {exc}", file=sys.stderr)
        return EXIT_REFERENCE
    if not ref.unique:
        print(f"warning: reference starts disagree (spread {ref.spread:.3g}); "
              "distances are omitted, objective gaps remain", file=sys.stderr)
    if not ref.converged:
        print("warning: reference solver hit its iteration cap", file=sys.stderr)
    sched = cfg.schedule_obj()
    try:
        if cfg.algorithm == "fb":
            ens = _fb_ensemble(cfg, dist, ref.point)
        else:
            solver = SolverConfig(schedule=sched, budget=cfg.budget, x0=x0,
                                  rng=RngStream(cfg.seed), record_every=cfg.record_every,
                                  allow_invalid_schedule=cfg.allow_invalid_schedule,
                                  x0_noise=cfg.x0_noise)
            ens = replicate(dist, solver, cfg.replications, algorithm=cfg.algorithm,
                            reference=ref.point, jobs=args.jobs)
    except NonFiniteError as exc:
        print(f"runtime abort: {exc}", file=sys.stderr)
        return EXIT_ABORT
    except (ValidationError, ScheduleError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if not ref.unique:
        ens.dist = None

    out = Path(cfg.directory) if Path(cfg.directory).is_absolute() else cfg.resolve(cfg.directory)
    out.mkdir(parents=True, exist_ok=True)
    write_trace(out / "trace.csv", ens, gaps_available=True)
    complete = ens.completed.any()
    if complete:
        write_ensemble(out / "ensemble.csv", ens)
    meta = {
        "version": __version__,
        "config": {k: _jsonable(v) for k, v in asdict(cfg).items() if k != "base_dir"},
        "config_text": format_config(cfg),
        "seed": cfg.seed,
        "stream_ids": ens.stream_ids,
        "replay": "replication r is SolverConfig(..., rng=RngStream(seed, stream_id=r)) "
                  "with the same x0 and x0_noise",
        "schedule_class": ens.schedule_class,
        "schedule_overridden": bool(cfg.allow_invalid_schedule
                                    and ens.schedule_class != "robbins_monro"),
        "reference": {"point": ref.point.tolist(), "unique": ref.unique,
                      "converged": ref.converged, "spread": ref.spread,
                      "iterations": ref.iterations},
        "beta": dist.beta,
        "replications": ens.replications,
        "aborted": [{"stream_id": s, "step": n} for s, n in ens.aborted],
        "partial": ens.partial,
        "final_iterates": ens.finals.tolist(),
        "wall_clock_seconds": time.perf_counter() - t0,
    }
    with open(out / "meta.json", "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2, allow_nan=True)
        fh.write("\n")
    med = np.median(np.linalg.norm(ens.finals[ens.completed] - ref.point, axis=-1)) \
        if complete else float("nan")
    print(f"{ens.replications} replication(s), N = {cfg.budget}, "
          f"median |x_N - ref| = {med:.6g}, output in {out}")
    if ens.aborted:
        for sid, n in ens.aborted:
            print(f"runtime abort: replication {sid} (seed {cfg.seed}) non-finite at step {n}",
                  file=sys.stderr)
        return EXIT_ABORT
    return EXIT_OK


def cmd_validate(args):
    try:
        cfg = _load(args)
        dist, selection, psi = build_problem(cfg)
        _x0(cfg, dist)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    sched = cfg.schedule_obj()
    print(f"problem: {cfg.kind}, {dist.n_components} component(s), dimension {dist.dim}")
    cls = validate_schedule(sched) if sched.family != "explicit" else "unknown"
    print(f"schedule: {sched.family}, class {cls}")
    print(f"beta = {dist.beta:.12g}")
    try:
        ref = compute_reference(cfg, dist)
    except apps.ReferenceError as exc:
        print(f"reference: unavailable ({exc}); assumption checks skipped")
        return EXIT_OK
    print(f"reference = {np.array2string(ref.point, precision=10)} "
          f"(unique: {ref.unique}, converged: {ref.converged})")
    rep = check_assumption1(dist, ref.point, selection(ref.point))
    print(f"second moment of residual = {rep.second_moment:.12g}")
    print(f"mean residual norm = {rep.mean_norm:.3g} ({'FLAGGED' if rep.flagged else 'ok'})")
    rng = np.random.default_rng(cfg.seed)
    grid = ref.point + rng.uniform(-5.0, 5.0, size=(100, dist.dim))
    try:
        pr = check_psi_bound(dist, psi, grid)
        print(f"psi bound: {len(pr.violations)} violation(s) on {len(grid)} points")
    except ValidationError as exc:
        print(f"psi bound: skipped ({exc})")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Selftest

def _selftest_cases(rng, dim):
    """``(name, closed_form, value, gamma, x, box)`` with operators resolved now."""
    x = rng.normal(size=dim) * 2.0
    gamma = float(rng.uniform(0.1, 3.0))
    cases = []
    a = rng.normal(size=dim)
    b = float(rng.normal())
    sets = {
        "projection onto box": ConvexSet.box(-rng.uniform(0, 1, dim), rng.uniform(0, 1, dim)),
        "projection onto ball": ConvexSet.ball(rng.normal(size=dim), rng.uniform(0.3, 2.0)),
        "projection onto halfspace": ConvexSet.halfspace(a, b),
        "projection onto hyperplane": ConvexSet.hyperplane(a, b),
        "projection onto singleton": ConvexSet.singleton(rng.normal(size=dim)),
    }
    for name, S in sets.items():
        p = ops.project(S, x)
        lam = 2.0 * np.linalg.norm(x - p) + 1.0
        half = 4.0 + np.abs(x - p)
        shift = rng.uniform(-1, 1, dim)
        cases.append((name, p, lambda z, S=S, lam=lam: lam * ops.violation(S, z), 1.0, x,
                      (p - half + shift, p + half + shift)))
    alpha = float(rng.uniform(0.1, 0.9))
    u = rng.normal(size=dim)
    xi = int(rng.choice([-1, 1]))
    w = float(rng.uniform(0.2, 2.0))
    c = rng.normal(size=dim)
    for name, prox, value, radius in (
            ("hinge prox", ops.hinge_prox(alpha, u, xi, gamma, x),
             lambda z: ops.hinge_value(alpha, u, xi, z), alpha * gamma * np.linalg.norm(u)),
            ("soft threshold", ops.soft_threshold(x, gamma * w),
             lambda z: w * np.sum(np.abs(z), axis=-1), gamma * w * np.sqrt(dim)),
            ("quadratic prox", (x + gamma * c) / (1.0 + gamma),
             lambda z: 0.5 * np.sum((z - c) ** 2, axis=-1), np.linalg.norm(x - c))):
        half = radius + 2.0
        shift = rng.uniform(-0.5, 0.5, dim)
        cases.append((name, prox, value, gamma, x, (x - half + shift, x + half + shift)))
    return cases


def selftest(trials=10, seed=20240601, out=None):
    """Closed-form operators against the brute-force prox, then single-atom
    stochastic vs deterministic forward-backward. Returns the exit code."""
    out = sys.stdout if out is None else out
    rng = np.random.default_rng(seed)
    digest = hashlib.sha256()
    worst = {}
    for _ in range(trials):
        for dim in (1, 2):
            for name, closed, value, gamma, x, box in _selftest_cases(rng, dim):
                try:
                    bf = ops.brute_force_prox(value, gamma, x, box, tol=1e-6)
                except BruteForceError as exc:
                    print(f"FAIL {name}: brute force did not bracket ({exc})", file=out)
                    return EXIT_SELFTEST
                err = float(np.max(np.abs(np.asarray(closed) - bf)))
                if not err <= 1e-5:
                    print(f"FAIL {name}: closed form differs from brute force by {err:.3g}",
                          file=out)
                    return EXIT_SELFTEST
                worst[name] = max(worst.get(name, 0.0), err)
                digest.update(np.asarray(closed, dtype=np.float64).tobytes())
    for name in worst:
        print(f"PASS {name}", file=out)

    f = ops.hinge(0.5, np.array([1.0, -0.5]), 1)
    g = ops.logistic(0.5, np.array([0.3, 1.0]), -1)
    dist = make_finite_distribution([ComponentPair(f, g)], [1.0], dim=2)
    sched = StepSchedule.power(1.0, 0.75)
    x0 = np.array([2.0, -1.0])
    rs = spg_run(dist, SolverConfig(schedule=sched, budget=1000, x0=x0, rng=RngStream(1)))
    rd = fb_run(f, g, sched, 1000, x0)
    if not np.array_equal(rs.iterates, rd.iterates):
        print("FAIL degenerate-law equivalence: single-atom stochastic run differs from "
              "forward-backward", file=out)
        return EXIT_SELFTEST
    print("PASS degenerate-law equivalence", file=out)
    digest.update(rs.iterates.tobytes())
    print(f"digest {digest.hexdigest()}", file=out)
    return EXIT_OK


def cmd_selftest(args):
    return selftest()


# ---------------------------------------------------------------------------

def _default_jobs():
    env = os.environ.get("STOCHPROX_JOBS")
    try:
        return max(1, int(env)) if env else 1
    except ValueError:
        return 1


def build_parser():
    parser = argparse.ArgumentParser(prog="stochprox", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_ in (("run", "run an experiment"), ("validate", "check a config")):
        p = sub.add_parser(name, help=help_)
        p.add_argument("config")
        p.add_argument("--jobs", type=int, default=_default_jobs(),
                       help="parallel workers (default: $STOCHPROX_JOBS or 1)")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--output", default=None, help="override the output directory")
        p.add_argument("--allow-invalid-schedule", action="store_true",
                       help="run schedules that fail the Robbins-Monro conditions")
    sub.add_parser("selftest", help="operator oracle suite and equivalence check")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    handler = {"run": cmd_run, "validate": cmd_validate, "selftest": cmd_selftest}
    return handler[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
