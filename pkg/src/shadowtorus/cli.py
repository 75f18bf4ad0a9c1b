"""Command-line front end: ``shadowtorus <task> --config <file> [--seed N] [--out DIR] [--svg]``.

The configuration is a JSON document::

    {"system": {"variant": "LewowiczSmooth", "r": 0.05},
     "params": {"eps": 0.05, "m": 200, "trials": 10},
     "seed": 0, "emit_svg": false}

Flags override file fields.  Every run writes the resolved configuration
(``config_<task>.json``), JSON reports with sorted keys, CSV tables, an
updated ``manifest.json`` and a timestamped sidecar ``run.log``.  Exit status is
0 when everything passes, 2 on a condition or shadowing failure and 1 on usage
errors.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import ChainFailed, ConfigError, Exhausted, MissingArtifacts, PreconditionRho, ShadowFailed, ShadowTorusError
from .lyapunov import GridSpec, LyapPair, ParameterChain, _jsonable, check_conditions, derive_parameter_chain
from .orbits import generate_pseudotrajectory, step_defects, write_csv
from .shadow import SolverConfig, shadow_finite, shadow_orbit
from .stability import build_semiconjugacy, estimate_expansivity
from .svg import orbit_overlay, write_svg
from .systems import VARIANTS, SystemSpec, make_cat_system, make_perturbation

TASKS = ("simulate", "check-conditions", "derive-chain", "shadow", "stability", "report")
OUT_ENV = "SHADOWTORUS_OUT"
DEFAULT_OUT = "shadowtorus_out"

EXIT_OK, EXIT_USAGE, EXIT_FAIL = 0, 1, 2

log = logging.getLogger("shadowtorus")

# name -> (kind, default); defaults of None are resolved per task
PARAMS = {
    "eps": ("pos", 0.05),
    "delta1": ("pos", None),
    "delta2": ("pos", None),
    "Delta": ("pos", None),
    "d": ("nonneg", None),
    "m": ("int", None),
    "K": ("int", 25),
    "trials": ("int", 1),
    "grid_n": ("int", 8),
    "n_pairs": ("int", 10000),
    "K_expansivity": ("int", 40),
    "p0": ("point", None),
    "grid": ("dict", None),
    "solver": ("dict", None),
    "perturbation": ("dict", None),
    "rect_steps": ("intlist", None),
}
TASK_PARAMS = {
    "simulate": ("d", "m", "p0"),
    "check-conditions": ("delta1", "delta2", "Delta", "grid"),
    "derive-chain": ("eps", "grid"),
    "shadow": ("eps", "delta1", "delta2", "Delta", "d", "m", "trials", "grid", "solver", "rect_steps"),
    "stability": ("eps", "delta1", "delta2", "Delta", "d", "K", "grid_n", "n_pairs", "K_expansivity",
                  "grid", "solver", "perturbation"),
    "report": (),
}
SYSTEM_KEYS = ("variant", "r", "profile", "perturbation", "seed")
TOP_KEYS = ("task", "system", "params", "seed", "out", "emit_svg", "defaulted")  # "defaulted" is echo-only


# --- configuration -------------------------------------------------------------------

@dataclass
class ExperimentConfig:
    task: str
    system: dict
    params: dict
    seed: int = 0
    out: str = DEFAULT_OUT
    emit_svg: bool = False
    defaulted: list = field(default_factory=list)

    def resolved(self) -> dict:
        return {"task": self.task, "system": self.system, "params": self.params, "seed": self.seed,
                "out": self.out, "emit_svg": self.emit_svg, "defaulted": sorted(self.defaulted)}


def _num(value, name, kind):
    if kind == "int":
        if isinstance(value, bool) or not isinstance(value, int) or value < 1:
            raise ConfigError(f"field '{name}' must be a positive integer, got {value!r}", field=name)
        return int(value)
    if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
        raise ConfigError(f"field '{name}' must be a finite number, got {value!r}", field=name)
    if kind == "pos" and not value > 0:
        raise ConfigError(f"field '{name}' must be positive, got {value!r}", field=name)
    if kind == "nonneg" and value < 0:
        raise ConfigError(f"field '{name}' must be nonnegative, got {value!r}", field=name)
    return float(value)


def _param(value, name, kind):
    if kind in ("int", "pos", "nonneg"):
        return _num(value, name, kind)
    if kind == "dict":
        if not isinstance(value, dict):
            raise ConfigError(f"field '{name}' must be an object", field=name)
        return value
    if kind == "point":
        if not (isinstance(value, list) and len(value) == 2):
            raise ConfigError(f"field '{name}' must be a list [x, y]", field=name)
        return [_num(v, name, "real") for v in value]
    if kind == "intlist":
        if not isinstance(value, list) or any(isinstance(v, bool) or not isinstance(v, int) or v < 0 for v in value):
            raise ConfigError(f"field '{name}' must be a list of nonnegative integers", field=name)
        return list(value)
    raise AssertionError(kind)


def _task_defaults(task: str, variant: Optional[str]) -> dict:
    if task == "simulate":
        return {"d": 0.001, "m": 100}
    if task == "check-conditions":
        return {"delta1": 0.01, "delta2": 0.01, "Delta": 0.03}
    if task == "shadow":
        return {"m": 200, "rect_steps": [0]}
    return {}


def _validate_system(raw) -> dict:
    if not isinstance(raw, dict):
        raise ConfigError("field 'system' must be an object", field="system")
    for k in raw:
        if k not in SYSTEM_KEYS:
            raise ConfigError(f"unknown field 'system.{k}'", field=f"system.{k}")
    if "variant" not in raw:
        raise ConfigError("missing field 'system.variant'", field="system.variant")
    if raw["variant"] not in VARIANTS[:3]:
        raise ConfigError(f"field 'system.variant' must be one of {list(VARIANTS[:3])}, got {raw['variant']!r}",
                          field="system.variant")
    sysd = {"variant": raw["variant"], "r": _num(raw.get("r", 0.05), "system.r", "nonneg"),
            "profile": raw.get("profile", {}), "seed": raw.get("seed", 0)}
    if not isinstance(sysd["profile"], dict):
        raise ConfigError("field 'system.profile' must be an object", field="system.profile")
    if isinstance(sysd["seed"], bool) or not isinstance(sysd["seed"], int):
        raise ConfigError("field 'system.seed' must be an integer", field="system.seed")
    if "perturbation" in raw:
        if not isinstance(raw["perturbation"], dict):
            raise ConfigError("field 'system.perturbation' must be an object", field="system.perturbation")
        sysd["perturbation"] = raw["perturbation"]
    return sysd


def parse_config(doc: dict, task: Optional[str] = None, seed: Optional[int] = None,
                 out: Optional[str] = None, emit_svg: Optional[bool] = None) -> ExperimentConfig:
    """Validate a configuration document and apply flag overrides and defaults."""
    if not isinstance(doc, dict):
        raise ConfigError("configuration must be a JSON object", field="<root>")
    for k in doc:
        if k not in TOP_KEYS:
            raise ConfigError(f"unknown field '{k}'", field=k)
    task = task or doc.get("task")
    if task not in TASKS:
        raise ConfigError(f"field 'task' must be one of {list(TASKS)}, got {task!r}", field="task")
    defaulted = []
    if task == "report":
        system = {}
    else:
        if "system" not in doc:
            raise ConfigError("missing field 'system'", field="system")
        system = _validate_system(doc["system"])
    raw = doc.get("params", {})
    if not isinstance(raw, dict):
        raise ConfigError("field 'params' must be an object", field="params")
    allowed = TASK_PARAMS[task]
    params = {}
    for k, v in raw.items():
        if k not in PARAMS:
            raise ConfigError(f"unknown field 'params.{k}'", field=f"params.{k}")
        if k in allowed:
            params[k] = _param(v, f"params.{k}", PARAMS[k][0])
    tdef = _task_defaults(task, system.get("variant"))
    for k in allowed:
        if k in params:
            continue
        dv = tdef.get(k, PARAMS[k][1])
        if dv is not None:
            params[k] = dv
            defaulted.append(f"params.{k}")
    if task == "check-conditions" and not (params["delta1"] < params["Delta"] and params["delta2"] < params["Delta"]):
        raise ConfigError("field 'params.Delta' must exceed delta1 and delta2", field="params.Delta")
    given = [k for k in ("delta1", "delta2", "d") if k in raw and k in allowed]
    if task in ("shadow", "stability") and given and len(given) < 3:
        raise ConfigError("params delta1, delta2 and d must be given together", field=f"params.{given[0]}")

    if seed is None:
        seed = doc.get("seed", 0)
        if "seed" not in doc:
            defaulted.append("seed")
    if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
        raise ConfigError("field 'seed' must be a nonnegative integer", field="seed")
    if out is None:
        out = doc.get("out") or os.environ.get(OUT_ENV) or DEFAULT_OUT
        if "out" not in doc:
            defaulted.append("out")
    if emit_svg is None:
        emit_svg = doc.get("emit_svg", False)
        if "emit_svg" not in doc:
            defaulted.append("emit_svg")
    if not isinstance(emit_svg, bool):
        raise ConfigError("field 'emit_svg' must be a boolean", field="emit_svg")
    return ExperimentConfig(task, system, params, seed, str(out), emit_svg, defaulted)


def load_config(path) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config file: {exc}", field="--config") from None
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}",
                          field=f"line {exc.lineno}") from None


def child_seed(master: int, item: int) -> int:
    """Counter-based seed for task item ``item``; independent of execution order."""
    return int(np.random.SeedSequence([master, item]).generate_state(1)[0])


def build_system(sysd: dict) -> SystemSpec:
    try:
        base = make_cat_system(sysd["variant"], sysd["r"], sysd.get("profile") or {})
        if "perturbation" in sysd:
            return make_perturbation(base, sysd["perturbation"], seed=sysd.get("seed", 0))
        return base
    except ShadowTorusError as exc:
        raise ConfigError(f"invalid system: {exc}", field="system") from None
    except (ValueError, KeyError, TypeError) as exc:
        raise ConfigError(f"invalid system: {exc}", field="system") from None


def _grid(params) -> GridSpec:
    g = params.get("grid") or {}
    try:
        return GridSpec(**g)
    except TypeError as exc:
        raise ConfigError(f"invalid grid densities: {exc}", field="params.grid") from None


def _solver(params) -> SolverConfig:
    s = params.get("solver") or {}
    try:
        return SolverConfig(**s)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid solver settings: {exc}", field="params.solver") from None


# --- artifact writing ------------------------------------------------------------------

class Run:
    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        self.dir = Path(cfg.out)
        self.files = []

    def path(self, name) -> Path:
        self.dir.mkdir(parents=True, exist_ok=True)
        self.files.append(name)
        return self.dir / name

    def write_json(self, name, obj) -> None:
        self.path(name).write_text(json.dumps(_jsonable(obj), sort_keys=True, indent=1) + "\n")

    def write_rows(self, name, header, rows) -> None:
        with open(self.path(name), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            w.writerows(rows)

    def finish(self) -> None:
        mpath = self.dir / "manifest.json"
        manifest = json.loads(mpath.read_text()) if mpath.exists() else {}
        manifest[self.cfg.task] = sorted(set(self.files))
        mpath.write_text(json.dumps(manifest, sort_keys=True, indent=1) + "\n")


def _chain_from_params(sys, pair, params, grid) -> tuple:
    """Parameters given in the config, or a freshly derived chain."""
    if "delta1" in params and "d" in params:
        D = params.get("Delta", max(params["delta1"], params["delta2"]) * 2)
        ch = ParameterChain(params["eps"], math.nan, D, params["delta1"], params["delta2"], params["d"])
        return ch, False
    return derive_parameter_chain(sys, pair, params["eps"], grid), True


def _fmt(x):
    return repr(float(x))


# --- tasks ------------------------------------------------------------------------------

def task_simulate(run: Run, sys: SystemSpec) -> int:
    p = run.cfg.params
    rng = np.random.default_rng(child_seed(run.cfg.seed, 0))
    p0 = p.get("p0") or rng.random(2).tolist()
    pt = generate_pseudotrajectory(sys, p0, p["d"], p["m"], child_seed(run.cfg.seed, 1))
    write_csv(run.path("pseudotrajectory.csv"), pt)
    dfx = step_defects(sys, pt.points)
    run.write_json("simulate.json", {"m": pt.m, "d": p["d"], "p0": list(map(float, pt.points[0])),
                                     "max_step_defect": float(dfx.max())})
    if run.cfg.emit_svg:
        write_svg(run.path("simulate.svg"), orbit_overlay(pt.points))
    return EXIT_OK


def task_check_conditions(run: Run, sys: SystemSpec) -> int:
    p = run.cfg.params
    pair = LyapPair(sys.frame)
    reps = check_conditions(sys, pair, p["delta1"], p["delta2"], p["Delta"], _grid(p))
    ok = all(r.passed for r in reps)
    run.write_json("conditions.json", {"passed": ok, "reports": [r.to_dict() for r in reps]})
    for r in reps:
        log.info("%s passed=%s min_margin=%.6g", r.condition, r.passed, r.min_margin)
    return EXIT_OK if ok else EXIT_FAIL


def task_derive_chain(run: Run, sys: SystemSpec) -> int:
    p = run.cfg.params
    try:
        ch = derive_parameter_chain(sys, LyapPair(sys.frame), p["eps"], _grid(p))
    except ChainFailed as exc:
        run.write_json("chain.json", {"passed": False, "error": str(exc), "condition": exc.condition,
                                      "reports": [r.to_dict() for r in exc.reports]})
        return EXIT_FAIL
    run.write_json("chain.json", dict(ch.to_dict(), passed=True))
    return EXIT_OK


def task_shadow(run: Run, sys: SystemSpec) -> int:
    p = run.cfg.params
    pair = LyapPair(sys.frame)
    try:
        ch, derived = _chain_from_params(sys, pair, p, _grid(p))
    except ChainFailed as exc:
        run.write_json("shadow_runs.json", {"passed": False, "error": str(exc), "runs": []})
        return EXIT_FAIL
    if derived:
        run.write_json("chain.json", dict(ch.to_dict(), passed=True))
    cfg = _solver(p)
    runs, dist_rows = [], []
    for t in range(p["trials"]):
        s = child_seed(run.cfg.seed, t)
        p0 = np.random.default_rng(s).random(2)
        pt = generate_pseudotrajectory(sys, p0, ch.d, p["m"], s)
        entry = {"trial": t, "seed": s, "p0": p0.tolist()}
        try:
            res = shadow_finite(sys, pair, pt, ch.delta1, ch.delta2, cfg)
        except (Exhausted, ShadowFailed) as exc:
            entry.update(success=False, error=str(exc), step=getattr(exc, "step", None),
                         reason=getattr(exc, "reason", None))
            runs.append(entry)
            continue
        ok = res.achieved_eps < ch.eps
        entry.update(success=ok, result=res.to_dict())
        runs.append(entry)
        dist_rows += [[t, k, _fmt(x)] for k, x in enumerate(res.per_step)]
        if run.cfg.emit_svg and t == 0:
            orbit = shadow_orbit(sys, res)
            write_svg(run.path("shadow_000.svg"),
                      orbit_overlay(pt.points, orbit, sys.frame, ch.delta1, ch.delta2, p.get("rect_steps", [0])))
    eps_vals = [r["result"]["achieved_eps"] for r in runs if "result" in r]
    n_ok = sum(r["success"] for r in runs)
    summary = {
        "chain": {"eps": ch.eps, "Delta0": ch.Delta0, "Delta": ch.Delta, "delta1": ch.delta1,
                  "delta2": ch.delta2, "d": ch.d},
        "trials": len(runs), "successes": n_ok, "success_rate": n_ok / len(runs),
        "achieved_eps_quantiles": _quantiles(eps_vals),
        "runs": runs,
    }
    run.write_json("shadow_runs.json", summary)
    run.write_rows("shadow_distances.csv", ["trial", "k", "dist"], dist_rows)
    return EXIT_OK if n_ok == len(runs) else EXIT_FAIL


def _quantiles(vals) -> dict:
    if not vals:
        return {}
    q = np.quantile(np.asarray(vals), [0.0, 0.5, 0.9, 1.0])
    return {"min": float(q[0]), "q50": float(q[1]), "q90": float(q[2]), "max": float(q[3])}


def task_stability(run: Run, sys: SystemSpec) -> int:
    p = run.cfg.params
    pair = LyapPair(sys.frame)
    try:
        ch, derived = _chain_from_params(sys, pair, p, _grid(p))
    except ChainFailed as exc:
        run.write_json("stability.json", {"passed": False, "error": str(exc)})
        return EXIT_FAIL
    if derived:
        run.write_json("chain.json", dict(ch.to_dict(), passed=True))
    pert = dict(p.get("perturbation") or {})
    frac = float(pert.pop("sup_norm_frac", 0.5))
    pert.setdefault("sup_norm", frac * ch.d)
    try:
        g = make_perturbation(sys, pert, seed=child_seed(run.cfg.seed, 0))
    except (ShadowTorusError, ValueError) as exc:
        raise ConfigError(f"invalid perturbation: {exc}", field="params.perturbation") from None
    exp = estimate_expansivity(sys, p["K_expansivity"], p["n_pairs"], child_seed(run.cfg.seed, 1))
    out = {"expansivity": exp.to_dict(), "g": g.to_dict()}
    try:
        sample, rep = build_semiconjugacy(sys, g, p["eps"], p["grid_n"], p["K"], chain=ch, pair=pair,
                                          config=_solver(p))
    except (PreconditionRho, ShadowFailed) as exc:
        out.update(passed=False, error=str(exc), point=list(getattr(exc, "point", None) or []))
        run.write_json("stability.json", out)
        return EXIT_FAIL
    out.update(rep.to_dict())
    run.write_json("stability.json", out)
    sample.write_csv(run.path("conjugacy.csv"))
    return EXIT_OK if rep.passed and exp.a_est > 0 else EXIT_FAIL


# --- report -------------------------------------------------------------------------------

REPORT_COLUMNS = ("artifact", "passed", "min_margin", "d", "success_rate", "eps_q50", "eps_q90", "eps_max",
                  "defect_conj", "defect_id", "a_est")
ARTIFACTS = ("conditions.json", "chain.json", "shadow_runs.json", "stability.json")


def _row(name, doc) -> dict:
    row = {c: None for c in REPORT_COLUMNS}
    row["artifact"] = name
    row["passed"] = doc.get("passed")
    if name == "conditions.json":
        row["min_margin"] = min(r["min_margin"] for r in doc["reports"]) if doc.get("reports") else None
    elif name == "chain.json":
        row["d"] = doc.get("d")
        reps = doc.get("reports") or []
        margins = [r["min_margin"] for r in reps if r.get("condition") != "C1"]
        row["min_margin"] = min(margins) if margins else None
    elif name == "shadow_runs.json":
        row["d"] = (doc.get("chain") or {}).get("d")
        row["success_rate"] = doc.get("success_rate")
        row["passed"] = doc.get("success_rate") == 1.0 if "success_rate" in doc else False
        q = doc.get("achieved_eps_quantiles") or {}
        row["eps_q50"], row["eps_q90"], row["eps_max"] = q.get("q50"), q.get("q90"), q.get("max")
    elif name == "stability.json":
        row["d"] = doc.get("d")
        row["defect_conj"] = doc.get("defect_conj")
        row["defect_id"] = doc.get("defect_id")
        row["a_est"] = (doc.get("expansivity") or {}).get("a_est")
    return row


def report(run_dir) -> dict:
    """Consolidated summary table of the artifacts in ``run_dir`` (fixed column and row order)."""
    run_dir = Path(run_dir)
    rows = []
    for name in ARTIFACTS:
        f = run_dir / name
        if f.exists():
            rows.append(_row(name, json.loads(f.read_text())))
    if not rows:
        raise MissingArtifacts(f"no run artifacts in {run_dir}")
    return {"columns": list(REPORT_COLUMNS), "rows": [[r[c] for c in REPORT_COLUMNS] for r in rows]}


def format_table(summary: dict) -> str:
    def cell(v):
        if v is None:
            return "-"
        if isinstance(v, float):
            return f"{v:.4g}"
        return str(v)

    cols = summary["columns"]
    body = [[cell(v) for v in r] for r in summary["rows"]]
    widths = [max(len(c), *(len(r[i]) for r in body)) for i, c in enumerate(cols)]
    lines = ["  ".join(c.ljust(w) for c, w in zip(cols, widths))]
    lines += ["  ".join(v.ljust(w) for v, w in zip(r, widths)) for r in body]
    return "\n".join(lines)


def task_report(run: Run) -> int:
    summary = report(run.dir)
    run.write_json("summary.json", summary)
    run.write_rows("summary.csv", summary["columns"], summary["rows"])
    print(format_table(summary))
    return EXIT_OK


TASK_FUNCS = {
    "simulate": task_simulate,
    "check-conditions": task_check_conditions,
    "derive-chain": task_derive_chain,
    "shadow": task_shadow,
    "stability": task_stability,
}


def run(cfg: ExperimentConfig) -> int:
    """Execute one configured task and write its artifacts; returns the exit status."""
    r = Run(cfg)
    r.dir.mkdir(parents=True, exist_ok=True)
    handler = logging.FileHandler(r.dir / "run.log")
    handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(message)s"))
    log.addHandler(handler)
    log.setLevel(logging.INFO)
    try:
        log.info("task %s seed %d", cfg.task, cfg.seed)
        if cfg.task == "report":
            status = task_report(r)
        else:
            sys_ = build_system(cfg.system)
            r.write_json(f"config_{cfg.task}.json", cfg.resolved())
            status = TASK_FUNCS[cfg.task](r, sys_)
        r.finish()
        log.info("task %s exit %d", cfg.task, status)
        return status
    finally:
        log.removeHandler(handler)
        handler.close()


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="shadowtorus", description="Shadowing experiments on perturbed torus automorphisms.")
    ap.add_argument("task", choices=TASKS)
    ap.add_argument("--config", help="JSON configuration file (optional for 'report')")
    ap.add_argument("--seed", type=int, default=None, help="master seed (overrides the config)")
    ap.add_argument("--out", default=None, help=f"output directory (default: config 'out', ${OUT_ENV}, or ./{DEFAULT_OUT})")
    ap.add_argument("--svg", action="store_true", default=None, help="emit SVG overlays")
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    try:
        if args.config is None:
            if args.task != "report":
                raise ConfigError("--config is required for this task", field="--config")
            doc = {}
        else:
            doc = load_config(args.config)
        cfg = parse_config(doc, task=args.task, seed=args.seed, out=args.out, emit_svg=args.svg)
        return run(cfg)
    except ConfigError as exc:
        print(f"shadowtorus: config error [{exc.field}]: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except MissingArtifacts as exc:
        print(f"shadowtorus: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
