"""Batch front door: ``pathhjb simulate | value tree|lsmc|oracle | verify run | fields crosscheck``.

Every subcommand reads a YAML config (``--config``); ``seed`` is mandatory.
``simulate`` and ``value`` also take flags (``--seed``, ``--paths``, ...)
that override the config, so small runs need no config file at all.
JSON outputs are written with sorted keys and carry ``spec_digest`` and
``seed``; run timestamps go to a separate ``*.metadata.json`` so that reruns
produce byte-identical results.

Exit codes: 0 success, 1 invalid input or config, 2 resource limit,
3 numerical divergence, 4 failing check.
"""
from __future__ import annotations

import argparse
import datetime as _dt
import json
import os
import sys
from dataclasses import dataclass, field

import numpy as np
import yaml

from .errors import (DivergenceError, EvaluationError, InvalidConfigError, PathHJBError, ResourceError)
from .families import FAMILIES, build_spec
from .fields import CATALOG, catalog, crosscheck_suite
from .path_space import TimeGrid
from .simulate import ControlPolicy, sample_noise, simulate
from .value import (DEFAULT_ENUM_BUDGET, DEFAULT_NODE_CAP, FeatureSpec, build_tree, enumerate_strategies,
                    lsmc_value, tree_backward_induction)
from .verify import REGISTRY, reports_json, run_suite

EXIT_OK, EXIT_INVALID, EXIT_RESOURCE, EXIT_DIVERGENCE, EXIT_CHECK = 0, 1, 2, 3, 4

TOP_KEYS = {"seed", "model", "grid", "budgets", "checks", "output", "x0", "simulate", "value", "fields"}
MODEL_KEYS = {"family", "params"}
GRID_KEYS = {"n_steps"}
SIMULATE_KEYS = {"policy", "control", "r", "t_end", "holder", "balls"}
VALUE_KEYS = {"noise", "snapshots", "degree"}
FIELDS_KEYS = {"names", "params", "tolerances"}
BUDGET_KEYS = {
    # simulate / value / fields
    "n_paths", "depth", "node_cap", "enum_budget", "policy_iters", "n_points",
    # verify
    "flow_cases", "flow_paths", "flow_steps", "moment_paths", "moment_steps", "holder_paths", "ito_paths",
    "ito_steps", "semisolution_points", "tree_depth", "lsmc_steps", "lsmc_paths", "strategies",
    "supermartingale_paths", "sandwich_paths", "dpp_paths", "witness_points", "witness_paths",
    "lipschitz_samples", "value_lipschitz_cap",
}
DEFAULT_BUDGETS = {"n_paths": 1000, "depth": 6, "node_cap": DEFAULT_NODE_CAP, "enum_budget": DEFAULT_ENUM_BUDGET,
                   "policy_iters": 2, "n_points": 20}


@dataclass
class RunConfig:
    seed: int
    model: dict = field(default_factory=lambda: {"family": "demo", "params": {}})
    grid: dict = field(default_factory=lambda: {"n_steps": 64})
    budgets: dict = field(default_factory=lambda: dict(DEFAULT_BUDGETS))
    checks: list | None = None
    output: str | None = None
    x0: list | None = None
    simulate: dict = field(default_factory=dict)
    value: dict = field(default_factory=dict)
    fields: dict = field(default_factory=dict)

    def spec(self):
        return build_spec(self.model["family"], self.model.get("params"))

    def suite_config(self) -> dict:
        out = {"seed": self.seed, "model": self.model, "budgets": dict(self.budgets)}
        if self.checks:
            out["checks"] = self.checks
        if self.x0 is not None:
            out["x0"] = self.x0
        return out


def _unknown(section: str, got: dict, allowed: set, errors: list):
    for k in sorted(set(got) - allowed):
        errors.append(f"unknown key {section + '.' if section else ''}{k}")


def _merge(base: dict, extra: dict) -> dict:
    out = dict(base)
    for k, v in extra.items():
        out[k] = _merge(out[k], v) if isinstance(v, dict) and isinstance(out.get(k), dict) else v
    return out


def parse_config(text: str, overrides: dict | None = None) -> RunConfig:
    """Validate a YAML config, collecting every violation before raising.

    ``overrides`` (nested like the config) is merged over the parsed text.
    """
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f" at line {mark.line + 1}, column {mark.column + 1}" if mark is not None else ""
        raise InvalidConfigError(f"syntax error{where}: {getattr(exc, 'problem', None) or exc}") from None
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise InvalidConfigError("config must be a mapping")
    raw = _merge(raw, overrides or {})
    errors: list[str] = []
    _unknown("", raw, TOP_KEYS, errors)

    seed = raw.get("seed")
    if "seed" not in raw:
        errors.append("missing required key seed")
    elif isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
        errors.append(f"seed must be a non-negative integer, got {seed!r}")

    model = raw.get("model", {"family": "demo"})
    if isinstance(model, str):
        model = {"family": model}
    if not isinstance(model, dict):
        errors.append("model must be a mapping or a family name")
        model = {"family": "demo"}
    _unknown("model", model, MODEL_KEYS, errors)
    model = {"family": model.get("family", "demo"), "params": dict(model.get("params") or {})}
    if model["family"] not in FAMILIES:
        errors.append(f"unknown model family {model['family']!r}")

    grid = dict(raw.get("grid") or {})
    _unknown("grid", grid, GRID_KEYS, errors)
    grid.setdefault("n_steps", 64)
    if not isinstance(grid["n_steps"], int) or grid["n_steps"] <= 0:
        errors.append(f"grid.n_steps must be a positive integer, got {grid['n_steps']!r}")

    budgets_in = dict(raw.get("budgets") or {})
    _unknown("budgets", budgets_in, BUDGET_KEYS, errors)
    for k, v in sorted(budgets_in.items()):
        if k in BUDGET_KEYS and (isinstance(v, bool) or not isinstance(v, (int, float)) or not v > 0):
            errors.append(f"budget {k} must be positive, got {v!r}")
    budgets = {**DEFAULT_BUDGETS, **budgets_in}

    checks = raw.get("checks")
    if checks is not None:
        if isinstance(checks, str):
            checks = [checks]
        for c in checks:
            if c not in REGISTRY:
                errors.append(f"unknown check id {c!r}")

    sections = {}
    for name, allowed in (("simulate", SIMULATE_KEYS), ("value", VALUE_KEYS), ("fields", FIELDS_KEYS)):
        sec = raw.get(name) or {}
        if not isinstance(sec, dict):
            errors.append(f"{name} must be a mapping")
            sec = {}
        _unknown(name, sec, allowed, errors)
        sections[name] = dict(sec)
    for n in sections["fields"].get("names", []):
        if n not in CATALOG:
            errors.append(f"unknown field {n!r}")

    if not errors:
        try:
            spec = build_spec(model["family"], model["params"])
        except InvalidConfigError as exc:
            errors.extend(exc.violations)
        except PathHJBError as exc:
            errors.append(str(exc))
        else:
            if raw.get("x0") is not None and len(raw["x0"]) != spec.d:
                errors.append(f"x0 must have {spec.d} entries")
    if errors:
        raise InvalidConfigError(errors)
    return RunConfig(seed=seed, model=model, grid=grid, budgets=budgets, checks=checks, output=raw.get("output"),
                     x0=raw.get("x0"), simulate=sections["simulate"], value=sections["value"],
                     fields=sections["fields"])


def load_config(path: str | None, overrides: dict | None = None) -> RunConfig:
    if path is None:
        return parse_config("", overrides)
    with open(path) as fh:
        return parse_config(fh.read(), overrides)


# ---------------------------------------------------------------- output helpers

def _dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2, default=_default) + "\n"


def _default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.generic):
        return o.item()
    raise TypeError(f"not serializable: {type(o).__name__}")


def _write(path: str, text: str):
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w") as fh:
        fh.write(text)


def _metadata(path: str, argv, workers):
    meta = {"created": _dt.datetime.now(_dt.timezone.utc).isoformat(), "argv": list(argv), "workers": workers}
    _write(path, _dumps(meta))


def _x0(cfg: RunConfig, spec):
    return np.zeros(spec.d) if cfg.x0 is None else np.asarray(cfg.x0, dtype=float)


# ---------------------------------------------------------------- subcommands

def _policy(cfg, spec):
    kind = cfg.simulate.get("policy", "random")
    if kind == "random":
        return ControlPolicy.random(spec.n_controls, cfg.seed)
    if kind == "constant":
        return ControlPolicy.constant(int(cfg.simulate.get("control", 0)))
    raise InvalidConfigError(f"unknown policy {kind!r}; use random or constant")


def run_simulate(cfg: RunConfig, out: str) -> tuple[int, list[str]]:
    spec = cfg.spec()
    grid = TimeGrid(0.0, spec.T, cfg.grid["n_steps"])
    noise = sample_noise(grid, spec.m, spec.m0, int(cfg.budgets["n_paths"]), cfg.seed)
    r = float(cfg.simulate.get("r", 0.0))
    i_r = grid.index(r)
    xi = np.repeat(_x0(cfg, spec)[None], i_r + 1, axis=0)
    holder = [tuple(h) for h in cfg.simulate.get("holder", [])]
    sim = simulate(spec, _policy(cfg, spec), r, xi, noise, t_end=cfg.simulate.get("t_end"), holder=holder,
                   balls=cfg.simulate.get("balls", ()))
    sim.export(out, "paths", spec.digest(), cfg.seed)
    summary = {"spec_digest": spec.digest(), "seed": cfg.seed, "n_paths": sim.n_paths,
               "mean_running_cost": float(sim.running_cost.mean()),
               "mean_endpoint": sim.values[:, -1].mean(axis=0).tolist()}
    _write(os.path.join(out, "summary.json"), _dumps(summary))
    return EXIT_OK, [f"simulate: {sim.n_paths} paths, mean running cost {summary['mean_running_cost']:.6g}"]


def run_value(cfg: RunConfig, mode: str, out: str) -> tuple[int, list[str]]:
    spec = cfg.spec()
    b = cfg.budgets
    x0 = _x0(cfg, spec)
    kind = cfg.value.get("noise", "rademacher")
    if mode in ("tree", "oracle"):
        tree = build_tree(spec, int(b["depth"]), x0=x0, kind=kind, node_cap=int(b["node_cap"]))
        surf = tree_backward_induction(spec, tree)
        body = surf.as_dict()
        if mode == "oracle":
            res = enumerate_strategies(spec, tree, budget=int(b["enum_budget"]))
            body = {"spec_digest": spec.digest(), "seed": cfg.seed, "mode": "oracle",
                    "oracle_value": res.value, "tree_value": float(surf.tables[0][0]),
                    "difference": abs(res.value - float(surf.tables[0][0])), "n_strategies": res.n_strategies,
                    "strategy": res.strategy.tolist()}
        value = body.get("value", body.get("oracle_value"))
    elif mode == "lsmc":
        grid = TimeGrid(0.0, spec.T, cfg.grid["n_steps"])
        snaps = cfg.value.get("snapshots", "all")
        if snaps == "all":
            times = tuple(grid.nodes[:-1])
        elif snaps == "none":
            times = ()
        else:
            times = tuple(float(s) for s in snaps)
        feats = FeatureSpec(snapshot_times=times, degree=int(cfg.value.get("degree", 2)))
        surf = lsmc_value(spec, grid, int(b["n_paths"]), feats, int(b["policy_iters"]), cfg.seed, x0,
                          noise_kind="gaussian" if kind == "gauss-hermite" else kind)
        body = surf.as_dict()
        value = surf.v0
    else:
        raise InvalidConfigError(f"unknown value mode {mode!r}")
    body["seed"] = cfg.seed
    _write(os.path.join(out, f"value_{mode}.json"), _dumps(body))
    return EXIT_OK, [f"value {mode}: {value:.10g}"]


def run_verify(cfg: RunConfig, out: str) -> tuple[int, list[str]]:
    spec = cfg.spec()
    reports = run_suite(cfg.suite_config())
    _write(out, reports_json(reports, spec.digest(), cfg.seed))
    lines = [r.summary() for r in reports]
    return (EXIT_OK if all(r.passed for r in reports) else EXIT_CHECK), lines


def run_crosscheck(cfg: RunConfig, out: str) -> tuple[int, list[str]]:
    names = cfg.fields.get("names") or ["sin_integral", "state_quadratic", "running_integral", "upper_bound"]
    params = cfg.fields.get("params") or {}
    reports = []
    for n in names:
        fld = catalog(n, **params.get(n, {}))
        reports.append(crosscheck_suite(fld, int(cfg.budgets["n_points"]), cfg.fields.get("tolerances"),
                                        cfg.seed).as_dict())
    body = {"spec_digest": cfg.spec().digest(), "seed": cfg.seed, "reports": reports,
            "all_pass": all(r["pass"] for r in reports)}
    _write(os.path.join(out, "crosscheck.json"), _dumps(body))
    lines = [f"{'PASS' if r['pass'] else 'FAIL'} {r['field']}" for r in reports]
    return (EXIT_OK if body["all_pass"] else EXIT_CHECK), lines


# ---------------------------------------------------------------- entry point

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pathhjb", description=__doc__.splitlines()[0])
    p.add_argument("--workers", type=int, default=None,
                   help="cap on data-parallel width (default: $PATHHJB_WORKERS or 1); never changes results")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out_help, required=True):
        sp.add_argument("--config", required=required)
        sp.add_argument("--out", default=None, help=out_help)

    s = sub.add_parser("simulate", help="Euler rollouts to CSV")
    common(s, "output directory", required=False)
    s.add_argument("--seed", type=int)
    s.add_argument("--paths", type=int, help="number of paths")
    s.add_argument("--steps", type=int, help="grid steps on [0, T]")
    s.add_argument("--t0", type=float, help="start time (prefix is constant x0 up to t0)")
    s.add_argument("--t1", type=float, help="stop time (default T)")
    s.add_argument("--alpha", type=float, help="Hölder exponent for exit-time annotation")
    s.add_argument("--k", type=float, help="Hölder radius for exit-time annotation")
    v = sub.add_parser("value", help="value function by tree, LSMC, or brute-force oracle")
    v.add_argument("mode", choices=["tree", "lsmc", "oracle"])
    common(v, "output directory", required=False)
    v.add_argument("--seed", type=int)
    v.add_argument("--depth", type=int, help="tree depth")
    v.add_argument("--paths", type=int, help="LSMC paths")
    v.add_argument("--steps", type=int, help="LSMC grid steps")
    v.add_argument("--features", help="LSMC snapshot times: all, none, or comma-separated times")
    ver = sub.add_parser("verify", help="verification suite")
    ver_sub = ver.add_subparsers(dest="action", required=True)
    common(ver_sub.add_parser("run"), "report JSON path")
    fl = sub.add_parser("fields", help="random-field utilities")
    fl_sub = fl.add_subparsers(dest="action", required=True)
    common(fl_sub.add_parser("crosscheck"), "output directory")
    return p


def overrides_from_args(args: argparse.Namespace) -> dict:
    """Nested config overrides from the simulate/value flags that were given."""
    out: dict = {}

    def put(section, key, value):
        if value is not None:
            (out.setdefault(section, {}) if section else out)[key] = value

    put(None, "seed", getattr(args, "seed", None))
    put("budgets", "n_paths", getattr(args, "paths", None))
    put("budgets", "depth", getattr(args, "depth", None))
    put("grid", "n_steps", getattr(args, "steps", None))
    put("simulate", "r", getattr(args, "t0", None))
    put("simulate", "t_end", getattr(args, "t1", None))
    alpha, k = getattr(args, "alpha", None), getattr(args, "k", None)
    if alpha is not None or k is not None:
        put("simulate", "holder", [[0.25 if alpha is None else alpha, 1.0 if k is None else k]])
    feats = getattr(args, "features", None)
    if feats is not None:
        put("value", "snapshots", feats if feats in ("all", "none") else [float(t) for t in feats.split(",")])
    return out


def dispatch(args: argparse.Namespace, argv=()) -> int:
    if args.workers is not None:
        if args.workers < 1:
            print("error: --workers must be >= 1", file=sys.stderr)
            return EXIT_INVALID
        os.environ["PATHHJB_WORKERS"] = str(args.workers)
    try:
        try:
            overrides = overrides_from_args(args)
        except ValueError as exc:
            raise InvalidConfigError(f"bad --features: {exc}") from None
        cfg = load_config(args.config, overrides)
        if args.command == "verify":
            out = args.out or cfg.output or "report.json"
            code, lines = run_verify(cfg, out)
            meta = os.path.splitext(out)[0] + ".metadata.json"
        else:
            out = args.out or cfg.output or "out"
            if args.command == "simulate":
                code, lines = run_simulate(cfg, out)
            elif args.command == "value":
                code, lines = run_value(cfg, args.mode, out)
            else:
                code, lines = run_crosscheck(cfg, out)
            meta = os.path.join(out, "metadata.json")
        _metadata(meta, argv, os.environ.get("PATHHJB_WORKERS"))
    except (InvalidConfigError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except ResourceError as exc:
        print(f"resource limit: {exc}", file=sys.stderr)
        return EXIT_RESOURCE
    except (DivergenceError, EvaluationError) as exc:
        print(f"numerical divergence: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except PathHJBError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    for line in lines:
        print(line)
    return code


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    args = build_parser().parse_args(argv)
    return dispatch(args, argv)


if __name__ == "__main__":
    sys.exit(main())
