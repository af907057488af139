"""Command-line entry point: generate, fit, eval, benchmark, verify.

Exit codes: 0 success, 1 runtime failure, 2 usage or validation error.
"""

from __future__ import annotations

import argparse
import json
import sys
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import oracle
from .energy import ModelError, save_model
from .eval import BenchmarkError, BenchmarkSpec, preset, run_benchmark
from .gpm import GpmError
from .graphs import GraphError, UndirectedGraph, edge_diff, hamming
from .penalty import PenaltyConfig, PenaltyError
from .synthgen import Family, GenError, GenSpec, generate
from .train import BasisConfig, ConfigError, TrainConfig, TrainingError, fit
from .types import DataError, load_dataset, save_dataset


class UsageError(Exception):
    pass


USAGE_ERRORS = (UsageError, DataError, GenError, ConfigError, PenaltyError, GraphError, GpmError,
                ModelError, BenchmarkError, FileNotFoundError, IsADirectoryError)


def _opt_int(text: str) -> int | None:
    return None if str(text).lower() in ("none", "") else int(text)


def _opt_float(text: str) -> float | None:
    return None if str(text).lower() in ("none", "") else float(text)


def _bool(text: str) -> bool:
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise UsageError(f"not a boolean: {text!r}")


def _batch(text: str) -> int | str:
    return "full" if text == "full" else int(text)


@dataclass(frozen=True)
class Key:
    flag: str
    parse: object
    default: object
    help: str


# Flat dotted config keys shared by `fit` and `benchmark`; flags override file values.
CONFIG_KEYS = {
    "penalty.kind": Key("--penalty", str, "scad", "penalty: l1, adaptive-l1, scad, mcp"),
    "penalty.lambda": Key("--lambda", float, 0.1, "penalty strength in [0, 1]"),
    "penalty.scad_a": Key("--scad-a", float, 3.7, "SCAD shape parameter (> 2)"),
    "penalty.mcp_gamma": Key("--mcp-gamma", float, 3.0, "MCP shape parameter (> 1)"),
    "basis.K": Key("--K", _opt_int, None, "number of feature centers (none = automatic)"),
    "basis.alpha": Key("--alpha", float, 0.05, "quadratic anchor weight on continuous coordinates"),
    "basis.scope_size": Key("--scope-size", _opt_int, 2, "coordinates per feature (none = all)"),
    "basis.unary": Key("--unary", _bool, True, "add single-coordinate features"),
    "basis.bandwidth_scale": Key("--bandwidth-scale", float, 1.0, "multiplier on median-heuristic bandwidths"),
    "train.lr": Key("--lr", float, 0.01, "Adam step size"),
    "train.max_iters": Key("--max-iters", int, 2000, "iteration cap (0 = keep theta at zero)"),
    "train.tol": Key("--tol", float, 1e-6, "relative change of windowed mean loss that stops training"),
    "train.window": Key("--window", int, 20, "window length for the stopping rule"),
    "train.batch": Key("--batch", _batch, "full", "'full' or a minibatch size"),
    "train.smoothing": Key("--smoothing", float, 0.05, "weight of substitution pseudo-rows for discrete terms"),
    "train.standardize": Key("--standardize", _bool, True, "z-score continuous columns before fitting"),
    "graph.policy": Key("--policy", str, "gap", "threshold policy: gap or absolute"),
    "graph.tau": Key("--tau", _opt_float, None, "threshold for the absolute policy"),
}


def _dest(key: str) -> str:
    return "cfg_" + key.replace(".", "_")


def read_config(path) -> dict:
    """Parse a flat ``key=value`` file; '#' starts a comment; unknown keys are rejected."""
    out = {}
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"config file not found: {path}")
    for lineno, raw in enumerate(p.read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key=value")
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in CONFIG_KEYS:
            raise UsageError(f"{path}:{lineno}: unknown config key {key!r}")
        try:
            out[key] = CONFIG_KEYS[key].parse(val)
        except ValueError as exc:
            raise UsageError(f"{path}:{lineno}: bad value for {key}: {exc}") from None
    return out


def resolve_config(args) -> dict:
    """Defaults, then the config file, then explicit flags."""
    cfg = {k: v.default for k, v in CONFIG_KEYS.items()}
    if getattr(args, "config", None):
        cfg.update(read_config(args.config))
    for k in CONFIG_KEYS:
        v = getattr(args, _dest(k), None)
        if v is not None:
            cfg[k] = v
    return cfg


def build_configs(cfg: dict, seed: int) -> tuple[BasisConfig, PenaltyConfig, TrainConfig]:
    basis = BasisConfig(
        K=cfg["basis.K"], alpha=cfg["basis.alpha"], scope_size=cfg["basis.scope_size"],
        unary=cfg["basis.unary"], bandwidth_scale=cfg["basis.bandwidth_scale"], seed=seed,
    )
    pen = PenaltyConfig(cfg["penalty.kind"], cfg["penalty.lambda"], cfg["penalty.scad_a"], cfg["penalty.mcp_gamma"])
    train = TrainConfig(
        lr=cfg["train.lr"], max_iters=cfg["train.max_iters"], tol=cfg["train.tol"], window=cfg["train.window"],
        batch=cfg["train.batch"], seed=seed, standardize=cfg["train.standardize"],
        discrete_smoothing=cfg["train.smoothing"],
    )
    return basis, pen, train


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key=value file with dotted keys (see the README)")
    for k, spec in CONFIG_KEYS.items():
        p.add_argument(spec.flag, dest=_dest(k), type=spec.parse, default=None,
                       help=f"{spec.help} [{k}, default {spec.default}]")


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=0, help="random seed (default 0)")
    p.add_argument("--deterministic", action="store_true",
                   help="keep timings out of primary outputs so reruns are byte-identical")


def _write(path: Path, text: str) -> None:
    path.write_text(text, encoding="utf-8")


def _json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


# -- commands --------------------------------------------------------------------------


def cmd_generate(args) -> int:
    if args.pairs is not None and args.d is not None:
        raise UsageError("give --pairs or --d, not both")
    d = 2 * args.pairs if args.pairs is not None else args.d
    if d is None:
        raise UsageError("one of --pairs or --d is required")
    spec = GenSpec(Family.parse(args.family), d, args.n, args.seed, density=args.density)
    gen = generate(spec)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_dataset(gen.dataset, out / "data.csv")
    _write(out / "truth.json", _json(gen.truth.to_json()))
    prov = {"generator": spec.to_dict(), "dag": [list(e) for e in gen.dag.edges()] if gen.dag else None}
    _write(out / "provenance.json", _json(prov))
    print(str(out))
    return 0


def cmd_fit(args) -> int:
    cfg = resolve_config(args)
    ds = load_dataset(args.data)
    basis, pen, train = build_configs(cfg, args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    log_path = out / "train_log.jsonl"
    try:
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", RuntimeWarning)
            res = fit(ds, basis, pen, train, log_path=log_path,
                      graph_policy=cfg["graph.policy"], tau=cfg["graph.tau"])
    except TrainingError as exc:
        print(f"error: {exc}; see {log_path}", file=sys.stderr)
        return 1
    save_model(res.model, out / "model.json")
    if res.standardization is not None:
        _write(out / "standardization.json", _json(res.standardization.to_dict()))
    _write(out / "omega_squared.csv", res.gpm.to_csv())
    _write(out / "omega_rooted.csv", res.gpm.rooted().to_csv())
    _write(out / "graph.json", _json(res.graph.to_json()))
    run = {"iterations": res.iterations, "converged": res.converged, "descent_warning": res.descent_warning,
           "config": {k: v for k, v in cfg.items()}, "seed": args.seed}
    if not args.deterministic:
        run["wall_time"] = res.wall_time
    _write(out / "run.json", _json(run))
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    print(res.graph.dumps())
    return 0


def _load_graph(path) -> UndirectedGraph:
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"graph file not found: {path}")
    try:
        return UndirectedGraph.from_json(json.loads(p.read_text(encoding="utf-8")))
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise UsageError(f"malformed graph file {path}: {exc}") from None


def cmd_eval(args) -> int:
    est, truth = _load_graph(args.estimate), _load_graph(args.truth)
    if est.d != truth.d:
        raise UsageError(f"dimension mismatch: estimate has d={est.d}, truth has d={truth.d}")
    extra, missing = edge_diff(truth, est)
    print(json.dumps({"hamming": hamming(est, truth), "d": est.d, "extra_edges": extra, "missing_edges": missing},
                     sort_keys=True))
    return 0


def cmd_benchmark(args) -> int:
    if args.preset:
        spec = preset(args.preset, args.out)
    else:
        if not args.family or not args.d_list:
            raise UsageError("give --preset or both --family and --d-list")
        cfg = resolve_config(args)
        basis, pen, train = build_configs(cfg, args.seed)
        gens = tuple(GenSpec(Family.parse(args.family), d, args.n, 0) for d in args.d_list)
        spec = BenchmarkSpec(gens, tuple(range(args.seed, args.seed + args.seeds)), basis, pen, train, args.out,
                             graph_policy=cfg["graph.policy"], tau=cfg["graph.tau"])
    rows = run_benchmark(spec, jobs=args.jobs, deterministic=args.deterministic)
    failed = [r for r in rows if r.error]
    for r in failed:
        print(f"cell {r.family} d={r.d} seed={r.seed} failed: {r.error}", file=sys.stderr)
    print(str(Path(args.out) / "results.csv"))
    return 0


def cmd_verify(args) -> int:
    results = oracle.run_battery(args.trials, args.seed)
    report = [r.to_dict() for r in results]
    if args.deterministic:
        for r in report:
            r.pop("seconds")
    print(json.dumps({"passed": all(r.passed for r in results), "checks": report}, indent=2, sort_keys=True))
    bad = [r.name for r in results if not r.passed]
    if bad:
        print("failed checks: " + ", ".join(bad), file=sys.stderr)
        return 1
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="gpmnet", description="Markov network discovery from score-matching energy models.")
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a synthetic dataset, its true graph and provenance")
    g.add_argument("--family", required=True, help=f"one of {[f.value for f in Family]}")
    g.add_argument("--pairs", type=int, help="butterfly pairs r (d = 2r)")
    g.add_argument("--d", type=int, help="number of variables")
    g.add_argument("--n", type=int, default=1000, help="rows (default 1000)")
    g.add_argument("--density", type=float, default=0.3, help="edge density for random graphs (default 0.3)")
    g.add_argument("--out", required=True, help="output directory")
    _add_common(g)
    g.set_defaults(func=cmd_generate)

    f = sub.add_parser("fit", help="fit an energy model and write model, GPM, graph and training log")
    f.add_argument("data", help="dataset CSV (two header rows) or JSON")
    f.add_argument("--out", default="fit_out", help="output directory (default fit_out)")
    _add_config_flags(f)
    _add_common(f)
    f.set_defaults(func=cmd_fit)

    e = sub.add_parser("eval", help="compare an estimated graph with the truth")
    e.add_argument("estimate", help="graph JSON")
    e.add_argument("truth", help="graph JSON")
    _add_common(e)
    e.set_defaults(func=cmd_eval)

    b = sub.add_parser("benchmark", help="sweep generator cells and record Hamming distances")
    b.add_argument("--preset", help="named sweep (butterfly-small)")
    b.add_argument("--family", help="generator family for a custom sweep")
    b.add_argument("--d-list", type=int, nargs="+", help="dimensions for a custom sweep")
    b.add_argument("--n", type=int, default=1000, help="rows per dataset (default 1000)")
    b.add_argument("--seeds", type=int, default=5, help="seeds per cell, starting at --seed (default 5)")
    b.add_argument("--jobs", type=int, default=1, help="parallel worker processes (default 1)")
    b.add_argument("--out", default="bench", help="output directory (default bench)")
    _add_config_flags(b)
    _add_common(b)
    b.set_defaults(func=cmd_benchmark)

    v = sub.add_parser("verify", help="run the exact oracle battery; exit 0 iff every check passes")
    v.add_argument("--trials", type=int, default=200, help="random tables for the discrete iff check (default 200)")
    _add_common(v)
    v.set_defaults(func=cmd_verify)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    np.random.seed(args.seed)
    try:
        return args.func(args)
    except USAGE_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
