"""Benchmark harness: sweep generator cells, fit, score Hamming distance, time scaling."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np
from filelock import FileLock

from .gpm import compute_gpm_generic, extract_graph
from .graphs import UndirectedGraph, hamming
from .oracle import ButterflyModel
from .penalty import PenaltyConfig
from .synthgen import Family, GenSpec, Generated, generate
from .train import BasisConfig, TrainConfig, fit


class BenchmarkError(ValueError):
    pass


RESULTS_CSV = "results.csv"
SUMMARY_JSON = "summary.json"
TIMINGS_CSV = "timings.csv"


@dataclass(frozen=True)
class ResultRow:
    family: str
    d: int
    n: int
    seed: int
    hamming: int
    wall_time: float
    converged: bool
    config: str = ""
    error: str = ""

    @property
    def key(self) -> tuple:
        return (self.family, self.d, self.n, self.seed, self.config)

    @classmethod
    def from_record(cls, rec: dict) -> ResultRow:
        wt = rec["wall_time"]
        return cls(
            rec["family"], int(rec["d"]), int(rec["n"]), int(rec["seed"]), int(rec["hamming"]),
            float(wt) if wt not in ("", None) else float("nan"),
            str(rec["converged"]) in ("True", "true", "1"), rec.get("config", ""), rec.get("error", ""),
        )


COLUMNS = [f.name for f in fields(ResultRow)]


def oracle_estimator(gen: Generated) -> tuple[UndirectedGraph, bool]:
    """Graph read off the exact continuous butterfly density instead of a fitted model."""
    ds = gen.dataset
    if ds.d % 2 or ds.schema.discrete_indices:
        raise BenchmarkError("the lookup oracle covers continuous butterfly data only")
    gpm = compute_gpm_generic(ButterflyModel(ds.d // 2), ds.values)
    return extract_graph(gpm, "absolute", 1e-12), True


@dataclass(frozen=True)
class BenchmarkSpec:
    generators: tuple[GenSpec, ...] = ()
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    basis: BasisConfig = field(default_factory=BasisConfig)
    penalty: PenaltyConfig = field(default_factory=PenaltyConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    out_dir: str = "bench"
    estimator: str = "fit"  # "fit" or "oracle"
    graph_policy: str = "gap"
    tau: float | None = None

    def __post_init__(self):
        if self.estimator not in ("fit", "oracle"):
            raise BenchmarkError(f"unknown estimator {self.estimator!r}")
        if len(set(self.seeds)) != len(self.seeds):
            raise BenchmarkError("seeds must be distinct")

    def config_key(self) -> str:
        """Short digest of everything except the generator cell, used for dedup."""
        pen = asdict(self.penalty)
        pen["kind"] = self.penalty.kind.value
        pen["adaptive_weights"] = None
        blob = json.dumps(
            {"basis": asdict(self.basis), "penalty": pen, "train": asdict(self.train),
             "estimator": self.estimator, "policy": self.graph_policy, "tau": self.tau},
            sort_keys=True,
        )
        return hashlib.sha256(blob.encode()).hexdigest()[:12]

    def cells(self) -> list[GenSpec]:
        return [replace(g, seed=s) for g in self.generators for s in self.seeds]


def run_cell(spec: BenchmarkSpec, gen_spec: GenSpec) -> ResultRow:
    """Generate, estimate and score one cell; failures become rows with converged=False."""
    base = dict(family=gen_spec.family.value, d=gen_spec.d, n=gen_spec.n, seed=gen_spec.seed, config=spec.config_key())
    try:
        gen = generate(gen_spec)
        if spec.estimator == "oracle":
            t0 = time.perf_counter()
            graph, conv = oracle_estimator(gen)
            wall = time.perf_counter() - t0
        else:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                res = fit(
                    gen.dataset, spec.basis, spec.penalty, replace(spec.train, seed=gen_spec.seed),
                    graph_policy=spec.graph_policy, tau=spec.tau,
                )
            graph, conv, wall = res.graph, res.converged, res.wall_time
        return ResultRow(hamming=hamming(graph, gen.truth), wall_time=wall, converged=conv, **base)
    except Exception as exc:  # recorded per cell, never fatal to the sweep
        worst = gen_spec.d * (gen_spec.d - 1) // 2
        return ResultRow(hamming=worst, wall_time=float("nan"), converged=False,
                         error=f"{type(exc).__name__}: {exc}"[:300], **base)


def read_results(path) -> list[ResultRow]:
    p = Path(path)
    if not p.exists():
        return []
    with open(p, newline="", encoding="utf-8") as fh:
        return [ResultRow.from_record(r) for r in csv.DictReader(fh)]


def _row_record(row: ResultRow, deterministic: bool) -> dict:
    rec = asdict(row)
    rec["wall_time"] = "" if deterministic else f"{row.wall_time:.6f}"
    return rec


def append_row(path, row: ResultRow, deterministic: bool = False) -> bool:
    """Append ``row`` under an exclusive lock unless its cell key is already present."""
    path = Path(path)
    with FileLock(str(path) + ".lock"):
        if any(r.key == row.key for r in read_results(path)):
            return False
        new = not path.exists()
        buf = io.StringIO()
        w = csv.DictWriter(buf, COLUMNS, lineterminator="\n")
        if new:
            w.writeheader()
        w.writerow(_row_record(row, deterministic))
        with open(path, "a", encoding="utf-8", newline="") as fh:
            fh.write(buf.getvalue())
        if deterministic:
            tpath = path.with_name(TIMINGS_CSV)
            with open(tpath, "a", encoding="utf-8") as fh:
                fh.write(f"{row.family},{row.d},{row.n},{row.seed},{row.config},{row.wall_time:.6f}\n")
    return True


def summarize(rows: list[ResultRow]) -> list[dict]:
    groups: dict[tuple, list[ResultRow]] = {}
    for r in rows:
        groups.setdefault((r.family, r.d), []).append(r)
    out = []
    for (fam, d), rs in sorted(groups.items()):
        h = np.array([r.hamming for r in rs], float)
        out.append({
            "family": fam, "d": d, "cells": len(rs),
            "mean_hamming": float(h.mean()), "sd_hamming": float(h.std(ddof=1)) if len(h) > 1 else 0.0,
            "failed": sum(1 for r in rs if r.error),
        })
    return out


def run_benchmark(spec: BenchmarkSpec, jobs: int = 1, deterministic: bool = False) -> list[ResultRow]:
    """Run every missing cell of ``spec``; return the spec's rows sorted by cell key.

    Completed cells already present in the results CSV are skipped, so a
    rerun is a no-op.  With ``deterministic`` wall times go to a separate
    timings file and the results CSV is byte-reproducible (jobs forced to 1).
    """
    out = Path(spec.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / RESULTS_CSV
    cfg = spec.config_key()
    done = {r.key for r in read_results(path)}
    todo = [g for g in spec.cells() if (g.family.value, g.d, g.n, g.seed, cfg) not in done]
    if deterministic:
        jobs = 1
    if jobs > 1 and len(todo) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futs = [pool.submit(run_cell, spec, g) for g in todo]
            for f in futs:
                append_row(path, f.result(), deterministic)
    else:
        for g in todo:
            append_row(path, run_cell(spec, g), deterministic)
    wanted = {(g.family.value, g.d, g.n, g.seed, cfg) for g in spec.cells()}
    rows = sorted((r for r in read_results(path) if r.key in wanted), key=lambda r: r.key)
    (out / SUMMARY_JSON).write_text(json.dumps(summarize(rows), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return rows


@dataclass(frozen=True)
class ScalingResult:
    points: tuple[tuple[int, float], ...]
    slope: float | None

    def to_dict(self) -> dict:
        return {"points": [list(p) for p in self.points], "slope": self.slope}


def loglog_slope(ds, times) -> float | None:
    ds, times = np.asarray(ds, float), np.asarray(times, float)
    if len(ds) < 2:
        return None
    return float(np.polyfit(np.log(ds), np.log(times), 1)[0])


def scaling_curve(
    family, d_list, n: int, basis: BasisConfig | None = None, penalty: PenaltyConfig | None = None,
    train: TrainConfig | None = None, seed: int = 0,
) -> ScalingResult:
    """Fit wall time (generation excluded, GPM extraction included) for each d, plus the log-log slope."""
    d_list = [int(d) for d in d_list]
    if d_list != sorted(d_list):
        raise BenchmarkError("d-list must be ascending")
    pts = []
    for d in d_list:
        gen = generate(GenSpec(Family.parse(family), d, n, seed))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            res = fit(gen.dataset, basis, penalty, train)
        pts.append((d, res.wall_time))
    return ScalingResult(tuple(pts), loglog_slope([p[0] for p in pts], [p[1] for p in pts]))


PRESETS = {
    "butterfly-small": lambda out_dir: BenchmarkSpec(
        generators=tuple(GenSpec(Family.BUTTERFLY_CONTINUOUS, d, 300) for d in (2, 4)),
        train=TrainConfig(max_iters=300),
        out_dir=out_dir,
    ),
}


def preset(name: str, out_dir: str = "bench") -> BenchmarkSpec:
    if name not in PRESETS:
        raise BenchmarkError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return PRESETS[name](out_dir)
