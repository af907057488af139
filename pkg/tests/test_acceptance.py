"""Acceptance suite: one test per criterion, each printing a single PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -s`` to see the lines.
"""

import time
import warnings

import numpy as np

from gpmnet import oracle
from gpmnet.cli import main
from gpmnet.energy import EnergyModel, build_basis
from gpmnet.eval import scaling_curve
from gpmnet.graphs import UndirectedGraph, hamming
from gpmnet.penalty import PenaltyConfig
from gpmnet.synthgen import GenSpec, generate
from gpmnet.train import BasisConfig, TrainConfig, fit, gradient_selfcheck
from gpmnet.types import Dataset, Schema, VariableSpec

SEEDS = range(5)
_cache = {}


def report(num, ok, detail):
    print(f"\n[{'PASS' if ok else 'FAIL'}] criterion {num}: {detail}")
    assert ok, detail


def _fit_hamming(ds, truth, seed, penalty):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        res = fit(ds, BasisConfig(seed=seed), penalty, TrainConfig(seed=seed))
    return hamming(res.graph, truth), res.wall_time


def butterfly_hammings(family, d, penalty=PenaltyConfig("scad", 0.1)):
    key = (family, d, penalty.kind.value, penalty.lam)
    if key not in _cache:
        out = []
        for s in SEEDS:
            g = generate(GenSpec(family, d, 1000, s))
            out.append(_fit_hamming(g.dataset, g.truth, s, penalty))
        _cache[key] = out
    return _cache[key]


def test_criterion_01_discrete_iff():
    t0 = time.perf_counter()
    res = oracle.check_thm1(trials=200, seed=0)
    dt = time.perf_counter() - t0
    report(1, res.passed and res.detail.startswith("200/200") and dt < 10, f"{res.detail}, {dt:.1f} s (< 10 s)")


def test_criterion_02_mixed_iff():
    t0 = time.perf_counter()
    res = oracle.check_thm2(trials=100, seed=0)
    dt = time.perf_counter() - t0
    report(2, res.passed and res.detail.startswith("100/100") and dt < 30, f"{res.detail}, {dt:.1f} s (< 30 s)")


def test_criterion_03_discrete_objective_equivalence():
    res = oracle.check_lemma2(draws=10, seed=0, tol=1e-10)
    report(3, res.passed, f"{res.detail} over 3 spaces x 10 draws (<= 1e-10)")


def test_criterion_04_continuous_objective_equivalence():
    res = oracle.check_lemma1(draws=10, seed=0, rtol=1e-4)
    report(4, res.passed, f"{res.detail} on a 2001-node grid (<= 1e-4)")


def _fixture(seed):
    rng = np.random.default_rng(seed)
    n = 30
    schema = Schema((
        VariableSpec.continuous("A"), VariableSpec.discrete("B", 3),
        VariableSpec.continuous("C"), VariableSpec.discrete("D", 2), VariableSpec.continuous("E"),
    ))
    X = np.column_stack([rng.normal(size=n), rng.integers(0, 3, n), rng.normal(size=n),
                         rng.integers(0, 2, n), rng.normal(size=n)])
    ds = Dataset(schema, X)
    return ds, EnergyModel.zero(schema, build_basis(ds, K=15, seed=seed))


def test_criterion_05_gradient_soundness():
    errs = []
    for seed, kind in zip(range(5), ["scad", "mcp", "l1", "scad", "mcp"]):
        ds, model = _fixture(seed)
        rep = gradient_selfcheck(model, ds, PenaltyConfig(kind, 0.05), draws=1, seed=seed, scale=0.3)
        errs.append(rep.max_rel_error)
    worst = max(errs)
    report(5, worst <= 1e-4, f"max relative error {worst:.2e} over 5 fixtures (<= 1e-4)")


def gaussian_fixture():
    theta = np.eye(5)
    edges = [(0, 1), (0, 2), (1, 2), (1, 3), (2, 4), (3, 4), (0, 3)]
    for k, (i, j) in enumerate(edges):
        theta[i, j] = theta[j, i] = 0.3 * (-1) ** k
    return theta, UndirectedGraph.from_edges(5, edges)


def test_criterion_06_gaussian_recovery():
    theta, truth = gaussian_fixture()
    assert np.all(np.linalg.eigvalsh(theta) > 0)
    assert int(np.sum(np.triu(theta == 0, 1))) == 3
    cov = np.linalg.inv(theta)
    t0 = time.perf_counter()
    hs = []
    for s in SEEDS:
        X = np.random.default_rng(s).multivariate_normal(np.zeros(5), cov, size=2000)
        hs.append(_fit_hamming(Dataset(Schema.all_continuous(5), X), truth, s, PenaltyConfig("scad", 0.1))[0])
    dt = time.perf_counter() - t0
    mean = float(np.mean(hs))
    report(6, mean <= 1 and dt < 300, f"Hamming per seed {hs}, mean {mean:.1f} (<= 1), {dt:.0f} s (< 300 s)")


def test_criterion_07_butterfly_recovery():
    t0 = time.perf_counter()
    parts = []
    ok = True
    for family, d, bound in (("butterfly-c", 8, 2), ("butterfly-d", 6, 2), ("butterfly-m", 6, 3)):
        hs = [h for h, _ in butterfly_hammings(family, d)]
        mean = float(np.mean(hs))
        ok &= mean <= bound
        parts.append(f"{family} d={d} {hs} mean {mean:.1f} (<= {bound})")
    dt = time.perf_counter() - t0
    report(7, ok and dt < 1200, "; ".join(parts) + f"; {dt:.0f} s (< 1200 s)")


def test_criterion_08_scad_vs_l1():
    scad = float(np.mean([h for h, _ in butterfly_hammings("butterfly-c", 8)]))
    l1 = float(np.mean([h for h, _ in butterfly_hammings("butterfly-c", 8, PenaltyConfig("l1", 0.1))]))
    report(8, scad <= l1 + 1, f"mean Hamming SCAD {scad:.1f} vs l1 {l1:.1f} (SCAD <= l1 + 1)")


def test_criterion_09_runtime_scaling():
    res = scaling_curve("butterfly-c", [50, 100, 200], 1000, BasisConfig(K=200),
                        train=TrainConfig(max_iters=200, tol=0))
    pts = ", ".join(f"d={d}: {t:.1f} s" for d, t in res.points)
    report(9, res.slope is not None and res.slope <= 1.5, f"{pts}; log-log slope {res.slope:.2f} (<= 1.5)")


def _run_twice(tmp_path, build):
    outs = []
    for tag in ("a", "b"):
        out = tmp_path / tag
        rc = main([str(a) for a in build(out)])
        assert rc == 0
        outs.append(out)
    return outs


def _same_tree(a, b, skip=("timings.csv",)):
    names = sorted(p.name for p in a.iterdir() if p.is_file() and p.name not in skip and not p.name.endswith(".lock"))
    return names and all((a / n).read_bytes() == (b / n).read_bytes() for n in names)


def test_criterion_10_cli_determinism(tmp_path, capsys):
    det = ["--deterministic", "--seed", "11"]
    checks = {}
    gens = _run_twice(tmp_path / "gen", lambda o: ["generate", "--family", "random-m", "--d", "5", "--n", "300",
                                                   "--out", o, *det])
    checks["generate"] = _same_tree(*gens)
    data = gens[0] / "data.csv"
    fits = _run_twice(tmp_path / "fit", lambda o: ["fit", data, "--max-iters", "150", "--out", o, *det])
    checks["fit"] = _same_tree(*fits)
    bench = _run_twice(tmp_path / "bench", lambda o: ["benchmark", "--family", "butterfly-c", "--d-list", "2", "4",
                                                       "--n", "150", "--seeds", "2", "--max-iters", "40",
                                                       "--out", o, *det])
    checks["benchmark"] = _same_tree(*bench)
    capsys.readouterr()
    outs = []
    for _ in range(2):
        main(["eval", str(fits[0] / "graph.json"), str(gens[0] / "truth.json"), *det])
        outs.append(capsys.readouterr().out)
    checks["eval"] = outs[0] == outs[1]
    outs = []
    for _ in range(2):
        main(["verify", "--trials", "20", *det])
        outs.append(capsys.readouterr().out)
    checks["verify"] = outs[0] == outs[1]
    bad = [k for k, v in checks.items() if not v]
    report(10, not bad, "byte-identical reruns for " + ", ".join(checks) + (f"; differing: {bad}" if bad else ""))
