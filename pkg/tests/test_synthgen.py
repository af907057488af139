import numpy as np
import pytest

from gpmnet.graphs import is_chordal
from gpmnet.synthgen import (
    Family, GenError, GenSpec, butterfly_discrete_pmf, equal_frequency_bins, gen_butterfly_continuous,
    gen_butterfly_discrete, gen_butterfly_mixed, gen_random_graph, generate,
)


def test_butterfly_truth_and_order():
    ds, g = gen_butterfly_continuous(2, 10, seed=0)
    assert g.edges() == [(0, 1), (2, 3)]
    assert ds.schema.names == ["P1", "Q1", "P2", "Q2"]


def test_butterfly_nongaussian_dependence():
    ds, _ = gen_butterfly_continuous(1, 5000, seed=1)
    p, q = ds.values.T
    assert abs(np.corrcoef(p, q)[0, 1]) < 0.05
    assert np.corrcoef(p**2, q**2)[0, 1] > 0.2


@pytest.mark.parametrize("gen", [gen_butterfly_continuous, gen_butterfly_discrete, gen_butterfly_mixed])
def test_butterfly_deterministic_and_matching(gen):
    a, ga = gen(3, 200, seed=5)
    b, _ = gen(3, 200, seed=5)
    assert np.array_equal(a.values, b.values) and a.schema == b.schema
    assert ga.edges() == [(0, 1), (2, 3), (4, 5)]
    deg = ga.adjacency.sum(axis=0)
    assert np.all(deg == 1)


def test_discrete_pmf_dependence_and_pair_independence():
    pmf = butterfly_discrete_pmf(2)
    np.testing.assert_allclose(pmf, [[0.5, 0], [0.25, 0.25]])
    # dependence: the joint differs from the product of marginals
    assert np.max(np.abs(pmf - np.outer(pmf.sum(1), pmf.sum(0)))) > 0.1
    # two independent pairs: the 4-way table factorizes across pairs
    joint = np.einsum("ab,cd->abcd", pmf, pmf)
    pair1 = joint.sum(axis=(2, 3))
    pair2 = joint.sum(axis=(0, 1))
    np.testing.assert_allclose(joint, np.einsum("ab,cd->abcd", pair1, pair2), atol=1e-15)


def test_discrete_samples_follow_pmf():
    ds, _ = gen_butterfly_discrete(1, 20000, seed=0)
    counts = np.zeros((2, 2))
    np.add.at(counts, (ds.values[:, 0].astype(int), ds.values[:, 1].astype(int)), 1)
    np.testing.assert_allclose(counts / counts.sum(), butterfly_discrete_pmf(2), atol=0.02)


def test_mixed_pairs_share_type():
    ds, _ = gen_butterfly_mixed(6, 50, seed=2)
    mask = ds.schema.discrete_mask
    assert np.array_equal(mask[0::2], mask[1::2])


@pytest.mark.parametrize("fam, d", [("butterfly-c", 3), ("butterfly-d", 0), ("random-c", 1)])
def test_bad_dimensions(fam, d):
    with pytest.raises(GenError):
        GenSpec(fam, d, 10)


def test_unknown_family():
    with pytest.raises(GenError, match="unknown family"):
        Family.parse("spiral")


def test_continuous_two_node_correlation():
    hits = 0
    for seed in range(10):
        spec = GenSpec("random-c", 2, 5000, seed, density=1.0)
        gen = generate(spec)
        assert gen.dag.edges() and len(gen.dag.edges()) == 1
        hits += abs(np.corrcoef(gen.dataset.values.T)[0, 1]) > 0.05
    assert hits >= 9


def test_discrete_root_marginal():
    gen = generate(GenSpec("random-d", 5, 5000, 3))
    roots = [v for v in range(5) if not gen.dag.parents[v]]
    for v in roots:
        p = gen.params["cpds"][v][0]
        emp = np.bincount(gen.dataset.values[:, v].astype(int), minlength=len(p)) / 5000
        assert 0.5 * np.abs(emp - p).sum() < 0.05


def test_mixed_random_columns_and_types():
    gen = generate(GenSpec("random-m", 8, 500, 4))
    ds = gen.dataset
    assert ds.d == 8
    for j in ds.schema.discrete_indices:
        assert 2 <= ds.schema.cardinality(j) <= 4
    for j in ds.schema.continuous_indices:
        if not gen.dag.parents[j]:
            continue
        assert abs(ds.values[:, j].mean()) < 1e-9


@pytest.mark.parametrize("fam", ["random-c", "random-d", "random-m"])
def test_random_graph_truth_chordal_and_pure(fam):
    for seed in range(5):
        spec = GenSpec(fam, 7, 100, seed)
        ds, g = gen_random_graph(spec)
        ds2, g2 = gen_random_graph(spec)
        assert np.array_equal(ds.values, ds2.values) and g == g2
        assert is_chordal(g)


def test_equal_frequency_bins():
    b = equal_frequency_bins(np.random.default_rng(0).normal(size=100), 4)
    assert np.array_equal(np.bincount(b), [25, 25, 25, 25])
