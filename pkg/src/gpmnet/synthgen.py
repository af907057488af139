"""Synthetic benchmark generators with known Markov networks."""

from __future__ import annotations

import enum
from dataclasses import asdict, dataclass, field

import numpy as np

from .graphs import Dag, UndirectedGraph, moralize, random_decomposable_dag
from .types import Dataset, Schema, VariableSpec


class GenError(ValueError):
    pass


class Family(enum.Enum):
    BUTTERFLY_CONTINUOUS = "butterfly-c"
    BUTTERFLY_DISCRETE = "butterfly-d"
    BUTTERFLY_MIXED = "butterfly-m"
    RANDOM_CONTINUOUS = "random-c"
    RANDOM_DISCRETE = "random-d"
    RANDOM_MIXED = "random-m"

    @classmethod
    def parse(cls, text) -> Family:
        if isinstance(text, cls):
            return text
        for f in cls:
            if f.value == text or f.name.lower() == str(text).lower():
                return f
        raise GenError(f"unknown family {text!r}; choose from {[f.value for f in cls]}")

    @property
    def is_butterfly(self) -> bool:
        return self.value.startswith("butterfly")


@dataclass(frozen=True)
class GenSpec:
    family: Family
    d: int
    n: int
    seed: int = 0
    density: float = 0.3
    mlp_width: int = 16
    card_min: int = 2
    card_max: int = 3
    butterfly_card: int = 2

    def __post_init__(self):
        object.__setattr__(self, "family", Family.parse(self.family))
        if self.n < 1:
            raise GenError("n >= 1 required")
        if self.family.is_butterfly:
            if self.d < 2 or self.d % 2:
                raise GenError(f"butterfly families need an even d >= 2, got {self.d}")
        elif self.d < 2:
            raise GenError("d >= 2 required")
        if not 2 <= self.card_min <= self.card_max:
            raise GenError("need 2 <= card_min <= card_max")
        if self.butterfly_card < 2:
            raise GenError("butterfly cardinality must be >= 2")

    def to_dict(self) -> dict:
        out = asdict(self)
        out["family"] = self.family.value
        return out


@dataclass
class Generated:
    dataset: Dataset
    truth: UndirectedGraph
    dag: Dag | None = None
    params: dict = field(default_factory=dict, repr=False)


def _pair_graph(r: int) -> UndirectedGraph:
    return UndirectedGraph.from_edges(2 * r, [(2 * i, 2 * i + 1) for i in range(r)])


def _pair_names(r: int) -> list[tuple[str, str]]:
    return [(f"P{i + 1}", f"Q{i + 1}") for i in range(r)]


def gen_butterfly_continuous(r: int, n: int, seed=0) -> tuple[Dataset, UndirectedGraph]:
    if r < 1:
        raise GenError("r >= 1 required")
    rng = np.random.default_rng(seed)
    P = rng.standard_normal((n, r))
    W = rng.standard_normal((n, r))
    X = np.empty((n, 2 * r))
    X[:, 0::2], X[:, 1::2] = P, W * P
    specs = [VariableSpec.continuous(nm) for pair in _pair_names(r) for nm in pair]
    return Dataset(Schema(tuple(specs)), X), _pair_graph(r)


def butterfly_discrete_pmf(M: int) -> np.ndarray:
    """Joint PMF of (P, (W P) mod M) with P, W independent uniform on {0..M-1}."""
    pmf = np.zeros((M, M))
    for p in range(M):
        for w in range(M):
            pmf[p, (w * p) % M] += 1.0 / M**2
    return pmf


def gen_butterfly_discrete(r: int, n: int, seed=0, M: int = 2) -> tuple[Dataset, UndirectedGraph]:
    if r < 1:
        raise GenError("r >= 1 required")
    if M < 2:
        raise GenError("M >= 2 required")
    rng = np.random.default_rng(seed)
    P = rng.integers(0, M, size=(n, r))
    W = rng.integers(0, M, size=(n, r))
    X = np.empty((n, 2 * r))
    X[:, 0::2], X[:, 1::2] = P, (W * P) % M
    specs = [VariableSpec.discrete(nm, M) for pair in _pair_names(r) for nm in pair]
    return Dataset(Schema(tuple(specs)), X), _pair_graph(r)


def gen_butterfly_mixed(r: int, n: int, seed=0, M: int = 2) -> tuple[Dataset, UndirectedGraph]:
    """Each pair is continuous or discrete; the discrete proportion is drawn once from U[0, 1]."""
    if r < 1:
        raise GenError("r >= 1 required")
    rng = np.random.default_rng(seed)
    prop = rng.uniform()
    is_disc = rng.uniform(size=r) < prop
    Pc, Wc = rng.standard_normal((n, r)), rng.standard_normal((n, r))
    Pd, Wd = rng.integers(0, M, size=(n, r)), rng.integers(0, M, size=(n, r))
    X = np.empty((n, 2 * r))
    specs = []
    for i, (pn, qn) in enumerate(_pair_names(r)):
        if is_disc[i]:
            X[:, 2 * i], X[:, 2 * i + 1] = Pd[:, i], (Wd[:, i] * Pd[:, i]) % M
            specs += [VariableSpec.discrete(pn, M), VariableSpec.discrete(qn, M)]
        else:
            X[:, 2 * i], X[:, 2 * i + 1] = Pc[:, i], Wc[:, i] * Pc[:, i]
            specs += [VariableSpec.continuous(pn), VariableSpec.continuous(qn)]
    return Dataset(Schema(tuple(specs)), X), _pair_graph(r)


# -- random decomposable graphs --------------------------------------------------


def _mlp(rng, n_in: int, width: int) -> dict:
    return {
        "W1": rng.standard_normal((n_in, width)),
        "b1": rng.standard_normal(width),
        "w2": rng.standard_normal(width),
    }


def _apply_mlp(p: dict, X: np.ndarray) -> np.ndarray:
    return np.tanh(X @ p["W1"] + p["b1"]) @ p["w2"]


def _config_index(cols: list[np.ndarray], cards: list[int]) -> np.ndarray:
    """Mixed-radix index of each row's parent configuration."""
    idx = np.zeros(len(cols[0]) if cols else 0, dtype=np.int64)
    for c, m in zip(cols, cards):
        idx = idx * m + c.astype(np.int64)
    return idx


def _sample_categorical(rng, probs: np.ndarray) -> np.ndarray:
    """One draw per row of a (n, M) probability matrix."""
    u = rng.uniform(size=probs.shape[0])
    cdf = np.cumsum(probs, axis=1)
    return np.minimum((u[:, None] > cdf).sum(axis=1), probs.shape[1] - 1)


def equal_frequency_bins(x: np.ndarray, bins: int) -> np.ndarray:
    """Bin index of each value with (near) equal counts per bin."""
    ranks = np.argsort(np.argsort(x, kind="stable"), kind="stable")
    return (ranks * bins // len(x)).astype(np.int64)


def _random_continuous(spec: GenSpec, rng, dag: Dag) -> Generated:
    n, d = spec.n, spec.d
    X = np.zeros((n, d))
    params = {}
    for v in dag.topological_order():
        pa = list(dag.parents[v])
        noise = rng.exponential(1.0, size=n) - 1.0
        if pa:
            p = _mlp(rng, len(pa), spec.mlp_width)
            params[v] = p
            X[:, v] = _apply_mlp(p, X[:, pa]) + noise
        else:
            X[:, v] = noise
    schema = Schema.all_continuous(d)
    return Generated(Dataset(schema, X), moralize(dag), dag, params)


def _random_discrete(spec: GenSpec, rng, dag: Dag) -> Generated:
    n, d = spec.n, spec.d
    card = rng.integers(spec.card_min, spec.card_max + 1, size=d)
    X = np.zeros((n, d), dtype=np.int64)
    cpds = {}
    for v in dag.topological_order():
        pa = list(dag.parents[v])
        n_cfg = int(np.prod([card[p] for p in pa])) if pa else 1
        table = rng.dirichlet(np.ones(card[v]), size=n_cfg)
        cpds[v] = table
        cfg = _config_index([X[:, p] for p in pa], [int(card[p]) for p in pa]) if pa else np.zeros(n, dtype=np.int64)
        X[:, v] = _sample_categorical(rng, table[cfg])
    schema = Schema(tuple(VariableSpec.discrete(f"X{j + 1}", int(card[j])) for j in range(d)))
    return Generated(Dataset(schema, X.astype(float)), moralize(dag), dag, {"cpds": cpds, "card": card})


def _random_mixed(spec: GenSpec, rng, dag: Dag) -> Generated:
    """Mixed data by partitioned regression and temporary discretization."""
    n, d = spec.n, spec.d
    is_disc = rng.uniform(size=d) < 0.5
    card = np.where(is_disc, rng.integers(2, 5, size=d), 0)  # 2..4 categories
    bins = np.where(is_disc, 0, rng.integers(2, 6, size=d))  # 2..5 temporary bins
    X = np.zeros((n, d))
    tmp = np.zeros((n, d), dtype=np.int64)  # discrete view of every variable
    params = {}
    for v in dag.topological_order():
        pa = list(dag.parents[v])
        dpa = [p for p in pa if is_disc[p]]
        cpa = [p for p in pa if not is_disc[p]]
        if not is_disc[v]:
            if not pa:
                X[:, v] = rng.standard_normal(n)
            else:
                n_part = int(np.prod([card[p] for p in dpa])) if dpa else 1
                part = _config_index([tmp[:, p] for p in dpa], [int(card[p]) for p in dpa]) if dpa else np.zeros(n, dtype=np.int64)
                sign = rng.choice([-1.0, 1.0], size=(n_part, len(cpa) + 1))
                coef = sign * rng.uniform(0.5, 1.5, size=(n_part, len(cpa) + 1))
                params[v] = coef
                lin = coef[part, 0] + np.einsum("nj,nj->n", X[:, cpa], coef[part, 1:]) if cpa else coef[part, 0]
                X[:, v] = lin + rng.standard_normal(n)
                # rescale so long chains stay on a unit scale
                sd = X[:, v].std()
                if sd > 0:
                    X[:, v] = (X[:, v] - X[:, v].mean()) / sd
            tmp[:, v] = equal_frequency_bins(X[:, v], int(bins[v]))
        else:
            cards_pa = [int(card[p]) if is_disc[p] else int(bins[p]) for p in pa]
            n_cfg = int(np.prod(cards_pa)) if pa else 1
            table = rng.dirichlet(np.ones(card[v]), size=n_cfg)
            params[v] = table
            cfg = _config_index([tmp[:, p] for p in pa], cards_pa) if pa else np.zeros(n, dtype=np.int64)
            tmp[:, v] = _sample_categorical(rng, table[cfg])
            X[:, v] = tmp[:, v]
    specs = tuple(
        VariableSpec.discrete(f"X{j + 1}", int(card[j])) if is_disc[j] else VariableSpec.continuous(f"X{j + 1}")
        for j in range(d)
    )
    params["is_discrete"] = is_disc
    return Generated(Dataset(Schema(specs), X), moralize(dag), dag, params)


def generate(spec: GenSpec) -> Generated:
    f = spec.family
    if f.is_butterfly:
        r = spec.d // 2
        if f is Family.BUTTERFLY_CONTINUOUS:
            ds, g = gen_butterfly_continuous(r, spec.n, spec.seed)
        elif f is Family.BUTTERFLY_DISCRETE:
            ds, g = gen_butterfly_discrete(r, spec.n, spec.seed, spec.butterfly_card)
        else:
            ds, g = gen_butterfly_mixed(r, spec.n, spec.seed, spec.butterfly_card)
        return Generated(ds, g)
    rng = np.random.default_rng(spec.seed)
    dag = random_decomposable_dag(spec.d, spec.density, seed=int(rng.integers(2**31)))
    if f is Family.RANDOM_CONTINUOUS:
        return _random_continuous(spec, rng, dag)
    if f is Family.RANDOM_DISCRETE:
        return _random_discrete(spec, rng, dag)
    return _random_mixed(spec, rng, dag)


def gen_random_graph(spec: GenSpec) -> tuple[Dataset, UndirectedGraph]:
    g = generate(spec)
    return g.dataset, g.truth
