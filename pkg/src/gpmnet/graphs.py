"""Undirected graphs, DAGs, moralization and graph distances."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from graphlib import CycleError, TopologicalSorter
from itertools import combinations

import numpy as np


class GraphError(ValueError):
    pass


@dataclass(frozen=True)
class UndirectedGraph:
    d: int
    adjacency: np.ndarray = field(repr=False)

    def __post_init__(self):
        adj = np.array(self.adjacency, dtype=bool, copy=True)
        if adj.shape != (self.d, self.d):
            raise GraphError(f"adjacency must be {self.d}x{self.d}, got {adj.shape}")
        if not np.array_equal(adj, adj.T):
            raise GraphError("adjacency must be symmetric")
        if adj.diagonal().any():
            raise GraphError("self-loops are not allowed")
        adj.setflags(write=False)
        object.__setattr__(self, "adjacency", adj)

    @classmethod
    def empty(cls, d: int) -> UndirectedGraph:
        return cls(d, np.zeros((d, d), bool))

    @classmethod
    def complete(cls, d: int) -> UndirectedGraph:
        return cls(d, ~np.eye(d, dtype=bool))

    @classmethod
    def from_edges(cls, d: int, edges) -> UndirectedGraph:
        adj = np.zeros((d, d), bool)
        for i, j in edges:
            if i == j:
                raise GraphError(f"self-loop on vertex {i}")
            if not (0 <= i < d and 0 <= j < d):
                raise GraphError(f"edge ({i}, {j}) out of range for d={d}")
            adj[i, j] = adj[j, i] = True
        return cls(d, adj)

    def edges(self) -> list[tuple[int, int]]:
        iu, ju = np.nonzero(np.triu(self.adjacency, 1))
        return [(int(i), int(j)) for i, j in zip(iu, ju)]

    @property
    def n_edges(self) -> int:
        return int(np.triu(self.adjacency, 1).sum())

    def neighbors(self, v: int) -> list[int]:
        return [int(u) for u in np.nonzero(self.adjacency[v])[0]]

    def has_edge(self, i: int, j: int) -> bool:
        return bool(self.adjacency[i, j])

    def is_chordal(self) -> bool:
        return is_chordal(self)

    def to_json(self) -> dict:
        return {"d": self.d, "edges": [list(e) for e in self.edges()]}

    @classmethod
    def from_json(cls, obj: dict) -> UndirectedGraph:
        return cls.from_edges(int(obj["d"]), [tuple(e) for e in obj["edges"]])

    def dumps(self) -> str:
        return json.dumps(self.to_json())

    def __eq__(self, other):
        if not isinstance(other, UndirectedGraph):
            return NotImplemented
        return self.d == other.d and np.array_equal(self.adjacency, other.adjacency)

    def __hash__(self):
        return hash((self.d, self.adjacency.tobytes()))


@dataclass(frozen=True)
class Dag:
    d: int
    parents: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        pa = tuple(tuple(sorted(int(p) for p in ps)) for ps in self.parents)
        if len(pa) != self.d:
            raise GraphError(f"need parent lists for {self.d} vertices, got {len(pa)}")
        for v, ps in enumerate(pa):
            for p in ps:
                if not 0 <= p < self.d or p == v:
                    raise GraphError(f"invalid parent {p} of vertex {v}")
        object.__setattr__(self, "parents", pa)
        self.topological_order()

    @classmethod
    def from_edges(cls, d: int, edges) -> Dag:
        pa: list[list[int]] = [[] for _ in range(d)]
        for u, v in edges:
            pa[v].append(u)
        return cls(d, tuple(tuple(p) for p in pa))

    def edges(self) -> list[tuple[int, int]]:
        return sorted((p, v) for v, ps in enumerate(self.parents) for p in ps)

    def topological_order(self) -> list[int]:
        ts = TopologicalSorter({v: ps for v, ps in enumerate(self.parents)})
        try:
            return list(ts.static_order())
        except CycleError as exc:
            raise GraphError(f"directed cycle detected: {exc.args[1]}") from None

    def skeleton(self) -> UndirectedGraph:
        return UndirectedGraph.from_edges(self.d, self.edges())


def moralize(g: Dag) -> UndirectedGraph:
    """Marry co-parents and drop directions."""
    g.topological_order()
    adj = np.zeros((g.d, g.d), bool)
    for v, ps in enumerate(g.parents):
        for p in ps:
            adj[p, v] = adj[v, p] = True
        for a, b in combinations(ps, 2):
            adj[a, b] = adj[b, a] = True
    return UndirectedGraph(g.d, adj)


def hamming(a: UndirectedGraph, b: UndirectedGraph) -> int:
    if a.d != b.d:
        raise GraphError(f"dimension mismatch: {a.d} vs {b.d}")
    return int(np.triu(a.adjacency != b.adjacency, 1).sum())


def edge_diff(truth: UndirectedGraph, estimate: UndirectedGraph) -> tuple[int, int]:
    """(extra, missing) edge counts of ``estimate`` relative to ``truth``."""
    if truth.d != estimate.d:
        raise GraphError(f"dimension mismatch: {truth.d} vs {estimate.d}")
    t = np.triu(truth.adjacency, 1)
    e = np.triu(estimate.adjacency, 1)
    return int((e & ~t).sum()), int((t & ~e).sum())


def maximum_cardinality_order(g: UndirectedGraph) -> list[int]:
    """Visit order of maximum cardinality search (ties broken by lowest index)."""
    weight = np.zeros(g.d, int)
    visited = np.zeros(g.d, bool)
    order = []
    for _ in range(g.d):
        cand = np.where(visited, -1, weight)
        v = int(np.argmax(cand))
        order.append(v)
        visited[v] = True
        weight[g.adjacency[v] & ~visited] += 1
    return order


def is_chordal(g: UndirectedGraph) -> bool:
    """Tarjan-Yannakakis test: the reverse MCS order must be a perfect elimination order."""
    order = maximum_cardinality_order(g)
    pos = {v: k for k, v in enumerate(order)}
    for v in order:
        earlier = [u for u in g.neighbors(v) if pos[u] < pos[v]]
        if len(earlier) < 2:
            continue
        # the latest earlier neighbour must be adjacent to all other earlier ones
        w = max(earlier, key=pos.__getitem__)
        for u in earlier:
            if u != w and not g.adjacency[u, w]:
                return False
    return True


def random_decomposable_dag(d: int, density: float = 0.3, seed=0) -> Dag:
    """Random DAG whose moral graph is chordal.

    Vertices are inserted in a random order; each new vertex attaches to a
    random subset of an existing clique, with the subset size drawn as
    Binomial(#earlier vertices, density).  Its parents are exactly that
    subset, so parents are always pairwise adjacent and moralization adds
    nothing beyond the chordal skeleton.
    """
    if d < 2:
        raise GraphError("d >= 2 required")
    if not 0 < density <= 1:
        raise GraphError("density must lie in (0, 1]")
    rng = np.random.default_rng(seed)
    order = rng.permutation(d)
    parents: list[tuple[int, ...]] = [()] * d
    cliques: list[tuple[int, ...]] = [(int(order[0]),)]
    for t in range(1, d):
        v = int(order[t])
        size = int(rng.binomial(t, density))
        if size == 0:
            cliques.append((v,))
            continue
        big = [c for c in cliques if len(c) >= size]
        if big:
            base = big[int(rng.integers(len(big)))]
        else:
            base = max(cliques, key=len)
            size = len(base)
        chosen = tuple(sorted(int(u) for u in rng.choice(base, size=size, replace=False)))
        parents[v] = chosen
        cliques.append(chosen + (v,))
    return Dag(d, tuple(parents))
