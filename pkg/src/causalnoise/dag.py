"""Directed acyclic causal graphs: sampling, validation, ordering, perturbation, comparison.

Nodes are dense integer indices ``0..n-1``. Sampled graphs are relabelled so that
their topological order is the identity, which keeps rendered variable order stable.
"""

from __future__ import annotations

import heapq
import itertools
import math
from dataclasses import dataclass
from enum import Enum
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np

from .errors import CycleDetected, InvalidSize, NoValidPerturbation, SamplingExhausted, UnknownNode
from .records import NoiseRecord

MIN_NODES = 3
MAX_NODES = 7
MAX_ATTEMPTS = 10_000

Edge = tuple[int, int]


class Motif(str, Enum):
    CHAIN = "chain"
    FORK = "fork"
    COLLIDER = "collider"
    MULTI_PARENT = "multi_parent"
    MIXED = "mixed"


class PerturbKind(str, Enum):
    EDGE_DELETION = "edge_deletion"
    FALSE_EDGE = "false_edge"
    DIRECTION_REVERSAL = "direction_reversal"

    @property
    def code(self) -> str:
        return {"edge_deletion": "ED", "false_edge": "FE", "direction_reversal": "DR"}[self.value]

    @classmethod
    def parse(cls, text: str) -> "PerturbKind":
        key = text.strip().lower()
        for k in cls:
            if key in (k.value, k.code.lower()):
                return k
        raise ValueError(f"unknown perturbation kind {text!r}")


@dataclass(frozen=True)
class Dag:
    node_count: int
    edges: tuple[Edge, ...]

    def __post_init__(self):
        object.__setattr__(self, "edges", tuple(sorted((int(u), int(v)) for u, v in self.edges)))

    @classmethod
    def from_edges(cls, node_count: int, edges: Iterable[Sequence[int]]) -> "Dag":
        return cls(int(node_count), tuple((int(u), int(v)) for u, v in edges))

    @cached_property
    def edge_set(self) -> frozenset[Edge]:
        return frozenset(self.edges)

    @cached_property
    def _parents(self) -> tuple[tuple[int, ...], ...]:
        out: list[list[int]] = [[] for _ in range(self.node_count)]
        for u, v in self.edge_set:
            if 0 <= v < self.node_count:
                out[v].append(u)
        return tuple(tuple(sorted(p)) for p in out)

    @cached_property
    def _children(self) -> tuple[tuple[int, ...], ...]:
        out: list[list[int]] = [[] for _ in range(self.node_count)]
        for u, v in self.edge_set:
            if 0 <= u < self.node_count:
                out[u].append(v)
        return tuple(tuple(sorted(c)) for c in out)

    def parents(self, node: int) -> tuple[int, ...]:
        return self._parents[node]

    def children(self, node: int) -> tuple[int, ...]:
        return self._children[node]

    @property
    def roots(self) -> tuple[int, ...]:
        return tuple(i for i in range(self.node_count) if not self._parents[i])

    @property
    def sinks(self) -> tuple[int, ...]:
        return tuple(i for i in range(self.node_count) if not self._children[i])

    @cached_property
    def topo_order(self) -> tuple[int, ...]:
        return topo_order(self)

    def descendants(self, node: int) -> frozenset[int]:
        seen: set[int] = set()
        stack = list(self._children[node])
        while stack:
            x = stack.pop()
            if x not in seen:
                seen.add(x)
                stack.extend(self._children[x])
        return frozenset(seen)

    def ancestors(self, node: int) -> frozenset[int]:
        seen: set[int] = set()
        stack = list(self._parents[node])
        while stack:
            x = stack.pop()
            if x not in seen:
                seen.add(x)
                stack.extend(self._parents[x])
        return frozenset(seen)

    def has_path(self, src: int, dst: int) -> bool:
        return dst in self.descendants(src)

    def with_edges(self, edges: Iterable[Edge]) -> "Dag":
        return Dag(self.node_count, tuple(edges))

    def to_dict(self) -> dict:
        return {"node_count": self.node_count, "edges": [list(e) for e in self.edges]}

    @classmethod
    def from_dict(cls, d: dict) -> "Dag":
        return cls.from_edges(d["node_count"], d["edges"])


def _is_acyclic(n: int, edges: Iterable[Edge]) -> bool:
    indeg = [0] * n
    adj: list[list[int]] = [[] for _ in range(n)]
    for u, v in edges:
        adj[u].append(v)
        indeg[v] += 1
    stack = [i for i in range(n) if indeg[i] == 0]
    seen = 0
    while stack:
        x = stack.pop()
        seen += 1
        for y in adj[x]:
            indeg[y] -= 1
            if indeg[y] == 0:
                stack.append(y)
    return seen == n


def _is_connected(n: int, edges: Iterable[Edge]) -> bool:
    if n == 0:
        return True
    adj: list[set[int]] = [set() for _ in range(n)]
    for u, v in edges:
        adj[u].add(v)
        adj[v].add(u)
    seen = {0}
    stack = [0]
    while stack:
        for y in adj[stack.pop()]:
            if y not in seen:
                seen.add(y)
                stack.append(y)
    return len(seen) == n


def validate(dag: Dag) -> list[str]:
    """Return every violated graph invariant; an empty list means the graph is valid."""
    problems: list[str] = []
    n = dag.node_count
    if n < 1:
        return [f"node_count must be positive, got {n}"]
    in_range = []
    for u, v in dag.edges:
        if not (0 <= u < n and 0 <= v < n):
            problems.append(f"edge ({u},{v}) references a node outside 0..{n - 1}")
        elif u == v:
            problems.append(f"self-loop on node {u}")
        else:
            in_range.append((u, v))
    if len(set(dag.edges)) != len(dag.edges):
        dupes = sorted({e for e in dag.edges if dag.edges.count(e) > 1})
        problems.append(f"duplicate edges {dupes}")
    if not _is_acyclic(n, set(in_range)):
        problems.append("cycle")
    if not _is_connected(n, in_range):
        problems.append("disconnected")
    return problems


def topo_order(dag: Dag) -> tuple[int, ...]:
    """Kahn's algorithm; ties are broken by ascending node index."""
    n = dag.node_count
    indeg = [0] * n
    for _, v in dag.edge_set:
        indeg[v] += 1
    heap = [i for i in range(n) if indeg[i] == 0]
    heapq.heapify(heap)
    order: list[int] = []
    while heap:
        x = heapq.heappop(heap)
        order.append(x)
        for y in dag.children(x):
            indeg[y] -= 1
            if indeg[y] == 0:
                heapq.heappush(heap, y)
    if len(order) != n:
        raise CycleDetected(f"graph with {n} nodes contains a cycle")
    return tuple(order)


def _relabel_topological(n: int, edges: Iterable[Edge]) -> Dag:
    g = Dag(n, tuple(edges))
    pos = {node: i for i, node in enumerate(topo_order(g))}
    return Dag(n, tuple((pos[u], pos[v]) for u, v in g.edges))


def _random_orientation(rng: np.random.Generator, n: int) -> list[Edge]:
    # each unordered pair independently: absent, i->j or j->i
    pairs = list(itertools.combinations(range(n), 2))
    draws = rng.integers(0, 3, size=len(pairs))
    edges = []
    for (i, j), d in zip(pairs, draws):
        if d == 1:
            edges.append((i, j))
        elif d == 2:
            edges.append((j, i))
    return edges


def _random_out_tree(rng: np.random.Generator, n: int) -> list[Edge]:
    k = int(rng.integers(2, n))  # root fan-out in [2, n-1]
    edges = [(0, c) for c in range(1, k + 1)]
    for node in range(k + 1, n):
        edges.append((int(rng.integers(0, node)), node))
    return edges


def _has_converging_parents(n: int, edges: list[Edge]) -> bool:
    indeg = [0] * n
    for _, v in edges:
        indeg[v] += 1
    return max(indeg) >= 2 and len(edges) >= n


def sample_dag(seed: int, node_count: int, motif: Motif | str) -> Dag:
    """Sample a connected DAG with the requested motif, relabelled to topological order.

    ``mixed`` and ``multi_parent`` draw each unordered node pair as absent/forward/backward
    uniformly and reject cyclic or disconnected candidates; ``multi_parent`` further requires
    a node with at least two parents and a non-tree skeleton.
    """
    motif = Motif(motif)
    if not MIN_NODES <= node_count <= MAX_NODES:
        raise InvalidSize(f"node_count must be in [{MIN_NODES}, {MAX_NODES}], got {node_count}")
    n = int(node_count)
    rng = np.random.default_rng(int(seed))

    if motif is Motif.CHAIN:
        return Dag(n, tuple((i, i + 1) for i in range(n - 1)))
    if motif is Motif.FORK:
        return _relabel_topological(n, _random_out_tree(rng, n))
    if motif is Motif.COLLIDER:
        return _relabel_topological(n, [(v, u) for u, v in _random_out_tree(rng, n)])

    for _ in range(MAX_ATTEMPTS):
        edges = _random_orientation(rng, n)
        if not _is_acyclic(n, edges) or not _is_connected(n, edges):
            continue
        if motif is Motif.MULTI_PARENT and not _has_converging_parents(n, edges):
            continue
        return _relabel_topological(n, edges)
    raise SamplingExhausted(f"no valid {motif.value} graph after {MAX_ATTEMPTS} attempts")


def _edge_key(e: Edge) -> str:
    return f"edge:{e[0]}->{e[1]}"


def perturb_graph(
    dag: Dag,
    kind: PerturbKind | str,
    count: int,
    seed: int,
    candidates: Iterable[Edge] | None = None,
) -> tuple[Dag, list[NoiseRecord]]:
    """Apply ``count`` simultaneous edge edits of one kind.

    ``candidates`` optionally pins which edges may be edited (existing edges for deletion and
    reversal, absent ordered pairs for false-edge injection). The chosen subset is drawn
    uniformly among those keeping the graph acyclic: by full enumeration when there are at
    most ``MAX_ATTEMPTS`` subsets, otherwise by rejection.
    """
    kind = PerturbKind.parse(kind) if isinstance(kind, str) else kind
    if count < 1:
        raise ValueError("count must be >= 1")
    n = dag.node_count
    current = dag.edge_set
    if kind is PerturbKind.FALSE_EDGE:
        pool = [(u, v) for u in range(n) for v in range(n) if u != v and (u, v) not in current]
    else:
        pool = sorted(current)
    if candidates is not None:
        allowed = {tuple(e) for e in candidates}
        pool = [e for e in pool if e in allowed]
    if count > len(pool):
        raise NoValidPerturbation(f"{kind.code}: need {count} edges, only {len(pool)} candidates")

    def apply(chosen: Sequence[Edge]) -> set[Edge]:
        edges = set(current)
        if kind is PerturbKind.EDGE_DELETION:
            edges.difference_update(chosen)
        elif kind is PerturbKind.FALSE_EDGE:
            edges.update(chosen)
        else:
            edges.difference_update(chosen)
            edges.update((v, u) for u, v in chosen)
        return edges

    def ok(edges: set[Edge]) -> bool:
        # a reversal onto an existing opposite edge would merge two edges into one
        if kind is PerturbKind.DIRECTION_REVERSAL and len(edges) != len(current):
            return False
        return _is_acyclic(n, edges)

    rng = np.random.default_rng(int(seed))
    chosen: tuple[Edge, ...] | None = None
    if math.comb(len(pool), count) <= MAX_ATTEMPTS:
        valid = [c for c in itertools.combinations(pool, count) if ok(apply(c))]
        if valid:
            chosen = valid[int(rng.integers(len(valid)))]
    else:
        for _ in range(MAX_ATTEMPTS):
            idx = np.sort(rng.choice(len(pool), size=count, replace=False))
            c = tuple(pool[i] for i in idx)
            if ok(apply(c)):
                chosen = c
                break
    if chosen is None:
        raise NoValidPerturbation(f"{kind.code}: no choice of {count} edge(s) keeps the graph acyclic")

    new = Dag(n, tuple(apply(chosen)))
    disconnected = not _is_connected(n, new.edges)
    records = []
    for e in chosen:
        if kind is PerturbKind.EDGE_DELETION:
            orig, repl = list(e), None
        elif kind is PerturbKind.FALSE_EDGE:
            orig, repl = None, list(e)
        else:
            orig, repl = list(e), [e[1], e[0]]
        records.append(NoiseRecord(kind.code, (_edge_key(e),), orig, repl, {"disconnected": disconnected}))
    return new, records


@dataclass(frozen=True)
class EdgeMetrics:
    precision: float
    recall: float
    f1: float
    true_positives: int
    false_positives: int
    false_negatives: int

    @classmethod
    def from_counts(cls, tp: int, fp: int, fn: int) -> "EdgeMetrics":
        p = tp / (tp + fp) if tp + fp else 0.0
        r = tp / (tp + fn) if tp + fn else 0.0
        f1 = 2 * p * r / (p + r) if p + r else 0.0
        return cls(p, r, f1, tp, fp, fn)

    def to_dict(self) -> dict:
        return {
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "tp": self.true_positives,
            "fp": self.false_positives,
            "fn": self.false_negatives,
        }


def edge_metrics(predicted: Dag | Iterable[Edge], truth: Dag) -> EdgeMetrics:
    """Directed edge-level precision/recall/F1. A reversed edge is one FP plus one FN."""
    pred = predicted.edge_set if isinstance(predicted, Dag) else frozenset(tuple(e) for e in predicted)
    for u, v in pred:
        for x in (u, v):
            if not 0 <= x < truth.node_count:
                raise UnknownNode(f"predicted edge ({u},{v}) uses node {x} not in the reference graph")
    true = truth.edge_set
    tp = len(pred & true)
    return EdgeMetrics.from_counts(tp, len(pred - true), len(true - pred))


def format_edges(dag: Dag, names: Sequence[str]) -> str:
    """Graph text form: one ``Parent -> Child`` line per edge, parents in topological order."""
    try:
        pos = {x: i for i, x in enumerate(dag.topo_order)}
    except CycleDetected:
        pos = {i: i for i in range(dag.node_count)}
    edges = sorted(dag.edges, key=lambda e: (pos[e[0]], pos[e[1]]))
    return "\n".join(f"{names[u]} -> {names[v]}" for u, v in edges)
