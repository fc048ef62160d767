"""Exact observational, interventional, counterfactual and attributional queries.

Everything is computed by enumeration: over all joint worlds for the first two rungs, and
over factual/counterfactual state pairs propagated through canonical response classes for
counterfactuals. Sums use ``math.fsum`` so results do not depend on summation order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from decimal import Decimal
from enum import Enum
from typing import Iterable, Mapping, Union

import numpy as np

from . import kernels
from .errors import IncompleteWorld, NonBinary, PreconditionError, ZeroEvidence
from .scm import Scm

Answer = Union[float, bool]
DEFAULT_THRESHOLD = 0.5


class QueryKind(str, Enum):
    OBSERVATIONAL = "observational"
    INTERVENTIONAL = "interventional"
    COUNTERFACTUAL = "counterfactual"
    ATTRIBUTIONAL = "attributional"


@dataclass(frozen=True)
class Event:
    """Conjunction of ``variable in allowed-values`` clauses."""

    clauses: tuple[tuple[int, frozenset[int]], ...] = ()

    def __post_init__(self):
        seen = [v for v, _ in self.clauses]
        if len(set(seen)) != len(seen):
            raise ValueError("event variables must be distinct")
        object.__setattr__(self, "clauses", tuple(sorted((int(v), frozenset(int(x) for x in vals)) for v, vals in self.clauses)))

    @classmethod
    def of(cls, mapping: Mapping[int, int | Iterable[int]] | None = None) -> "Event":
        mapping = mapping or {}
        clauses = []
        for var, val in mapping.items():
            vals = frozenset([val]) if isinstance(val, (int, np.integer)) else frozenset(val)
            clauses.append((int(var), vals))
        return cls(tuple(clauses))

    def __bool__(self) -> bool:
        return bool(self.clauses)

    @property
    def variables(self) -> tuple[int, ...]:
        return tuple(v for v, _ in self.clauses)

    def as_dict(self) -> dict[int, frozenset[int]]:
        return dict(self.clauses)

    def single_value(self, var: int) -> int | None:
        vals = self.as_dict().get(var)
        if vals is not None and len(vals) == 1:
            return next(iter(vals))
        return None

    def holds(self, world: Mapping[int, int]) -> bool:
        return all(world.get(v) in vals for v, vals in self.clauses)

    def mask(self, worlds: np.ndarray) -> np.ndarray:
        m = np.ones(worlds.shape[0], dtype=bool)
        for var, vals in self.clauses:
            m &= np.isin(worlds[:, var], sorted(vals))
        return m

    def to_list(self) -> list:
        return [[v, sorted(vals)] for v, vals in self.clauses]

    @classmethod
    def from_list(cls, items) -> "Event":
        return cls(tuple((int(v), frozenset(int(x) for x in vals)) for v, vals in items))


@dataclass(frozen=True)
class Query:
    kind: QueryKind
    target: Event
    evidence: Event = field(default_factory=Event)
    interventions: tuple[tuple[int, int], ...] = ()
    cause: int | None = None
    answer_format: str = "probability"
    threshold: float = DEFAULT_THRESHOLD

    def __post_init__(self):
        object.__setattr__(self, "kind", QueryKind(self.kind))
        object.__setattr__(self, "interventions", tuple(sorted((int(a), int(b)) for a, b in self.interventions)))
        if self.kind in (QueryKind.INTERVENTIONAL, QueryKind.COUNTERFACTUAL) and not self.interventions:
            raise PreconditionError(f"{self.kind.value} queries need at least one intervention")
        if self.kind is QueryKind.ATTRIBUTIONAL and self.cause is None:
            raise PreconditionError("attributional queries need a cause variable")
        if self.answer_format not in ("probability", "boolean"):
            raise ValueError(f"unknown answer format {self.answer_format!r}")

    @property
    def do(self) -> dict[int, int]:
        return dict(self.interventions)

    @property
    def outcome(self) -> int:
        return self.target.variables[0]

    def variables(self) -> set[int]:
        out = set(self.target.variables) | set(self.evidence.variables) | set(self.do)
        if self.cause is not None:
            out.add(self.cause)
        return out

    def to_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "target": self.target.to_list(),
            "evidence": self.evidence.to_list(),
            "interventions": [list(p) for p in self.interventions],
            "cause": self.cause,
            "answer_format": self.answer_format,
            "threshold": self.threshold,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Query":
        return cls(
            QueryKind(d["kind"]),
            Event.from_list(d.get("target", [])),
            Event.from_list(d.get("evidence", [])),
            tuple((int(a), int(b)) for a, b in d.get("interventions", [])),
            d.get("cause"),
            d.get("answer_format", "probability"),
            float(d.get("threshold", DEFAULT_THRESHOLD)),
        )


def joint_probability(scm: Scm, world: Mapping[int, int]) -> float:
    """Product of CPT entries along the topological order."""
    missing = [scm.metas[i].name for i in range(scm.n) if i not in world]
    if missing:
        raise IncompleteWorld(f"world is missing {missing}")
    p = 1.0
    for node in scm.dag.topo_order:
        cpt = scm.cpts[node]
        p *= cpt.prob([world[q] for q in cpt.parents], world[node])
    return p


def _clamped_flat(scm: Scm, clamp: Mapping[int, int]) -> np.ndarray:
    c = scm.compiled
    if not clamp:
        return c.flat
    flat = c.flat.copy()
    for node, value in clamp.items():
        k = int(c.cards[node])
        start = int(c.offsets[node])
        n_rows = _row_count(scm, node)
        block = np.zeros((n_rows, k))
        block[:, value] = 1.0
        flat[start:start + n_rows * k] = block.ravel()
    return flat


def _row_count(scm: Scm, node: int) -> int:
    return int(np.prod([scm.card(p) for p in scm.cpts[node].parents], dtype=np.int64))


def _ratio(weights: np.ndarray, worlds: np.ndarray, target: "Event", evidence: "Event") -> float:
    ev = evidence.mask(worlds)
    den = math.fsum(weights[ev])
    if den <= 0.0:
        raise ZeroEvidence("evidence has probability zero")
    num = math.fsum(weights[ev & target.mask(worlds)])
    return num / den


def _check_event(scm: Scm, event: Event, what: str) -> None:
    for var, vals in event.clauses:
        if not 0 <= var < scm.n:
            raise PreconditionError(f"{what}: unknown variable {var}")
        bad = [v for v in vals if not 0 <= v < scm.card(var)]
        if bad:
            raise PreconditionError(f"{what}: values {bad} outside domain of {scm.metas[var].name}")


def _evidence_roots(scm: Scm, evidence: Event) -> dict[int, int]:
    # A root pinned by evidence contributes the same factor to numerator and denominator;
    # replacing it by a point mass removes that factor before any rounding happens.
    out = {}
    for root in scm.dag.roots:
        v = evidence.single_value(root)
        if v is not None:
            if scm.cpts[root].rows[()][v] <= 0.0:
                raise ZeroEvidence(f"evidence fixes {scm.metas[root].name} to a value of prior probability zero")
            out[root] = v
    return out


def query_probability(scm: Scm, target: Event, evidence: Event | None = None) -> float:
    """``P(target | evidence)`` by full enumeration of the joint."""
    evidence = evidence or Event()
    _check_event(scm, target, "target")
    _check_event(scm, evidence, "evidence")
    worlds = kernels.all_worlds(scm.cards)
    w = kernels.world_weights(scm.compiled, worlds, _clamped_flat(scm, _evidence_roots(scm, evidence)))
    return _ratio(w, worlds, target, evidence)


def interventional_probability(
    scm: Scm, target: Event, do: Mapping[int, int], evidence: Event | None = None
) -> float:
    """``P(target | do(...), evidence)`` by graph surgery and truncated factorisation."""
    evidence = evidence or Event()
    if not do:
        raise PreconditionError("empty intervention set; use query_probability")
    overlap = set(do) & set(evidence.variables)
    if overlap:
        raise PreconditionError(f"evidence and interventions share variables {sorted(overlap)}")
    _check_event(scm, target, "target")
    _check_event(scm, evidence, "evidence")
    _check_event(scm, Event.of(dict(do)), "interventions")
    clamp = {**_evidence_roots(scm, evidence), **{int(k): int(v) for k, v in do.items()}}
    worlds = kernels.all_worlds(scm.cards)
    w = kernels.world_weights(scm.compiled, worlds, _clamped_flat(scm, clamp))
    return _ratio(w, worlds, target, evidence)


def counterfactual_probability(
    scm: Scm, factual_evidence: Event, interventions: Mapping[int, int], target: Event
) -> float:
    """``P(target in the world where interventions hold | factual_evidence)``.

    Abduction, action and prediction are fused: every node's response class is enumerated
    once and shared by the factual and counterfactual copies of that node. Factual evidence
    prunes states as soon as its node is reached; columns no longer needed are zeroed so
    equivalent states merge.
    """
    _check_event(scm, factual_evidence, "evidence")
    _check_event(scm, target, "target")
    _check_event(scm, Event.of(dict(interventions)), "interventions")
    canon = scm.canonical
    c = scm.compiled
    n = scm.n
    topo = scm.dag.topo_order
    pos = {node: i for i, node in enumerate(topo)}
    last_use = {}
    for node in range(n):
        uses = [pos[ch] for ch in scm.dag.children(node)]
        last_use[node] = max(uses, default=pos[node])
    keep_forever = set(target.variables)
    ev = factual_evidence.as_dict()
    do = {int(k): int(v) for k, v in interventions.items()}
    radix = c.cards.copy()

    fact = np.zeros((1, n), dtype=np.int64)
    cf = np.zeros((1, n), dtype=np.int64)
    w = np.ones(1, dtype=np.float64)
    for t, node in enumerate(topo):
        resp = canon.nodes[node]
        allowed = np.zeros(int(c.cards[node]), dtype=bool)
        allowed[sorted(ev.get(node, range(int(c.cards[node]))))] = True
        drop = np.array(
            [j not in keep_forever and pos[j] <= t and last_use[j] <= t for j in range(n)], dtype=bool
        )
        fact, cf, w = kernels.twin_step(
            c, fact, cf, w, node, resp.table, resp.weights, allowed, do.get(node, -1), drop, radix
        )
        if w.shape[0] == 0:
            break
    den = math.fsum(w)
    if den <= 0.0:
        raise ZeroEvidence("factual evidence has probability zero")
    num = math.fsum(w[target.mask(cf)]) if w.shape[0] else 0.0
    return num / den


def _require_binary(scm: Scm, node: int, what: str) -> None:
    if scm.card(node) != 2:
        raise NonBinary(f"{what} {scm.metas[node].name} is not binary")


def probability_of_necessity(scm: Scm, cause: int, outcome: int, factual_evidence: Event) -> float:
    """``P(outcome would be 0 had cause been 0 | evidence)``, where the evidence entails
    ``cause = 1`` and ``outcome = 1``."""
    _require_binary(scm, cause, "cause")
    _require_binary(scm, outcome, "outcome")
    if factual_evidence.single_value(cause) != 1 or factual_evidence.single_value(outcome) != 1:
        raise PreconditionError("evidence must entail cause = 1 and outcome = 1")
    return counterfactual_probability(scm, factual_evidence, {cause: 0}, Event.of({outcome: 0}))


def probability_of(scm: Scm, query: Query) -> float:
    if query.kind is QueryKind.OBSERVATIONAL:
        return query_probability(scm, query.target, query.evidence)
    if query.kind is QueryKind.INTERVENTIONAL:
        return interventional_probability(scm, query.target, query.do, query.evidence)
    if query.kind is QueryKind.COUNTERFACTUAL:
        return counterfactual_probability(scm, query.evidence, query.do, query.target)
    return probability_of_necessity(scm, query.cause, query.outcome, query.evidence)


def answer_query(scm: Scm, query: Query) -> Answer:
    """Numeric probability, or for yes/no questions whether it exceeds the threshold."""
    p = probability_of(scm, query)
    if query.answer_format == "boolean":
        return p > query.threshold
    return p


def marginals(scm: Scm) -> list[np.ndarray]:
    """Exact single-variable marginals, one probability vector per node."""
    worlds = kernels.all_worlds(scm.cards)
    w = kernels.world_weights(scm.compiled, worlds)
    total = math.fsum(w)
    out = []
    for node in range(scm.n):
        k = scm.card(node)
        out.append(np.array([math.fsum(w[worlds[:, node] == v]) / total for v in range(k)]))
    return out


def format_answer(answer: Answer) -> str:
    """Canonical answer string: positional decimal rounded to 15 significant digits
    (``0.025``, ``1.0``), or ``yes``/``no`` for booleans."""
    if isinstance(answer, (bool, np.bool_)):
        return "yes" if answer else "no"
    text = format(Decimal(f"{float(answer):.15g}"), "f")
    if "." not in text:
        text += ".0"
    return text


def parse_answer(text: str) -> Answer:
    t = text.strip().lower()
    if t in ("yes", "no"):
        return t == "yes"
    return float(t)
