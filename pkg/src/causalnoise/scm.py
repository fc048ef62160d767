"""Discrete structural causal models: parameter sampling, validation, ancestral sampling,
and compilation to a canonical response-function form used for counterfactuals."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import kernels
from .dag import Dag, validate as validate_dag
from .errors import ConfigError

NORMALIZATION_TOL = 1e-9
# thresholds closer than this are treated as one cut of the unit interval
THRESHOLD_MERGE_TOL = 1e-14

ROLES = ("cause", "mediator", "outcome", "symptom", "distractor", "confounder")


class Observability(str, Enum):
    OBSERVED = "observed"
    LATENT = "latent"


@dataclass(frozen=True)
class VarDomain:
    kind: str
    values: tuple[str, ...]

    @classmethod
    def binary(cls) -> "VarDomain":
        return cls("binary", ("0", "1"))

    @classmethod
    def categorical(cls, values: Sequence[str]) -> "VarDomain":
        return cls("categorical", tuple(values))

    @property
    def size(self) -> int:
        return len(self.values)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "values": list(self.values)}

    @classmethod
    def from_dict(cls, d: dict) -> "VarDomain":
        return cls(d["kind"], tuple(d["values"]))


@dataclass(frozen=True)
class VariableMeta:
    node: int
    name: str
    domain: VarDomain
    observability: str = "observed"
    role: str = "cause"
    scenario: str = ""
    phrases: dict = field(default_factory=dict)

    @property
    def label(self) -> str:
        """Display label, e.g. ``Infection``."""
        return self.name[:1].upper() + self.name[1:]

    def to_dict(self) -> dict:
        return {
            "node": self.node,
            "name": self.name,
            "domain": self.domain.to_dict(),
            "observability": self.observability,
            "role": self.role,
            "scenario": self.scenario,
            "phrases": dict(self.phrases),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "VariableMeta":
        return cls(
            int(d["node"]),
            d["name"],
            VarDomain.from_dict(d["domain"]),
            d.get("observability", "observed"),
            d.get("role", "cause"),
            d.get("scenario", ""),
            dict(d.get("phrases", {})),
        )


@dataclass(frozen=True)
class Cpt:
    """Conditional probability table. ``rows`` maps parent-value tuples (in ``parents``
    order) to a probability vector over the child's domain."""

    child: int
    parents: tuple[int, ...]
    rows: Mapping[tuple[int, ...], tuple[float, ...]]
    rule: str = "table"

    def prob(self, parent_values: Sequence[int], value: int) -> float:
        return self.rows[tuple(parent_values)][value]

    def to_dict(self) -> dict:
        return {
            "child": self.child,
            "parents": list(self.parents),
            "rule": self.rule,
            "rows": [[list(k), list(v)] for k, v in sorted(self.rows.items())],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Cpt":
        rows = {tuple(int(x) for x in k): tuple(float(x) for x in v) for k, v in d["rows"]}
        return cls(int(d["child"]), tuple(int(p) for p in d["parents"]), rows, d.get("rule", "table"))


def parent_tuples(cards: Sequence[int]) -> list[tuple[int, ...]]:
    """All parent-value tuples in canonical order (first parent most significant)."""
    return list(itertools.product(*(range(k) for k in cards)))


@dataclass(frozen=True)
class CompiledScm:
    """Flat integer/float arrays consumed by the kernels."""

    n: int
    topo: np.ndarray
    cards: np.ndarray
    par: np.ndarray
    npar: np.ndarray
    strides: np.ndarray
    offsets: np.ndarray
    flat: np.ndarray
    cdf: np.ndarray


@dataclass(frozen=True)
class Scm:
    dag: Dag
    metas: tuple[VariableMeta, ...]
    cpts: tuple[Cpt, ...]

    @property
    def n(self) -> int:
        return self.dag.node_count

    def card(self, node: int) -> int:
        return self.metas[node].domain.size

    @cached_property
    def cards(self) -> tuple[int, ...]:
        return tuple(m.domain.size for m in self.metas)

    @cached_property
    def _by_name(self) -> dict[str, int]:
        return {m.name.lower(): m.node for m in self.metas}

    def node(self, name: str | int) -> int:
        if isinstance(name, (int, np.integer)):
            return int(name)
        try:
            return self._by_name[name.strip().lower()]
        except KeyError:
            raise KeyError(f"unknown variable {name!r}") from None

    def value_index(self, node: int, value: str | int) -> int:
        dom = self.metas[node].domain
        if isinstance(value, (int, np.integer)) and not isinstance(value, bool):
            if not 0 <= value < dom.size:
                raise ValueError(f"value {value} outside domain of {self.metas[node].name}")
            return int(value)
        s = str(value).strip()
        if s in dom.values:
            return dom.values.index(s)
        lowered = [v.lower() for v in dom.values]
        if s.lower() in lowered:
            return lowered.index(s.lower())
        if dom.kind == "binary" and s.lower() in ("yes", "true", "no", "false"):
            return int(s.lower() in ("yes", "true"))
        raise ValueError(f"value {value!r} not in domain of {self.metas[node].name}")

    @cached_property
    def compiled(self) -> CompiledScm:
        n = self.n
        cards = np.array(self.cards, dtype=np.int64)
        maxp = max((len(c.parents) for c in self.cpts), default=0) or 1
        par = np.full((n, maxp), -1, dtype=np.int64)
        strides = np.zeros((n, maxp), dtype=np.int64)
        npar = np.zeros(n, dtype=np.int64)
        offsets = np.zeros(n, dtype=np.int64)
        flat_parts, cdf_parts = [], []
        off = 0
        for cpt in self.cpts:
            i = cpt.child
            pc = [self.card(p) for p in cpt.parents]
            npar[i] = len(cpt.parents)
            stride = 1
            for j in range(len(cpt.parents) - 1, -1, -1):
                par[i, j] = cpt.parents[j]
                strides[i, j] = stride
                stride *= pc[j]
            table = np.array([cpt.rows[t] for t in parent_tuples(pc)], dtype=np.float64)
            cum = np.cumsum(table, axis=1)
            cum[:, -1] = 1.0
            offsets[i] = off
            off += table.size
            flat_parts.append(table.ravel())
            cdf_parts.append(cum.ravel())
        return CompiledScm(
            n=n,
            topo=np.array(self.dag.topo_order, dtype=np.int64),
            cards=cards,
            par=par,
            npar=npar,
            strides=strides,
            offsets=offsets,
            flat=np.concatenate(flat_parts) if flat_parts else np.zeros(0),
            cdf=np.concatenate(cdf_parts) if cdf_parts else np.zeros(0),
        )

    @cached_property
    def canonical(self) -> "CanonicalScm":
        return compile_canonical(self)

    def with_cpt(self, cpt: Cpt) -> "Scm":
        cpts = list(self.cpts)
        cpts[cpt.child] = cpt
        return Scm(self.dag, self.metas, tuple(cpts))

    def to_dict(self) -> dict:
        return {
            "graph": self.dag.to_dict(),
            "metas": [m.to_dict() for m in self.metas],
            "cpts": [c.to_dict() for c in self.cpts],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Scm":
        dag = Dag.from_dict(d["graph"])
        metas = tuple(sorted((VariableMeta.from_dict(m) for m in d["metas"]), key=lambda m: m.node))
        cpts = tuple(sorted((Cpt.from_dict(c) for c in d["cpts"]), key=lambda c: c.child))
        return cls(dag, metas, cpts)


def validate_scm(scm: Scm) -> list[str]:
    """List every violated model invariant (empty list means valid)."""
    problems = [f"graph: {p}" for p in validate_dag(scm.dag)]
    n = scm.dag.node_count
    if len(scm.metas) != n:
        problems.append(f"expected {n} variable metas, got {len(scm.metas)}")
    if len(scm.cpts) != n:
        problems.append(f"expected {n} CPTs, got {len(scm.cpts)}")
    if problems and (len(scm.metas) != n or len(scm.cpts) != n):
        return problems
    names = [m.name.lower() for m in scm.metas]
    if len(set(names)) != len(names):
        problems.append("variable names are not unique")
    for i, m in enumerate(scm.metas):
        if m.node != i:
            problems.append(f"meta at position {i} describes node {m.node}")
        vals = m.domain.values
        if len(vals) < 2:
            problems.append(f"{m.name}: domain needs at least 2 values")
        if len(set(vals)) != len(vals):
            problems.append(f"{m.name}: duplicate domain labels")
        if m.domain.kind == "binary" and tuple(vals) != ("0", "1"):
            problems.append(f"{m.name}: binary domain must be ('0', '1')")
        if m.domain.kind not in ("binary", "categorical"):
            problems.append(f"{m.name}: unsupported domain kind {m.domain.kind!r}")
        if m.observability not in ("observed", "latent"):
            problems.append(f"{m.name}: bad observability {m.observability!r}")
    for i, cpt in enumerate(scm.cpts):
        name = scm.metas[i].name if i < len(scm.metas) else str(i)
        if cpt.child != i:
            problems.append(f"CPT at position {i} describes node {cpt.child}")
            continue
        if tuple(cpt.parents) != scm.dag.parents(i):
            problems.append(f"{name}: CPT parents {list(cpt.parents)} != graph parents {list(scm.dag.parents(i))}")
            continue
        expected = parent_tuples([scm.card(p) for p in cpt.parents])
        missing = [t for t in expected if t not in cpt.rows]
        if missing:
            problems.append(f"{name}: incomplete table, missing rows {missing}")
        extra = [t for t in cpt.rows if t not in set(expected)]
        if extra:
            problems.append(f"{name}: rows for unknown parent tuples {extra}")
        k = scm.card(i)
        for t, row in cpt.rows.items():
            if len(row) != k:
                problems.append(f"{name}{list(t)}: row has {len(row)} entries, domain has {k}")
                continue
            if any(not (p >= 0.0) or math.isnan(p) for p in row):
                problems.append(f"{name}{list(t)}: negative or NaN probability")
            s = math.fsum(row)
            if abs(s - 1.0) > NORMALIZATION_TOL:
                problems.append(f"{name}{list(t)}: non-normalized row (sums to {s!r})")
    return problems


@dataclass(frozen=True)
class MechanismConfig:
    """Parameter ranges for :func:`sample_mechanisms`.

    ``min_separation`` pushes binary probabilities at least that far from 0.5.
    Probabilities are rounded to ``decimals`` places so percent renderings are exact.
    """

    families: tuple[str, ...] = ("noisy_or", "noisy_and", "table")
    prob_low: float = 0.05
    prob_high: float = 0.95
    min_separation: float = 0.0
    decimals: int = 3
    strength: tuple[float, float] = (0.5, 0.95)
    leak: tuple[float, float] = (0.01, 0.3)
    dirichlet_alpha: float = 1.0

    @classmethod
    def from_dict(cls, d: Mapping) -> "MechanismConfig":
        d = dict(d)
        for key in ("families", "strength", "leak"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)


FAMILIES = ("noisy_or", "noisy_and", "table")


def _activation(value: int, card: int) -> float:
    return value / (card - 1)


def _binary_prob(p: float, cfg: MechanismConfig) -> float:
    if cfg.min_separation > 0 and abs(p - 0.5) < cfg.min_separation:
        p = 0.5 + (cfg.min_separation if p >= 0.5 else -cfg.min_separation)
    p = min(max(p, cfg.prob_low), cfg.prob_high)
    return round(p, cfg.decimals)


def _categorical_row(rng: np.random.Generator, k: int, cfg: MechanismConfig) -> tuple[float, ...]:
    # integer percent units, each value >= 1%, summing to exactly 100
    p = rng.dirichlet(np.full(k, cfg.dirichlet_alpha))
    free = 100 - k
    raw = p * free
    units = np.floor(raw).astype(int)
    remainder = free - units.sum()
    order = np.argsort(-(raw - units), kind="stable")
    units[order[:remainder]] += 1
    units += 1
    return tuple(round(int(u) / 100, 2) for u in units)


def sample_mechanisms(
    dag: Dag,
    metas: Sequence[VariableMeta],
    seed: int,
    config: MechanismConfig | None = None,
) -> Scm:
    """Draw a CPT for every node.

    Binary nodes with parents use a rule family drawn from ``config.families``:
    noisy-OR ``1 - (1-leak) * prod(1 - s_j * a_j)``, noisy-AND ``leak + (top-leak) * prod(s_j * a_j)``
    (``a_j`` is the parent's activation, value index scaled to [0, 1]), or a free random table.
    Categorical nodes and roots get random rows.
    """
    cfg = config or MechanismConfig()
    if not cfg.families:
        raise ConfigError("at least one rule family is required")
    unknown = set(cfg.families) - set(FAMILIES)
    if unknown:
        raise ConfigError(f"unknown rule families {sorted(unknown)}")
    if len(metas) != dag.node_count:
        raise ConfigError("metas must cover every node")
    rng = np.random.default_rng(int(seed))
    cards = [m.domain.size for m in metas]
    cpts: list[Cpt | None] = [None] * dag.node_count
    for node in dag.topo_order:
        parents = dag.parents(node)
        k = cards[node]
        tuples = parent_tuples([cards[p] for p in parents])
        rows: dict[tuple[int, ...], tuple[float, ...]] = {}
        if k != 2:
            rule = "table"
            for t in tuples:
                rows[t] = _categorical_row(rng, k, cfg)
        elif not parents:
            rule = "prior"
            p = _binary_prob(rng.uniform(cfg.prob_low, cfg.prob_high), cfg)
            rows[()] = (round(1 - p, cfg.decimals), p)
        else:
            rule = cfg.families[int(rng.integers(len(cfg.families)))]
            s = rng.uniform(*cfg.strength, size=len(parents))
            leak = rng.uniform(*cfg.leak)
            top = rng.uniform(cfg.strength[1], 1.0)
            for t in tuples:
                act = [_activation(v, cards[p]) for v, p in zip(t, parents)]
                if rule == "noisy_or":
                    p = 1.0 - (1.0 - leak) * float(np.prod([1.0 - sj * aj for sj, aj in zip(s, act)]))
                elif rule == "noisy_and":
                    p = leak + (top - leak) * float(np.prod([sj * aj for sj, aj in zip(s, act)]))
                else:
                    p = rng.uniform(cfg.prob_low, cfg.prob_high)
                p = _binary_prob(p, cfg)
                rows[t] = (round(1 - p, cfg.decimals), p)
        cpts[node] = Cpt(node, parents, rows, rule)
    return Scm(dag, tuple(metas), tuple(cpts))  # type: ignore[arg-type]


def sample_worlds(scm: Scm, count: int, seed: int) -> np.ndarray:
    """``count`` complete worlds by ancestral sampling, shape ``(count, n)``."""
    rng = np.random.default_rng(int(seed))
    uniforms = rng.random((count, scm.n))
    return kernels.forward_sample(scm.compiled, uniforms)


def sample_world(scm: Scm, seed: int) -> dict[int, int]:
    row = sample_worlds(scm, 1, seed)[0]
    return {i: int(v) for i, v in enumerate(row)}


@dataclass(frozen=True)
class NodeResponse:
    """Response classes of one node: ``table[c, r]`` is the child value chosen by class ``c``
    for parent row ``r`` (canonical row order); ``weights[c]`` is the class probability."""

    weights: np.ndarray
    table: np.ndarray


@dataclass(frozen=True)
class CanonicalScm:
    scm: Scm
    nodes: tuple[NodeResponse, ...]

    def class_count(self, node: int) -> int:
        return len(self.nodes[node].weights)


def _cuts(cum_rows: np.ndarray) -> list[float]:
    raw = sorted(float(x) for x in cum_rows.ravel() if 0.0 < x < 1.0)
    cuts: list[float] = []
    for x in raw:
        if not cuts or x - cuts[-1] > THRESHOLD_MERGE_TOL:
            cuts.append(x)
    if cuts and 1.0 - cuts[-1] <= THRESHOLD_MERGE_TOL:
        cuts.pop()
    return cuts


def compile_node(table: np.ndarray) -> NodeResponse:
    """Inverse-CDF compilation of one CPT (rows x values) into deterministic response classes."""
    cum = np.cumsum(table, axis=1)[:, :-1]
    bounds = [0.0, *_cuts(cum), 1.0]
    weights, classes = [], []
    for lo, hi in zip(bounds[:-1], bounds[1:]):
        if hi - lo <= 0.0:
            continue
        mid = 0.5 * (lo + hi)
        choice = [int(np.searchsorted(c, mid, side="right")) for c in cum]
        weights.append(hi - lo)
        classes.append(choice)
    return NodeResponse(np.array(weights, dtype=np.float64), np.array(classes, dtype=np.int64))


def compile_canonical(scm: Scm) -> CanonicalScm:
    """Canonical response-function form: per node, cut the unit interval at every distinct
    cumulative threshold of every CPT row (fixed domain value order); each piece is one class."""
    c = scm.compiled
    nodes = []
    for i in range(scm.n):
        k = int(c.cards[i])
        rows = scm.cpts[i]
        size = len(parent_tuples([scm.card(p) for p in rows.parents]))
        table = c.flat[c.offsets[i]: c.offsets[i] + size * k].reshape(size, k)
        nodes.append(compile_node(table))
    return CanonicalScm(scm, tuple(nodes))


def reconstruct_cpt(node: NodeResponse, card: int) -> np.ndarray:
    """Marginalise response classes back into a (rows x values) table."""
    rows = node.table.shape[1]
    out = np.zeros((rows, card))
    for w, cls in zip(node.weights, node.table):
        out[np.arange(rows), cls] += w
    return out


def deterministic_copy(meta_names: Sequence[str], edges: Iterable[tuple[int, int]], priors: Mapping[int, float]) -> Scm:
    """Small helper for tests and fixtures: binary SCM whose non-root nodes copy their
    (single) parent exactly, roots taking the given prior ``P(X=1)``."""
    names = list(meta_names)
    dag = Dag.from_edges(len(names), edges)
    metas = tuple(VariableMeta(i, n, VarDomain.binary()) for i, n in enumerate(names))
    cpts = []
    for i in range(len(names)):
        ps = dag.parents(i)
        if not ps:
            p = priors[i]
            cpts.append(Cpt(i, (), {(): (1 - p, p)}, "prior"))
        else:
            rows = {t: (0.0, 1.0) if t[0] == 1 else (1.0, 0.0) for t in parent_tuples([2] * len(ps))}
            cpts.append(Cpt(i, ps, rows, "copy"))
    return Scm(dag, metas, tuple(cpts))


__all__ = [
    "CanonicalScm", "CompiledScm", "Cpt", "MechanismConfig", "NodeResponse", "Observability",
    "Scm", "VarDomain", "VariableMeta", "compile_canonical", "compile_node", "deterministic_copy",
    "parent_tuples", "reconstruct_cpt", "sample_mechanisms", "sample_world",
    "sample_worlds", "validate_scm",
]
