"""Semantic grounding of abstract graphs and template rendering of backgrounds and questions.

Vocabulary files (``vocab/<domain>.yaml``) hold scenarios; each scenario lists variable
entries with role affinities and phrase slots. Rendering is a pure function of
``(scm, metas, query, variant)``; variant 0 is the default surface form.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from decimal import Decimal
from enum import Enum
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
import yaml

from .dag import Dag
from .errors import TemplateMissing, VocabExhausted
from .inference import Event, Query, QueryKind
from .scm import Scm, VarDomain, VariableMeta


class ScenarioDomain(str, Enum):
    MEDICINE = "medicine"
    EDUCATION = "education"
    ECONOMICS = "economics"


BINARY_REQUIRED = ("base", "perfect", "past_true", "past_false", "gerund", "noun")
CATEGORICAL_REQUIRED = ("noun", "is_value")


def _resolve_binary(raw: Mapping) -> dict:
    p = {k: v for k, v in raw.items() if k not in ("name", "roles", "type", "values")}
    missing = [k for k in BINARY_REQUIRED if k not in p]
    if missing:
        raise TemplateMissing(f"vocabulary entry {raw.get('name')!r} lacks {missing}")
    base = p["base"]
    p.setdefault("short", base)
    p.setdefault("cond_true", f"they {base}")
    p.setdefault("cond_false", f"they don't {base}")
    p.setdefault("more", f"{p['short']} more often")
    p.setdefault("less", f"are less likely to {p['short']}")
    p.setdefault("spurious", f"{p['short']} more often")
    p["concessive"] = bool(p.get("concessive", False))
    return p


@dataclass(frozen=True)
class VocabEntry:
    name: str
    roles: frozenset[str]
    kind: str
    values: tuple[str, ...]
    phrases: Mapping[str, object]

    @classmethod
    def from_dict(cls, raw: Mapping) -> "VocabEntry":
        kind = raw.get("type", "binary")
        if kind == "categorical":
            missing = [k for k in CATEGORICAL_REQUIRED if k not in raw]
            if missing:
                raise TemplateMissing(f"vocabulary entry {raw.get('name')!r} lacks {missing}")
            phrases = {"noun": raw["noun"], "is_value": raw["is_value"]}
            values = tuple(str(v) for v in raw["values"])
        else:
            phrases = _resolve_binary(raw)
            values = ("0", "1")
        return cls(raw["name"], frozenset(raw["roles"]), kind, values, phrases)

    @property
    def domain(self) -> VarDomain:
        return VarDomain.binary() if self.kind == "binary" else VarDomain.categorical(self.values)

    def fits(self, role: str) -> bool:
        return role in self.roles or ("symptom" in self.roles and role in ("mediator", "outcome"))


@dataclass(frozen=True)
class Scenario:
    name: str
    domain: str
    intro: str
    population: str
    subject: str
    distractors: tuple[str, ...]
    confounders: tuple[str, ...]
    entries: tuple[VocabEntry, ...]

    @classmethod
    def from_dict(cls, raw: Mapping, domain: str) -> "Scenario":
        entries = tuple(VocabEntry.from_dict(e) for e in raw["variables"])
        names = [e.name for e in entries]
        if len(set(names)) != len(names):
            raise TemplateMissing(f"scenario {raw['name']!r} repeats variable names")
        return cls(
            raw["name"], domain, raw.get("intro", ""), raw.get("population", "people"),
            raw.get("subject", "the person"), tuple(raw.get("distractors", ())),
            tuple(raw.get("confounders", ())), entries,
        )

    def entry(self, name: str) -> VocabEntry:
        for e in self.entries:
            if e.name == name:
                return e
        raise KeyError(name)

    def meta(self, node: int, name: str, role: str | None = None) -> VariableMeta:
        e = self.entry(name)
        if role is None:
            role = next(iter(sorted(e.roles)))
        return VariableMeta(node, e.name, e.domain, "observed", role, self.name, dict(e.phrases))


DEFAULT_SCENARIO = Scenario("generic", "", "", "people", "the person", (), (), ())


def load_vocabulary_file(path: str | Path) -> tuple[Scenario, ...]:
    data = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
    return tuple(Scenario.from_dict(s, data["domain"]) for s in data["scenarios"])


@lru_cache(maxsize=None)
def load_vocabulary(domain: str | ScenarioDomain) -> tuple[Scenario, ...]:
    """Shipped scenarios for ``domain``; cached, read-only."""
    name = ScenarioDomain(domain).value
    text = resources.files("causalnoise.vocab").joinpath(f"{name}.yaml").read_text(encoding="utf-8")
    data = yaml.safe_load(text)
    return tuple(Scenario.from_dict(s, name) for s in data["scenarios"])


@lru_cache(maxsize=None)
def find_scenario(name: str) -> Scenario:
    for domain in ScenarioDomain:
        for s in load_vocabulary(domain):
            if s.name == name:
                return s
    return DEFAULT_SCENARIO


def scenario_of(metas: Sequence[VariableMeta]) -> Scenario:
    for m in metas:
        if m.scenario:
            return find_scenario(m.scenario)
    return DEFAULT_SCENARIO


# ---------------------------------------------------------------- grounding

def structural_role(dag: Dag, node: int) -> str:
    if not dag.parents(node):
        return "cause"
    if not dag.children(node):
        return "outcome"
    return "mediator"


def ground_graph(
    dag: Dag,
    domain: str | ScenarioDomain,
    seed: int,
    scenario: str | None = None,
    categorical_rate: float = 0.0,
    scenarios: Sequence[Scenario] | None = None,
) -> list[VariableMeta]:
    """Assign each node a vocabulary entry: roots get cause-like labels, sinks outcome-like,
    the rest mediators. Roles are filled causes, outcomes, mediators in that order, each node
    taking the first unused compatible entry (nodes of one role visited in seeded order).
    With ``categorical_rate`` > 0 a node prefers a compatible categorical entry with that
    probability."""
    rng = np.random.default_rng(int(seed))
    pool = tuple(scenarios) if scenarios is not None else load_vocabulary(domain)
    if scenario is not None:
        chosen = [s for s in pool if s.name == scenario]
        if not chosen:
            raise VocabExhausted(f"no scenario {scenario!r} in {domain}")
        scen = chosen[0]
    else:
        scen = pool[int(rng.integers(len(pool)))]
    roles = {v: structural_role(dag, v) for v in range(dag.node_count)}
    used: set[str] = set()
    metas: dict[int, VariableMeta] = {}
    for role in ("cause", "outcome", "mediator"):
        nodes = [v for v in range(dag.node_count) if roles[v] == role]
        for v in (nodes[i] for i in rng.permutation(len(nodes))):
            fits = [e for e in scen.entries if e.name not in used and e.fits(role)]
            if not fits:
                raise VocabExhausted(
                    f"scenario {scen.name!r} has no unused {role} entry for node {v}"
                )
            binary = [e for e in fits if e.kind == "binary"]
            entry = binary[0] if binary else fits[0]
            if categorical_rate > 0 and rng.random() < categorical_rate:
                cats = [e for e in fits if e.kind == "categorical"]
                entry = cats[0] if cats else entry
            used.add(entry.name)
            meta_role = role if role in entry.roles else "symptom"
            metas[v] = VariableMeta(
                v, entry.name, entry.domain, "observed", meta_role, scen.name, dict(entry.phrases)
            )
    return [metas[v] for v in range(dag.node_count)]


# ---------------------------------------------------------------- numbers

_PCT = re.compile(r"(\d+(?:\.\d+)?)%")


def format_pct(p: float) -> str:
    """``0.1 -> '10%'``, ``0.345 -> '34.5%'``. Digits are those of the shortest float repr,
    so the text parses back to the stored probability."""
    d = (Decimal(repr(float(p))) * 100).normalize()
    text = format(d, "f")
    return f"{text}%"


def parse_pct(text: str) -> float:
    return float(Decimal(text.rstrip("%")) / 100)


def find_pcts(text: str) -> list[float]:
    return [float(Decimal(m) / 100) for m in _PCT.findall(text)]


# ---------------------------------------------------------------- phrases

def phrase(meta: VariableMeta, key: str) -> str:
    try:
        return meta.phrases[key]
    except KeyError:
        raise TemplateMissing(f"variable {meta.name!r} has no {key!r} phrase") from None


def _values(meta: VariableMeta, values: Iterable[int]) -> str:
    return " or ".join(meta.domain.values[v] for v in sorted(values))


def _is_binary(meta: VariableMeta) -> bool:
    return meta.domain.kind == "binary"


def predicate(meta: VariableMeta, values: Iterable[int]) -> str:
    """Plural present predicate: ``recover in three days`` / ``do not take medicine``."""
    values = set(values)
    if _is_binary(meta):
        if values == {0, 1}:
            return f"either {phrase(meta, 'base')} or not"
        return phrase(meta, "base") if 1 in values else f"do not {phrase(meta, 'base')}"
    return phrase(meta, "is_value").format(value=_values(meta, values))


def condition(meta: VariableMeta, value: int) -> str:
    """``they take medicine`` / ``they are not infected``."""
    if _is_binary(meta):
        return phrase(meta, "cond_true" if value else "cond_false")
    return "they " + phrase(meta, "is_value").format(value=meta.domain.values[value])


def past(meta: VariableMeta, value: int, subject: str) -> str:
    """Full past-tense clause about one individual."""
    if _is_binary(meta):
        return f"{subject} {phrase(meta, 'past_true' if value else 'past_false')}"
    return f"{subject}'s {phrase(meta, 'noun')} was {meta.domain.values[value]}"


def counterfactual_clause(meta: VariableMeta, value: int, subject: str) -> str:
    """Antecedent after inverted ``Had``: ``the infection not occurred``."""
    if _is_binary(meta):
        event = meta.phrases.get("event")
        if event:
            return f"{event} occurred" if value else f"{event} not occurred"
        return f"{subject} {phrase(meta, 'perfect')}" if value else f"{subject} not {phrase(meta, 'perfect')}"
    return f"{subject}'s {phrase(meta, 'noun')} been {meta.domain.values[value]}"


def hypothetical_clause(meta: VariableMeta, value: int, subject: str) -> str:
    """Antecedent after ``If``: ``the patient had not taken medicine``."""
    if _is_binary(meta):
        neg = "" if value else "not "
        return f"{subject} had {neg}{phrase(meta, 'perfect')}"
    return f"{subject}'s {phrase(meta, 'noun')} had been {meta.domain.values[value]}"


def would(meta: VariableMeta, values: Iterable[int], subject: str) -> str:
    values = set(values)
    if _is_binary(meta):
        neg = "" if 1 in values else "not "
        return f"{subject} would {neg}{phrase(meta, 'base')}"
    return f"{subject}'s {phrase(meta, 'noun')} would be {_values(meta, values)}"


def the_noun(meta: VariableMeta) -> str:
    event = meta.phrases.get("event")
    if event:
        return event
    noun = phrase(meta, "noun")
    return noun if noun.startswith(("a ", "an ")) else f"the {noun}"


def join_and(parts: Sequence[str]) -> str:
    parts = list(parts)
    if len(parts) <= 1:
        return "".join(parts)
    return ", ".join(parts[:-1]) + " and " + parts[-1]


def capitalize(text: str) -> str:
    return text[:1].upper() + text[1:]


# ---------------------------------------------------------------- statements

@dataclass(frozen=True)
class Statement:
    id: str
    kind: str
    text: str
    payload: Mapping = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"id": self.id, "kind": self.kind, "text": self.text, "payload": dict(self.payload)}

    @classmethod
    def from_dict(cls, d: Mapping) -> "Statement":
        return cls(d["id"], d["kind"], d["text"], dict(d.get("payload", {})))


TEMPLATES: dict[str, tuple[str, ...]] = {
    "prior": (
        "Now we know that {pct} {population} {predicate}.",
        "{Pct} of {population} {predicate}.",
    ),
    "conditional": (
        "{pct} {population} will {predicate} {iff} {condition}.",
        "{If} {condition}, {pct} of {population} will {predicate}.",
    ),
    "prior-categorical": (
        "Now we know that {shares}.",
        "Among {population}, {shares}.",
    ),
    "conditional-categorical": (
        "{If} {condition}, {shares}.",
        "Among {population} for whom {condition_bare}, {shares}.",
    ),
    "observation": ("{Past}.",),
}


def _variant(kind: str, variant: int) -> str:
    try:
        options = TEMPLATES[kind]
    except KeyError:
        raise TemplateMissing(f"no template for statement kind {kind!r}") from None
    return options[variant % len(options)]


def _shares(meta: VariableMeta, row: Sequence[float], population: str) -> str:
    parts = [
        f"{format_pct(p)} {population} " + phrase(meta, "is_value").format(value=meta.domain.values[i])
        for i, p in enumerate(row)
    ]
    return join_and(parts)


def _row_condition(scm: Scm, metas: Sequence[VariableMeta], parents: Sequence[int], values: Sequence[int]) -> tuple[str, bool]:
    clauses = [condition(metas[p], v) for p, v in zip(parents, values)]
    concessive = all(v == 0 for v in values) and any(
        _is_binary(metas[p]) and metas[p].phrases.get("concessive") for p in parents
    )
    return " and ".join(clauses), concessive


def render_background(
    scm: Scm, metas: Sequence[VariableMeta] | None = None, variant: int = 0
) -> list[Statement]:
    """Intro line, one prior statement per root, one conditional statement per
    (child, parent-value context), nodes in topological order. Binary parent contexts are
    listed with value 1 first."""
    metas = list(metas if metas is not None else scm.metas)
    scen = scenario_of(metas)
    pop = scen.population
    out: list[Statement] = []
    if scen.intro:
        out.append(Statement("intro", "intro", scen.intro))
    for node in scm.dag.topo_order:
        meta = metas[node]
        cpt = scm.cpts[node]
        binary = _is_binary(meta)
        contexts = sorted(cpt.rows, key=lambda t: tuple(-v for v in t))
        for t in contexts:
            row = cpt.rows[t]
            sid = f"{'prior' if not t else 'cond'}:{meta.name}" + (":" + ",".join(map(str, t)) if t else "")
            payload = {"node": node, "parents": list(cpt.parents), "context": list(t)}
            if not cpt.parents:
                if binary:
                    pct = format_pct(row[1])
                    text = _variant("prior", variant).format(
                        pct=pct, Pct=pct, population=pop, predicate=predicate(meta, {1})
                    )
                    payload |= {"value": 1, "prob": row[1], "pct": pct}
                else:
                    text = _variant("prior-categorical", variant).format(
                        shares=_shares(meta, row, pop), population=pop
                    )
                    payload |= {"row": list(row)}
                out.append(Statement(sid, "prior", text, payload))
                continue
            cond, concessive = _row_condition(scm, metas, cpt.parents, t)
            iff = "even if" if concessive else "if"
            if binary:
                pct = format_pct(row[1])
                text = _variant("conditional", variant).format(
                    pct=pct, population=pop, predicate=predicate(meta, {1}),
                    iff=iff, If=capitalize(iff), condition=cond,
                )
                payload |= {"value": 1, "prob": row[1], "pct": pct}
            else:
                text = _variant("conditional-categorical", variant).format(
                    If=capitalize(iff), condition=cond, condition_bare=cond.removeprefix("they "),
                    shares=_shares(meta, row, pop), population=pop,
                )
                payload |= {"row": list(row)}
            out.append(Statement(sid, "conditional", capitalize(text), payload))
    return out


def render_observation(meta: VariableMeta, value: int, subject: str) -> Statement:
    text = _variant("observation", 0).format(Past=capitalize(past(meta, value, subject)))
    return Statement(f"obs:{meta.name}", "observation", text, {"node": meta.node, "value": value})


def render_observations(
    metas: Sequence[VariableMeta], observed: Mapping[int, int]
) -> list[Statement]:
    subject = scenario_of(metas).subject
    return [render_observation(metas[v], observed[v], subject) for v in sorted(observed)]


# ---------------------------------------------------------------- questions

def _event_predicate(metas: Sequence[VariableMeta], event: Event) -> str:
    return " and ".join(predicate(metas[v], vals) for v, vals in event.clauses)


def _check_vars(query: Query, metas: Sequence[VariableMeta]) -> None:
    for v in query.variables():
        if v >= len(metas):
            raise TemplateMissing(f"query mentions node {v} with no metadata")


def render_question(query: Query, metas: Sequence[VariableMeta], variant: int = 0) -> str:
    """Question text for ``query``. Factual evidence of counterfactual and attributional
    queries is rendered separately as observation statements."""
    _check_vars(query, metas)
    scen = scenario_of(metas)
    pop, subject = scen.population, scen.subject
    kind = query.kind
    if kind is QueryKind.OBSERVATIONAL:
        target = _event_predicate(metas, query.target)
        if not query.evidence:
            forms = (f"What is the ratio of {pop} who {target}?", f"What fraction of {pop} {target}?")
        else:
            ev = _event_predicate(metas, query.evidence)
            forms = (
                f"Among {pop} who {ev}, what is the ratio of those who {target}?",
                f"What fraction of {pop} who {ev} also {target}?",
            )
        return forms[variant % len(forms)]

    do = query.do
    if kind is QueryKind.INTERVENTIONAL:
        antecedent = " and ".join(hypothetical_clause(metas[v], x, subject) for v, x in sorted(do.items()))
        outcome = " and ".join(would(metas[v], vals, subject) for v, vals in query.target.clauses)
        prefix = ""
        if query.evidence:
            prefix = f"Consider {pop} who {_event_predicate(metas, query.evidence)}. "
        forms = (
            f"{prefix}If {antecedent}, what would happen? What is the probability that {outcome}?",
            f"{prefix}Suppose {antecedent}. How likely is it that {outcome}?",
        )
        return forms[variant % len(forms)]

    if kind is QueryKind.COUNTERFACTUAL:
        antecedent = " and ".join(
            counterfactual_clause(metas[v], x, subject if i == 0 else "they")
            for i, (v, x) in enumerate(sorted(do.items()))
        )
        if query.answer_format == "boolean":
            (v, vals), = query.target.clauses[:1]
            meta = metas[v]
            if _is_binary(meta) and vals == frozenset({1}):
                consequent = f"would {phrase(meta, 'noun')} still be likely"
            else:
                consequent = f"would it still be likely that {would(meta, vals, 'they')}"
            return f"Had {antecedent}, {consequent}?"
        outcome = " and ".join(would(metas[v], vals, "they") for v, vals in query.target.clauses)
        forms = (
            f"Had {antecedent}, what is the probability that {outcome}?",
            f"Had {antecedent}, how likely is it that {outcome}?",
        )
        return forms[variant % len(forms)]

    cause, outcome = metas[query.cause], metas[query.outcome]
    return (
        f"What caused {the_noun(outcome)}? How likely is it that {subject} would not have "
        f"{phrase(outcome, 'perfect')} had they not {phrase(cause, 'perfect')}?"
    )


__all__ = [
    "BINARY_REQUIRED", "DEFAULT_SCENARIO", "Scenario", "ScenarioDomain", "Statement", "TEMPLATES",
    "VocabEntry", "capitalize", "condition", "counterfactual_clause", "find_pcts", "find_scenario",
    "format_pct", "ground_graph", "hypothetical_clause", "join_and", "load_vocabulary",
    "load_vocabulary_file", "parse_pct", "past", "phrase", "predicate", "render_background",
    "render_observation", "render_observations", "render_question", "scenario_of",
    "structural_role", "the_noun", "would",
]
