"""Structured noise injection over rendered instances.

Every injector leaves ``clean_answer`` untouched and returns a :class:`NoiseRecord` that
:func:`revert` can undo exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import ConfigError, NotApplicable
from .inference import Answer, Query, QueryKind, answer_query
from .records import NoiseRecord
from .scm import Scm, VariableMeta
from .seeding import derive_seed
from .textgen import (
    Statement, capitalize, format_pct, phrase, render_background, render_observation,
    render_question, scenario_of,
)


class NoiseKind(str, Enum):
    VP = "VP"
    IV = "IV"
    PM = "PM"
    CS = "CS"
    CI = "CI"
    QP = "QP"
    BIP = "BIP"


# insertions, then mutations, then masking, then question edits
COMPOSITION_ORDER = (
    NoiseKind.IV, NoiseKind.CI, NoiseKind.BIP, NoiseKind.VP, NoiseKind.CS, NoiseKind.PM, NoiseKind.QP,
)
PROB_FLOOR = 0.01
PROB_CEIL = 0.99
MISSING = "(Missing)"


@dataclass(frozen=True)
class NoiseConfig:
    """Per-kind application probabilities; with ``combination_sizes`` set, an instance instead
    draws a size uniformly from that list and that many distinct kinds uniformly."""

    probabilities: Mapping[str, float] = field(default_factory=lambda: {k.value: 0.0 for k in NoiseKind})
    vp_delta: float = 0.1
    pm_mode: str = "explicit"
    combination_sizes: tuple[int, ...] | None = None

    def __post_init__(self):
        probs = {NoiseKind(k).value: float(v) for k, v in dict(self.probabilities).items()}
        for k, v in probs.items():
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"noise probability for {k} must lie in [0, 1], got {v}")
        object.__setattr__(self, "probabilities", probs)
        if not 0.0 < self.vp_delta <= PROB_CEIL - PROB_FLOOR:
            raise ConfigError(f"vp_delta must lie in (0, {PROB_CEIL - PROB_FLOOR}]")
        if self.pm_mode not in ("explicit", "silent"):
            raise ConfigError("pm_mode must be 'explicit' or 'silent'")
        if self.combination_sizes is not None:
            sizes = tuple(int(s) for s in self.combination_sizes)
            if not sizes or any(not 1 <= s <= len(NoiseKind) for s in sizes):
                raise ConfigError(f"combination sizes must lie in 1..{len(NoiseKind)}")
            object.__setattr__(self, "combination_sizes", sizes)

    @classmethod
    def uniform(cls, p: float, **kw) -> "NoiseConfig":
        return cls({k.value: p for k in NoiseKind}, **kw)

    @classmethod
    def from_dict(cls, d: Mapping) -> "NoiseConfig":
        d = dict(d)
        if "combination_sizes" in d and d["combination_sizes"] is not None:
            d["combination_sizes"] = tuple(d["combination_sizes"])
        if isinstance(d.get("probabilities"), (int, float)):
            return cls.uniform(float(d.pop("probabilities")), **d)
        return cls(**d)

    def to_dict(self) -> dict:
        return {
            "probabilities": dict(self.probabilities),
            "vp_delta": self.vp_delta,
            "pm_mode": self.pm_mode,
            "combination_sizes": list(self.combination_sizes) if self.combination_sizes else None,
        }

    def draw_kinds(self, seed: int) -> list[NoiseKind]:
        rng = np.random.default_rng(int(seed))
        kinds = list(NoiseKind)
        if self.combination_sizes:
            size = self.combination_sizes[int(rng.integers(len(self.combination_sizes)))]
            picked = rng.choice(len(kinds), size=size, replace=False)
            chosen = {kinds[i] for i in picked}
        else:
            draws = rng.random(len(kinds))
            chosen = {k for k, u in zip(kinds, draws) if u < self.probabilities.get(k.value, 0.0)}
        return [k for k in COMPOSITION_ORDER if k in chosen]


@dataclass(frozen=True)
class RenderableInstance:
    statements: tuple[Statement, ...]
    observations: Mapping[str, str | None]
    question: str
    query: Query
    clean_answer: Answer
    extras: Mapping = field(default_factory=dict)

    def statement_index(self, sid: str) -> int | None:
        for i, s in enumerate(self.statements):
            if s.id == sid:
                return i
        return None

    @property
    def text(self) -> str:
        return "\n".join(s.text for s in self.statements)


def observed_values(query: Query) -> dict[int, int]:
    """Individual-level facts shown to the reader: the factual evidence of counterfactual
    and attributional queries (single-valued clauses only)."""
    if query.kind not in (QueryKind.COUNTERFACTUAL, QueryKind.ATTRIBUTIONAL):
        return {}
    out = {}
    for v in query.evidence.variables:
        x = query.evidence.single_value(v)
        if x is not None:
            out[v] = x
    return out


def build_renderable(
    scm: Scm, query: Query, question: str | None = None, variant: int = 0
) -> RenderableInstance:
    metas = scm.metas
    observed = observed_values(query)
    subject = scenario_of(metas).subject
    statements = render_background(scm, metas, variant)
    statements += [render_observation(metas[v], observed[v], subject) for v in sorted(observed)]
    obs = {metas[v].name: metas[v].domain.values[x] for v, x in sorted(observed.items())}
    text = question if question is not None else render_question(query, metas, variant)
    return RenderableInstance(tuple(statements), obs, text, query, answer_query(scm, query))


# ---------------------------------------------------------------- helpers

def _binary(meta: VariableMeta) -> bool:
    return meta.domain.kind == "binary"


def _pick(rng: np.random.Generator, items: Sequence):
    return items[int(rng.integers(len(items)))]


def _stmt_dict(s: Statement | None):
    return None if s is None else s.to_dict()


def _insert_at(inst: RenderableInstance) -> int:
    """Position after the last background statement (before observations)."""
    for i, s in enumerate(inst.statements):
        if s.kind == "observation":
            return i
    return len(inst.statements)


def _with_statement(inst: RenderableInstance, index: int, stmt: Statement | None, insert: bool = False) -> RenderableInstance:
    st = list(inst.statements)
    if insert:
        st.insert(index, stmt)
    elif stmt is None:
        del st[index]
    else:
        st[index] = stmt
    return replace(inst, statements=tuple(st))


def _next_id(inst: RenderableInstance, prefix: str) -> str:
    ids = {s.id for s in inst.statements}
    k = 0
    while f"{prefix}:{k}" in ids:
        k += 1
    return f"{prefix}:{k}"


def _insert(inst: RenderableInstance, kind: NoiseKind, stmt: Statement, index: int, variable: dict | None, details: dict) -> tuple[RenderableInstance, NoiseRecord]:
    out = _with_statement(inst, index, stmt, insert=True)
    affected = [f"statement:{stmt.id}"]
    if variable is not None:
        added = list(out.extras.get("added_variables", ())) + [variable]
        out = replace(out, extras={**out.extras, "added_variables": added})
        affected.append(f"variable:{variable['name']}")
    rec = NoiseRecord(
        kind.value, tuple(affected), None,
        {"statement": stmt.to_dict(), "variable": variable},
        {"op": "insert_statement", "index": index, **details},
    )
    return out, rec


def _used_groups(inst: RenderableInstance) -> set[str]:
    return {v["name"] for v in inst.extras.get("added_variables", ())}


def _obs_snapshot(inst: RenderableInstance, names: Iterable[str]) -> dict:
    obs = {}
    stmts = {}
    for n in names:
        obs[n] = [n in inst.observations, inst.observations.get(n)]
        idx = inst.statement_index(f"obs:{n}")
        stmts[f"obs:{n}"] = _stmt_dict(inst.statements[idx]) if idx is not None else None
    return {"observations": obs, "statements": stmts}


def _apply_obs_snapshot(inst: RenderableInstance, snap: Mapping, positions: Mapping[str, int]) -> RenderableInstance:
    obs = dict(inst.observations)
    for name, (present, value) in snap["observations"].items():
        if present:
            obs[name] = value
        else:
            obs.pop(name, None)
    st = list(inst.statements)
    # removals and restorations at recorded positions, ascending so indices stay valid
    for sid, pos in sorted(positions.items(), key=lambda kv: kv[1]):
        new = snap["statements"].get(sid)
        cur = next((i for i, s in enumerate(st) if s.id == sid), None)
        if cur is not None:
            if new is None:
                del st[cur]
            else:
                st[cur] = Statement.from_dict(new)
        elif new is not None:
            st.insert(pos, Statement.from_dict(new))
    return replace(inst, observations=obs, statements=tuple(st))


def _observation_change(inst: RenderableInstance, kind: NoiseKind, new_obs: Mapping[str, tuple[bool, str | None]], new_stmts: Mapping[str, Statement | None], details: dict) -> tuple[RenderableInstance, NoiseRecord]:
    names = sorted(new_obs)
    before = _obs_snapshot(inst, names)
    positions = {f"obs:{n}": inst.statement_index(f"obs:{n}") for n in names}
    positions = {k: v for k, v in positions.items() if v is not None}
    after = {
        "observations": {n: [p, v] for n, (p, v) in new_obs.items()},
        "statements": {sid: _stmt_dict(s) for sid, s in new_stmts.items()},
    }
    out = _apply_obs_snapshot(inst, after, positions)
    affected = tuple(f"observation:{n}" for n in names)
    rec = NoiseRecord(kind.value, affected, before, after, {"op": "set_observations", "positions": positions, **details})
    return out, rec


def _value_index(meta: VariableMeta, label: str) -> int:
    return meta.domain.values.index(label)


def _obs_statement(meta: VariableMeta, label: str, subject: str) -> Statement:
    return render_observation(meta, _value_index(meta, label), subject)


# ---------------------------------------------------------------- injectors

def _vp(inst, scm, rng, cfg):
    by_name = {m.name: m for m in scm.metas}
    flips = [n for n, v in inst.observations.items() if v is not None and n in by_name]
    shifts = []
    for i, s in enumerate(inst.statements):
        if s.kind in ("prior", "conditional") and "pct" in s.payload and "masked" not in s.payload:
            p = float(s.payload["prob"])
            signs = [d for d in (cfg.vp_delta, -cfg.vp_delta) if PROB_FLOOR - 1e-12 <= p + d <= PROB_CEIL + 1e-12]
            if signs:
                shifts.append((i, signs))
    modes = [m for m, c in (("flip", flips), ("shift", shifts)) if c]
    if not modes:
        raise NotApplicable("VP", "no observed value or stated binary probability to perturb")
    mode = _pick(rng, modes)
    if mode == "shift":
        i, signs = _pick(rng, shifts)
        delta = _pick(rng, signs)
        old = inst.statements[i]
        p_new = round(float(old.payload["prob"]) + delta, 12)
        pct = format_pct(p_new)
        new = Statement(
            old.id, old.kind, old.text.replace(old.payload["pct"], pct, 1),
            {**old.payload, "prob": p_new, "pct": pct},
        )
        out = _with_statement(inst, i, new)
        rec = NoiseRecord(
            "VP", (f"statement:{old.id}",), old.to_dict(), new.to_dict(),
            {"op": "replace_statement", "index": i, "mode": "shift", "delta": delta},
        )
        return out, rec
    name = _pick(rng, sorted(flips))
    meta = by_name[name]
    others = [x for x in meta.domain.values if x != inst.observations[name]]
    label = _pick(rng, others)
    subject = scenario_of(scm.metas).subject
    stmt = _obs_statement(meta, label, subject) if inst.statement_index(f"obs:{name}") is not None else None
    stmts = {f"obs:{name}": stmt} if stmt is not None else {}
    return _observation_change(inst, NoiseKind.VP, {name: (True, label)}, stmts, {"mode": "flip"})


def _binary_sinks(scm: Scm) -> list[int]:
    sinks = [v for v in scm.dag.sinks if _binary(scm.metas[v])]
    if sinks:
        return sinks
    return [v for v in range(scm.n) if scm.dag.parents(v) and _binary(scm.metas[v])]


def _iv(inst, scm, rng, cfg):
    scen = scenario_of(scm.metas)
    groups = [g for g in scen.distractors if g not in _used_groups(inst)]
    targets = _binary_sinks(scm)
    if not groups or not targets:
        raise NotApplicable("IV", "no unused distractor group or binary outcome")
    group = _pick(rng, groups)
    v = _pick(rng, targets)
    meta = scm.metas[v]
    p = max(row[1] for row in scm.cpts[v].rows.values())
    text = f"Also, {format_pct(p)} of {group} {phrase(meta, 'spurious')}."
    stmt = Statement(_next_id(inst, "iv"), "distractor", text, {"group": group, "node": v, "prob": p})
    variable = {"name": group, "role": "distractor", "observability": "observed", "linked": [meta.name]}
    return _insert(inst, NoiseKind.IV, stmt, _insert_at(inst), variable, {})


def _ci(inst, scm, rng, cfg):
    scen = scenario_of(scm.metas)
    groups = [g for g in scen.confounders if g not in _used_groups(inst)]
    binary = [v for v in range(scm.n) if _binary(scm.metas[v])]
    if not groups or len(binary) < 2:
        raise NotApplicable("CI", "needs an unused confounder group and two binary variables")
    group = _pick(rng, groups)
    a, b = (binary[i] for i in rng.choice(len(binary), size=2, replace=False))
    ma, mb = scm.metas[a], scm.metas[b]
    text = f"Also, {group} tend to both {phrase(ma, 'more')} and {phrase(mb, 'less')}."
    stmt = Statement(_next_id(inst, "ci"), "confounder", text, {"group": group, "nodes": [int(a), int(b)]})
    variable = {"name": group, "role": "confounder", "observability": "latent", "linked": [ma.name, mb.name]}
    return _insert(inst, NoiseKind.CI, stmt, _insert_at(inst), variable, {})


def _binary_edges(scm: Scm) -> list[tuple[int, int]]:
    return [(u, v) for u, v in sorted(scm.dag.edge_set) if _binary(scm.metas[u]) and _binary(scm.metas[v])]


def _bip(inst, scm, rng, cfg):
    edges = _binary_edges(scm)
    if not edges:
        raise NotApplicable("BIP", "no edge between binary variables")
    u, v = _pick(rng, edges)
    text = (
        f"Many people believe that {phrase(scm.metas[v], 'gerund')} increases the chance of "
        f"{phrase(scm.metas[u], 'noun')}."
    )
    stmt = Statement(_next_id(inst, "bip"), "belief", text, {"claimed_edge": [int(v), int(u)]})
    return _insert(inst, NoiseKind.BIP, stmt, _insert_at(inst), None, {})


def _cs(inst, scm, rng, cfg):
    edges = _binary_edges(scm)
    obs = inst.observations
    swaps = [
        (u, v) for u, v in sorted(scm.dag.edge_set)
        if scm.metas[u].domain == scm.metas[v].domain
        and obs.get(scm.metas[u].name) is not None and obs.get(scm.metas[v].name) is not None
        and obs[scm.metas[u].name] != obs[scm.metas[v].name]
    ]
    modes = [m for m, c in (("statement", edges), ("swap", swaps)) if c]
    if not modes:
        raise NotApplicable("CS", "no causal edge to reverse")
    mode = _pick(rng, modes)
    if mode == "swap":
        u, v = _pick(rng, swaps)
        mu, mv = scm.metas[u], scm.metas[v]
        subject = scenario_of(scm.metas).subject
        new_obs = {mu.name: (True, obs[mv.name]), mv.name: (True, obs[mu.name])}
        stmts = {}
        for m, label in ((mu, obs[mv.name]), (mv, obs[mu.name])):
            if inst.statement_index(f"obs:{m.name}") is not None:
                stmts[f"obs:{m.name}"] = _obs_statement(m, label, subject)
        return _observation_change(inst, NoiseKind.CS, new_obs, stmts, {"mode": "swap", "edge": [u, v]})
    u, v = _pick(rng, edges)
    pop = scenario_of(scm.metas).population
    text = f"{capitalize(pop)} who {phrase(scm.metas[v], 'short')} are more likely to have {phrase(scm.metas[u], 'perfect')}."
    stmt = Statement(_next_id(inst, "cs"), "reversed", text, {"claimed_edge": [int(v), int(u)]})
    index = next(
        (i for i, s in enumerate(inst.statements)
         if s.kind in ("prior", "conditional") and s.payload.get("node") == u),
        _insert_at(inst),
    )
    return _insert(inst, NoiseKind.CS, stmt, index, None, {"mode": "statement", "edge": [u, v]})


def _mask_text(s: Statement) -> str:
    text = s.text
    for pct in {format_pct(p) for p in s.payload.get("row", ())} | ({s.payload["pct"]} if "pct" in s.payload else set()):
        text = text.replace(pct, MISSING)
    return text


def _pm(inst, scm, rng, cfg):
    stmt_idx = [
        i for i, s in enumerate(inst.statements)
        if s.kind in ("prior", "conditional") and "masked" not in s.payload
    ]
    obs_names = sorted(n for n, v in inst.observations.items() if v is not None)
    targets = [("statement", i) for i in stmt_idx] + [("observation", n) for n in obs_names]
    if not targets:
        raise NotApplicable("PM", "nothing left to mask")
    what, which = _pick(rng, targets)
    if what == "statement":
        old = inst.statements[which]
        if cfg.pm_mode == "silent":
            out = _with_statement(inst, which, None)
            rec = NoiseRecord(
                "PM", (f"statement:{old.id}",), old.to_dict(), None,
                {"op": "remove_statement", "index": which, "mode": "silent"},
            )
            return out, rec
        new = Statement(old.id, old.kind, _mask_text(old), {**old.payload, "masked": True})
        out = _with_statement(inst, which, new)
        rec = NoiseRecord(
            "PM", (f"statement:{old.id}",), old.to_dict(), new.to_dict(),
            {"op": "replace_statement", "index": which, "mode": "explicit"},
        )
        return out, rec
    meta = next(m for m in scm.metas if m.name == which)
    sid = f"obs:{which}"
    has_stmt = inst.statement_index(sid) is not None
    if cfg.pm_mode == "silent":
        stmts = {sid: None} if has_stmt else {}
        return _observation_change(inst, NoiseKind.PM, {which: (False, None)}, stmts, {"mode": "silent"})
    subject = scenario_of(scm.metas).subject
    masked = Statement(sid, "observation", f"{capitalize(subject)}: {phrase(meta, 'noun')} {MISSING}.", {"node": meta.node, "masked": True})
    stmts = {sid: masked} if has_stmt else {}
    return _observation_change(inst, NoiseKind.PM, {which: (True, None)}, stmts, {"mode": "explicit"})


def _uncertain(scm: Scm, node: int) -> bool:
    return any(0.0 < row[1] < 1.0 for row in scm.cpts[node].rows.values())


def _qp(inst, scm, rng, cfg):
    pop = scenario_of(scm.metas).population
    edges = _binary_edges(scm)
    chains = [(a, b, c) for a, b in edges for b2, c in edges if b2 == b and _uncertain(scm, c)]
    singles = [(a, c) for a, c in edges if _uncertain(scm, c)]
    forms = [f for f, c in (("chain", chains), ("edge", singles)) if c]
    if not forms:
        raise NotApplicable("QP", "no uncertain binary effect to presuppose")
    form = _pick(rng, forms)
    m = scm.metas
    if form == "chain":
        a, b, c = _pick(rng, chains)
        text = (
            f"If {pop} {phrase(m[a], 'past_false')} but still {phrase(m[b], 'past_true')}, "
            f"will they definitely {phrase(m[c], 'short')}?"
        )
        nodes = [a, b, c]
    else:
        a, c = _pick(rng, singles)
        text = f"If {pop} {phrase(m[a], 'past_true')}, will they definitely {phrase(m[c], 'short')}?"
        nodes = [a, c]
    if text == inst.question:
        raise NotApplicable("QP", "perturbed question equals the current one")
    out = replace(inst, question=text)
    rec = NoiseRecord(
        "QP", ("question",), inst.question, text,
        {"op": "replace_question", "form": form, "nodes": [int(x) for x in nodes]},
    )
    return out, rec


_INJECTORS = {
    NoiseKind.VP: _vp, NoiseKind.IV: _iv, NoiseKind.PM: _pm, NoiseKind.CS: _cs,
    NoiseKind.CI: _ci, NoiseKind.QP: _qp, NoiseKind.BIP: _bip,
}


def apply_noise(
    inst: RenderableInstance, scm: Scm, kind: NoiseKind | str, seed: int, config: NoiseConfig | None = None
) -> tuple[RenderableInstance, NoiseRecord]:
    """Apply one noise kind. Raises :class:`NotApplicable` when the instance offers no target."""
    kind = NoiseKind(kind)
    rng = np.random.default_rng(int(seed))
    return _INJECTORS[kind](inst, scm, rng, config or NoiseConfig())


@dataclass(frozen=True)
class Composition:
    instance: RenderableInstance
    records: tuple[NoiseRecord, ...]
    skips: tuple[dict, ...]


def compose_noise(
    inst: RenderableInstance,
    scm: Scm,
    kinds: Iterable[NoiseKind | str],
    seed: int,
    config: NoiseConfig | None = None,
) -> Composition:
    """Apply ``kinds`` in :data:`COMPOSITION_ORDER`, each with its own derived seed;
    inapplicable kinds are skipped and reported."""
    wanted = {NoiseKind(k) for k in kinds}
    if not wanted:
        raise ValueError("kinds must be non-empty")
    records: list[NoiseRecord] = []
    skips: list[dict] = []
    for kind in COMPOSITION_ORDER:
        if kind not in wanted:
            continue
        try:
            inst, rec = apply_noise(inst, scm, kind, derive_seed(seed, kind.value), config)
        except NotApplicable as e:
            skips.append({"kind": kind.value, "reason": e.reason})
            continue
        records.append(rec)
    return Composition(inst, tuple(records), tuple(skips))


def revert(inst: RenderableInstance, record: NoiseRecord) -> RenderableInstance:
    """Undo ``record``; records from one composition must be reverted newest first."""
    op = record.details["op"]
    if op == "replace_statement":
        return _with_statement(inst, record.details["index"], Statement.from_dict(record.original))
    if op == "remove_statement":
        return _with_statement(inst, record.details["index"], Statement.from_dict(record.original), insert=True)
    if op == "insert_statement":
        out = _with_statement(inst, record.details["index"], None)
        variable = record.replacement.get("variable")
        if variable is not None:
            added = [v for v in out.extras.get("added_variables", ()) if v["name"] != variable["name"]]
            extras = {k: v for k, v in out.extras.items() if k != "added_variables"}
            if added:
                extras["added_variables"] = added
            out = replace(out, extras=extras)
        return out
    if op == "set_observations":
        return _apply_obs_snapshot(inst, record.original, record.details["positions"])
    if op == "replace_question":
        return replace(inst, question=record.original)
    raise ValueError(f"unknown noise op {op!r}")


def revert_all(inst: RenderableInstance, records: Sequence[NoiseRecord]) -> RenderableInstance:
    for rec in reversed(records):
        inst = revert(inst, rec)
    return inst


__all__ = [
    "COMPOSITION_ORDER", "Composition", "MISSING", "NoiseConfig", "NoiseKind", "RenderableInstance",
    "apply_noise", "build_renderable", "compose_noise", "observed_values", "revert", "revert_all",
]
