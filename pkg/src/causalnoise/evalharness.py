"""Evaluation harness: structured prompts, response parsing, oracle and replay backends,
answer scoring, graph-perturbation sensitivity, and structure-discovery scoring."""

from __future__ import annotations

import json
import math
import os
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from decimal import Decimal, InvalidOperation
from pathlib import Path
from typing import Iterable, Mapping, Protocol, Sequence

from . import kernels
from .dag import Dag, EdgeMetrics, PerturbKind, edge_metrics, format_edges, perturb_graph, validate
from .dataset import Instance
from .errors import EmptyParse, MissingPrediction, MissingResponse, NoValidPerturbation, ParseError
from .inference import answer_query, format_answer
from .scm import Cpt, Scm, VariableMeta, parent_tuples
from .seeding import derive_seed

DEFAULT_TOLERANCE = 0.01
CLEAN_GROUP = "W/O Noise"
NOISE_COLUMNS = (CLEAN_GROUP, "VP", "IV", "CS", "PM", "CI", "QP", "BIP")
BLOCKS = ("Causal Graph", "Observed Variables", "Numbers", "Question")


# ---------------------------------------------------------------- prompts

def build_structured_prompt(
    instance: Instance, graph: Dag | None = None, metas: Sequence[VariableMeta] | None = None, noisy: bool = False
) -> str:
    """Intro line, then ``[Causal Graph]``, ``[Observed Variables]``, ``[Numbers]`` and
    ``[Question]`` blocks. Masked observations are omitted."""
    graph = graph if graph is not None else instance.graph
    metas = list(metas if metas is not None else instance.metas)
    view = instance.variant(noisy)
    labels = [m.label for m in metas]
    intro = [s.text for s in view.statements if s.kind == "intro"]
    numbers = [s.text for s in view.statements if s.kind not in ("intro", "observation")]
    observed = [f"{_label_for(metas, name)} = {value}" for name, value in sorted(view.observations.items()) if value is not None]
    lines = intro + ["[Causal Graph]"]
    graph_text = format_edges(graph, labels)
    if graph_text:
        lines.append(graph_text)
    lines += ["[Observed Variables]", *observed, "[Numbers]", *numbers, "[Question]", view.question]
    return "\n".join(lines) + "\n"


def build_natural_prompt(instance: Instance, noisy: bool = False) -> str:
    view = instance.variant(noisy)
    return "\n".join([s.text for s in view.statements] + [f"Question: {view.question}"]) + "\n"


def _label_for(metas: Sequence[VariableMeta], name: str) -> str:
    for m in metas:
        if m.name == name:
            return m.label
    return name


def prompt_block(prompt: str, name: str) -> str:
    """Body of one ``[Name]`` block (empty if absent)."""
    out: list[str] = []
    inside = False
    for line in prompt.splitlines():
        header = re.fullmatch(r"\s*\[(.+?)\]\s*", line)
        if header:
            inside = header.group(1) == name
            continue
        if inside:
            out.append(line)
    return "\n".join(out)


# ---------------------------------------------------------------- parsing

_BULLET = re.compile(r"^\s*(?:[-*•]|\d+[.)])\s*")
_ARROW = re.compile(r"^(.+?)\s*(?:->|→)\s*(.+?)\s*[.;,]?\s*$")


@dataclass(frozen=True)
class GraphParse:
    edges: frozenset[tuple[int, int]]
    skipped: int


def parse_graph_response(text: str, metas: Sequence[VariableMeta]) -> GraphParse:
    """Read ``A -> B`` lines. Labels match case-insensitively; lines with unknown labels or
    self-loops are skipped and counted; duplicates collapse."""
    index = {}
    for m in metas:
        index[m.name.lower()] = m.node
        index[m.label.lower()] = m.node
    edges: set[tuple[int, int]] = set()
    skipped = 0
    for raw in text.splitlines():
        line = _BULLET.sub("", raw).strip().strip("`")
        m = _ARROW.match(line)
        if not m:
            continue
        u = index.get(" ".join(m.group(1).split()).lower())
        v = index.get(" ".join(m.group(2).split()).lower())
        if u is None or v is None or u == v:
            skipped += 1
            continue
        edges.add((u, v))
    if not edges:
        raise EmptyParse("no valid 'A -> B' edge found")
    return GraphParse(frozenset(edges), skipped)


@dataclass(frozen=True)
class ParsedAnswer:
    kind: str
    value: float | bool | None = None
    exact: Decimal | None = None

    @classmethod
    def numeric(cls, d: Decimal) -> "ParsedAnswer":
        return cls("numeric", float(d), d)


UNPARSEABLE = ParsedAnswer("unparseable")
_NUM = r"\d+(?:\.\d+)?|\.\d+"
_ANSWER = re.compile(
    rf"(?P<num>{_NUM})\s+out\s+of\s+(?P<den>{_NUM})"
    rf"|(?P<pct>{_NUM})\s*%"
    rf"|(?P<bare>{_NUM})"
    r"|\b(?P<yn>yes|no)\b",
    re.IGNORECASE,
)


def _token_value(m: re.Match) -> ParsedAnswer | None:
    try:
        if m.group("num") is not None:
            den = Decimal(m.group("den"))
            if den == 0:
                return None
            d = Decimal(m.group("num")) / den
        elif m.group("pct") is not None:
            d = Decimal(m.group("pct")) / 100
        elif m.group("bare") is not None:
            d = Decimal(m.group("bare"))
        else:
            return ParsedAnswer("boolean", m.group("yn").lower() == "yes")
    except InvalidOperation:
        return None
    return ParsedAnswer.numeric(d) if 0 <= d <= 1 else None


def parse_model_answer(text: str) -> ParsedAnswer:
    """The last answer-like token: a probability (``0.025``, ``2.5%``, ``25 out of 1000``)
    or ``yes``/``no``. Numbers outside [0, 1] are passed over."""
    for m in reversed(list(_ANSWER.finditer(text or ""))):
        parsed = _token_value(m)
        if parsed is not None:
            return parsed
    return UNPARSEABLE


def _truth(answer: str) -> ParsedAnswer:
    if answer in ("yes", "no"):
        return ParsedAnswer("boolean", answer == "yes")
    return ParsedAnswer.numeric(Decimal(answer))


def is_correct(parsed: ParsedAnswer, answer: str, tolerance: float = DEFAULT_TOLERANCE) -> bool:
    truth = _truth(answer)
    if parsed.kind != truth.kind:
        return False
    if truth.kind == "boolean":
        return parsed.value == truth.value
    return abs(parsed.exact - truth.exact) <= Decimal(repr(float(tolerance)))


# ---------------------------------------------------------------- backends

class ModelBackend(Protocol):
    serial: bool

    def __call__(self, prompt: str, instance_id: str) -> str: ...


def project_onto_graph(scm: Scm, graph: Dag) -> Scm:
    """SCM over ``graph`` whose CPTs are the true conditionals ``P(X | claimed parents)``
    of ``scm``'s joint; rows with zero probability become uniform."""
    worlds = kernels.all_worlds(scm.cards)
    weights = kernels.world_weights(scm.compiled, worlds)
    cpts = []
    for node in range(scm.n):
        parents = graph.parents(node)
        k = scm.card(node)
        rows = {}
        for t in parent_tuples([scm.card(p) for p in parents]):
            mask = (worlds[:, list(parents)] == t).all(axis=1) if parents else slice(None)
            ws, xs = weights[mask], worlds[mask][:, node]
            joint = [math.fsum(ws[xs == v]) for v in range(k)]
            total = math.fsum(joint)
            rows[t] = tuple(j / total for j in joint) if total > 0 else tuple(1.0 / k for _ in range(k))
        cpts.append(Cpt(node, parents, rows, "projected"))
    return Scm(graph, scm.metas, tuple(cpts))


class OracleBackend:
    """Exact answerer. It reads the causal graph from the prompt: with the true graph it
    answers from the true SCM; with any other acyclic graph it answers from the projection
    of the true joint onto that graph."""

    serial = False

    def __init__(self, instances: Iterable[Instance]):
        self.instances = {inst.id: inst for inst in instances}

    def answer(self, instance: Instance, graph: Dag | None = None) -> str:
        scm = instance.scm
        if graph is not None and graph.edge_set != scm.dag.edge_set:
            if "cycle" in validate(graph):
                return "The stated graph is cyclic; no answer."
            scm = project_onto_graph(scm, graph)
        return format_answer(answer_query(scm, instance.query))

    def __call__(self, prompt: str, instance_id: str) -> str:
        inst = self.instances[instance_id]
        try:
            edges = parse_graph_response(prompt_block(prompt, "Causal Graph"), inst.metas).edges
        except EmptyParse:
            edges = frozenset()
        return self.answer(inst, Dag(inst.scm.n, tuple(sorted(edges))))


def oracle_backend(instance: Instance) -> str:
    return OracleBackend([instance]).answer(instance)


class ReplayBackend:
    """Responses read from a line-delimited file of ``{"id": ..., "response": ...}``."""

    serial = False

    def __init__(self, responses: Mapping[str, str]):
        self.responses = dict(responses)

    @classmethod
    def from_file(cls, path: str | os.PathLike) -> "ReplayBackend":
        return cls(read_responses(path))

    def __call__(self, prompt: str, instance_id: str) -> str:
        if instance_id not in self.responses:
            raise MissingResponse([instance_id])
        return self.responses[instance_id]


def read_responses(path: str | os.PathLike) -> dict[str, str]:
    out: dict[str, str] = {}
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                d = json.loads(line)
                out[str(d["id"])] = str(d["response"])
            except (json.JSONDecodeError, KeyError, TypeError) as e:
                raise ParseError(lineno, f"bad response record: {e!r}") from None
    return out


def write_responses(responses: Mapping[str, str], path: str | os.PathLike) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for key in sorted(responses):
            f.write(json.dumps({"id": key, "response": responses[key]}, ensure_ascii=False) + "\n")


def query_backend(backend: ModelBackend, prompts: Mapping[str, str], workers: int = 1) -> dict[str, str]:
    """Ask ``backend`` every prompt; concurrent unless the backend declares itself serial."""
    ids = sorted(prompts)
    if workers <= 1 or getattr(backend, "serial", True):
        return {i: backend(prompts[i], i) for i in ids}
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return dict(zip(ids, pool.map(lambda i: backend(prompts[i], i), ids)))


# ---------------------------------------------------------------- answer scoring

@dataclass(frozen=True)
class Verdict:
    id: str
    truth: str
    response: str
    parsed: str
    correct: bool
    kinds: tuple[str, ...]

    def to_dict(self) -> dict:
        return {"id": self.id, "truth": self.truth, "response": self.response, "parsed": self.parsed,
                "correct": self.correct, "noise_kinds": list(self.kinds)}


@dataclass(frozen=True)
class GroupScore:
    correct: int
    total: int

    @property
    def accuracy(self) -> float:
        return self.correct / self.total if self.total else 0.0


@dataclass(frozen=True)
class ScoreReport:
    accuracy: float
    by_kind: Mapping[str, GroupScore]
    by_size: Mapping[int, GroupScore]
    verdicts: tuple[Verdict, ...]
    tolerance: float

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "count": len(self.verdicts),
            "tolerance": self.tolerance,
            "by_kind": {k: {"correct": g.correct, "total": g.total, "accuracy": g.accuracy} for k, g in self.by_kind.items()},
            "by_size": {str(k): {"correct": g.correct, "total": g.total, "accuracy": g.accuracy} for k, g in self.by_size.items()},
            "verdicts": [v.to_dict() for v in self.verdicts],
        }

    def to_text(self) -> str:
        cols = [c for c in NOISE_COLUMNS if c in self.by_kind]
        head = " | ".join(f"{c:>9}" for c in ["Overall", *cols])
        row = " | ".join(f"{100 * x:9.1f}" for x in [self.accuracy, *(self.by_kind[c].accuracy for c in cols)])
        lines = ["Accuracy (%) by noise type", head, row, "", "Accuracy (%) by number of noise types"]
        for size, g in sorted(self.by_size.items()):
            label = "No noise" if size == 0 else f"{size} noise type" + ("s" if size > 1 else "")
            lines.append(f"{label:<16} {100 * g.accuracy:6.1f}  ({g.correct}/{g.total})")
        return "\n".join(lines) + "\n"


def score_answers(
    instances: Iterable[Instance], responses: Mapping[str, str], tolerance: float = DEFAULT_TOLERANCE
) -> ScoreReport:
    """Score one response per instance. Instances with noise count once under every kind
    they carry; ``by_size`` partitions instances by number of kinds (0 = clean)."""
    instances = sorted(instances, key=lambda i: i.id)
    missing = [i.id for i in instances if i.id not in responses]
    if missing:
        raise MissingResponse(missing)
    verdicts = []
    kind_counts: dict[str, list[int]] = {}
    size_counts: dict[int, list[int]] = {}
    for inst in instances:
        parsed = parse_model_answer(responses[inst.id])
        ok = is_correct(parsed, inst.answer, tolerance)
        kinds = inst.noise_kinds
        shown = parsed.kind if parsed.kind == "unparseable" else str(parsed.exact if parsed.kind == "numeric" else parsed.value)
        verdicts.append(Verdict(inst.id, inst.answer, responses[inst.id], shown, ok, kinds))
        for key in (kinds or (CLEAN_GROUP,)):
            kind_counts.setdefault(key, [0, 0])
            kind_counts[key][0] += ok
            kind_counts[key][1] += 1
        size_counts.setdefault(len(kinds), [0, 0])
        size_counts[len(kinds)][0] += ok
        size_counts[len(kinds)][1] += 1
    correct = sum(v.correct for v in verdicts)
    order = {k: i for i, k in enumerate(NOISE_COLUMNS)}
    return ScoreReport(
        correct / len(verdicts) if verdicts else 0.0,
        {k: GroupScore(*kind_counts[k]) for k in sorted(kind_counts, key=lambda k: order.get(k, len(order)))},
        {k: GroupScore(*size_counts[k]) for k in sorted(size_counts)},
        tuple(verdicts),
        tolerance,
    )


def evaluate(
    instances: Sequence[Instance], backend: ModelBackend, noisy: bool = True,
    tolerance: float = DEFAULT_TOLERANCE, workers: int = 1,
) -> tuple[ScoreReport, dict[str, str]]:
    """Prompt every instance, query ``backend`` and score."""
    prompts = {i.id: build_structured_prompt(i, noisy=noisy) for i in instances}
    responses = query_backend(backend, prompts, workers)
    return score_answers(instances, responses, tolerance), responses


# ---------------------------------------------------------------- sensitivity

@dataclass(frozen=True)
class SensitivityRow:
    kind: str
    count: int
    accuracy: float
    scored: int
    skipped: int

    @property
    def label(self) -> str:
        return "Oracle Graph" if self.kind == "none" else f"{PerturbKind(self.kind).code} x{self.count}"

    def to_dict(self) -> dict:
        return {"kind": self.kind, "count": self.count, "accuracy": self.accuracy, "scored": self.scored, "skipped": self.skipped}


@dataclass(frozen=True)
class SensitivityReport:
    rows: tuple[SensitivityRow, ...]
    prompts: Mapping[tuple[str, int], Mapping[str, str]] = field(default_factory=dict, repr=False, compare=False)

    def row(self, kind: str, count: int) -> SensitivityRow:
        if kind != "none":
            kind = PerturbKind.parse(kind).value
        for r in self.rows:
            if r.kind == kind and r.count == count:
                return r
        raise KeyError((kind, count))

    def to_dict(self) -> dict:
        return {"rows": [r.to_dict() for r in self.rows]}

    def to_text(self) -> str:
        lines = [f"{'Graph condition':<16} {'Acc (%)':>8} {'Scored':>7} {'Skipped':>8}"]
        for r in self.rows:
            lines.append(f"{r.label:<16} {100 * r.accuracy:8.1f} {r.scored:7d} {r.skipped:8d}")
        return "\n".join(lines) + "\n"


def perturbed_prompts(
    instances: Sequence[Instance], kind: PerturbKind | str, count: int, seed: int, noisy: bool = False
) -> tuple[dict[str, str], list[str]]:
    """Structured prompts built over perturbed graphs; ids whose graph admits no such
    perturbation are returned separately."""
    kind = kind if isinstance(kind, PerturbKind) else PerturbKind.parse(kind)
    prompts: dict[str, str] = {}
    skipped: list[str] = []
    for inst in instances:
        try:
            graph, _ = perturb_graph(inst.graph, kind, count, derive_seed(seed, inst.id, kind.value, count))
        except NoValidPerturbation:
            skipped.append(inst.id)
            continue
        prompts[inst.id] = build_structured_prompt(inst, graph, noisy=noisy)
    return prompts, skipped


def run_sensitivity_suite(
    instances: Sequence[Instance],
    kinds: Iterable[PerturbKind | str],
    counts: Iterable[int],
    backend: ModelBackend,
    seed: int,
    tolerance: float = DEFAULT_TOLERANCE,
    workers: int = 1,
    noisy: bool = False,
    keep_prompts: bool = False,
) -> SensitivityReport:
    """Accuracy with the true graph (baseline) and for every (kind, count) perturbation of it.
    Only the ``[Causal Graph]`` block changes between conditions."""
    by_id = {i.id: i for i in instances}
    kept: dict[tuple[str, int], dict[str, str]] = {}

    def run(prompts: Mapping[str, str]) -> tuple[float, int]:
        if not prompts:
            return 0.0, 0
        responses = query_backend(backend, prompts, workers)
        report = score_answers([by_id[i] for i in prompts], responses, tolerance)
        return report.accuracy, len(prompts)

    base = {i.id: build_structured_prompt(i, noisy=noisy) for i in instances}
    acc, n = run(base)
    rows = [SensitivityRow("none", 0, acc, n, 0)]
    if keep_prompts:
        kept[("none", 0)] = base
    for kind in kinds:
        kind = PerturbKind.parse(kind) if isinstance(kind, str) else kind
        for count in counts:
            prompts, skipped = perturbed_prompts(instances, kind, count, seed, noisy)
            acc, n = run(prompts)
            rows.append(SensitivityRow(kind.value, int(count), acc, n, len(skipped)))
            if keep_prompts:
                kept[(kind.value, int(count))] = prompts
    return SensitivityReport(tuple(rows), kept)


# ---------------------------------------------------------------- structure discovery

@dataclass(frozen=True)
class StructureReport:
    precision: float
    recall: float
    f1: float
    per_instance: Mapping[str, EdgeMetrics]
    averaging: str = "micro"

    def to_dict(self) -> dict:
        return {
            "precision": self.precision, "recall": self.recall, "f1": self.f1,
            "averaging": self.averaging,
            "per_instance": {k: m.to_dict() for k, m in sorted(self.per_instance.items())},
        }

    def to_text(self) -> str:
        return (
            "Edge-level structure discovery (micro-averaged)\n"
            f"{'Precision':>10} {'Recall':>10} {'F1':>10}\n"
            f"{self.precision:10.4f} {self.recall:10.4f} {self.f1:10.4f}\n"
        )


def score_structure_discovery(
    predictions: Mapping[str, Dag | Iterable[tuple[int, int]]], instances: Iterable[Instance]
) -> StructureReport:
    """Per-instance edge metrics and micro averages over summed TP/FP/FN."""
    instances = list(instances)
    missing = [i.id for i in instances if i.id not in predictions]
    if missing:
        raise MissingPrediction(missing)
    per = {inst.id: edge_metrics(predictions[inst.id], inst.graph) for inst in instances}
    tp = sum(m.true_positives for m in per.values())
    fp = sum(m.false_positives for m in per.values())
    fn = sum(m.false_negatives for m in per.values())
    total = EdgeMetrics.from_counts(tp, fp, fn)
    return StructureReport(total.precision, total.recall, total.f1, per)


def read_predictions(path: str | os.PathLike, instances: Iterable[Instance]) -> dict[str, frozenset[tuple[int, int]]]:
    """Prediction file: one ``{"id", "edges": [[u, v], ...]}`` or ``{"id", "response": text}``
    record per line; text responses are parsed against the instance's labels (no edge = empty graph)."""
    metas = {i.id: i.metas for i in instances}
    out: dict[str, frozenset[tuple[int, int]]] = {}
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                d = json.loads(line)
                key = str(d["id"])
                if "edges" in d:
                    out[key] = frozenset((int(u), int(v)) for u, v in d["edges"])
                else:
                    try:
                        out[key] = parse_graph_response(str(d["response"]), metas.get(key, ())).edges
                    except EmptyParse:
                        out[key] = frozenset()
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
                raise ParseError(lineno, f"bad prediction record: {e!r}") from None
    return out


def write_report(report, prefix: str | os.PathLike) -> tuple[Path, Path]:
    """``<prefix>.txt`` table and ``<prefix>.json`` record."""
    prefix = Path(prefix)
    txt = prefix.with_name(prefix.name + ".txt")
    js = prefix.with_name(prefix.name + ".json")
    txt.write_text(report.to_text(), encoding="utf-8")
    js.write_text(json.dumps(report.to_dict(), sort_keys=True, indent=2) + "\n", encoding="utf-8")
    return txt, js


__all__ = [
    "BLOCKS", "CLEAN_GROUP", "DEFAULT_TOLERANCE", "GraphParse", "GroupScore", "ModelBackend",
    "OracleBackend", "ParsedAnswer", "ReplayBackend", "ScoreReport", "SensitivityReport",
    "SensitivityRow", "StructureReport", "UNPARSEABLE", "Verdict", "build_natural_prompt",
    "build_structured_prompt", "evaluate", "is_correct", "oracle_backend", "parse_graph_response",
    "parse_model_answer", "perturbed_prompts", "project_onto_graph", "prompt_block",
    "query_backend", "read_predictions", "read_responses", "run_sensitivity_suite",
    "score_answers", "score_structure_discovery", "write_report", "write_responses",
]
