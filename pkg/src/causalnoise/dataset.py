"""Instance assembly, line-delimited serialization, and seeded parallel dataset generation."""

from __future__ import annotations

import hashlib
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Iterator, Mapping

import numpy as np
import yaml

from .dag import MAX_NODES, MIN_NODES, Dag, Motif, sample_dag
from .errors import ConfigError, ParseError, SchemaVersionMismatch, StageError
from .inference import Event, Query, QueryKind, answer_query, format_answer
from .noise import NoiseConfig, RenderableInstance, build_renderable, compose_noise
from .records import NoiseRecord
from .scm import MechanismConfig, Scm, VariableMeta, sample_mechanisms, sample_world
from .seeding import derive_seed
from .textgen import ScenarioDomain, Statement, ground_graph, scenario_of

FORMAT_VERSION = 1
CONFIG_ENV = "CAUSALNOISE_CONFIG"
MIX_TOL = 1e-9
ATTRIBUTION_RETRIES = 20


def _uniform(keys: Iterable[str]) -> dict[str, float]:
    keys = list(keys)
    return {k: 1.0 / len(keys) for k in keys}


def _check_mix(name: str, mix: Mapping[str, float], allowed: Iterable[str]) -> dict[str, float]:
    allowed = set(allowed)
    mix = {str(k): float(v) for k, v in mix.items()}
    unknown = set(mix) - allowed
    if unknown:
        raise ConfigError(f"{name}: unknown keys {sorted(unknown)}")
    if any(v < 0 for v in mix.values()):
        raise ConfigError(f"{name}: weights must be non-negative")
    if abs(math.fsum(mix.values()) - 1.0) > MIX_TOL:
        raise ConfigError(f"{name}: weights must sum to 1")
    return mix


@dataclass(frozen=True)
class GenerationConfig:
    seed: int = 0
    count: int = 100
    node_range: tuple[int, int] = (MIN_NODES, MAX_NODES)
    motif_mix: Mapping[str, float] = field(default_factory=lambda: _uniform(m.value for m in Motif))
    scenario_mix: Mapping[str, float] = field(default_factory=lambda: _uniform(d.value for d in ScenarioDomain))
    query_mix: Mapping[str, float] = field(default_factory=lambda: _uniform(k.value for k in QueryKind))
    boolean_fraction: float = 0.25
    categorical_rate: float = 0.0
    template_variants: int = 1
    fixture: str | None = None
    mechanism: MechanismConfig = field(default_factory=MechanismConfig)
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    output: str | None = None

    def __post_init__(self):
        if self.count < 1:
            raise ConfigError("count must be positive")
        lo, hi = (int(x) for x in self.node_range)
        if not MIN_NODES <= lo <= hi <= MAX_NODES:
            raise ConfigError(f"node_range must satisfy {MIN_NODES} <= lo <= hi <= {MAX_NODES}")
        object.__setattr__(self, "node_range", (lo, hi))
        object.__setattr__(self, "motif_mix", _check_mix("motif_mix", self.motif_mix, (m.value for m in Motif)))
        object.__setattr__(self, "scenario_mix", _check_mix("scenario_mix", self.scenario_mix, (d.value for d in ScenarioDomain)))
        object.__setattr__(self, "query_mix", _check_mix("query_mix", self.query_mix, (k.value for k in QueryKind)))
        for name in ("boolean_fraction", "categorical_rate"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1]")
        if self.template_variants < 1:
            raise ConfigError("template_variants must be >= 1")
        if self.fixture is not None and self.fixture not in fixture_names():
            raise ConfigError(f"unknown fixture {self.fixture!r}; shipped: {fixture_names()}")

    @classmethod
    def from_dict(cls, d: Mapping) -> "GenerationConfig":
        d = dict(d)
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
        if "mechanism" in d:
            d["mechanism"] = MechanismConfig.from_dict(d["mechanism"] or {})
        if "noise" in d:
            d["noise"] = NoiseConfig.from_dict(d["noise"] or {})
        if "node_range" in d:
            d["node_range"] = tuple(d["node_range"])
        try:
            return cls(**d)
        except TypeError as e:
            raise ConfigError(str(e)) from None

    def to_dict(self) -> dict:
        m = self.mechanism
        return {
            "seed": self.seed,
            "count": self.count,
            "node_range": list(self.node_range),
            "motif_mix": dict(self.motif_mix),
            "scenario_mix": dict(self.scenario_mix),
            "query_mix": dict(self.query_mix),
            "boolean_fraction": self.boolean_fraction,
            "categorical_rate": self.categorical_rate,
            "template_variants": self.template_variants,
            "fixture": self.fixture,
            "mechanism": {
                "families": list(m.families), "prob_low": m.prob_low, "prob_high": m.prob_high,
                "min_separation": m.min_separation, "decimals": m.decimals,
                "strength": list(m.strength), "leak": list(m.leak), "dirichlet_alpha": m.dirichlet_alpha,
            },
            "noise": self.noise.to_dict(),
        }


def load_config(path: str | os.PathLike | None = None, **overrides) -> GenerationConfig:
    """Read a YAML (or JSON) config; ``path`` defaults to ``$CAUSALNOISE_CONFIG``.
    Non-None ``overrides`` replace top-level scalars."""
    path = path or os.environ.get(CONFIG_ENV)
    data: dict = {}
    if path:
        try:
            data = yaml.safe_load(Path(path).read_text(encoding="utf-8")) or {}
        except yaml.YAMLError as e:
            raise ConfigError(f"{path}: {e}") from None
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
    data.update({k: v for k, v in overrides.items() if v is not None})
    return GenerationConfig.from_dict(data)


# ---------------------------------------------------------------- fixtures

def fixture_names() -> list[str]:
    root = resources.files("causalnoise.fixtures")
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".json") and p.name != "noise_goldens.json")


def load_fixture(name: str) -> tuple[Scm, Query, str | None]:
    """Shipped reference SCM with its query and optional fixed question text."""
    text = resources.files("causalnoise.fixtures").joinpath(f"{name}.json").read_text(encoding="utf-8")
    d = json.loads(text)
    return Scm.from_dict(d["scm"]), Query.from_dict(d["query"]), d.get("question")


def load_noise_goldens() -> dict:
    text = resources.files("causalnoise.fixtures").joinpath("noise_goldens.json").read_text(encoding="utf-8")
    return json.loads(text)


# ---------------------------------------------------------------- instances

@dataclass(frozen=True)
class Instance:
    id: str
    scm: Scm
    background_clean: tuple[Statement, ...]
    background_noisy: tuple[Statement, ...]
    question_clean: str
    question_noisy: str
    observations_clean: Mapping[str, str | None]
    observations_noisy: Mapping[str, str | None]
    query: Query
    answer: str
    noise_records: tuple[NoiseRecord, ...] = ()
    metadata: Mapping = field(default_factory=dict)
    format_version: int = FORMAT_VERSION

    @property
    def graph(self) -> Dag:
        return self.scm.dag

    @property
    def metas(self) -> tuple[VariableMeta, ...]:
        return self.scm.metas

    @property
    def noise_kinds(self) -> tuple[str, ...]:
        return tuple(r.kind for r in self.noise_records)

    def variant(self, noisy: bool) -> RenderableInstance:
        if noisy:
            return RenderableInstance(self.background_noisy, self.observations_noisy, self.question_noisy, self.query, self.answer)
        return RenderableInstance(self.background_clean, self.observations_clean, self.question_clean, self.query, self.answer)

    def to_record(self) -> dict:
        scm = self.scm.to_dict()
        return {
            "id": self.id,
            "graph": scm["graph"],
            "metas": scm["metas"],
            "cpts": scm["cpts"],
            "background_clean": [s.to_dict() for s in self.background_clean],
            "background_noisy": [s.to_dict() for s in self.background_noisy],
            "question_clean": self.question_clean,
            "question_noisy": self.question_noisy,
            "observations_clean": dict(self.observations_clean),
            "observations_noisy": dict(self.observations_noisy),
            "query": self.query.to_dict(),
            "answer": self.answer,
            "noise_records": [r.to_dict() for r in self.noise_records],
            "metadata": dict(self.metadata),
            "format_version": self.format_version,
        }

    @classmethod
    def from_record(cls, d: Mapping) -> "Instance":
        scm = Scm.from_dict({"graph": d["graph"], "metas": d["metas"], "cpts": d["cpts"]})
        return cls(
            d["id"], scm,
            tuple(Statement.from_dict(s) for s in d["background_clean"]),
            tuple(Statement.from_dict(s) for s in d["background_noisy"]),
            d["question_clean"], d["question_noisy"],
            dict(d["observations_clean"]), dict(d["observations_noisy"]),
            Query.from_dict(d["query"]), d["answer"],
            tuple(NoiseRecord.from_dict(r) for r in d["noise_records"]),
            dict(d["metadata"]), int(d["format_version"]),
        )


def dumps_record(inst: Instance) -> str:
    return json.dumps(inst.to_record(), sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def _weighted(rng: np.random.Generator, mix: Mapping[str, float]) -> str:
    keys = sorted(k for k, w in mix.items() if w > 0)
    weights = np.array([mix[k] for k in keys])
    return keys[int(rng.choice(len(keys), p=weights / weights.sum()))]


def _world_event(world: Mapping[int, int], nodes: Iterable[int]) -> Event:
    return Event.of({v: world[v] for v in nodes})


def _is_binary(scm: Scm, v: int) -> bool:
    return scm.card(v) == 2


def build_query(scm: Scm, kind: QueryKind | str, seed: int, boolean_fraction: float = 0.0) -> Query:
    """Draw a query of ``kind`` whose evidence comes from a sampled world (so it has positive
    probability). Attributional queries need a binary cause/outcome pair on a directed path,
    both equal to 1 in the world; after a few resamples they fall back to counterfactual."""
    kind = QueryKind(kind)
    rng = np.random.default_rng(int(seed))
    dag = scm.dag
    n = scm.n
    world = sample_world(scm, derive_seed(seed, "world"))

    if kind is QueryKind.ATTRIBUTIONAL:
        pairs = [(x, y) for x in range(n) for y in sorted(dag.descendants(x)) if _is_binary(scm, x) and _is_binary(scm, y)]
        for attempt in range(ATTRIBUTION_RETRIES if pairs else 0):
            w = world if attempt == 0 else sample_world(scm, derive_seed(seed, "world", attempt))
            hits = [(x, y) for x, y in pairs if w[x] == 1 and w[y] == 1]
            if hits:
                x, y = hits[int(rng.integers(len(hits)))]
                return Query(QueryKind.ATTRIBUTIONAL, Event.of({y: 1}), Event.of({x: 1, y: 1}), cause=x)
        kind = QueryKind.COUNTERFACTUAL

    causes = [v for v in range(n) if dag.descendants(v)]
    if kind is QueryKind.OBSERVATIONAL:
        target = int(rng.integers(n))
        others = [v for v in range(n) if v != target]
        evidence = Event()
        if rng.random() < 0.5:
            evidence = _world_event(world, [others[int(rng.integers(len(others)))]])
        return Query(QueryKind.OBSERVATIONAL, _world_event(world, [target]), evidence)

    x = causes[int(rng.integers(len(causes)))]
    desc = sorted(dag.descendants(x))
    y = desc[int(rng.integers(len(desc)))]
    if kind is QueryKind.INTERVENTIONAL:
        value = int(rng.integers(scm.card(x)))
        return Query(QueryKind.INTERVENTIONAL, _world_event(world, [y]), interventions=((x, value),))
    alternatives = [v for v in range(scm.card(x)) if v != world[x]]
    value = alternatives[int(rng.integers(len(alternatives)))]
    fmt = "boolean" if rng.random() < boolean_fraction else "probability"
    return Query(
        QueryKind.COUNTERFACTUAL, _world_event(world, [y]), _world_event(world, [x, y]),
        ((x, value),), answer_format=fmt,
    )


def _plan(config: GenerationConfig, seed: int) -> dict:
    rng = np.random.default_rng(derive_seed(seed, "plan"))
    lo, hi = config.node_range
    return {
        "node_count": int(rng.integers(lo, hi + 1)),
        "motif": _weighted(rng, config.motif_mix),
        "domain": _weighted(rng, config.scenario_mix),
        "query_kind": _weighted(rng, config.query_mix),
        "variant": int(rng.integers(config.template_variants)),
    }


class _Stage:
    def __init__(self, index: int):
        self.index = index
        self.name = "plan"

    def __call__(self, name: str) -> "_Stage":
        self.name = name
        return self

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc is not None and not isinstance(exc, StageError):
            raise StageError(self.name, self.index, exc) from exc
        return False


def generate_instance(config: GenerationConfig, index: int) -> Instance:
    """Build instance ``index``: every stage draws from a seed derived from
    ``(config.seed, index)``, so instances are independent of each other."""
    if not 0 <= index < config.count:
        raise IndexError(f"index {index} outside 0..{config.count - 1}")
    seed = derive_seed(config.seed, index)
    stage = _Stage(index)
    question = None
    with stage("plan"):
        plan = _plan(config, seed)
    if config.fixture is not None:
        with stage("fixture"):
            scm, query, question = load_fixture(config.fixture)
            plan |= {"node_count": scm.n, "motif": None, "domain": scenario_of(scm.metas).domain, "query_kind": query.kind.value}
    else:
        with stage("sample_dag"):
            dag = sample_dag(derive_seed(seed, "dag"), plan["node_count"], plan["motif"])
        with stage("ground_graph"):
            metas = ground_graph(dag, plan["domain"], derive_seed(seed, "ground"), categorical_rate=config.categorical_rate)
        with stage("sample_mechanisms"):
            scm = sample_mechanisms(dag, metas, derive_seed(seed, "scm"), config.mechanism)
        with stage("build_query"):
            query = build_query(scm, plan["query_kind"], derive_seed(seed, "query"), config.boolean_fraction)
    with stage("render"):
        clean = build_renderable(scm, query, question, plan["variant"])
    with stage("noise"):
        kinds = config.noise.draw_kinds(derive_seed(seed, "noise-kinds"))
        if kinds:
            comp = compose_noise(clean, scm, kinds, derive_seed(seed, "noise"), config.noise)
            noisy, records, skips = comp.instance, comp.records, comp.skips
        else:
            noisy, records, skips = clean, (), ()
    metadata = {
        "index": index,
        "master_seed": config.seed,
        "seed": seed,
        "node_count": plan["node_count"],
        "motif": plan["motif"],
        "domain": plan["domain"],
        "scenario": scenario_of(scm.metas).name,
        "query_kind": query.kind.value,
        "requested_query_kind": plan["query_kind"],
        "variant": plan["variant"],
        "noise_requested": [k.value for k in kinds],
        "noise_kinds": [r.kind for r in records],
        "noise_skips": list(skips),
        "added_variables": list(noisy.extras.get("added_variables", ())),
    }
    return Instance(
        id=f"{config.seed}-{index:06d}",
        scm=scm,
        background_clean=clean.statements,
        background_noisy=noisy.statements,
        question_clean=clean.question,
        question_noisy=noisy.question,
        observations_clean=dict(clean.observations),
        observations_noisy=dict(noisy.observations),
        query=query,
        answer=format_answer(clean.clean_answer),
        noise_records=tuple(records),
        metadata=metadata,
    )


def _generate_line(args: tuple[GenerationConfig, int]) -> str:
    config, index = args
    return dumps_record(generate_instance(config, index))


def generate_lines(config: GenerationConfig, workers: int = 1) -> Iterator[str]:
    """Serialized records in index order, regardless of ``workers``."""
    jobs = ((config, i) for i in range(config.count))
    if workers <= 1:
        yield from map(_generate_line, jobs)
        return
    chunk = max(1, min(64, config.count // (workers * 4) or 1))
    with ProcessPoolExecutor(max_workers=workers) as pool:
        yield from pool.map(_generate_line, jobs, chunksize=chunk)


def generate_dataset(config: GenerationConfig, workers: int = 1) -> Iterator[Instance]:
    for line in generate_lines(config, workers):
        yield Instance.from_record(json.loads(line))


@dataclass(frozen=True)
class DatasetManifest:
    config: Mapping
    count: int
    digest: str
    format_version: int = FORMAT_VERSION

    def to_dict(self) -> dict:
        return {"config": dict(self.config), "count": self.count, "digest": self.digest, "format_version": self.format_version}

    @classmethod
    def from_dict(cls, d: Mapping) -> "DatasetManifest":
        return cls(d["config"], int(d["count"]), d["digest"], int(d["format_version"]))


def manifest_path(path: str | os.PathLike) -> Path:
    p = Path(path)
    return p.with_name(p.name + ".manifest.json")


def file_digest(path: str | os.PathLike) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for block in iter(lambda: f.read(1 << 20), b""):
            h.update(block)
    return "sha256:" + h.hexdigest()


def write_dataset(config: GenerationConfig, path: str | os.PathLike, workers: int = 1) -> DatasetManifest:
    """Write ``config.count`` records to ``path`` and the manifest beside it."""
    path = Path(path)
    h = hashlib.sha256()
    count = 0
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for line in generate_lines(config, workers):
            data = line + "\n"
            f.write(data)
            h.update(data.encode("utf-8"))
            count += 1
    manifest = DatasetManifest(config.to_dict(), count, "sha256:" + h.hexdigest())
    manifest_path(path).write_text(json.dumps(manifest.to_dict(), sort_keys=True, indent=2) + "\n", encoding="utf-8")
    return manifest


def read_manifest(path: str | os.PathLike) -> DatasetManifest:
    return DatasetManifest.from_dict(json.loads(manifest_path(path).read_text(encoding="utf-8")))


def verify_manifest(path: str | os.PathLike) -> bool:
    return read_manifest(path).digest == file_digest(path)


def write_records(instances: Iterable[Instance], path: str | os.PathLike) -> int:
    n = 0
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for inst in instances:
            f.write(dumps_record(inst) + "\n")
            n += 1
    return n


def iter_records(path: str | os.PathLike) -> Iterator[Instance]:
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                d = json.loads(line)
            except json.JSONDecodeError as e:
                raise ParseError(lineno, f"malformed record: {e.msg}") from None
            if not isinstance(d, dict):
                raise ParseError(lineno, "record is not an object")
            version = d.get("format_version")
            if not isinstance(version, int):
                raise ParseError(lineno, "missing format_version")
            if version != FORMAT_VERSION:
                raise SchemaVersionMismatch(f"line {lineno}: format_version {version}, reader supports {FORMAT_VERSION}")
            try:
                yield Instance.from_record(d)
            except (KeyError, TypeError, ValueError) as e:
                raise ParseError(lineno, f"invalid record: {e!r}") from None


def read_records(path: str | os.PathLike) -> list[Instance]:
    return list(iter_records(path))


def recompute_answer(inst: Instance) -> str:
    return format_answer(answer_query(inst.scm, inst.query))


__all__ = [
    "CONFIG_ENV", "DatasetManifest", "FORMAT_VERSION", "GenerationConfig", "Instance", "build_query",
    "dumps_record", "file_digest", "fixture_names", "generate_dataset", "generate_instance",
    "generate_lines", "iter_records", "load_config", "load_fixture", "load_noise_goldens",
    "manifest_path", "read_manifest", "read_records", "recompute_answer", "verify_manifest",
    "write_dataset", "write_records",
]
