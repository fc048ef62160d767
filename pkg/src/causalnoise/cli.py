"""Command-line entry point.

Exit codes: 0 success, 1 validation or assertion failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path
from typing import Sequence

from .dag import PerturbKind
from .dataset import CONFIG_ENV, fixture_names, load_config, load_fixture, read_records, write_dataset
from .errors import CausalNoiseError
from .evalharness import (
    DEFAULT_TOLERANCE, OracleBackend, ReplayBackend, evaluate, perturbed_prompts, read_predictions,
    run_sensitivity_suite, score_answers, score_structure_discovery, write_report,
)
from .inference import Event, Query, QueryKind, answer_query, format_answer
from .noise import NoiseKind
from .scm import Scm, validate_scm


class UsageError(Exception):
    pass


def _workers(value: int | None) -> int:
    return value if value is not None else (os.cpu_count() or 1)


def _add_common(p: argparse.ArgumentParser, *flags: str) -> None:
    if "seed" in flags:
        p.add_argument("--seed", type=int, help="master seed (overrides config)")
    if "out" in flags:
        p.add_argument("--out", help="output path or prefix")
    if "workers" in flags:
        p.add_argument("--workers", type=int, help="parallel workers (default: available cores)")
    if "tolerance" in flags:
        p.add_argument("--tolerance", type=float, default=DEFAULT_TOLERANCE, help="absolute numeric tolerance")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="causalnoise", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")

    p = sub.add_parser("generate", help="generate a dataset and its manifest")
    p.add_argument("--config", help=f"YAML/JSON generation config (default: ${CONFIG_ENV})")
    p.add_argument("--count", type=int, help="number of instances (overrides config)")
    p.add_argument("--noise", help="comma list of noise kinds applied to every instance, e.g. VP,PM")
    _add_common(p, "seed", "out", "workers")

    p = sub.add_parser("infer", help="answer one query on an SCM file or shipped fixture")
    p.add_argument("scm", help=f"SCM JSON file or fixture name ({', '.join(fixture_names())})")
    p.add_argument("--query", help="query JSON (inline or file); defaults to the fixture's query")
    p.add_argument("--target", help="target event, e.g. recovery=1,infection=0")
    p.add_argument("--given", help="evidence event (factual evidence for counterfactuals)")
    p.add_argument("--do", help="interventions, e.g. medicine=0")
    p.add_argument("--counterfactual", action="store_true", help="treat --do as a counterfactual antecedent")
    p.add_argument("--cause", help="attributional query: probability of necessity of this cause")

    p = sub.add_parser("perturb", help="prompts over perturbed graphs")
    p.add_argument("dataset")
    p.add_argument("--perturb-kind", required=True, help="edge_deletion|false_edge|direction_reversal (or ED/FE/DR)")
    p.add_argument("--perturb-count", type=int, default=1)
    p.add_argument("--oracle", action="store_true", help="also run the oracle sensitivity table")
    _add_common(p, "seed", "out", "workers", "tolerance")

    p = sub.add_parser("score", help="score a response file against a dataset")
    p.add_argument("dataset")
    p.add_argument("responses", help='line-delimited {"id", "response"} records')
    _add_common(p, "out", "tolerance")

    p = sub.add_parser("discover-score", help="edge-level scoring of predicted graphs")
    p.add_argument("dataset")
    p.add_argument("predictions", help='line-delimited {"id", "edges"} or {"id", "response"} records')
    _add_common(p, "out")

    p = sub.add_parser("oracle-check", help="run the oracle end to end and require perfect clean accuracy")
    p.add_argument("dataset")
    _add_common(p, "out", "workers")
    return parser


# ---------------------------------------------------------------- commands

def cmd_generate(args) -> int:
    overrides = {"seed": args.seed, "count": args.count}
    cfg = load_config(args.config, **overrides)
    if args.noise:
        kinds = [NoiseKind(k.strip().upper()) for k in args.noise.split(",") if k.strip()]
        probs = {k.value: (1.0 if k in kinds else 0.0) for k in NoiseKind}
        n = cfg.noise
        cfg = load_config(args.config, **overrides, noise={"probabilities": probs, "vp_delta": n.vp_delta, "pm_mode": n.pm_mode})
    out = args.out or cfg.output
    if not out:
        raise UsageError("generate needs --out (or 'output' in the config)")
    manifest = write_dataset(cfg, out, _workers(args.workers))
    print(f"wrote {manifest.count} instances to {out} ({manifest.digest})")
    return 0


def _load_scm(source: str) -> tuple[Scm, Query | None, str | None]:
    if source in fixture_names():
        return load_fixture(source)
    path = Path(source)
    if not path.exists():
        raise UsageError(f"{source!r} is neither a file nor a shipped fixture")
    d = json.loads(path.read_text(encoding="utf-8"))
    scm = Scm.from_dict(d.get("scm", d))
    query = Query.from_dict(d["query"]) if "query" in d else None
    return scm, query, d.get("question")


def _parse_assignment(scm: Scm, text: str | None) -> dict[int, int]:
    out: dict[int, int] = {}
    for part in (text or "").split(","):
        if not part.strip():
            continue
        if "=" not in part:
            raise UsageError(f"expected name=value, got {part!r}")
        name, value = (s.strip() for s in part.split("=", 1))
        try:
            node = scm.node(name)
            out[node] = scm.value_index(node, value)
        except (KeyError, ValueError) as e:
            raise UsageError(str(e)) from None
    return out


def _build_query(scm: Scm, args, default: Query | None) -> Query:
    if args.query:
        text = Path(args.query).read_text(encoding="utf-8") if Path(args.query).exists() else args.query
        return Query.from_dict(json.loads(text))
    if not args.target:
        if default is None:
            raise UsageError("no query: pass --query or --target")
        return default
    target = Event.of(_parse_assignment(scm, args.target))
    given = Event.of(_parse_assignment(scm, args.given))
    do = tuple(_parse_assignment(scm, args.do).items())
    if args.cause:
        return Query(QueryKind.ATTRIBUTIONAL, target, given, cause=scm.node(args.cause))
    if args.counterfactual:
        return Query(QueryKind.COUNTERFACTUAL, target, given, do)
    if do:
        return Query(QueryKind.INTERVENTIONAL, target, given, do)
    return Query(QueryKind.OBSERVATIONAL, target, given)


def cmd_infer(args) -> int:
    scm, default, _ = _load_scm(args.scm)
    problems = validate_scm(scm)
    if problems:
        for p in problems:
            print(f"invalid SCM: {p}", file=sys.stderr)
        return 1
    print(format_answer(answer_query(scm, _build_query(scm, args, default))))
    return 0


def cmd_perturb(args) -> int:
    try:
        kind = PerturbKind.parse(args.perturb_kind)
    except ValueError as e:
        raise UsageError(str(e)) from None
    instances = read_records(args.dataset)
    seed = args.seed or 0
    prompts, skipped = perturbed_prompts(instances, kind, args.perturb_count, seed)
    out = args.out or f"{args.dataset}.{kind.code}{args.perturb_count}.prompts.jsonl"
    with open(out, "w", encoding="utf-8", newline="\n") as f:
        for key in sorted(prompts):
            f.write(json.dumps({"id": key, "prompt": prompts[key]}, ensure_ascii=False) + "\n")
    print(f"wrote {len(prompts)} prompts to {out}; skipped {len(skipped)} (no valid perturbation)")
    if args.oracle:
        report = run_sensitivity_suite(
            instances, [kind], [args.perturb_count], OracleBackend(instances), seed,
            args.tolerance, _workers(args.workers),
        )
        print(report.to_text(), end="")
        write_report(report, f"{out}.sensitivity")
    return 0


def cmd_score(args) -> int:
    instances = read_records(args.dataset)
    responses = ReplayBackend.from_file(args.responses).responses
    report = score_answers(instances, responses, args.tolerance)
    print(report.to_text(), end="")
    if args.out:
        write_report(report, args.out)
    return 0


def cmd_discover_score(args) -> int:
    instances = read_records(args.dataset)
    report = score_structure_discovery(read_predictions(args.predictions, instances), instances)
    print(report.to_text(), end="")
    if args.out:
        write_report(report, args.out)
    return 0


def cmd_oracle_check(args) -> int:
    instances = read_records(args.dataset)
    report, _ = evaluate(instances, OracleBackend(instances), noisy=False, tolerance=0.0, workers=_workers(args.workers))
    if args.out:
        write_report(report, args.out)
    print(f"oracle clean accuracy: {report.accuracy:.6f} over {len(instances)} instances")
    if report.accuracy != 1.0:
        wrong = [v.id for v in report.verdicts if not v.correct]
        print(f"oracle mismatch on {len(wrong)} instance(s): {wrong[:10]}", file=sys.stderr)
        return 1
    return 0


COMMANDS = {
    "generate": cmd_generate,
    "infer": cmd_infer,
    "perturb": cmd_perturb,
    "score": cmd_score,
    "discover-score": cmd_discover_score,
    "oracle-check": cmd_oracle_check,
}


def run(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        return COMMANDS[args.command](args)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return 2
    except (CausalNoiseError, OSError, ValueError, KeyError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
