from __future__ import annotations

import json
from dataclasses import replace

import pytest
from hypothesis import given
from hypothesis import strategies as st

from causalnoise.dag import Dag, perturb_graph, validate
from causalnoise.dataset import GenerationConfig, generate_dataset, generate_instance
from causalnoise.errors import EmptyParse, MissingPrediction, MissingResponse, NoValidPerturbation
from causalnoise.evalharness import (
    OracleBackend, ReplayBackend, build_natural_prompt, build_structured_prompt, evaluate,
    is_correct, oracle_backend, parse_graph_response, parse_model_answer, perturbed_prompts,
    prompt_block, read_predictions, read_responses, run_sensitivity_suite, score_answers,
    score_structure_discovery, write_report, write_responses,
)
from causalnoise.inference import Event, Query, QueryKind
from causalnoise.noise import NoiseConfig


@pytest.fixture(scope="module")
def still_infected():
    return generate_instance(GenerationConfig(count=1, fixture="disease"), 0)


@pytest.fixture(scope="module")
def pass_rate():
    return generate_instance(GenerationConfig(count=1, fixture="tutoring"), 0)


@pytest.fixture(scope="module")
def clean_set():
    return list(generate_dataset(GenerationConfig(seed=21, count=60)))


@pytest.fixture(scope="module")
def noisy_set():
    cfg = GenerationConfig(seed=22, count=60, noise=NoiseConfig(combination_sizes=(1, 2, 3, 4, 5, 6, 7)))
    return list(generate_dataset(cfg))


@pytest.fixture(scope="module")
def chains():
    return list(generate_dataset(GenerationConfig(seed=5, count=10, fixture="disease")))


# ---------------------------------------------------------------- prompts

def test_structured_prompt_blocks(still_infected):
    p = build_structured_prompt(still_infected)
    assert "Infection -> Medicine" in prompt_block(p, "Causal Graph").splitlines()
    assert "10% people get infected" in prompt_block(p, "Numbers")
    assert prompt_block(p, "Question").strip() == still_infected.question_clean
    assert build_structured_prompt(still_infected) == p


def test_masked_observation_omitted(still_infected):
    inst = replace(
        still_infected,
        observations_clean={"medicine": "1", "recovery": "1"},
        observations_noisy={"medicine": None, "recovery": "1"},
    )
    assert "Medicine = 1" in prompt_block(build_structured_prompt(inst), "Observed Variables")
    noisy = prompt_block(build_structured_prompt(inst, noisy=True), "Observed Variables")
    assert "Medicine" not in noisy and "Recovery = 1" in noisy


def test_natural_prompt_has_no_blocks(still_infected):
    p = build_natural_prompt(still_infected)
    assert "[Causal Graph]" not in p and still_infected.question_clean in p


# ---------------------------------------------------------------- parsing

def test_parse_graph(still_infected):
    metas = still_infected.metas
    g = parse_graph_response("Infection -> Medicine\nMedicine -> Recovery", metas)
    assert g.edges == frozenset({(0, 1), (1, 2)}) and g.skipped == 0
    g = parse_graph_response("tea -> recovery\n  INFECTION->medicine\ninfection -> medicine", metas)
    assert g.edges == frozenset({(0, 1)}) and g.skipped == 1
    with pytest.raises(EmptyParse):
        parse_graph_response("Infection probably matters a lot.", metas)


@pytest.mark.parametrize(
    "text, kind, value",
    [
        ("The answer is 2.5%.", "numeric", 0.025),
        ("Yes, they will recover.", "boolean", True),
        ("It depends.", "unparseable", None),
        ("25 out of 1000", "numeric", 0.025),
        ("0.025", "numeric", 0.025),
        ("No.", "boolean", False),
        ("First 0.3, then finally 0.7", "numeric", 0.7),
    ],
)
def test_parse_model_answer(text, kind, value):
    parsed = parse_model_answer(text)
    assert parsed.kind == kind
    assert parsed.value == value


@pytest.mark.parametrize(
    "response, truth, tol, ok",
    [("0.024", "0.025", 0.01, True), ("0.04", "0.025", 0.01, False), ("0.025", "0.025", 0.0, True),
     ("yes", "yes", 0.01, True), ("yes", "no", 0.01, False), ("???", "0.5", 0.01, False)],
)
def test_is_correct(response, truth, tol, ok):
    assert is_correct(parse_model_answer(response), truth, tol) is ok


# ---------------------------------------------------------------- oracle and scoring

def test_oracle_reference_answers(still_infected, pass_rate):
    assert oracle_backend(still_infected) == "0.025"
    assert oracle_backend(pass_rate) == "0.745"


def test_oracle_consistency_instance(still_infected):
    q = Query(QueryKind.COUNTERFACTUAL, Event.of({2: 1}), Event.of({1: 1, 2: 1}), ((1, 1),))
    assert oracle_backend(replace(still_infected, query=q)) == "1.0"


def test_oracle_perfect(clean_set, noisy_set):
    for data in (clean_set, noisy_set):
        for noisy in (False, True):
            report, _ = evaluate(data, OracleBackend(data), noisy=noisy, tolerance=0.0)
            assert report.accuracy == 1.0


def test_unparseable_scores_zero(clean_set):
    report = score_answers(clean_set, {i.id: "It depends." for i in clean_set})
    assert report.accuracy == 0.0


def test_missing_response(clean_set):
    with pytest.raises(MissingResponse) as info:
        score_answers(clean_set, {})
    assert len(info.value.ids) == len(clean_set)


@given(data=st.data())
def test_groups_recombine_and_order_free(noisy_set, data):
    answers = {i.id: data.draw(st.sampled_from([i.answer, "0.5", "yes", "nonsense"])) for i in noisy_set}
    report = score_answers(noisy_set, answers)
    total = sum(g.total for g in report.by_size.values())
    assert total == len(noisy_set)
    assert sum(g.correct for g in report.by_size.values()) / total == report.accuracy
    shuffled = dict(data.draw(st.permutations(list(answers.items()))))
    assert score_answers(list(reversed(noisy_set)), shuffled) == report


def test_replay_backend_file(tmp_path, clean_set):
    path = tmp_path / "r.jsonl"
    write_responses({i.id: oracle_backend(i) for i in clean_set}, path)
    assert read_responses(path)[clean_set[0].id] == clean_set[0].answer
    report, _ = evaluate(clean_set, ReplayBackend.from_file(path), noisy=False, tolerance=0.0)
    assert report.accuracy == 1.0
    txt, js = write_report(report, tmp_path / "score")
    assert json.loads(js.read_text())["accuracy"] == 1.0 and "Overall" in txt.read_text()


# ---------------------------------------------------------------- sensitivity

def test_oracle_graph_baseline(clean_set):
    rep = run_sensitivity_suite(clean_set, ["ED", "DR"], [1, 2], OracleBackend(clean_set), seed=0)
    assert rep.row("none", 0).accuracy == 1.0
    assert rep.row("ED", 1).scored + rep.row("ED", 1).skipped == len(clean_set)


def test_excess_deletions_skipped(chains):
    prompts, skipped = perturbed_prompts(chains, "ED", 3, seed=0)
    assert prompts == {} and len(skipped) == len(chains)


def test_deletion_changes_only_graph_block(clean_set):
    base = {i.id: build_structured_prompt(i) for i in clean_set}
    pert, _ = perturbed_prompts(clean_set, "ED", 1, 7)
    for key, prompt in pert.items():
        for block in ("Observed Variables", "Numbers", "Question"):
            assert prompt_block(prompt, block) == prompt_block(base[key], block)
        assert prompt_block(prompt, "Causal Graph") != prompt_block(base[key], "Causal Graph")


@given(seed=st.integers(0, 2**32))
def test_reversal_outputs_acyclic(clean_set, seed):
    for inst in clean_set[:10]:
        try:
            g, _ = perturb_graph(inst.graph, "DR", 1, seed)
        except NoValidPerturbation:
            continue
        assert "cycle" not in validate(g)


# ---------------------------------------------------------------- structure discovery

def test_structure_perfect(chains):
    rep = score_structure_discovery({i.id: i.graph for i in chains}, chains)
    assert rep.f1 == 1.0 and rep.averaging == "micro"


def test_structure_one_wrong(chains):
    preds = {i.id: i.graph.edge_set for i in chains}
    preds[chains[0].id] = {(1, 0), (2, 0)}
    rep = score_structure_discovery(preds, chains)
    assert (rep.precision, rep.recall) == (0.9, 0.9)


def test_structure_reversed_edge(chains):
    rep = score_structure_discovery({chains[0].id: {(1, 0), (1, 2)}}, chains[:1])
    assert rep.f1 == 0.5


def test_structure_empty_prediction(chains):
    preds = {i.id: i.graph.edge_set for i in chains}
    preds[chains[0].id] = set()
    rep = score_structure_discovery(preds, chains)
    assert rep.per_instance[chains[0].id].recall == 0.0
    assert rep.recall == 18 / 20 and rep.precision == 1.0


def test_structure_missing(chains):
    with pytest.raises(MissingPrediction):
        score_structure_discovery({}, chains)


def test_read_predictions_text_and_edges(tmp_path, chains):
    path = tmp_path / "p.jsonl"
    lines = [
        {"id": chains[0].id, "response": "Infection -> Medicine\nMedicine -> Recovery"},
        {"id": chains[1].id, "edges": [[0, 1]]},
    ]
    path.write_text("".join(json.dumps(x) + "\n" for x in lines))
    preds = read_predictions(path, chains)
    assert preds[chains[0].id] == Dag.from_edges(3, [(0, 1), (1, 2)]).edge_set
    assert preds[chains[1].id] == {(0, 1)}
