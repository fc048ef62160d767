from __future__ import annotations

import pytest
from hypothesis import given
from hypothesis import strategies as st

from causalnoise.dag import sample_dag
from causalnoise.dataset import build_query, load_fixture, load_noise_goldens
from causalnoise.errors import ConfigError, NotApplicable
from causalnoise.inference import QueryKind, answer_query
from causalnoise.noise import (
    COMPOSITION_ORDER, MISSING, PROB_CEIL, PROB_FLOOR, NoiseConfig, NoiseKind, apply_noise,
    build_renderable, compose_noise, revert, revert_all,
)
from causalnoise.scm import sample_mechanisms
from causalnoise.textgen import find_pcts, ground_graph

GOLDENS = load_noise_goldens()["cases"]


@pytest.fixture(scope="module")
def disease_inst():
    scm, query, question = load_fixture("disease")
    return scm, build_renderable(scm, query, question)


def random_instance(seed, n, kind):
    dag = sample_dag(seed, n, "mixed")
    metas = ground_graph(dag, ["medicine", "education", "economics"][seed % 3], seed)
    scm = sample_mechanisms(dag, metas, seed)
    query = build_query(scm, kind, seed, boolean_fraction=0.3)
    return scm, build_renderable(scm, query)


@pytest.mark.parametrize("case", GOLDENS, ids=[c["kind"] for c in GOLDENS])
def test_golden_strings(disease_inst, case):
    scm, inst = disease_inst
    out, rec = apply_noise(inst, scm, case["kind"], case["seed"])
    text = out.question if case["where"] == "question" else out.text
    assert case["expect"] in text
    assert case["marker"] in case["expect"]
    assert case["expect"] not in (inst.question if case["where"] == "question" else inst.text)
    assert out.clean_answer == inst.clean_answer
    assert revert(out, rec) == inst


def test_vp_edits_recovery_statement(disease_inst):
    scm, inst = disease_inst
    out, rec = apply_noise(inst, scm, "VP", 4)
    assert rec.affected == ("statement:cond:recovery:1",)
    assert rec.original["text"].startswith("90%")


def test_pm_explicit_marker(disease_inst):
    scm, inst = disease_inst
    out, _ = apply_noise(inst, scm, "PM", 21)
    assert MISSING in out.text


def test_pm_silent_removes(disease_inst):
    scm, inst = disease_inst
    out, rec = apply_noise(inst, scm, "PM", 21, NoiseConfig(pm_mode="silent"))
    assert MISSING not in out.text
    assert len(out.statements) == len(inst.statements) - 1
    assert revert(out, rec) == inst


def test_ci_adds_latent_confounder(disease_inst):
    scm, inst = disease_inst
    out, rec = apply_noise(inst, scm, "CI", 14)
    added = out.extras["added_variables"]
    assert added[0]["role"] == "confounder" and added[0]["observability"] == "latent"
    assert added[0]["name"] not in {m.name for m in scm.metas}


def test_iv_adds_distractor(disease_inst):
    scm, inst = disease_inst
    out, _ = apply_noise(inst, scm, "IV", 11)
    assert out.extras["added_variables"][0]["role"] == "distractor"


def test_compose_single(disease_inst):
    scm, inst = disease_inst
    assert len(compose_noise(inst, scm, {NoiseKind.VP}, 0).records) == 1


def test_compose_three_preserves_answer(disease_inst):
    scm, inst = disease_inst
    comp = compose_noise(inst, scm, {"VP", "PM", "IV"}, 3)
    assert len(comp.records) == 3
    assert comp.instance.clean_answer == inst.clean_answer == answer_query(scm, inst.query)


def test_compose_all_fixed_order(disease_inst):
    scm, inst = disease_inst
    comp = compose_noise(inst, scm, list(NoiseKind), 5)
    assert len(comp.records) + len(comp.skips) == 7
    kinds = [r.kind for r in comp.records]
    assert kinds == [k.value for k in COMPOSITION_ORDER if k.value in kinds]
    assert revert_all(comp.instance, comp.records) == inst


def test_compose_empty_rejected(disease_inst):
    scm, inst = disease_inst
    with pytest.raises(ValueError):
        compose_noise(inst, scm, set(), 0)


def test_cs_swap_needs_observations(disease_inst):
    scm, inst = disease_inst
    # observational query: no observations, so CS always falls back to the statement form
    for seed in range(10):
        out, rec = apply_noise(inst, scm, "CS", seed)
        assert rec.details["op"] == "insert_statement"


def test_not_applicable_has_reason():
    e = NotApplicable("QP", "nothing to contradict")
    assert e.kind == "QP" and "nothing" in str(e)


@pytest.mark.parametrize("bad", [{"probabilities": {"VP": 1.5}}, {"pm_mode": "loud"}, {"combination_sizes": [0]}])
def test_config_validation(bad):
    with pytest.raises(ConfigError):
        NoiseConfig.from_dict(bad)


def test_draw_kinds_sizes():
    cfg = NoiseConfig(combination_sizes=(1, 2, 3, 4, 5, 6, 7))
    sizes = {len(cfg.draw_kinds(s)) for s in range(300)}
    assert sizes == set(range(1, 8))
    assert NoiseConfig().draw_kinds(1) == []


# ---------------------------------------------------------------- properties

kinds = st.sampled_from(list(QueryKind))


@given(seed=st.integers(0, 2**32), n=st.integers(3, 7), qkind=kinds, nkind=st.sampled_from(list(NoiseKind)))
def test_single_kind_roundtrip(seed, n, qkind, nkind):
    scm, inst = random_instance(seed, n, qkind)
    try:
        out, rec = apply_noise(inst, scm, nkind, seed)
    except NotApplicable:
        return
    assert out.clean_answer == inst.clean_answer
    assert revert(out, rec) == inst
    assert rec.kind == nkind.value
    names = {m.name for m in scm.metas}
    for added in out.extras.get("added_variables", ()):
        assert added["name"] not in names
    if nkind is NoiseKind.VP and rec.details.get("mode") == "shift":
        p = rec.replacement["payload"]["prob"]
        assert PROB_FLOOR - 1e-12 <= p <= PROB_CEIL + 1e-12
        assert find_pcts(rec.replacement["text"]) == [p]


@given(seed=st.integers(0, 2**32), n=st.integers(3, 7), qkind=kinds,
       chosen=st.sets(st.sampled_from(list(NoiseKind)), min_size=1))
def test_composition_properties(seed, n, qkind, chosen):
    scm, inst = random_instance(seed, n, qkind)
    comp = compose_noise(inst, scm, chosen, seed)
    assert len(comp.records) <= len(chosen)
    assert comp.instance.clean_answer == inst.clean_answer
    assert answer_query(scm, comp.instance.query) == inst.clean_answer
    assert compose_noise(inst, scm, chosen, seed) == comp
    assert revert_all(comp.instance, comp.records) == inst
