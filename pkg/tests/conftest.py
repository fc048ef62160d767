from __future__ import annotations

import itertools
import math

import numpy as np
import pytest
from hypothesis import settings

from causalnoise.dag import Dag
from causalnoise.dataset import load_fixture
from causalnoise.scm import Cpt, Scm, VarDomain, VariableMeta, parent_tuples

CRITERIA = pytest.StashKey[dict]()


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or not (rep.when == "call" or rep.failed):
        return
    number, title = marker.args
    results = item.config.stash.setdefault(CRITERIA, {})
    results[number] = (title, "PASS" if rep.passed else "FAIL", getattr(item, "criterion_detail", ""))


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    results = config.stash.get(CRITERIA, {})
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(results):
        title, verdict, detail = results[number]
        line = f"criterion {number:>2} {verdict}: {title}"
        terminalreporter.write_line(f"{line} ({detail})" if detail else line)


settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")


@pytest.fixture(scope="session")
def disease():
    return load_fixture("disease")[0]


@pytest.fixture(scope="session")
def tutoring():
    return load_fixture("tutoring")[0]


def random_scm(seed: int, n: int, max_card: int = 2, deterministic_rate: float = 0.0) -> Scm:
    """Connected random SCM built without the package's own samplers."""
    rng = np.random.default_rng(seed)
    edges = set()
    for v in range(1, n):
        edges.add((int(rng.integers(0, v)), v))  # spanning tree keeps it connected
    for u in range(n):
        for v in range(u + 1, n):
            if rng.random() < 0.3:
                edges.add((u, v))
    perm = rng.permutation(n)
    dag = Dag.from_edges(n, [(int(perm[u]), int(perm[v])) for u, v in edges])
    cards = [int(rng.integers(2, max_card + 1)) for _ in range(n)]
    metas = []
    for i in range(n):
        dom = VarDomain.binary() if cards[i] == 2 else VarDomain.categorical([f"v{k}" for k in range(cards[i])])
        metas.append(VariableMeta(i, f"x{i}", dom))
    cpts = []
    for i in range(n):
        ps = dag.parents(i)
        rows = {}
        for t in parent_tuples([cards[p] for p in ps]):
            if rng.random() < deterministic_rate:
                row = [0.0] * cards[i]
                row[int(rng.integers(0, cards[i]))] = 1.0
            else:
                w = rng.random(cards[i]) + 0.05
                row = list(w / w.sum())
                row[-1] = 1.0 - math.fsum(row[:-1])
            rows[t] = tuple(float(x) for x in row)
        cpts.append(Cpt(i, ps, rows))
    return Scm(dag, tuple(metas), tuple(cpts))


def brute_joint(scm: Scm, world) -> float:
    p = 1.0
    for cpt in scm.cpts:
        p *= cpt.rows[tuple(world[q] for q in cpt.parents)][world[cpt.child]]
    return p


def brute_probability(scm: Scm, target: dict, evidence: dict | None = None, do: dict | None = None) -> float:
    """Plain itertools enumeration; intervened nodes get point-mass mechanisms."""
    evidence = evidence or {}
    do = do or {}
    num = den = 0.0
    for world in itertools.product(*(range(scm.card(i)) for i in range(scm.n))):
        if any(world[k] != v for k, v in do.items()):
            continue
        p = 1.0
        for cpt in scm.cpts:
            if cpt.child in do:
                continue
            p *= cpt.rows[tuple(world[q] for q in cpt.parents)][world[cpt.child]]
        if all(world[k] == v for k, v in evidence.items()):
            den += p
            if all(world[k] == v for k, v in target.items()):
                num += p
    return num / den
