"""Time the numpy and numba kernel paths on the same inputs.

    python3 benchmarks/bench_kernels.py [--nodes 12] [--samples 200000] [--repeat 5]
"""

from __future__ import annotations

import argparse
import os
import time

import numpy as np

from causalnoise import kernels
from causalnoise.dag import Dag
from causalnoise.inference import Event, counterfactual_probability
from causalnoise.scm import VarDomain, VariableMeta, sample_mechanisms, sample_worlds


def best_of(fn, repeat: int) -> float:
    fn()  # warm-up absorbs JIT compilation
    times = []
    for _ in range(repeat):
        start = time.perf_counter()
        fn()
        times.append(time.perf_counter() - start)
    return min(times)


def random_model(nodes: int, seed: int):
    # generator graphs stop at 7 nodes; the benchmark wants more work per call
    rng = np.random.default_rng(seed)
    edges = {(v - 1, v) for v in range(1, nodes)}
    edges |= {(u, v) for v in range(nodes) for u in range(v - 1) if rng.random() < 0.25}
    dag = Dag.from_edges(nodes, sorted(edges))
    metas = [VariableMeta(i, f"x{i}", VarDomain.binary()) for i in range(nodes)]
    return dag, sample_mechanisms(dag, metas, seed)


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--nodes", type=int, default=12)
    ap.add_argument("--samples", type=int, default=200_000)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    dag, scm = random_model(args.nodes, args.seed)
    worlds = kernels.all_worlds(scm.cards)
    sinks, roots = dag.sinks, dag.roots
    evidence = Event.of({roots[0]: 1, sinks[-1]: 1})

    cases = {
        f"world_weights ({len(worlds)} worlds)": lambda: kernels.world_weights(scm.compiled, worlds),
        f"forward_sample ({args.samples} draws)": lambda: sample_worlds(scm, args.samples, args.seed),
        "counterfactual": lambda: counterfactual_probability(scm, evidence, {roots[0]: 0}, Event.of({sinks[-1]: 1})),
    }
    if not kernels.numba_available():
        print("numba not importable; timing numpy only")
    modes = ("numpy", "numba") if kernels.numba_available() else ("numpy",)
    print(f"{'kernel':<34}" + "".join(f"{m:>12}" for m in modes) + ("     speedup" if len(modes) == 2 else ""))
    for name, fn in cases.items():
        secs = []
        results = []
        for m in modes:
            os.environ[kernels.ENV_VAR] = m
            secs.append(best_of(fn, args.repeat))
            results.append(fn())
        if len(results) == 2:
            assert np.array_equal(np.asarray(results[0]), np.asarray(results[1])), name
        row = f"{name:<34}" + "".join(f"{s * 1e3:>10.2f}ms" for s in secs)
        if len(secs) == 2:
            row += f"{secs[0] / secs[1]:>11.1f}x"
        print(row)


if __name__ == "__main__":
    main()
