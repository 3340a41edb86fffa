#!/usr/bin/env python3
"""Benchmark the compiled segment kernels against the numpy fallback.

Times the raw scatter primitives and a full model forward+backward with
each backend. Run after `pip install -e .`:

    python3 benchmarks/bench_kernels.py
"""

import time

import numpy as np

from trajgraph import kernels
from trajgraph import tensor as tg
from trajgraph.graph import GraphConfig, build_graph
from trajgraph.losses import LossConfig, supervision_mask, total_loss
from trajgraph.model import ModelConfig, forward, init_parameters, make_cache
from trajgraph.scene import normalize_scene
from trajgraph.synthetic import SyntheticSpec, generate_synthetic


def timeit(fn, repeats, warmup=2):
    for _ in range(warmup):
        fn()
    start = time.perf_counter()
    for _ in range(repeats):
        fn()
    return (time.perf_counter() - start) / repeats


def bench_primitives():
    print("segment primitives (ms per call)")
    print(f"{'case':<28}" + "".join(f"{b:>12}" for b in kernels.available_backends())
          + f"{'speedup':>10}")
    rng = np.random.default_rng(0)
    for rows, cols, groups in ((1_000, 32, 100), (10_000, 32, 500),
                               (100_000, 64, 2_000)):
        data = rng.normal(size=(rows, cols))
        idx = rng.integers(0, groups, size=rows).astype(np.int64)
        times = {}
        for backend in kernels.available_backends():
            kernels.set_backend(backend)
            times[backend] = timeit(lambda: kernels.segment_sum(data, idx, groups),
                                    repeats=20)
        label = f"sum E={rows} f={cols}"
        row = f"{label:<28}" + "".join(f"{times[b] * 1e3:>12.3f}"
                                       for b in kernels.available_backends())
        if len(times) == 2:
            row += f"{times['python'] / times['compiled']:>9.1f}x"
        print(row)


def bench_model():
    print("\nmodel forward+backward (ms per scene)")
    spec = SyntheticSpec(scenes=1, agents=4, lanes=2, t_obs=10, t_f=30, dt=0.1)
    scene = normalize_scene(generate_synthetic(spec, seed=1)[0])
    cfg = ModelConfig(f=32, heads=4, modes=6, t_f=30, t_obs=10)
    graph = build_graph(scene, GraphConfig())
    cache = make_cache(graph, cfg)
    params = init_parameters(cfg, seed=2)
    gt, mask = supervision_mask(scene, True)

    def step():
        with tg.Tape() as tape:
            pred = forward(cache, params, cfg)
            loss, _, _ = total_loss(pred, gt, mask, LossConfig())
        tape.backward(loss)
        params.zero_grads()

    times = {}
    for backend in kernels.available_backends():
        kernels.set_backend(backend)
        times[backend] = timeit(step, repeats=15)
        print(f"  {backend:<10} {times[backend] * 1e3:8.1f}")
    if len(times) == 2:
        print(f"  speedup    {times['python'] / times['compiled']:8.2f}x")


if __name__ == "__main__":
    print(f"available backends: {kernels.available_backends()}")
    bench_primitives()
    bench_model()
    kernels.set_backend(kernels.available_backends()[0])
