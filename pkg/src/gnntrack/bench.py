"""Throughput of the hot paths: 3D IoU matrices, assignment, model forward.

Every kernel is timed on both backends available in this process: the
numba-compiled kernel (when numba is enabled) and the numpy implementation.
"""

from __future__ import annotations

import time
from typing import Callable

import numpy as np

from . import kernels
from ._accel import USE_NUMBA
from .featnet import RawFeatures
from .gnn import ModelConfig, graph_from_counts, init_params, model_forward
from .rng import CounterRNG


def _time(fn: Callable[[], object], repeats: int) -> float:
    fn()  # warm-up (also triggers compilation)
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def random_box_params(rng: CounterRNG, n: int) -> np.ndarray:
    u = rng.uniform(7 * n).reshape(n, 7)
    p = np.empty((n, 7))
    p[:, 0] = -20.0 + 40.0 * u[:, 0]
    p[:, 1] = 1.65 + 0.1 * u[:, 1]
    p[:, 2] = 5.0 + 40.0 * u[:, 2]
    p[:, 3] = 1.4 + 0.4 * u[:, 3]
    p[:, 4] = 1.5 + 0.4 * u[:, 4]
    p[:, 5] = 3.5 + 1.0 * u[:, 5]
    p[:, 6] = -np.pi + 2.0 * np.pi * u[:, 6]
    return p


def run(sizes=(16, 64), repeats: int = 5, seed: int = 0) -> list[dict]:
    """Rows of ``{kernel, backend, size, seconds}``."""
    rng = CounterRNG(seed, stream=400)
    rows = []

    def add(kernel, backend, size, fn):
        rows.append({"kernel": kernel, "backend": backend, "size": size,
                     "seconds": _time(fn, repeats)})

    for n in sizes:
        A = random_box_params(rng, n)
        B = random_box_params(rng, n)
        C = rng.uniform(n * n).reshape(n, n)
        if USE_NUMBA:
            add("iou3d_matrix", "numba", n, lambda: kernels.iou3d_matrix_kernel(A, B))
            add("assignment", "numba", n, lambda: kernels.lap_kernel(C))
        add("iou3d_matrix", "numpy", n, lambda: kernels.iou3d_matrix_numpy(A, B))
        add("assignment", "numpy", n, lambda: kernels.lap_numpy(C))

        cfg = ModelConfig()
        store = init_params(cfg, seed)
        k = 2 * n
        raw = RawFeatures(rng.normal(k * cfg.app2d_dim).reshape(k, -1),
                          rng.normal(k * cfg.app3d_dim).reshape(k, -1),
                          rng.normal(k * 4).reshape(k, 4), rng.normal(k * 7).reshape(k, 7))
        graph = graph_from_counts(n, n, cfg.layers)
        add("gnn_forward", "numpy", n, lambda: model_forward(raw, graph, store, cfg))
    return rows


def format_rows(rows: list[dict]) -> str:
    lines = [f"{'kernel':<14s} {'backend':<8s} {'size':>5s} {'ms':>10s}"]
    for r in rows:
        lines.append(f"{r['kernel']:<14s} {r['backend']:<8s} {r['size']:>5d} {1e3 * r['seconds']:>10.3f}")
    return "\n".join(lines) + "\n"


def speedups(rows: list[dict]) -> dict:
    """numpy time / numba time per (kernel, size), when both were measured."""
    t = {(r["kernel"], r["backend"], r["size"]): r["seconds"] for r in rows}
    out = {}
    for (k, b, n), s in t.items():
        if b == "numba" and (k, "numpy", n) in t:
            out[f"{k}@{n}"] = t[(k, "numpy", n)] / s
    return out

