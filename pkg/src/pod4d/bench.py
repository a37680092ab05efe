"""Scaling benchmark for both encoder paths on synthetic voxel sets."""

from __future__ import annotations

import time

import numpy as np

from .sparse4d.conv import sparse_conv4d
from .sparse4d.rulebook import ConvSpec4D, build_rulebook
from .sparse4d.tensor import SparseTensor4D, pack_coords
from .window4d import WindowConfig, assign_windows, partition_sets, set_attention

BENCH_GRID = (1888, 1280, 64, 2)


def random_voxels(n: int, shape=BENCH_GRID, seed: int = 0) -> np.ndarray:
    """``n`` distinct canonical voxel indices drawn uniformly from ``shape``."""
    rng = np.random.default_rng(seed)
    if n <= 0:
        return np.zeros((0, 4), np.int64)
    total = int(np.prod(shape))
    if n > total:
        raise ValueError(f"cannot draw {n} distinct voxels from {total} cells")
    keys = np.zeros(0, np.uint64)
    while len(keys) < n:
        idx = np.column_stack([rng.integers(0, s, 2 * n) for s in shape])
        keys = np.unique(np.concatenate([keys, pack_coords(idx)]))
    keys = rng.permutation(keys)[:n]
    keys.sort()
    idx = np.column_stack([(keys >> np.uint64(sh)) & np.uint64(0xFFFF) for sh in (48, 32, 16, 0)])
    return idx.astype(np.int64)


def _median_time(fn, repeats: int) -> float:
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return float(np.median(times))


def loglog_slope(counts, times) -> float | None:
    pts = [(c, t) for c, t in zip(counts, times) if c > 0 and t > 0]
    if len(pts) < 2:
        return None
    x = np.log([p[0] for p in pts])
    y = np.log([p[1] for p in pts])
    return float(np.polyfit(x, y, 1)[0])


def run_bench(counts=(10000, 20000, 50000, 100000, 200000, 500000), repeats: int = 3,
              channels: int = 16, seed: int = 0, heads: int = 2, paths=("spconv4d", "dsvt4d")) -> dict:
    """Median timings per active-voxel count and log-log slopes per component."""
    counts = [int(c) for c in counts]
    rng = np.random.default_rng(seed)
    conv = ConvSpec4D(channels, channels)
    weights = rng.normal(0.0, 0.1, (conv.kernel_volume, channels, channels))
    wcfg = WindowConfig(d_model=channels, heads=heads)
    attn = {n: rng.normal(0.0, 0.1, (channels, channels)) for n in ("q_w", "k_w", "v_w", "o_w")}
    attn.update({n: np.zeros(channels) for n in ("q_b", "k_b", "v_b", "o_b")})

    sp = {"rulebook_s": [], "conv_s": [], "pairs": []}
    ds = {"partition_s": [], "attention_s": [], "sets": []}
    for n in counts:
        idx = random_voxels(n, BENCH_GRID, seed + n)
        feats = rng.normal(size=(n, channels))
        x = SparseTensor4D(idx, feats, BENCH_GRID)
        if "spconv4d" in paths:
            sp["rulebook_s"].append(_median_time(lambda: build_rulebook(idx, BENCH_GRID, conv), repeats))
            rb = build_rulebook(idx, BENCH_GRID, conv)
            sp["pairs"].append(rb.pair_count)
            sp["conv_s"].append(_median_time(lambda: sparse_conv4d(x, weights, conv, rb), repeats))
        if "dsvt4d" in paths:
            def partition():
                a = assign_windows(idx, wcfg, wcfg.shifts[0])
                return a, partition_sets(a, wcfg, "x")
            ds["partition_s"].append(_median_time(partition, repeats))
            _, part = partition()
            ds["sets"].append(part.num_sets)
            ds["attention_s"].append(_median_time(lambda: set_attention(feats, part, attn, heads), repeats))

    report = {"counts": counts, "repeats": repeats, "channels": channels, "grid": list(BENCH_GRID)}
    if "spconv4d" in paths:
        sp["slopes"] = {"rulebook": loglog_slope(counts, sp["rulebook_s"]), "conv": loglog_slope(counts, sp["conv_s"])}
        report["spconv4d"] = sp
    if "dsvt4d" in paths:
        ds["slopes"] = {"partition": loglog_slope(counts, ds["partition_s"]),
                        "attention": loglog_slope(counts, ds["attention_s"])}
        report["dsvt4d"] = ds
    return report


def format_bench(report: dict) -> str:
    cols = []
    if "spconv4d" in report:
        cols += [("rulebook ms", report["spconv4d"]["rulebook_s"]), ("spconv ms", report["spconv4d"]["conv_s"])]
    if "dsvt4d" in report:
        cols += [("partition ms", report["dsvt4d"]["partition_s"]), ("attention ms", report["dsvt4d"]["attention_s"])]
    lines = [f"{'voxels':>10}" + "".join(f"{name:>15}" for name, _ in cols)]
    for i, n in enumerate(report["counts"]):
        lines.append(f"{n:>10}" + "".join(f"{1e3 * vals[i]:>15.1f}" for _, vals in cols))
    slopes = []
    for path in ("spconv4d", "dsvt4d"):
        if path in report:
            slopes += [f"{path}.{k}={v:.3f}" if v is not None else f"{path}.{k}=n/a"
                       for k, v in report[path]["slopes"].items()]
    lines.append("log-log slope: " + ", ".join(slopes))
    return "\n".join(lines) + "\n"
