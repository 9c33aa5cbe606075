"""Benchmark harness for the image-domain neighbor search.

Quantifies the constant-work-per-query behavior of the pixel-bucket grid
against a full-scan 2D KNN and a fixed-radius 3D ball query, and compares
the numba and numpy kernel backends.  Timings use the median over repeats;
everything except the timing column is deterministic in the seed.

Probes are counted as stored points examined per query.  Probe statistics
are measured over queries at least one bucket away from the synthetic
patch border, so the patch edge does not censor the window and the
density-determined constant is what gets measured.
"""

import time
from dataclasses import dataclass

import numpy as np

from . import kernels
from .neighbors import build_pixel_index, neighbor_search_batch


def gen_synthetic_cloud(n, density=1.0, seed=0, frame=0):
    """Deterministic pseudo cloud with pixel coordinates at a target
    density (points per pixel) over a square image patch."""
    if n < 0:
        raise ValueError("n must be >= 0")
    if n == 0:
        return np.empty((0, 8))
    rng = np.random.default_rng(seed)
    side = int(np.ceil(np.sqrt(n / density)))
    cloud = np.empty((n, 8))
    cloud[:, 0] = rng.uniform(4.0, 60.0, n)
    cloud[:, 1] = rng.uniform(-25.0, 25.0, n)
    cloud[:, 2] = rng.uniform(-2.5, 2.5, n)
    cloud[:, 3:6] = rng.random((n, 3))
    cloud[:, 6] = rng.integers(0, side, n)
    cloud[:, 7] = rng.integers(0, side, n)
    return cloud


@dataclass
class BenchRow:
    n: int
    method: str
    k: int
    ns_per_query: float
    probes: float
    recall: float


def _interior_queries(cloud, cell_size, n_queries, rng):
    """Query ids whose bucket is not on the patch border."""
    u, v = cloud[:, 6], cloud[:, 7]
    lo_u, hi_u = u.min(), u.max()
    lo_v, hi_v = v.min(), v.max()
    ok = (
        (u >= lo_u + cell_size) & (u < np.floor(hi_u / cell_size) * cell_size)
        & (v >= lo_v + cell_size) & (v < np.floor(hi_v / cell_size) * cell_size)
    )
    pool = np.nonzero(ok)[0]
    if pool.size == 0:
        pool = np.arange(cloud.shape[0])
    take = min(n_queries, pool.size)
    return np.sort(rng.choice(pool, size=take, replace=False))


def _time_ns_per_query(fn, n_queries, repeats):
    best = []
    fn()  # warmup (includes any JIT compilation)
    for _ in range(repeats):
        t0 = time.perf_counter_ns()
        fn()
        best.append((time.perf_counter_ns() - t0) / n_queries)
    return float(np.median(best))


def _set_recall(result, oracle):
    hits = 0
    for row, orow in zip(result, oracle):
        hits += len(set(row) & set(orow))
    return hits / (oracle.shape[0] * oracle.shape[1])


def _ball_radius(cloud, k):
    """Radius giving roughly k expected 3D neighbors, from the bounding
    box density of the cloud."""
    xyz = cloud[:, 0:3]
    span = np.maximum(xyz.max(axis=0) - xyz.min(axis=0), 1e-9)
    vol = float(np.prod(span))
    return float((3.0 * k * vol / (4.0 * np.pi * cloud.shape[0])) ** (1.0 / 3.0))


METHODS = ("pixel_grid", "brute_force_2d", "ball_query_3d")


def run_knn_bench(sizes, k=9, methods=METHODS, repeats=3, seed=0, n_queries=256,
                  density=1.0, cell_size=4.0, backend=None):
    """Time every method over one identical query set per size and verify
    the grid search against the full-scan baseline (recall column)."""
    if not sizes:
        raise ValueError("sizes must be nonempty")
    rows = []
    for n in sizes:
        size_seed = int(np.random.SeedSequence([seed, int(n)]).generate_state(1)[0])
        cloud = gen_synthetic_cloud(int(n), density=density, seed=size_seed)
        rng = np.random.default_rng(size_seed + 1)
        index = build_pixel_index(cloud, cell_size=cell_size)
        queries = _interior_queries(cloud, cell_size, n_queries, rng)
        nq = queries.shape[0]
        frames = np.zeros(cloud.shape[0], dtype=np.int64)
        u, v = index.u, index.v
        oracle = kernels.brute_knn(u, v, frames, queries, k)
        for method in methods:
            if method == "pixel_grid":
                result, probes = neighbor_search_batch(index, queries, k, backend=backend)
                ns = _time_ns_per_query(
                    lambda: neighbor_search_batch(index, queries, k, backend=backend), nq, repeats)
                rows.append(BenchRow(int(n), method, k, ns, float(probes.mean()),
                                     _set_recall(result, oracle)))
            elif method == "brute_force_2d":
                bf = kernels.brute_knn if backend is None else {
                    "numba": kernels.brute_knn_numba, "numpy": kernels.brute_knn_numpy}[backend]
                result = bf(u, v, frames, queries, k)
                ns = _time_ns_per_query(lambda: bf(u, v, frames, queries, k), nq, repeats)
                rows.append(BenchRow(int(n), method, k, ns, float(n),
                                     _set_recall(result, oracle)))
            elif method == "ball_query_3d":
                r = _ball_radius(cloud, k)
                xs = np.ascontiguousarray(cloud[:, 0])
                ys = np.ascontiguousarray(cloud[:, 1])
                zs = np.ascontiguousarray(cloud[:, 2])
                bq = kernels.ball_query if backend is None else {
                    "numba": kernels.ball_query_numba, "numpy": kernels.ball_query_numpy}[backend]
                result = bq(xs, ys, zs, queries, r, k)
                ns = _time_ns_per_query(lambda: bq(xs, ys, zs, queries, r, k), nq, repeats)
                rows.append(BenchRow(int(n), method, k, ns, float(n),
                                     _set_recall(result, oracle)))
            else:
                raise ValueError(f"unknown method {method!r}")
    return rows


def run_backend_bench(sizes, k=9, repeats=3, seed=0, n_queries=256, density=1.0, cell_size=4.0):
    """Grid search timed under both kernel backends (numba rows appear only
    when numba is available)."""
    rows = []
    backends = ["numpy"] + (["numba"] if kernels.NUMBA_ENABLED else [])
    for backend in backends:
        for row in run_knn_bench(sizes, k=k, methods=("pixel_grid",), repeats=repeats,
                                 seed=seed, n_queries=n_queries, density=density,
                                 cell_size=cell_size, backend=backend):
            row.method = f"pixel_grid_{backend}"
            rows.append(row)
    return rows


def write_bench_csv(path, rows):
    lines = ["n,method,K,ns_per_query,probes,recall"]
    for r in rows:
        lines.append(f"{r.n},{r.method},{r.k},{r.ns_per_query:.1f},{r.probes:.2f},{r.recall:.4f}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
