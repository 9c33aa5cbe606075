"""Hot numeric kernels: numba-compiled loops with pure-numpy fallbacks.

Every kernel exists in two functionally identical flavors:

* ``<name>_numba`` -- an ``@njit``-compiled loop (``None`` when numba is
  unavailable or disabled),
* ``<name>_numpy`` -- a vectorized pure-numpy implementation.

The unsuffixed name dispatches to the active backend.  Set the environment
variable ``PCFUSE_DISABLE_NUMBA=1`` *before importing* to force the numpy
path; ``active_backend()`` reports which one is live.  The ``bench`` module
times both flavors side by side.
"""

import os

import numpy as np

ENV_DISABLE_NUMBA = "PCFUSE_DISABLE_NUMBA"


def _numba_disabled() -> bool:
    return os.environ.get(ENV_DISABLE_NUMBA, "").strip().lower() in {"1", "true", "yes", "on"}


if _numba_disabled():
    NUMBA_ENABLED = False
else:
    try:
        from numba import njit

        NUMBA_ENABLED = True
    except ImportError:  # pragma: no cover - numba is a declared dependency
        NUMBA_ENABLED = False


def active_backend() -> str:
    return "numba" if NUMBA_ENABLED else "numpy"


# ---------------------------------------------------------------------------
# Fixed-window KNN over a pixel bucket grid (CSR layout).
#
# The grid covers one source-frame group of one RoI crop.  Buckets are
# addressed as b = bu * ncv + bv with bu = floor(u/cell) - cu0 and
# bv = floor(v/cell) - cv0.  `order` holds point ids sorted by bucket and
# `starts` the CSR offsets.  Each query scans the fixed 3x3 bucket window
# around its own cell; `probes` counts stored points examined.  Result row:
# the query id first, then the K-1 nearest others ordered by
# (squared pixel distance, point id), padded with the query id.
# ---------------------------------------------------------------------------


def _grid_knn_loop(us, vs, order, starts, cu0, cv0, ncu, ncv, cell, queries, k, out_nbr, out_probes):
    for qi in range(queries.shape[0]):
        q = queries[qi]
        uq = us[q]
        vq = vs[q]
        cu = int(np.floor(uq / cell)) - cu0
        cv = int(np.floor(vq / cell)) - cv0
        sel_d = np.empty(k - 1, np.float64)
        sel_i = np.empty(k - 1, np.int64)
        nsel = 0
        probes = 0
        for bu in range(max(0, cu - 1), min(ncu, cu + 2)):
            for bv in range(max(0, cv - 1), min(ncv, cv + 2)):
                b = bu * ncv + bv
                for j in range(starts[b], starts[b + 1]):
                    c = order[j]
                    probes += 1
                    if c == q:
                        continue
                    du = us[c] - uq
                    dv = vs[c] - vq
                    d = du * du + dv * dv
                    if nsel < k - 1:
                        pos = nsel
                        while pos > 0 and (d < sel_d[pos - 1] or (d == sel_d[pos - 1] and c < sel_i[pos - 1])):
                            sel_d[pos] = sel_d[pos - 1]
                            sel_i[pos] = sel_i[pos - 1]
                            pos -= 1
                        sel_d[pos] = d
                        sel_i[pos] = c
                        nsel += 1
                    elif nsel > 0 and (d < sel_d[nsel - 1] or (d == sel_d[nsel - 1] and c < sel_i[nsel - 1])):
                        pos = nsel - 1
                        while pos > 0 and (d < sel_d[pos - 1] or (d == sel_d[pos - 1] and c < sel_i[pos - 1])):
                            sel_d[pos] = sel_d[pos - 1]
                            sel_i[pos] = sel_i[pos - 1]
                            pos -= 1
                        sel_d[pos] = d
                        sel_i[pos] = c
        out_nbr[qi, 0] = q
        for j in range(nsel):
            out_nbr[qi, 1 + j] = sel_i[j]
        for j in range(1 + nsel, k):
            out_nbr[qi, j] = q
        out_probes[qi] = probes


def grid_knn_numpy(us, vs, order, starts, cu0, cv0, ncu, ncv, cell, queries, k):
    nq = queries.shape[0]
    out = np.empty((nq, k), np.int64)
    probes = np.empty(nq, np.int64)
    for qi in range(nq):
        q = queries[qi]
        uq = us[q]
        vq = vs[q]
        cu = int(np.floor(uq / cell)) - cu0
        cv = int(np.floor(vq / cell)) - cv0
        lo_v = max(0, cv - 1)
        hi_v = min(ncv, cv + 2)
        parts = []
        for bu in range(max(0, cu - 1), min(ncu, cu + 2)):
            # consecutive bv buckets are contiguous in the CSR order
            parts.append(order[starts[bu * ncv + lo_v]:starts[bu * ncv + hi_v]])
        cand = np.concatenate(parts) if parts else np.empty(0, np.int64)
        probes[qi] = cand.size
        cand = cand[cand != q]
        d = (us[cand] - uq) ** 2 + (vs[cand] - vq) ** 2
        sel = cand[np.lexsort((cand, d))[: k - 1]]
        out[qi, 0] = q
        out[qi, 1:1 + sel.size] = sel
        out[qi, 1 + sel.size:] = q
    return out, probes


if NUMBA_ENABLED:
    _grid_knn_compiled = njit(cache=True)(_grid_knn_loop)

    def grid_knn_numba(us, vs, order, starts, cu0, cv0, ncu, ncv, cell, queries, k):
        out = np.empty((queries.shape[0], k), np.int64)
        probes = np.empty(queries.shape[0], np.int64)
        _grid_knn_compiled(us, vs, order, starts, cu0, cv0, ncu, ncv, cell, queries, k, out, probes)
        return out, probes

    grid_knn = grid_knn_numba
else:
    grid_knn_numba = None
    grid_knn = grid_knn_numpy


# ---------------------------------------------------------------------------
# Brute-force 2D KNN (full scan, same-frame constraint, same tie-break).
# Benchmark baseline for the grid search.
# ---------------------------------------------------------------------------


def _brute_knn_loop(us, vs, frames, queries, k, out_nbr):
    n = us.shape[0]
    for qi in range(queries.shape[0]):
        q = queries[qi]
        uq = us[q]
        vq = vs[q]
        fq = frames[q]
        sel_d = np.empty(k - 1, np.float64)
        sel_i = np.empty(k - 1, np.int64)
        nsel = 0
        for c in range(n):
            if c == q or frames[c] != fq:
                continue
            du = us[c] - uq
            dv = vs[c] - vq
            d = du * du + dv * dv
            if nsel < k - 1:
                pos = nsel
                while pos > 0 and (d < sel_d[pos - 1] or (d == sel_d[pos - 1] and c < sel_i[pos - 1])):
                    sel_d[pos] = sel_d[pos - 1]
                    sel_i[pos] = sel_i[pos - 1]
                    pos -= 1
                sel_d[pos] = d
                sel_i[pos] = c
                nsel += 1
            elif nsel > 0 and (d < sel_d[nsel - 1] or (d == sel_d[nsel - 1] and c < sel_i[nsel - 1])):
                pos = nsel - 1
                while pos > 0 and (d < sel_d[pos - 1] or (d == sel_d[pos - 1] and c < sel_i[pos - 1])):
                    sel_d[pos] = sel_d[pos - 1]
                    sel_i[pos] = sel_i[pos - 1]
                    pos -= 1
                sel_d[pos] = d
                sel_i[pos] = c
        out_nbr[qi, 0] = q
        for j in range(nsel):
            out_nbr[qi, 1 + j] = sel_i[j]
        for j in range(1 + nsel, k):
            out_nbr[qi, j] = q


def brute_knn_numpy(us, vs, frames, queries, k):
    out = np.empty((queries.shape[0], k), np.int64)
    for qi in range(queries.shape[0]):
        q = queries[qi]
        cand = np.nonzero(frames == frames[q])[0]
        cand = cand[cand != q]
        d = (us[cand] - us[q]) ** 2 + (vs[cand] - vs[q]) ** 2
        sel = cand[np.lexsort((cand, d))[: k - 1]]
        out[qi, 0] = q
        out[qi, 1:1 + sel.size] = sel
        out[qi, 1 + sel.size:] = q
    return out


if NUMBA_ENABLED:
    _brute_knn_compiled = njit(cache=True)(_brute_knn_loop)

    def brute_knn_numba(us, vs, frames, queries, k):
        out = np.empty((queries.shape[0], k), np.int64)
        _brute_knn_compiled(us, vs, frames, queries, k, out)
        return out

    brute_knn = brute_knn_numba
else:
    brute_knn_numba = None
    brute_knn = brute_knn_numpy


# ---------------------------------------------------------------------------
# Fixed-radius 3D neighbor gather (classic ball query): first <=K points
# within `radius`, in index order, padded with the first hit (or the query).
# Benchmark baseline only.
# ---------------------------------------------------------------------------


def _ball_query_loop(xs, ys, zs, queries, radius, k, out_nbr):
    n = xs.shape[0]
    r2 = radius * radius
    for qi in range(queries.shape[0]):
        q = queries[qi]
        xq = xs[q]
        yq = ys[q]
        zq = zs[q]
        m = 0
        for c in range(n):
            dx = xs[c] - xq
            dy = ys[c] - yq
            dz = zs[c] - zq
            if dx * dx + dy * dy + dz * dz <= r2:
                out_nbr[qi, m] = c
                m += 1
                if m == k:
                    break
        pad = out_nbr[qi, 0] if m > 0 else q
        for j in range(m, k):
            out_nbr[qi, j] = pad


def ball_query_numpy(xs, ys, zs, queries, radius, k):
    out = np.empty((queries.shape[0], k), np.int64)
    r2 = radius * radius
    for qi in range(queries.shape[0]):
        q = queries[qi]
        d2 = (xs - xs[q]) ** 2 + (ys - ys[q]) ** 2 + (zs - zs[q]) ** 2
        hits = np.nonzero(d2 <= r2)[0][:k]
        out[qi, : hits.size] = hits
        out[qi, hits.size:] = hits[0] if hits.size else q
    return out


if NUMBA_ENABLED:
    _ball_query_compiled = njit(cache=True)(_ball_query_loop)

    def ball_query_numba(xs, ys, zs, queries, radius, k):
        out = np.empty((queries.shape[0], k), np.int64)
        _ball_query_compiled(xs, ys, zs, queries, radius, k, out)
        return out

    ball_query = ball_query_numba
else:
    ball_query_numba = None
    ball_query = ball_query_numpy


# ---------------------------------------------------------------------------
# Z-buffer rasterization: keep the minimum depth per pixel, 0 marks invalid.
# Caller guarantees 0 <= col < width, 0 <= row < height, depth > 0.
# ---------------------------------------------------------------------------


def _raster_min_loop(cols, rows, depths, out):
    for i in range(cols.shape[0]):
        u = cols[i]
        v = rows[i]
        d = depths[i]
        cur = out[v, u]
        if cur == 0.0 or d < cur:
            out[v, u] = d


def raster_min_numpy(cols, rows, depths, width, height):
    buf = np.full((height, width), np.inf)
    np.minimum.at(buf, (rows, cols), depths)
    buf[np.isinf(buf)] = 0.0
    return buf


if NUMBA_ENABLED:
    _raster_min_compiled = njit(cache=True)(_raster_min_loop)

    def raster_min_numba(cols, rows, depths, width, height):
        out = np.zeros((height, width))
        _raster_min_compiled(cols, rows, depths, out)
        return out

    raster_min = raster_min_numba
else:
    raster_min_numba = None
    raster_min = raster_min_numpy
