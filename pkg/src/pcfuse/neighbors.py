"""Image-domain neighbor search over the pseudo points of one RoI crop.

Points are bucketed by (floor(u/cell), floor(v/cell)) *and* their source
frame, so points imported from different frames can never become mutual
neighbors no matter how their pixel footprints overlap.  A query scans the
fixed 3x3 bucket window around its own cell, which bounds the work per
query independently of the crop size.
"""

from dataclasses import dataclass

import numpy as np

from . import kernels

DEFAULT_CELL_SIZE = 4.0
DEFAULT_K = 9


@dataclass(frozen=True)
class _TagGrid:
    """CSR bucket layout for the points of one source frame."""

    cu0: int
    cv0: int
    ncu: int
    ncv: int
    order: np.ndarray  # point ids sorted by bucket
    starts: np.ndarray  # CSR offsets, len ncu*ncv + 1


@dataclass(frozen=True)
class PixelBucketIndex:
    points: np.ndarray  # the indexed (M, 8) pseudo points
    u: np.ndarray
    v: np.ndarray
    frames: np.ndarray
    cell_size: float
    grids: dict  # frame tag -> _TagGrid

    @property
    def size(self) -> int:
        return self.u.shape[0]

    def bucket_partition(self):
        """All bucket contents as a list of index arrays (for inspection:
        together they partition the indexed points)."""
        out = []
        for grid in self.grids.values():
            for b in range(grid.ncu * grid.ncv):
                chunk = grid.order[grid.starts[b]:grid.starts[b + 1]]
                if chunk.size:
                    out.append(chunk)
        return out


def build_pixel_index(points, frames=None, cell_size=DEFAULT_CELL_SIZE) -> PixelBucketIndex:
    """Index the pseudo points of one RoI crop by pixel cell and source frame.

    points: (M, 8) pseudo cloud; frames: (M,) integer source-frame tags
    (all zero when omitted).
    """
    pts = np.asarray(points, dtype=np.float64)
    m = pts.shape[0]
    if frames is None:
        frames = np.zeros(m, dtype=np.int64)
    else:
        frames = np.asarray(frames, dtype=np.int64)
        if frames.shape != (m,):
            raise ValueError("frames must align one-to-one with points")
    if pts.ndim != 2 or pts.shape[1] != 8:
        pts = pts.reshape(-1, 8)
    u = np.ascontiguousarray(pts[:, 6])
    v = np.ascontiguousarray(pts[:, 7])
    grids = {}
    for tag in np.unique(frames):
        members = np.nonzero(frames == tag)[0]
        cu = np.floor(u[members] / cell_size).astype(np.int64)
        cv = np.floor(v[members] / cell_size).astype(np.int64)
        cu0 = int(cu.min())
        cv0 = int(cv.min())
        ncu = int(cu.max()) - cu0 + 1
        ncv = int(cv.max()) - cv0 + 1
        bucket = (cu - cu0) * ncv + (cv - cv0)
        perm = np.argsort(bucket, kind="stable")
        order = members[perm]
        counts = np.bincount(bucket, minlength=ncu * ncv)
        starts = np.zeros(ncu * ncv + 1, dtype=np.int64)
        np.cumsum(counts, out=starts[1:])
        grids[int(tag)] = _TagGrid(cu0=cu0, cv0=cv0, ncu=ncu, ncv=ncv,
                                   order=np.ascontiguousarray(order),
                                   starts=starts)
    return PixelBucketIndex(points=pts, u=u, v=v, frames=frames,
                            cell_size=float(cell_size), grids=grids)


def neighbor_search_batch(index: PixelBucketIndex, queries, k=DEFAULT_K, backend=None):
    """K neighbors for each query point (query ids into the index).

    Row layout: the query itself first, then the K-1 nearest same-frame
    points by pixel distance found in the 3x3 bucket window, ordered by
    (distance, point id); the query id pads any shortfall.  Also returns
    the per-query count of stored points examined (probes).
    """
    queries = np.asarray(queries, dtype=np.int64)
    if queries.size and (queries.min() < 0 or queries.max() >= index.size):
        raise ValueError("queries must be indices of indexed points")
    if k < 1:
        raise ValueError("k must be >= 1")
    fn = kernels.grid_knn if backend is None else {
        "numba": kernels.grid_knn_numba,
        "numpy": kernels.grid_knn_numpy,
    }[backend]
    if fn is None:
        raise ValueError(f"backend {backend!r} is not available")
    nbr = np.empty((queries.shape[0], k), dtype=np.int64)
    probes = np.empty(queries.shape[0], dtype=np.int64)
    qtags = index.frames[queries] if queries.size else np.empty(0, dtype=np.int64)
    for tag in np.unique(qtags):
        qsel = np.nonzero(qtags == tag)[0]
        grid = index.grids[int(tag)]
        sub_nbr, sub_probes = fn(
            index.u, index.v, grid.order, grid.starts,
            grid.cu0, grid.cv0, grid.ncu, grid.ncv,
            index.cell_size, np.ascontiguousarray(queries[qsel]), k,
        )
        nbr[qsel] = sub_nbr
        probes[qsel] = sub_probes
    return nbr, probes


def neighbor_search(index: PixelBucketIndex, query: int, k=DEFAULT_K):
    """K neighbor ids for a single indexed point."""
    nbr, _ = neighbor_search_batch(index, np.array([query], dtype=np.int64), k)
    return nbr[0]
