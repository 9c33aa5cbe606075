"""Point convolution over pseudo points with image-domain neighborhoods.

Per point: gather the K neighbor features found by the pixel-bucket
search, lift the 6-component position residuals to the feature width,
weight each neighbor feature elementwise by its lifted residual,
concatenate the K weighted features and map back to the feature width
with a dense layer.  Three such convolutions are chained on one shared
index and their outputs concatenated (multi-level feature fusion).

All forward passes have exact analytic backward counterparts so the whole
stack can be verified against finite differences.
"""

from dataclasses import dataclass

import numpy as np

from .layers import DenseLayer, ParamStore, dense_backward, dense_forward
from .neighbors import DEFAULT_CELL_SIZE, DEFAULT_K, PixelBucketIndex, build_pixel_index, neighbor_search_batch

DEFAULT_C3 = 16
RESIDUAL_DIM = 6


def initial_point_features(points):
    """(x, y, z, r, g, b) per pseudo point; (u, v) drive only the search
    and the residuals, never the features."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 8)
    return pts[:, 0:6].copy()


def position_residuals(points, neighbor_idx, queries=None):
    """6-component residuals from each query point to its K neighbors.

    points: (M, 8).  neighbor_idx: (N, K) ids into points.  queries:
    (N,) query ids, defaulting to 0..N-1.  Row (i, k) holds
    (dx, dy, dz, du, dv, rho) with rho = sqrt(dx^2 + dy^2 + dz^2).
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 8)
    nbr = np.asarray(neighbor_idx, dtype=np.int64)
    if queries is None:
        queries = np.arange(nbr.shape[0], dtype=np.int64)
    q = pts[queries]
    nb = pts[nbr]
    out = np.empty(nbr.shape + (RESIDUAL_DIM,))
    out[..., 0:3] = q[:, None, 0:3] - nb[..., 0:3]
    out[..., 3:5] = q[:, None, 6:8] - nb[..., 6:8]
    out[..., 5] = np.sqrt(np.sum(out[..., 0:3] ** 2, axis=-1))
    return out


@dataclass
class CpconvParams:
    """Parameters of one convolution level.

    lift raises the 6 raw point features to c3 (applied once before the
    stack, from the first level); residual_lift raises residuals to c3;
    merge maps the K concatenated weighted features back to c3.
    """

    lift: DenseLayer
    residual_lift: DenseLayer
    merge: DenseLayer
    k: int = DEFAULT_K
    c3: int = DEFAULT_C3

    def __post_init__(self):
        if self.lift.W.shape != (self.c3, RESIDUAL_DIM):
            raise ValueError(f"lift must be {self.c3}x{RESIDUAL_DIM}, got {self.lift.W.shape}")
        if self.residual_lift.W.shape != (self.c3, RESIDUAL_DIM):
            raise ValueError(f"residual_lift must be {self.c3}x{RESIDUAL_DIM}")
        if self.merge.W.shape != (self.c3, self.k * self.c3):
            raise ValueError(f"merge must be {self.c3}x{self.k * self.c3}, got {self.merge.W.shape}")


def make_cpconv_params(store: ParamStore, name: str, k=DEFAULT_K, c3=DEFAULT_C3) -> CpconvParams:
    return CpconvParams(
        lift=store.dense(f"{name}.lift", c3, RESIDUAL_DIM),
        residual_lift=store.dense(f"{name}.residual_lift", c3, RESIDUAL_DIM),
        merge=store.dense(f"{name}.merge", c3, k * c3),
        k=k,
        c3=c3,
    )


def make_stack_params(store: ParamStore, name="cpconv", levels=3, k=DEFAULT_K, c3=DEFAULT_C3):
    return [make_cpconv_params(store, f"{name}.level{i}", k=k, c3=c3) for i in range(levels)]


def _conv_cached(features, index: PixelBucketIndex, params: CpconvParams, nbrs):
    f = np.asarray(features, dtype=np.float64)
    if f.shape != (index.size, params.c3):
        raise ValueError(f"features must be {(index.size, params.c3)}, got {f.shape}")
    h = position_residuals(index.points, nbrs)
    r = dense_forward(params.residual_lift, h)
    g = f[nbrs]
    x = (g * r).reshape(f.shape[0], params.k * params.c3)
    y = dense_forward(params.merge, x)
    cache = (f, nbrs, h, r, g, x)
    return y, cache


def _conv_backward(cache, params: CpconvParams, d_out):
    f, nbrs, h, r, g, x = cache
    dx, d_merge_w, d_merge_b = dense_backward(params.merge, x, d_out)
    dw = dx.reshape(g.shape)
    dg = dw * r
    dr = dw * g
    df = np.zeros_like(f)
    np.add.at(df, nbrs, dg)
    _, d_rl_w, d_rl_b = dense_backward(params.residual_lift, h, dr)
    grads = {"residual_lift": (d_rl_w, d_rl_b), "merge": (d_merge_w, d_merge_b)}
    return df, grads


def cpconv_forward(features, index: PixelBucketIndex, params: CpconvParams, nbrs=None):
    """One convolution pass: features (N, c3) -> (N, c3).

    `nbrs` may carry a precomputed neighbor table; otherwise every indexed
    point is queried.
    """
    if nbrs is None:
        nbrs, _ = neighbor_search_batch(index, np.arange(index.size), params.k)
    y, _ = _conv_cached(features, index, params, nbrs)
    return y


def cpconv_stack(points, level_params, frames=None, cell_size=DEFAULT_CELL_SIZE):
    """Lift, run the chained convolution levels on one shared index, and
    concatenate every level's output, giving (N, levels * c3)."""
    out, _ = cpconv_stack_cached(points, level_params, frames=frames, cell_size=cell_size)
    return out


def cpconv_stack_cached(points, level_params, frames=None, cell_size=DEFAULT_CELL_SIZE):
    if not level_params:
        raise ValueError("at least one convolution level is required")
    k = level_params[0].k
    c3 = level_params[0].c3
    for p in level_params:
        if p.k != k or p.c3 != c3:
            raise ValueError("all levels must share k and c3")
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 8)
    if pts.shape[0] == 0:
        return np.empty((0, len(level_params) * c3)), None
    index = build_pixel_index(pts, frames=frames, cell_size=cell_size)
    nbrs, _ = neighbor_search_batch(index, np.arange(index.size), k)
    feat6 = initial_point_features(pts)
    f0 = dense_forward(level_params[0].lift, feat6)
    level_out = []
    level_cache = []
    f = f0
    for p in level_params:
        f, cache = _conv_cached(f, index, p, nbrs)
        level_out.append(f)
        level_cache.append(cache)
    out = np.concatenate(level_out, axis=1)
    return out, {"feat6": feat6, "level_cache": level_cache, "c3": c3}


def cpconv_stack_backward(cache, level_params, d_out):
    """Gradients of the stacked output with respect to every parameter.

    Returns {"lift": (dW, db), "level<i>.residual_lift": ..., "level<i>.merge": ...}.
    """
    c3 = cache["c3"]
    level_cache = cache["level_cache"]
    n_levels = len(level_params)
    d_out = np.asarray(d_out, dtype=np.float64)
    grads = {}
    d_f = np.zeros_like(level_cache[0][0])
    for i in range(n_levels - 1, -1, -1):
        d_level = d_out[:, i * c3:(i + 1) * c3] + d_f
        d_f, g = _conv_backward(level_cache[i], level_params[i], d_level)
        grads[f"level{i}.residual_lift"] = g["residual_lift"]
        grads[f"level{i}.merge"] = g["merge"]
    _, d_lift_w, d_lift_b = dense_backward(level_params[0].lift, cache["feat6"], d_f)
    grads["lift"] = (d_lift_w, d_lift_b)
    return grads
