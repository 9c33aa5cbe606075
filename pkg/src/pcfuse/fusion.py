"""Fusion of paired raw/pseudo RoI grid feature tables.

Three variants:

* attentive (grid-wise): per grid cell, a dense layer plus sigmoid on the
  concatenated pair yields two scalar weights; the pair is scaled,
  concatenated and mapped to the output width.  Cells are fused
  independently, so whole batches reduce to one matrix product.
* grid_concat: the attentive form with both weights pinned to 1.
* roi_concat: both tables flattened to single vectors, concatenated, and
  mapped by one dense layer; no grid correspondence is used.

Feature tables travel as little-endian binaries: a 3-int32 header
(n, C, variant id) followed by n*C float64 in row-major order.
"""

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .boxes import RoiGrid, RoiGridFeatures
from .layers import DenseLayer, ParamStore, dense_backward, dense_forward, sigmoid, sigmoid_grad

VARIANT_IDS = {"features": 0, "attentive": 1, "grid_concat": 2, "roi_concat": 3}


@dataclass
class GafParams:
    """attn: (2C -> 2) feeding the sigmoid; out: (2C -> C')."""

    attn: DenseLayer
    out: DenseLayer

    def __post_init__(self):
        if self.attn.out_dim != 2:
            raise ValueError("attn layer must emit exactly 2 weights")
        if self.attn.in_dim != self.out.in_dim:
            raise ValueError("attn and out layers must consume the same concatenated width")
        if self.attn.in_dim % 2 != 0:
            raise ValueError("concatenated width must be even")

    @property
    def channels(self):
        return self.attn.in_dim // 2


@dataclass
class GridConcatParams:
    out: DenseLayer  # (2C -> C')


@dataclass
class RoiConcatParams:
    out: DenseLayer  # (2*n*C -> n*C')
    n_cells: int
    c_out: int

    def __post_init__(self):
        if self.out.out_dim != self.n_cells * self.c_out:
            raise ValueError("roi_concat layer output must be n_cells * c_out")


def make_gaf_params(store: ParamStore, channels, c_out=None, name="gaf") -> GafParams:
    c_out = channels if c_out is None else c_out
    return GafParams(
        attn=store.dense(f"{name}.attn", 2, 2 * channels),
        out=store.dense(f"{name}.out", c_out, 2 * channels),
    )


def make_zero_gaf_params(store: ParamStore, channels, c_out=None, name="gaf") -> GafParams:
    c_out = channels if c_out is None else c_out
    return GafParams(
        attn=store.zero_dense(f"{name}.attn", 2, 2 * channels),
        out=store.zero_dense(f"{name}.out", c_out, 2 * channels),
    )


def make_grid_concat_params(store: ParamStore, channels, c_out=None, name="gridcat") -> GridConcatParams:
    c_out = channels if c_out is None else c_out
    return GridConcatParams(out=store.dense(f"{name}.out", c_out, 2 * channels))


def make_roi_concat_params(store: ParamStore, n_cells, channels, c_out=None, name="roicat") -> RoiConcatParams:
    c_out = channels if c_out is None else c_out
    return RoiConcatParams(
        out=store.dense(f"{name}.out", n_cells * c_out, 2 * n_cells * channels),
        n_cells=n_cells,
        c_out=c_out,
    )


@dataclass(frozen=True)
class FusedRoiFeatures:
    """Fused per-grid features plus, for the attentive variant, the pair of
    scalar weights emitted for every grid cell (strictly inside (0, 1))."""

    features: np.ndarray
    per_grid_weights: np.ndarray = None
    grid: RoiGrid = None


def _paired_tables(f_raw, f_pse):
    """Validate the pair and return (raw table, pseudo table, grid)."""
    grid = None
    if isinstance(f_raw, RoiGridFeatures) != isinstance(f_pse, RoiGridFeatures):
        raise ValueError("both inputs must be RoiGridFeatures or both plain tables")
    if isinstance(f_raw, RoiGridFeatures):
        if f_raw.grid is not f_pse.grid and (
            f_raw.grid.resolution != f_pse.grid.resolution
            or f_raw.grid.box != f_pse.grid.box
        ):
            raise ValueError("inputs must share one RoI grid")
        grid = f_raw.grid
        f_raw, f_pse = f_raw.features, f_pse.features
    fr = np.asarray(f_raw, dtype=np.float64)
    fp = np.asarray(f_pse, dtype=np.float64)
    if fr.shape != fp.shape or fr.ndim != 2:
        raise ValueError(f"feature tables must share shape (n, C); got {fr.shape} and {fp.shape}")
    return fr, fp, grid


def gaf_fuse(f_raw, f_pse, params: GafParams, weight_fn=None) -> FusedRoiFeatures:
    """Grid-wise attentive fusion of a raw/pseudo RoI feature pair.

    `weight_fn` replaces the sigmoid on the attention logits (testing
    hook); the default emits weights strictly inside (0, 1).
    """
    fr, fp, grid = _paired_tables(f_raw, f_pse)
    out, weights, _ = _gaf_cached(fr, fp, params, weight_fn=weight_fn)
    return FusedRoiFeatures(features=out, per_grid_weights=weights, grid=grid)


def _gaf_cached(f_raw, f_pse, params: GafParams, weight_fn=None):
    fr, fp, _ = _paired_tables(f_raw, f_pse)
    if fr.shape[1] != params.channels:
        raise ValueError(f"tables have {fr.shape[1]} channels, params expect {params.channels}")
    z = np.concatenate([fr, fp], axis=1)
    logits = dense_forward(params.attn, z)
    w = sigmoid(logits) if weight_fn is None else weight_fn(logits)
    u = np.concatenate([w[:, 0:1] * fr, w[:, 1:2] * fp], axis=1)
    y = dense_forward(params.out, u)
    cache = (fr, fp, z, logits, w, u)
    return y, w, cache


def gaf_fuse_backward(cache, params: GafParams, d_out):
    """Gradients of the attentive fusion (sigmoid path) w.r.t. inputs and
    parameters: returns (d_raw, d_pse, grads dict)."""
    fr, fp, z, logits, w, u = cache
    c = fr.shape[1]
    du, d_out_w, d_out_b = dense_backward(params.out, u, d_out)
    du_r = du[:, :c]
    du_p = du[:, c:]
    d_fr = du_r * w[:, 0:1]
    d_fp = du_p * w[:, 1:2]
    dw = np.stack([np.sum(du_r * fr, axis=1), np.sum(du_p * fp, axis=1)], axis=1)
    d_logits = dw * sigmoid_grad(w)
    dz, d_attn_w, d_attn_b = dense_backward(params.attn, z, d_logits)
    d_fr += dz[:, :c]
    d_fp += dz[:, c:]
    grads = {"attn": (d_attn_w, d_attn_b), "out": (d_out_w, d_out_b)}
    return d_fr, d_fp, grads


def grid_concat_fuse(f_raw, f_pse, params: GridConcatParams) -> FusedRoiFeatures:
    """Per-grid concatenation without weighting (attentive form with both
    weights pinned to 1)."""
    fr, fp, grid = _paired_tables(f_raw, f_pse)
    if 2 * fr.shape[1] != params.out.in_dim:
        raise ValueError("table channels do not match fusion parameters")
    y = dense_forward(params.out, np.concatenate([fr, fp], axis=1))
    return FusedRoiFeatures(features=y, per_grid_weights=None, grid=grid)


def roi_concat_fuse(f_raw, f_pse, params: RoiConcatParams) -> FusedRoiFeatures:
    """Whole-RoI concatenation: both tables flattened and fused by one
    dense layer; no grid correspondence is used."""
    fr, fp, grid = _paired_tables(f_raw, f_pse)
    n, c = fr.shape
    if n != params.n_cells or 2 * n * c != params.out.in_dim:
        raise ValueError("table shape does not match fusion parameters")
    flat = np.concatenate([fr.ravel(), fp.ravel()])
    y = dense_forward(params.out, flat).reshape(n, params.c_out)
    return FusedRoiFeatures(features=y, per_grid_weights=None, grid=grid)


def fuse(f_raw, f_pse, variant: str, params) -> FusedRoiFeatures:
    if variant == "attentive":
        return gaf_fuse(f_raw, f_pse, params)
    if variant == "grid_concat":
        return grid_concat_fuse(f_raw, f_pse, params)
    if variant == "roi_concat":
        return roi_concat_fuse(f_raw, f_pse, params)
    raise ValueError(f"unknown fusion variant {variant!r}")


# ---------------------------------------------------------------------------
# feature table binaries
# ---------------------------------------------------------------------------


def write_feature_table(path, table, variant_id=0):
    table = np.asarray(table, dtype=np.float64)
    if table.ndim != 2:
        raise ValueError("feature table must be 2-D")
    header = np.array([table.shape[0], table.shape[1], variant_id], dtype="<i4")
    with open(path, "wb") as fh:
        fh.write(header.tobytes())
        fh.write(np.ascontiguousarray(table, dtype="<f8").tobytes())


def read_feature_table(path):
    data = Path(path).read_bytes()
    if len(data) < 12:
        raise ValueError(f"{path}: truncated header")
    n, c, variant_id = (int(x) for x in np.frombuffer(data[:12], dtype="<i4"))
    if n < 0 or c < 0 or len(data) != 12 + 8 * n * c:
        raise ValueError(f"{path}: size does not match header ({n} x {c})")
    table = np.frombuffer(data[12:], dtype="<f8").reshape(n, c).copy()
    return table, variant_id
