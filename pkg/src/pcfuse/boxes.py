"""Oriented 3D boxes, point-in-box tests, RoI grids and grid-wise pooling.

Boxes live in the LiDAR frame: center (cx, cy, cz), full extents
(dx, dy, dz) and yaw about the vertical (+z) axis, normalized to (-pi, pi].
"""

from dataclasses import dataclass

import numpy as np
from shapely.geometry import Polygon


def normalize_angle(a):
    """Wrap an angle to (-pi, pi]."""
    a = np.mod(np.asarray(a, dtype=np.float64), 2.0 * np.pi)
    return np.where(a > np.pi, a - 2.0 * np.pi, a)


@dataclass(frozen=True)
class OrientedBox3D:
    cx: float
    cy: float
    cz: float
    dx: float
    dy: float
    dz: float
    yaw: float

    def __post_init__(self):
        vals = [self.cx, self.cy, self.cz, self.dx, self.dy, self.dz, self.yaw]
        if not np.all(np.isfinite(vals)):
            raise ValueError("box fields must be finite")
        if self.dx <= 0 or self.dy <= 0 or self.dz <= 0:
            raise ValueError("box extents must be strictly positive")
        object.__setattr__(self, "yaw", float(normalize_angle(self.yaw)))

    @property
    def center(self):
        return np.array([self.cx, self.cy, self.cz])

    @property
    def extents(self):
        return np.array([self.dx, self.dy, self.dz])

    def to_array(self):
        return np.array([self.cx, self.cy, self.cz, self.dx, self.dy, self.dz, self.yaw])

    @staticmethod
    def from_array(a):
        a = np.asarray(a, dtype=np.float64)
        return OrientedBox3D(*a[:7])

    def volume(self):
        return self.dx * self.dy * self.dz


def _to_box_frame(points, box: OrientedBox3D):
    """Rotate/translate (N, >=3) points into the box frame."""
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))[:, :3]
    d = pts - box.center
    c, s = np.cos(box.yaw), np.sin(box.yaw)
    out = np.empty_like(d)
    out[:, 0] = c * d[:, 0] + s * d[:, 1]
    out[:, 1] = -s * d[:, 0] + c * d[:, 1]
    out[:, 2] = d[:, 2]
    return out


def points_in_box(points, box: OrientedBox3D, margin: float = 0.0):
    """Indices of points whose box-frame coordinates lie within
    extents/2 + margin on every axis (boundary inclusive)."""
    if margin < 0:
        raise ValueError("margin must be >= 0")
    pts = np.asarray(points, dtype=np.float64)
    if pts.size == 0:
        return np.empty(0, dtype=np.int64)
    local = np.abs(_to_box_frame(pts, box))
    half = box.extents / 2.0 + margin
    return np.nonzero(np.all(local <= half, axis=1))[0]


def bev_corners(box: OrientedBox3D):
    """Corners of the box footprint in the x-y plane, (4, 2), CCW."""
    hx, hy = box.dx / 2.0, box.dy / 2.0
    local = np.array([[hx, hy], [-hx, hy], [-hx, -hy], [hx, -hy]])
    c, s = np.cos(box.yaw), np.sin(box.yaw)
    rot = np.array([[c, -s], [s, c]])
    return local @ rot.T + np.array([box.cx, box.cy])


def bev_intersection_area(a: OrientedBox3D, b: OrientedBox3D) -> float:
    """Area of the bird's-eye-view overlap of two boxes."""
    pa = Polygon(bev_corners(a))
    pb = Polygon(bev_corners(b))
    return float(pa.intersection(pb).area)


def bev_overlaps(a: OrientedBox3D, b: OrientedBox3D, eps: float = 1e-12) -> bool:
    """True when the BEV footprints overlap with nonzero area (touching
    edges do not count)."""
    return bev_intersection_area(a, b) > eps


@dataclass(frozen=True)
class RoiGrid:
    """Even partition of an RoI box into resolution[0] x [1] x [2] cells.

    Cell index order: ((ix * ry) + iy) * rz + iz.  Cell centers transform
    rigidly with the box.
    """

    box: OrientedBox3D
    resolution: tuple
    cell_centers: np.ndarray

    @property
    def n_cells(self) -> int:
        return int(np.prod(self.resolution))


def build_roi_grid(box: OrientedBox3D, resolution=(6, 6, 6)) -> RoiGrid:
    res = tuple(int(r) for r in resolution)
    if any(r < 1 for r in res):
        raise ValueError("resolution components must be >= 1")
    axes = [(np.arange(r) + 0.5) / r * e - e / 2.0 for r, e in zip(res, box.extents)]
    gx, gy, gz = np.meshgrid(*axes, indexing="ij")
    local = np.stack([gx.ravel(), gy.ravel(), gz.ravel()], axis=1)
    c, s = np.cos(box.yaw), np.sin(box.yaw)
    world = np.empty_like(local)
    world[:, 0] = c * local[:, 0] - s * local[:, 1] + box.cx
    world[:, 1] = s * local[:, 0] + c * local[:, 1] + box.cy
    world[:, 2] = local[:, 2] + box.cz
    world.setflags(write=False)
    return RoiGrid(box=box, resolution=res, cell_centers=world)


@dataclass(frozen=True)
class RoiGridFeatures:
    """Per-cell feature table (n_cells x C) pooled over one cloud source."""

    grid: RoiGrid
    features: np.ndarray
    source: str

    def __post_init__(self):
        feats = np.asarray(self.features, dtype=np.float64)
        if feats.ndim != 2 or feats.shape[0] != self.grid.n_cells:
            raise ValueError(f"feature table must have {self.grid.n_cells} rows, got {feats.shape}")
        if not np.all(np.isfinite(feats)):
            raise ValueError("feature table entries must be finite")
        object.__setattr__(self, "features", feats)


def pool_roi_features(points, per_point_features, grid: RoiGrid, source: str = "raw") -> RoiGridFeatures:
    """Mean-pool per-point features into the RoI grid cells.

    Points outside the box are ignored; empty cells hold zeros.  Binning is
    half-open per axis with the top boundary folded into the last cell.
    """
    pts = np.asarray(points, dtype=np.float64)
    feats = np.atleast_2d(np.asarray(per_point_features, dtype=np.float64))
    if pts.shape[0] != feats.shape[0]:
        raise ValueError("features must align one-to-one with points")
    n = grid.n_cells
    C = feats.shape[1]
    table = np.zeros((n, C))
    if pts.shape[0] == 0:
        return RoiGridFeatures(grid=grid, features=table, source=source)
    res = np.array(grid.resolution)
    local = _to_box_frame(pts, grid.box)
    f = (local / grid.box.extents + 0.5) * res
    inside = np.all((f >= 0.0) & (f <= res), axis=1)
    cell = np.minimum(np.floor(f[inside]).astype(np.int64), res - 1)
    idx = (cell[:, 0] * res[1] + cell[:, 1]) * res[2] + cell[:, 2]
    np.add.at(table, idx, feats[inside])
    counts = np.bincount(idx, minlength=n).astype(np.float64)
    occupied = counts > 0
    table[occupied] /= counts[occupied, None]
    return RoiGridFeatures(grid=grid, features=table, source=source)
