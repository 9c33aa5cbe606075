"""Coordinate transforms between LiDAR space and image space.

Conventions used throughout the package:

* raw clouds are float64 arrays of shape (N, 4): x, y, z [m], intensity [0,1]
* pseudo clouds are float64 arrays of shape (N, 8):
  x, y, z [m], r, g, b [0,1], u, v [px] -- (u, v) are the source pixel of
  the point and never change once the point is created
* depth maps are float64 arrays of shape (H, W) in meters, 0.0 = invalid

Projection chain (LiDAR -> image):
  p_cam  = T_velo_cam @ [x y z 1]
  p_rect = R_rect @ p_cam
  y      = P @ [p_rect 1];   u = y0/y2, v = y1/y2, depth = y2
"""

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from . import kernels

RAW_COLS = 4
PSEUDO_COLS = 8


@dataclass(frozen=True)
class Calibration:
    """Camera projection, rectification and LiDAR->camera transform for one frame.

    P: (3,4) camera projection in pixels.  R_rect: (3,3) orthonormal
    rectification.  T_velo_cam: (3,4) rigid LiDAR->camera transform in meters.
    """

    P: np.ndarray
    R_rect: np.ndarray
    T_velo_cam: np.ndarray
    image_width: int
    image_height: int

    def __post_init__(self):
        P = np.asarray(self.P, dtype=np.float64)
        R = np.asarray(self.R_rect, dtype=np.float64)
        T = np.asarray(self.T_velo_cam, dtype=np.float64)
        if P.shape != (3, 4):
            raise ValueError(f"P must be 3x4, got {P.shape}")
        if R.shape != (3, 3):
            raise ValueError(f"R_rect must be 3x3, got {R.shape}")
        if T.shape != (3, 4):
            raise ValueError(f"T_velo_cam must be 3x4, got {T.shape}")
        if not np.all(np.isfinite(P)) or not np.all(np.isfinite(R)) or not np.all(np.isfinite(T)):
            raise ValueError("calibration matrices must be finite")
        if np.max(np.abs(R.T @ R - np.eye(3))) > 1e-5:
            raise ValueError("R_rect is not orthonormal within 1e-5")
        if self.image_width <= 0 or self.image_height <= 0:
            raise ValueError("image dimensions must be positive")
        for name, arr in (("P", P), ("R_rect", R), ("T_velo_cam", T)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @cached_property
    def _forward(self):
        # collapse the chain into one affine map: y = A @ p + t
        R_T = self.T_velo_cam[:, :3]
        t_T = self.T_velo_cam[:, 3]
        M = self.P[:, :3]
        A = M @ self.R_rect @ R_T
        t = M @ self.R_rect @ t_T + self.P[:, 3]
        return A, t

    @cached_property
    def _inverse(self):
        A, t = self._forward
        return np.linalg.inv(A), t


def lidar_to_image(points, calib: Calibration):
    """Project LiDAR-frame points into the image.

    points: (N, >=3) array, extra columns ignored.  Returns (uv, depth,
    in_view): uv (N, 2) real pixel coordinates, depth (N,) camera-frame
    depth in meters, in_view (N,) bool.  A point is out of view when its
    depth is <= 0 or (u, v) falls outside [0, W) x [0, H).
    """
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))[:, :3]
    A, t = calib._forward
    y = pts @ A.T + t
    depth = y[:, 2]
    safe = np.where(depth != 0.0, depth, 1.0)
    uv = y[:, :2] / safe[:, None]
    in_view = (
        (depth > 0.0)
        & (uv[:, 0] >= 0.0)
        & (uv[:, 0] < calib.image_width)
        & (uv[:, 1] >= 0.0)
        & (uv[:, 1] < calib.image_height)
    )
    return uv, depth, in_view


def image_to_lidar(u, v, depth, calib: Calibration):
    """Back-project pixels with known depth into the LiDAR frame.

    Inverse of :func:`lidar_to_image` on its range.  Rejects depth <= 0.
    """
    u = np.atleast_1d(np.asarray(u, dtype=np.float64))
    v = np.atleast_1d(np.asarray(v, dtype=np.float64))
    depth = np.atleast_1d(np.asarray(depth, dtype=np.float64))
    if np.any(depth <= 0.0):
        raise ValueError("depth must be > 0")
    Ainv, t = calib._inverse
    y = np.stack([u * depth, v * depth, depth], axis=-1)
    return (y - t) @ Ainv.T


def cloud_to_sparse_depth(cloud, calib: Calibration):
    """Rasterize a cloud into a sparse depth map (z-buffer, nearest wins).

    A point participates when its depth is positive and its
    nearest-integer pixel lands inside the raster (bounds are checked on
    the rounded pixel, so border points survive roundoff); pixels with no
    point stay 0 (invalid).
    """
    cloud = np.asarray(cloud, dtype=np.float64)
    if cloud.size == 0:
        return np.zeros((calib.image_height, calib.image_width))
    uv, depth, _ = lidar_to_image(cloud, calib)
    front = depth > 0.0
    cols = np.rint(uv[front, 0]).astype(np.int64)
    rows = np.rint(uv[front, 1]).astype(np.int64)
    d = depth[front]
    keep = (cols >= 0) & (cols < calib.image_width) & (rows >= 0) & (rows < calib.image_height)
    return kernels.raster_min(cols[keep], rows[keep], d[keep], calib.image_width, calib.image_height)


def depth_to_pseudo_cloud(depth, image, calib: Calibration, range_bounds=None):
    """Back-project every valid depth pixel into a pseudo point.

    depth: (H, W) meters, 0 = invalid.  image: (H, W, 3) RGB in [0, 1].
    Each output row is (x, y, z, r, g, b, u, v) with (u, v) the source
    pixel and (r, g, b) copied from the image.  `range_bounds`, when given
    as ((xmin, ymin, zmin), (xmax, ymax, zmax)), drops points outside that
    LiDAR-frame box; by default no range filtering is applied.
    """
    depth = np.asarray(depth, dtype=np.float64)
    image = np.asarray(image, dtype=np.float64)
    if depth.shape != (calib.image_height, calib.image_width):
        raise ValueError(f"depth shape {depth.shape} does not match calibration "
                         f"({calib.image_height}, {calib.image_width})")
    if image.shape != (calib.image_height, calib.image_width, 3):
        raise ValueError(f"image shape {image.shape} does not match calibration")
    rows, cols = np.nonzero(depth > 0.0)
    if rows.size == 0:
        return np.empty((0, PSEUDO_COLS))
    d = depth[rows, cols]
    xyz = image_to_lidar(cols.astype(np.float64), rows.astype(np.float64), d, calib)
    cloud = np.empty((rows.size, PSEUDO_COLS))
    cloud[:, 0:3] = xyz
    cloud[:, 3:6] = image[rows, cols]
    cloud[:, 6] = cols
    cloud[:, 7] = rows
    if range_bounds is not None:
        lo, hi = (np.asarray(b, dtype=np.float64) for b in range_bounds)
        keep = np.all((cloud[:, 0:3] >= lo) & (cloud[:, 0:3] <= hi), axis=1)
        cloud = cloud[keep]
    return cloud
