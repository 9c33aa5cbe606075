"""Deterministic three-frame mini dataset in the standard KITTI layout.

Each frame holds a ground plane, a far wall and two labeled objects,
rendered consistently into the velodyne scan, the RGB image, the dense
depth map and the label file, so every pipeline stage can run against it
with zero downloads.  Clouds stay under 2k points.
"""

from pathlib import Path

import numpy as np

from .boxes import OrientedBox3D
from .geometry import Calibration, lidar_to_image
from .kitti_io import (
    LabeledObject,
    write_calib,
    write_depth_png,
    write_image,
    write_label,
    write_velodyne,
)

IMAGE_W = 50
IMAGE_H = 40
GROUND_Z = -1.6
WALL_DEPTH = 26.0
SKY_ROWS = 14

FRAME_OBJECTS = {
    "000000": [
        ("Car", OrientedBox3D(8.5, -1.2, -0.85, 3.6, 1.6, 1.5, 0.15), (0.85, 0.15, 0.1)),
        ("Car", OrientedBox3D(13.0, 2.0, -0.8, 3.8, 1.7, 1.6, -0.5), (0.1, 0.6, 0.85)),
    ],
    "000001": [
        ("Car", OrientedBox3D(7.5, 1.8, -0.9, 3.5, 1.6, 1.4, 2.0), (0.2, 0.75, 0.2)),
        ("Pedestrian", OrientedBox3D(6.0, -2.0, -0.7, 0.7, 0.7, 1.8, 0.3), (0.9, 0.8, 0.15)),
    ],
    "000002": [
        ("Car", OrientedBox3D(10.0, 0.3, -0.85, 4.0, 1.8, 1.5, -1.2), (0.7, 0.25, 0.7)),
        ("Car", OrientedBox3D(5.6, 1.2, -0.9, 3.4, 1.6, 1.4, 0.9), (0.95, 0.55, 0.1)),
    ],
}


def _rot(axis, a):
    c, s = np.cos(a), np.sin(a)
    if axis == "x":
        return np.array([[1, 0, 0], [0, c, -s], [0, s, c]])
    if axis == "y":
        return np.array([[c, 0, s], [0, 1, 0], [-s, 0, c]])
    return np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]])


def mini_calibration() -> Calibration:
    f = 55.0
    P = np.array([
        [f, 0.0, 24.5, -3.0],
        [0.0, f, 19.5, 0.0],
        [0.0, 0.0, 1.0, 0.0],
    ])
    R_rect = _rot("z", 0.02) @ _rot("y", -0.015) @ _rot("x", 0.01)
    R_axes = np.array([[0.0, -1.0, 0.0], [0.0, 0.0, -1.0], [1.0, 0.0, 0.0]])
    t = np.array([0.05, -0.08, -0.27])
    T = np.hstack([R_axes, t[:, None]])
    return Calibration(P=P, R_rect=R_rect, T_velo_cam=T,
                       image_width=IMAGE_W, image_height=IMAGE_H)


def _box_surface(box: OrientedBox3D, spacing, shrink=0.995):
    """Points sampled on all six box faces, slightly inside the surface."""
    hx, hy, hz = box.extents / 2.0 * shrink
    pts = []
    for axis, (h_a, h_b, h_c) in (("x", (hx, hy, hz)), ("y", (hy, hx, hz)), ("z", (hz, hx, hy))):
        nb = max(2, int(np.ceil(2 * h_b / spacing)))
        nc = max(2, int(np.ceil(2 * h_c / spacing)))
        b, c = np.meshgrid(np.linspace(-h_b, h_b, nb), np.linspace(-h_c, h_c, nc), indexing="ij")
        b, c = b.ravel(), c.ravel()
        for sign in (-1.0, 1.0):
            a = np.full_like(b, sign * h_a)
            if axis == "x":
                face = np.stack([a, b, c], axis=1)
            elif axis == "y":
                face = np.stack([b, a, c], axis=1)
            else:
                face = np.stack([b, c, a], axis=1)
            pts.append(face)
    local = np.concatenate(pts)
    cy, sy = np.cos(box.yaw), np.sin(box.yaw)
    world = np.empty_like(local)
    world[:, 0] = cy * local[:, 0] - sy * local[:, 1] + box.cx
    world[:, 1] = sy * local[:, 0] + cy * local[:, 1] + box.cy
    world[:, 2] = local[:, 2] + box.cz
    return world


def _background(calib: Calibration):
    """Per-pixel background depth (ground plane or far wall) and color."""
    us, vs = np.meshgrid(np.arange(IMAGE_W, dtype=np.float64),
                         np.arange(IMAGE_H, dtype=np.float64), indexing="xy")
    ainv, t = calib._inverse
    pix = np.stack([us.ravel(), vs.ravel(), np.ones(us.size)], axis=1)
    c1 = pix @ ainv.T          # direction term: p(d) = c0 + d * c1
    c0 = -(ainv @ t)
    with np.errstate(divide="ignore", invalid="ignore"):
        d_ground = (GROUND_Z - c0[2]) / c1[:, 2]
    depth = np.full(us.size, WALL_DEPTH)
    hit = np.isfinite(d_ground) & (d_ground > 0.5) & (d_ground < WALL_DEPTH)
    depth[hit] = d_ground[hit]
    depth = depth.reshape(IMAGE_H, IMAGE_W)
    color = np.empty((IMAGE_H, IMAGE_W, 3))
    color[..., 0] = 0.35 + 0.3 * us.reshape(IMAGE_H, IMAGE_W) / IMAGE_W
    color[..., 1] = 0.4
    color[..., 2] = 0.55 - 0.3 * vs.reshape(IMAGE_H, IMAGE_W) / IMAGE_H
    ground_mask = depth < WALL_DEPTH
    color[ground_mask] = np.array([0.45, 0.38, 0.3])
    depth[:SKY_ROWS, :] = 0.0
    color[:SKY_ROWS, :] = np.array([0.55, 0.7, 0.9])
    return depth, color


def _paint(depth, color, pts, rgb, calib: Calibration):
    """Z-buffer points into the depth/color maps (nearest wins)."""
    uv, d, in_view = lidar_to_image(pts, calib)
    cols = np.rint(uv[in_view, 0]).astype(np.int64)
    rows = np.rint(uv[in_view, 1]).astype(np.int64)
    d = d[in_view]
    keep = (cols >= 0) & (cols < IMAGE_W) & (rows >= 0) & (rows < IMAGE_H)
    cols, rows, d = cols[keep], rows[keep], d[keep]
    order = np.argsort(-d)  # nearest assigned last
    cand = np.zeros_like(depth)
    cand[rows[order], cols[order]] = d[order]
    hit = (cand > 0) & ((depth == 0) | (cand < depth))
    depth[hit] = cand[hit]
    color[hit] = rgb


def build_mini_frame(frame_id, rng):
    calib = mini_calibration()
    depth, color = _background(calib)
    objects = []
    raw_parts = []
    for name, box, rgb in FRAME_OBJECTS[frame_id]:
        _paint(depth, color, _box_surface(box, spacing=0.03), np.array(rgb), calib)
        surf = _box_surface(box, spacing=0.12, shrink=0.97)
        pick = rng.choice(surf.shape[0], size=min(120, surf.shape[0]), replace=False)
        raw_parts.append(surf[pick])
        loc_cam = calib.R_rect @ (calib.T_velo_cam[:, :3] @ box.center + calib.T_velo_cam[:, 3])
        alpha = float(-box.yaw - np.pi / 2 - np.arctan2(loc_cam[0], loc_cam[2]))
        uv, _, iv = lidar_to_image(_box_surface(box, spacing=0.2), calib)
        bbox2d = (float(uv[iv, 0].min()), float(uv[iv, 1].min()),
                  float(uv[iv, 0].max()), float(uv[iv, 1].max())) if iv.any() else (0.0, 0.0, 0.0, 0.0)
        objects.append(LabeledObject(class_name=name, box=box, truncation=0.0,
                                     occlusion=0, alpha=alpha, bbox2d=bbox2d))
    gx, gy = np.meshgrid(np.arange(3.5, 18.0, 0.7), np.arange(-6.0, 6.0, 0.7), indexing="ij")
    ground = np.stack([gx.ravel(), gy.ravel(), np.full(gx.size, GROUND_Z)], axis=1)
    side = rng.uniform([-4.0, 7.0, -1.5], [8.0, 12.0, 1.0], size=(30, 3))
    side2 = side * np.array([1.0, -1.0, 1.0])
    xyz = np.concatenate(raw_parts + [ground, side, side2])
    raw = np.empty((xyz.shape[0], 4))
    raw[:, 0:3] = xyz
    raw[:, 3] = rng.uniform(0.1, 0.9, xyz.shape[0])
    return calib, depth, color, raw, objects


def build_mini_dataset(root, seed=11):
    """Write the three frames; returns the frame ids."""
    root = Path(root)
    for sub in ("velodyne", "image_2", "calib", "label_2", "depth_2"):
        (root / sub).mkdir(parents=True, exist_ok=True)
    frame_ids = sorted(FRAME_OBJECTS)
    for i, frame_id in enumerate(frame_ids):
        rng = np.random.default_rng(np.random.SeedSequence([seed, i]))
        calib, depth, color, raw, objects = build_mini_frame(frame_id, rng)
        write_velodyne(root / "velodyne" / f"{frame_id}.bin", raw)
        write_image(root / "image_2" / f"{frame_id}.png", color)
        write_calib(root / "calib" / f"{frame_id}.txt", calib)
        write_depth_png(root / "depth_2" / f"{frame_id}.png", depth)
        write_label(root / "label_2" / f"{frame_id}.txt", objects, calib)
        with open(root / "label_2" / f"{frame_id}.txt", "a") as fh:
            fh.write("DontCare -1 -1 -10 0 0 0 0 -1 -1 -1 -1000 -1000 -1000 -10\n")
    return frame_ids
