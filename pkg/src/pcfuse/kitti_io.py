"""Bit-exact ingestion and export of KITTI object-detection frames.

File formats:

* velodyne ``.bin`` -- packed 16-byte records, 4 little-endian float32
  (x, y, z, intensity) per point
* calib ``.txt`` -- lines ``KEY: v1 v2 ...``; P2 (12 values), R0_rect (9)
  and Tr_velo_to_cam (12) are consumed
* label ``.txt`` -- 15-column KITTI object lines; boxes are converted from
  the rectified camera frame to the LiDAR frame at read time
* depth ``.png`` -- 16-bit grayscale, ``meters * 256``, 0 = invalid
* pseudo ``.bin`` -- packed 64-byte records, 8 little-endian float64
  (x, y, z, r, g, b, u, v) per point
* ``.ply`` -- ASCII, ``x y z red green blue`` per vertex
"""

import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .boxes import OrientedBox3D, normalize_angle
from .geometry import Calibration

DEFAULT_IMAGE_SIZE = (1242, 375)  # de-facto KITTI camera 2 resolution


# ---------------------------------------------------------------------------
# point cloud binaries
# ---------------------------------------------------------------------------


def read_velodyne(path):
    """Read a velodyne scan into an (N, 4) float64 array."""
    data = Path(path).read_bytes()
    if len(data) % 16 != 0:
        raise ValueError(f"{path}: size {len(data)} is not a multiple of 16")
    pts = np.frombuffer(data, dtype="<f4").astype(np.float64).reshape(-1, 4)
    if not np.all(np.isfinite(pts)):
        raise ValueError(f"{path}: non-finite values in scan")
    return pts


def write_velodyne(path, cloud):
    np.ascontiguousarray(np.asarray(cloud, dtype=np.float64)[:, :4], dtype="<f4").tofile(path)


def read_pseudo_bin(path):
    """Read a pseudo cloud binary into an (N, 8) float64 array."""
    data = Path(path).read_bytes()
    if len(data) % 64 != 0:
        raise ValueError(f"{path}: size {len(data)} is not a multiple of 64")
    pts = np.frombuffer(data, dtype="<f8").reshape(-1, 8).copy()
    if not np.all(np.isfinite(pts)):
        raise ValueError(f"{path}: non-finite values in cloud")
    return pts


def write_pseudo_bin(path, cloud):
    cloud = np.asarray(cloud, dtype=np.float64)
    if cloud.ndim != 2 or cloud.shape[1] != 8:
        raise ValueError(f"pseudo cloud must be (N, 8), got {cloud.shape}")
    np.ascontiguousarray(cloud, dtype="<f8").tofile(path)


# ---------------------------------------------------------------------------
# calibration
# ---------------------------------------------------------------------------


def _parse_calib_line(key, tokens, count, path):
    if len(tokens) != count:
        raise ValueError(f"{path}: key {key!r} has {len(tokens)} values, expected {count}")
    try:
        return np.array([float(t) for t in tokens])
    except ValueError as err:
        raise ValueError(f"{path}: key {key!r} has a non-numeric token") from err


def read_calib(path, image_size=DEFAULT_IMAGE_SIZE) -> Calibration:
    """Parse a KITTI calibration file.

    The file format does not carry the image resolution; pass `image_size`
    as (width, height) when it is known (frame loaders use the actual
    image), otherwise the default KITTI size is assumed.
    """
    entries = {}
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line or ":" not in line:
            continue
        key, _, rest = line.partition(":")
        entries[key.strip()] = rest.split()
    needed = {"P2": 12, "R0_rect": 9, "Tr_velo_to_cam": 12}
    mats = {}
    for key, count in needed.items():
        if key not in entries:
            raise ValueError(f"{path}: missing key {key!r}")
        mats[key] = _parse_calib_line(key, entries[key], count, path)
    return Calibration(
        P=mats["P2"].reshape(3, 4),
        R_rect=mats["R0_rect"].reshape(3, 3),
        T_velo_cam=mats["Tr_velo_to_cam"].reshape(3, 4),
        image_width=int(image_size[0]),
        image_height=int(image_size[1]),
    )


def write_calib(path, calib: Calibration):
    def fmt(a):
        return " ".join(repr(float(x)) for x in np.asarray(a).ravel())

    lines = [
        f"P2: {fmt(calib.P)}",
        f"R0_rect: {fmt(calib.R_rect)}",
        f"Tr_velo_to_cam: {fmt(calib.T_velo_cam)}",
    ]
    Path(path).write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# images and depth maps
# ---------------------------------------------------------------------------


def read_depth_png(path):
    """Read a 16-bit depth PNG into an (H, W) float64 map in meters."""
    img = Image.open(path)
    if img.mode not in ("I;16", "I"):
        raise ValueError(f"{path}: expected 16-bit single-channel PNG, got mode {img.mode!r}")
    raw = np.asarray(img, dtype=np.int64)
    if raw.ndim != 2:
        raise ValueError(f"{path}: expected single-channel image")
    if raw.min() < 0 or raw.max() > 65535:
        raise ValueError(f"{path}: pixel values exceed 16-bit range")
    return raw.astype(np.float64) / 256.0


def write_depth_png(path, depth):
    depth = np.asarray(depth, dtype=np.float64)
    raw = np.clip(np.rint(depth * 256.0), 0, 65535).astype(np.uint16)
    Image.fromarray(raw).save(path)


def read_image(path):
    """Read an RGB image into an (H, W, 3) float64 array in [0, 1]."""
    img = Image.open(path).convert("RGB")
    return np.asarray(img, dtype=np.float64) / 255.0


def write_image(path, image01):
    arr = np.clip(np.rint(np.asarray(image01) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(arr).save(path)


# ---------------------------------------------------------------------------
# labels
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LabeledObject:
    class_name: str
    box: OrientedBox3D  # LiDAR frame
    truncation: float
    occlusion: int
    alpha: float = 0.0
    bbox2d: tuple = (0.0, 0.0, 0.0, 0.0)


def box_camera_to_lidar(location, dims_hwl, ry, calib: Calibration) -> OrientedBox3D:
    """Convert a KITTI camera-frame box (bottom-center location, h/w/l
    dimensions, rotation about camera y) to a LiDAR-frame box."""
    h, w, l = dims_hwl
    center_rect = np.asarray(location, dtype=np.float64) + np.array([0.0, -h / 2.0, 0.0])
    p_cam = np.linalg.solve(calib.R_rect, center_rect)
    R_T = calib.T_velo_cam[:, :3]
    t_T = calib.T_velo_cam[:, 3]
    center_velo = np.linalg.solve(R_T, p_cam - t_T)
    yaw = float(normalize_angle(-ry - np.pi / 2.0))
    return OrientedBox3D(center_velo[0], center_velo[1], center_velo[2], l, w, h, yaw)


def box_lidar_to_camera(box: OrientedBox3D, calib: Calibration):
    """Inverse of :func:`box_camera_to_lidar`; returns (location, (h, w, l), ry)."""
    center_rect = calib.R_rect @ (calib.T_velo_cam[:, :3] @ box.center + calib.T_velo_cam[:, 3])
    location = center_rect + np.array([0.0, box.dz / 2.0, 0.0])
    ry = float(normalize_angle(-box.yaw - np.pi / 2.0))
    return location, (box.dz, box.dy, box.dx), ry


def read_label(path, calib: Calibration):
    """Parse a KITTI label file.

    Returns (objects, skipped): 'DontCare' entries are excluded from the
    objects but counted in `skipped`.  Malformed lines raise with their
    line number.
    """
    objects = []
    skipped = 0
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        tokens = line.split()
        if len(tokens) < 15:
            raise ValueError(f"{path}: line {lineno}: expected 15 columns, got {len(tokens)}")
        name = tokens[0]
        if name == "DontCare":
            skipped += 1
            continue
        try:
            vals = [float(t) for t in tokens[1:15]]
        except ValueError as err:
            raise ValueError(f"{path}: line {lineno}: non-numeric token") from err
        trunc, occ, alpha = vals[0], vals[1], vals[2]
        bbox2d = tuple(vals[3:7])
        h, w, l = vals[7:10]
        location = vals[10:13]
        ry = vals[13]
        box = box_camera_to_lidar(location, (h, w, l), ry, calib)
        objects.append(
            LabeledObject(
                class_name=name,
                box=box,
                truncation=trunc,
                occlusion=int(occ),
                alpha=alpha,
                bbox2d=bbox2d,
            )
        )
    return objects, skipped


def write_label(path, objects, calib: Calibration):
    lines = []
    for obj in objects:
        location, (h, w, l), ry = box_lidar_to_camera(obj.box, calib)
        fields = [
            obj.class_name,
            f"{obj.truncation:.6f}",
            str(int(obj.occlusion)),
            f"{obj.alpha:.6f}",
            *(f"{v:.6f}" for v in obj.bbox2d),
            f"{h:.6f}",
            f"{w:.6f}",
            f"{l:.6f}",
            *(f"{v:.6f}" for v in location),
            f"{ry:.6f}",
        ]
        lines.append(" ".join(fields))
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""))


# ---------------------------------------------------------------------------
# frames
# ---------------------------------------------------------------------------


@dataclass
class FrameBundle:
    frame_id: str
    raw_cloud: np.ndarray
    image: np.ndarray
    calib: Calibration
    labels: list = None
    label_skipped: int = 0
    dense_depth: np.ndarray = None

    def __post_init__(self):
        if self.dense_depth is not None and self.dense_depth.shape != self.image.shape[:2]:
            raise ValueError("dense depth dimensions must equal the image's")


def frame_tag(frame_id: str) -> int:
    """Stable integer tag for a frame id (numeric ids map to their value)."""
    return int(frame_id) if frame_id.isdigit() else zlib.crc32(frame_id.encode())


def load_frame(root, frame_id, with_labels=True, with_depth=True) -> FrameBundle:
    """Load one frame from the standard layout: velodyne/, image_2/,
    calib/, label_2/ (optional), depth_2/ (optional)."""
    root = Path(root)
    image = read_image(root / "image_2" / f"{frame_id}.png")
    h, w = image.shape[:2]
    calib = read_calib(root / "calib" / f"{frame_id}.txt", image_size=(w, h))
    raw = read_velodyne(root / "velodyne" / f"{frame_id}.bin")
    labels = None
    skipped = 0
    label_path = root / "label_2" / f"{frame_id}.txt"
    if with_labels and label_path.exists():
        labels, skipped = read_label(label_path, calib)
    depth = None
    depth_path = root / "depth_2" / f"{frame_id}.png"
    if with_depth and depth_path.exists():
        depth = read_depth_png(depth_path)
    return FrameBundle(
        frame_id=frame_id,
        raw_cloud=raw,
        image=image,
        calib=calib,
        labels=labels,
        label_skipped=skipped,
        dense_depth=depth,
    )


# ---------------------------------------------------------------------------
# PLY export
# ---------------------------------------------------------------------------


def write_ply(path, xyz, colors01=None):
    """Write an ASCII PLY with per-vertex color (defaults to mid gray)."""
    xyz = np.atleast_2d(np.asarray(xyz, dtype=np.float64))[:, :3]
    n = xyz.shape[0]
    if colors01 is None:
        rgb = np.full((n, 3), 128, dtype=np.int64)
    else:
        rgb = np.clip(np.rint(np.atleast_2d(colors01) * 255.0), 0, 255).astype(np.int64)
    header = [
        "ply",
        "format ascii 1.0",
        f"element vertex {n}",
        "property float x",
        "property float y",
        "property float z",
        "property uchar red",
        "property uchar green",
        "property uchar blue",
        "end_header",
    ]
    body = [
        f"{p[0]:.6f} {p[1]:.6f} {p[2]:.6f} {c[0]} {c[1]} {c[2]}"
        for p, c in zip(xyz, rgb)
    ]
    Path(path).write_text("\n".join(header + body) + "\n")
