"""Synchronized augmentation of raw clouds, pseudo clouds and boxes.

Every geometric operation touches the xyz columns of both clouds and the
boxes identically; intensity, color and the stored pixel coordinates
(u, v) ride along untouched.  Sampled pseudo points keep the (u, v) of
their source frame and are never re-projected, which is exactly what the
image-domain neighbor search relies on.
"""

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import geometry
from .boxes import OrientedBox3D, bev_overlaps, normalize_angle, points_in_box
from .kitti_io import frame_tag, read_pseudo_bin, read_velodyne, write_pseudo_bin, write_velodyne

DEFAULT_RETRY_LIMIT = 10


@dataclass
class Scene:
    """One training scene: both clouds, their per-point source-frame tags,
    and the ground-truth boxes."""

    raw: np.ndarray  # (N, 4)
    pseudo: np.ndarray  # (M, 8)
    boxes: list
    raw_frames: np.ndarray = None  # (N,) int64
    pseudo_frames: np.ndarray = None  # (M,) int64

    def __post_init__(self):
        self.raw = np.asarray(self.raw, dtype=np.float64).reshape(-1, 4)
        self.pseudo = np.asarray(self.pseudo, dtype=np.float64).reshape(-1, 8)
        if self.raw_frames is None:
            self.raw_frames = np.zeros(self.raw.shape[0], dtype=np.int64)
        else:
            self.raw_frames = np.asarray(self.raw_frames, dtype=np.int64)
        if self.pseudo_frames is None:
            self.pseudo_frames = np.zeros(self.pseudo.shape[0], dtype=np.int64)
        else:
            self.pseudo_frames = np.asarray(self.pseudo_frames, dtype=np.int64)
        if self.raw_frames.shape[0] != self.raw.shape[0]:
            raise ValueError("raw frame tags must align with raw points")
        if self.pseudo_frames.shape[0] != self.pseudo.shape[0]:
            raise ValueError("pseudo frame tags must align with pseudo points")

    def copy(self) -> "Scene":
        return Scene(
            raw=self.raw.copy(),
            pseudo=self.pseudo.copy(),
            boxes=list(self.boxes),
            raw_frames=self.raw_frames.copy(),
            pseudo_frames=self.pseudo_frames.copy(),
        )


def scene_from_frame(bundle) -> Scene:
    """Build a Scene from a loaded frame (requires dense depth for the
    pseudo cloud; labels become the gt boxes)."""
    if bundle.dense_depth is None:
        raise ValueError(f"frame {bundle.frame_id} has no dense depth map")
    pseudo = geometry.depth_to_pseudo_cloud(bundle.dense_depth, bundle.image, bundle.calib)
    tag = frame_tag(bundle.frame_id)
    boxes = [obj.box for obj in (bundle.labels or [])]
    return Scene(
        raw=bundle.raw_cloud.copy(),
        pseudo=pseudo,
        boxes=boxes,
        raw_frames=np.full(bundle.raw_cloud.shape[0], tag, dtype=np.int64),
        pseudo_frames=np.full(pseudo.shape[0], tag, dtype=np.int64),
    )


# ---------------------------------------------------------------------------
# rigid helpers
# ---------------------------------------------------------------------------


def _rotate_xy(xyz, theta, pivot=None):
    c, s = np.cos(theta), np.sin(theta)
    out = xyz.copy()
    px, py = (0.0, 0.0) if pivot is None else (pivot[0], pivot[1])
    dx = xyz[:, 0] - px
    dy = xyz[:, 1] - py
    out[:, 0] = c * dx - s * dy + px
    out[:, 1] = s * dx + c * dy + py
    return out


def _rotate_box(box: OrientedBox3D, theta, pivot=None) -> OrientedBox3D:
    center = _rotate_xy(box.center[None, :], theta, pivot)[0]
    return OrientedBox3D(center[0], center[1], center[2],
                         box.dx, box.dy, box.dz, float(normalize_angle(box.yaw + theta)))


def _translate_box(box: OrientedBox3D, t) -> OrientedBox3D:
    return OrientedBox3D(box.cx + t[0], box.cy + t[1], box.cz + t[2],
                         box.dx, box.dy, box.dz, box.yaw)


# ---------------------------------------------------------------------------
# gt sampling
# ---------------------------------------------------------------------------


@dataclass
class Sampler:
    """One stored ground-truth object: its box and both point crops, with
    pseudo points keeping their source-frame pixel attributes."""

    class_name: str
    box: OrientedBox3D
    raw: np.ndarray  # (n, 4)
    pseudo: np.ndarray  # (m, 8)
    frame: int


@dataclass
class SamplerDB:
    entries: dict = field(default_factory=dict)  # class name -> list of Sampler
    skipped_frames: int = 0

    def add(self, sampler: Sampler):
        self.entries.setdefault(sampler.class_name, []).append(sampler)

    def total(self) -> int:
        return sum(len(v) for v in self.entries.values())


def build_sampler_db(frames) -> SamplerDB:
    """Crop every labeled object of every frame into a SamplerDB.  Frames
    without labels or dense depth are skipped (tallied)."""
    db = SamplerDB()
    for bundle in frames:
        if not bundle.labels or bundle.dense_depth is None:
            db.skipped_frames += 1
            continue
        scene = scene_from_frame(bundle)
        tag = frame_tag(bundle.frame_id)
        for obj in bundle.labels:
            raw_idx = points_in_box(scene.raw, obj.box)
            pse_idx = points_in_box(scene.pseudo, obj.box)
            db.add(Sampler(
                class_name=obj.class_name,
                box=obj.box,
                raw=scene.raw[raw_idx].copy(),
                pseudo=scene.pseudo[pse_idx].copy(),
                frame=tag,
            ))
    return db


def gt_sample(scene: Scene, db: SamplerDB, per_class_quota: dict, rng_seed: int) -> Scene:
    """Paste stored objects into the scene, collision-free.

    Samplers are drawn without replacement per class (classes visited in
    sorted order); a candidate is accepted only when its box has zero
    bird's-eye-view overlap with every existing and previously accepted
    box.  Accepted points keep their source-frame tags and pixel
    attributes verbatim.  Quota shortfall is allowed.
    """
    rng = np.random.default_rng(rng_seed)
    out = scene.copy()
    placed = list(out.boxes)
    add_raw, add_raw_tags = [], []
    add_pse, add_pse_tags = [], []
    for cls in sorted(per_class_quota):
        quota = int(per_class_quota[cls])
        if quota < 0:
            raise ValueError("quota must be >= 0")
        pool = db.entries.get(cls, [])
        if quota == 0 or not pool:
            continue
        taken = 0
        for i in rng.permutation(len(pool)):
            if taken >= quota:
                break
            cand = pool[i]
            if any(bev_overlaps(cand.box, b) for b in placed):
                continue
            placed.append(cand.box)
            out.boxes.append(cand.box)
            add_raw.append(cand.raw)
            add_raw_tags.append(np.full(cand.raw.shape[0], cand.frame, dtype=np.int64))
            add_pse.append(cand.pseudo)
            add_pse_tags.append(np.full(cand.pseudo.shape[0], cand.frame, dtype=np.int64))
            taken += 1
    if add_raw:
        out.raw = np.concatenate([out.raw] + add_raw)
        out.raw_frames = np.concatenate([out.raw_frames] + add_raw_tags)
    if add_pse:
        out.pseudo = np.concatenate([out.pseudo] + add_pse)
        out.pseudo_frames = np.concatenate([out.pseudo_frames] + add_pse_tags)
    return out


# ---------------------------------------------------------------------------
# global transforms
# ---------------------------------------------------------------------------


def global_transform(scene: Scene, op: str, param=None) -> Scene:
    """Apply one global op to both clouds and all boxes.

    op: "rotate" (param = angle about +z), "flip_x" (reflect y across the
    x-z plane), or "scale" (param = factor > 0).  Intensity, color and
    (u, v) are untouched.
    """
    out = scene.copy()
    if op == "rotate":
        theta = float(param)
        out.raw[:, 0:3] = _rotate_xy(out.raw[:, 0:3], theta)
        out.pseudo[:, 0:3] = _rotate_xy(out.pseudo[:, 0:3], theta)
        out.boxes = [_rotate_box(b, theta) for b in out.boxes]
    elif op == "flip_x":
        out.raw[:, 1] = -out.raw[:, 1]
        out.pseudo[:, 1] = -out.pseudo[:, 1]
        out.boxes = [
            OrientedBox3D(b.cx, -b.cy, b.cz, b.dx, b.dy, b.dz, float(normalize_angle(-b.yaw)))
            for b in out.boxes
        ]
    elif op == "scale":
        s = float(param)
        if s <= 0:
            raise ValueError("scale factor must be > 0")
        out.raw[:, 0:3] *= s
        out.pseudo[:, 0:3] *= s
        out.boxes = [
            OrientedBox3D(b.cx * s, b.cy * s, b.cz * s, b.dx * s, b.dy * s, b.dz * s, b.yaw)
            for b in out.boxes
        ]
    else:
        raise ValueError(f"unknown global transform {op!r}")
    return out


# ---------------------------------------------------------------------------
# per-box local noise
# ---------------------------------------------------------------------------


def draw_rigid_noise(rng, rotation_range, translation_range):
    """One perturbation draw: rotation about the box center and a 3D
    translation, both uniform in +/- range."""
    theta = rng.uniform(-rotation_range, rotation_range)
    t = rng.uniform(-translation_range, translation_range, size=3)
    return theta, t


def local_noise(scene: Scene, rotation_range, translation_range, rng_seed,
                retry_limit=DEFAULT_RETRY_LIMIT) -> Scene:
    """Perturb each gt box and exactly its member points with a shared
    random rigid motion.

    Boxes are processed in order; membership (margin 0) is computed on the
    incoming scene.  A draw whose box would overlap any other box in BEV
    is resampled up to `retry_limit` times, then the box is skipped.
    Points outside every box are untouched.
    """
    if not (np.isfinite(rotation_range) and np.isfinite(translation_range)):
        raise ValueError("noise ranges must be finite")
    rng = np.random.default_rng(rng_seed)
    out = scene.copy()
    raw_members = [points_in_box(scene.raw, b) for b in scene.boxes]
    pse_members = [points_in_box(scene.pseudo, b) for b in scene.boxes]
    boxes = list(scene.boxes)
    for i, box in enumerate(scene.boxes):
        applied = None
        for _ in range(retry_limit):
            theta, t = draw_rigid_noise(rng, rotation_range, translation_range)
            moved = _translate_box(_rotate_box(box, theta, pivot=box.center), t)
            if not any(bev_overlaps(moved, other) for j, other in enumerate(boxes) if j != i):
                applied = (theta, t, moved)
                break
        if applied is None:
            continue
        theta, t, moved = applied
        boxes[i] = moved
        ri = raw_members[i]
        if ri.size:
            out.raw[ri, 0:3] = _rotate_xy(scene.raw[ri, 0:3], theta, pivot=box.center) + t
        pi = pse_members[i]
        if pi.size:
            out.pseudo[pi, 0:3] = _rotate_xy(scene.pseudo[pi, 0:3], theta, pivot=box.center) + t
    out.boxes = boxes
    return out


# ---------------------------------------------------------------------------
# SamplerDB persistence
# ---------------------------------------------------------------------------


def save_sampler_db(db: SamplerDB, root):
    """Persist as per-entry binaries plus a manifest text file."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    lines = [f"skipped_frames {db.skipped_frames}"]
    i = 0
    for cls in sorted(db.entries):
        for s in db.entries[cls]:
            raw_name = f"entry{i:05d}_raw.bin"
            pse_name = f"entry{i:05d}_pseudo.bin"
            write_velodyne(root / raw_name, s.raw)
            write_pseudo_bin(root / pse_name, s.pseudo)
            b = s.box
            lines.append(
                f"{cls} {s.frame} "
                f"{b.cx!r} {b.cy!r} {b.cz!r} {b.dx!r} {b.dy!r} {b.dz!r} {b.yaw!r} "
                f"{raw_name} {pse_name}"
            )
            i += 1
    (root / "manifest.txt").write_text("\n".join(lines) + "\n")


def load_sampler_db(root) -> SamplerDB:
    root = Path(root)
    lines = (root / "manifest.txt").read_text().splitlines()
    if not lines or not lines[0].startswith("skipped_frames"):
        raise ValueError(f"{root}: malformed sampler manifest")
    db = SamplerDB(skipped_frames=int(lines[0].split()[1]))
    for line in lines[1:]:
        line = line.strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 11:
            raise ValueError(f"{root}: malformed manifest line: {line!r}")
        cls, frame = parts[0], int(parts[1])
        box = OrientedBox3D(*(float(x) for x in parts[2:9]))
        db.add(Sampler(
            class_name=cls,
            box=box,
            raw=read_velodyne(root / parts[9]),
            pseudo=read_pseudo_bin(root / parts[10]),
            frame=frame,
        ))
    return db
