"""Command-line front end wiring the toolkit into reproducible pipelines.

Every command validates its inputs before writing anything, is
deterministic given config plus seed, and exits nonzero with a message on
stderr when something is wrong.  Config files are flat ``key = value``
text; command-line ``--set key=value`` overrides win over the file.
"""

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from . import augment as aug
from . import bench, fusion, geometry, kitti_io, minidata
from .boxes import build_roi_grid, points_in_box, pool_roi_features
from .layers import ParamStore
from .pointconv import cpconv_stack, make_stack_params

ENV_DATA_ROOT = "PCFUSE_DATA_ROOT"


class CliError(Exception):
    pass


def parse_config(path):
    """Flat key = value file; '#' starts a comment."""
    cfg = {}
    p = Path(path)
    if not p.exists():
        raise CliError(f"config file not found: {path}")
    for lineno, line in enumerate(p.read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise CliError(f"{path}: line {lineno}: expected 'key = value'")
        key, _, value = line.partition("=")
        cfg[key.strip()] = value.strip()
    return cfg


def _resolve_root(explicit, cfg=None):
    root = explicit or (cfg or {}).get("dataset_root") or os.environ.get(ENV_DATA_ROOT)
    if not root:
        raise CliError(f"no dataset root given (flag, config, or {ENV_DATA_ROOT})")
    if not Path(root).is_dir():
        raise CliError(f"dataset root does not exist: {root}")
    return Path(root)


def _load_frame(root, frame_id, need_depth=False):
    frame = kitti_io.load_frame(root, frame_id)
    if need_depth and frame.dense_depth is None:
        raise CliError(f"frame {frame_id} has no dense depth map under {root}/depth_2")
    return frame


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_make_minidata(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ids = minidata.build_mini_dataset(out, seed=args.seed)
    print(f"wrote frames {','.join(ids)} to {out}")
    return 0


def cmd_pseudo(args):
    root = _resolve_root(args.root)
    frame = _load_frame(root, args.frame, need_depth=True)
    bounds = None
    if args.range:
        vals = [float(x) for x in args.range.split(",")]
        if len(vals) != 6:
            raise CliError("--range needs xmin,ymin,zmin,xmax,ymax,zmax")
        bounds = (vals[0:3], vals[3:6])
    cloud = geometry.depth_to_pseudo_cloud(frame.dense_depth, frame.image, frame.calib,
                                           range_bounds=bounds)
    kitti_io.write_ply(args.out_ply, cloud[:, 0:3], cloud[:, 3:6])
    kitti_io.write_pseudo_bin(args.out_bin, cloud)
    print(f"pseudo cloud: {cloud.shape[0]} points -> {args.out_ply}, {args.out_bin}")
    return 0


def cmd_sparse_depth(args):
    root = _resolve_root(args.root)
    frame = _load_frame(root, args.frame)
    depth = geometry.cloud_to_sparse_depth(frame.raw_cloud, frame.calib)
    kitti_io.write_depth_png(args.out, depth)
    print(f"sparse depth: {int(np.count_nonzero(depth))} valid pixels -> {args.out}")
    return 0


def cmd_crop(args):
    root = _resolve_root(args.root)
    frame = _load_frame(root, args.frame, need_depth=True)
    if not frame.labels:
        raise CliError(f"frame {args.frame} has no labels to crop")
    res = tuple(int(x) for x in args.resolution.split("x"))
    if len(res) != 3:
        raise CliError("--resolution must look like 6x6x6")
    pseudo = geometry.depth_to_pseudo_cloud(frame.dense_depth, frame.image, frame.calib)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for i, obj in enumerate(frame.labels):
        raw_crop = frame.raw_cloud[points_in_box(frame.raw_cloud, obj.box, margin=args.margin)]
        pse_crop = pseudo[points_in_box(pseudo, obj.box, margin=args.margin)]
        kitti_io.write_velodyne(out / f"raw_roi{i:02d}.bin", raw_crop)
        kitti_io.write_pseudo_bin(out / f"pseudo_roi{i:02d}.bin", pse_crop)
        grid = build_roi_grid(obj.box, res)
        # both tables are pooled at C=6 so the fusion variants can consume
        # the pair directly: raw channels (x, y, z, i, 0, 0), pseudo (x..b)
        raw_feats = np.zeros((raw_crop.shape[0], 6))
        raw_feats[:, 0:4] = raw_crop
        pse_feats = pse_crop[:, 0:6]
        fr = pool_roi_features(raw_crop, raw_feats, grid, source="raw")
        fp = pool_roi_features(pse_crop, pse_feats, grid, source="pseudo")
        fusion.write_feature_table(out / f"feats_raw_roi{i:02d}.bin", fr.features,
                                   fusion.VARIANT_IDS["features"])
        fusion.write_feature_table(out / f"feats_pseudo_roi{i:02d}.bin", fp.features,
                                   fusion.VARIANT_IDS["features"])
        print(f"roi {i:02d} [{obj.class_name}]: {raw_crop.shape[0]} raw / "
              f"{pse_crop.shape[0]} pseudo points")
    return 0


def cmd_cpconv(args):
    points = kitti_io.read_pseudo_bin(args.points)
    store = ParamStore(args.seed)
    params = make_stack_params(store, k=args.k, c3=args.c3)
    out = cpconv_stack(points, params, cell_size=args.cell_size)
    fusion.write_feature_table(args.out, out, fusion.VARIANT_IDS["features"])
    print(f"cpconv: {points.shape[0]} points -> {out.shape[0]}x{out.shape[1]} features -> {args.out}")
    return 0


def cmd_fuse(args):
    f_raw, _ = fusion.read_feature_table(args.raw)
    f_pse, _ = fusion.read_feature_table(args.pse)
    if f_raw.shape != f_pse.shape:
        raise CliError(f"table shapes differ: {f_raw.shape} vs {f_pse.shape}")
    n, c = f_raw.shape
    store = ParamStore(args.seed)
    if args.variant == "attentive":
        params = (fusion.make_zero_gaf_params(store, c) if args.zero_params
                  else fusion.make_gaf_params(store, c))
    elif args.variant == "grid_concat":
        params = fusion.make_grid_concat_params(store, c)
    elif args.variant == "roi_concat":
        params = fusion.make_roi_concat_params(store, n, c)
    else:
        raise CliError(f"unknown variant {args.variant!r}")
    fused = fusion.fuse(f_raw, f_pse, args.variant, params)
    fusion.write_feature_table(args.out, fused.features, fusion.VARIANT_IDS[args.variant])
    weights = fused.per_grid_weights
    if weights is None:
        weights = np.ones((n, 2))
    lines = ["grid_index,w_raw,w_pse"]
    lines += [f"{i},{w[0]:.10f},{w[1]:.10f}" for i, w in enumerate(weights)]
    Path(args.out_weights).write_text("\n".join(lines) + "\n")
    print(f"fused {n}x{c} tables ({args.variant}) -> {args.out}, weights -> {args.out_weights}")
    return 0


def _cfg_float(cfg, key, default):
    return float(cfg.get(key, default))


def cmd_augment(args):
    cfg = parse_config(args.config)
    for kv in args.set or []:
        if "=" not in kv:
            raise CliError(f"--set expects key=value, got {kv!r}")
        key, _, value = kv.partition("=")
        cfg[key.strip()] = value.strip()
    root = _resolve_root(args.root, cfg)
    if "frame_id" not in cfg:
        raise CliError("config needs frame_id")
    if "seed" not in cfg:
        raise CliError("config needs seed (stochastic ops require one)")
    seed = int(cfg["seed"])
    frame = _load_frame(root, cfg["frame_id"], need_depth=True)
    scene = aug.scene_from_frame(frame)
    ops = [s.strip() for s in cfg.get("ops", "").split(",") if s.strip()]
    db = None
    if "gt_sample" in ops:
        db_dir = cfg.get("sampler_db")
        if db_dir and Path(db_dir, "manifest.txt").exists():
            db = aug.load_sampler_db(db_dir)
        else:
            db_ids = [s.strip() for s in cfg.get("db_frames", "").split(",") if s.strip()]
            if not db_ids:
                raise CliError("gt_sample needs db_frames or an existing sampler_db")
            db = aug.build_sampler_db([_load_frame(root, fid, need_depth=True) for fid in db_ids])
            if db_dir:
                aug.save_sampler_db(db, db_dir)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    before = scene.copy()
    rng = np.random.default_rng(seed)
    for op in ops:
        if op == "gt_sample":
            quotas = {key.split(".", 1)[1]: int(v) for key, v in cfg.items()
                      if key.startswith("quota.")}
            scene = aug.gt_sample(scene, db, quotas, rng_seed=int(rng.integers(2**31)))
        elif op == "rotate":
            scene = aug.global_transform(
                scene, "rotate", rng.uniform(-_cfg_float(cfg, "rotation_range", 0.3927),
                                             _cfg_float(cfg, "rotation_range", 0.3927)))
        elif op == "flip_x":
            if rng.random() < _cfg_float(cfg, "flip_probability", 0.5):
                scene = aug.global_transform(scene, "flip_x")
        elif op == "scale":
            scene = aug.global_transform(
                scene, "scale", rng.uniform(_cfg_float(cfg, "scale_min", 0.95),
                                            _cfg_float(cfg, "scale_max", 1.05)))
        elif op == "local_noise":
            scene = aug.local_noise(
                scene,
                rotation_range=_cfg_float(cfg, "local_rotation_range", 0.15708),
                translation_range=_cfg_float(cfg, "local_translation_range", 0.25),
                rng_seed=int(rng.integers(2**31)),
            )
        else:
            raise CliError(f"unknown augmentation op {op!r}")
    for tag, sc in (("before", before), ("after", scene)):
        kitti_io.write_ply(out / f"raw_{tag}.ply", sc.raw[:, 0:3],
                           np.repeat(sc.raw[:, 3:4], 3, axis=1))
        kitti_io.write_ply(out / f"pseudo_{tag}.ply", sc.pseudo[:, 0:3], sc.pseudo[:, 3:6])
        with open(out / f"boxes_{tag}.txt", "w") as fh:
            for b in sc.boxes:
                fh.write(f"{b.cx:.6f} {b.cy:.6f} {b.cz:.6f} "
                         f"{b.dx:.6f} {b.dy:.6f} {b.dz:.6f} {b.yaw:.6f}\n")
    print(f"augmented scene: {before.raw.shape[0]} -> {scene.raw.shape[0]} raw, "
          f"{before.pseudo.shape[0]} -> {scene.pseudo.shape[0]} pseudo, "
          f"{len(before.boxes)} -> {len(scene.boxes)} boxes; outputs in {out}")
    return 0


def cmd_bench_knn(args):
    sizes = [int(s) for s in args.sizes.split(",") if s]
    if not sizes:
        raise CliError("--sizes must list at least one size")
    methods = tuple(m.strip() for m in args.methods.split(",") if m.strip())
    rows = bench.run_knn_bench(sizes, k=args.k, methods=methods, repeats=args.repeats,
                               seed=args.seed, n_queries=args.queries)
    if args.backends == "both":
        rows += bench.run_backend_bench(sizes, k=args.k, repeats=args.repeats,
                                        seed=args.seed, n_queries=args.queries)
    bench.write_bench_csv(args.out, rows)
    print(f"bench: {len(rows)} rows -> {args.out}")
    return 0


# ---------------------------------------------------------------------------
# argument wiring
# ---------------------------------------------------------------------------


def build_parser():
    p = argparse.ArgumentParser(prog="pcfuse",
                                description="point cloud geometry and fusion toolkit")
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("make-minidata", help="write the bundled synthetic mini dataset")
    sp.add_argument("--out", required=True, help="output dataset root")
    sp.add_argument("--seed", type=int, default=11)
    sp.set_defaults(fn=cmd_make_minidata)

    sp = sub.add_parser("pseudo", help="depth map + image -> pseudo cloud (PLY + binary)")
    sp.add_argument("--root", help=f"dataset root (or ${ENV_DATA_ROOT})")
    sp.add_argument("--frame", required=True)
    sp.add_argument("--out-ply", required=True)
    sp.add_argument("--out-bin", required=True)
    sp.add_argument("--range", help="optional LiDAR-range filter: xmin,ymin,zmin,xmax,ymax,zmax")
    sp.set_defaults(fn=cmd_pseudo)

    sp = sub.add_parser("sparse-depth", help="raw cloud -> 16-bit sparse depth PNG")
    sp.add_argument("--root")
    sp.add_argument("--frame", required=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(fn=cmd_sparse_depth)

    sp = sub.add_parser("crop", help="crop both clouds per labeled RoI; emit points + pooled features")
    sp.add_argument("--root")
    sp.add_argument("--frame", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--margin", type=float, default=0.0)
    sp.add_argument("--resolution", default="6x6x6")
    sp.set_defaults(fn=cmd_crop)

    sp = sub.add_parser("cpconv", help="run the stacked point convolution over an RoI crop")
    sp.add_argument("--points", required=True, help="pseudo cloud binary")
    sp.add_argument("--out", required=True, help="output feature table")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--k", type=int, default=9)
    sp.add_argument("--c3", type=int, default=16)
    sp.add_argument("--cell-size", type=float, default=4.0)
    sp.set_defaults(fn=cmd_cpconv)

    sp = sub.add_parser("fuse", help="fuse a raw/pseudo feature table pair")
    sp.add_argument("--raw", required=True)
    sp.add_argument("--pse", required=True)
    sp.add_argument("--variant", default="attentive",
                    choices=["attentive", "grid_concat", "roi_concat"])
    sp.add_argument("--out", required=True)
    sp.add_argument("--out-weights", required=True)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--zero-params", action="store_true",
                    help="zero attention/output parameters (fixture)")
    sp.set_defaults(fn=cmd_fuse)

    sp = sub.add_parser("augment", help="apply a synchronized augmentation chain to a frame")
    sp.add_argument("--config", required=True, help="flat key=value config file")
    sp.add_argument("--root")
    sp.add_argument("--out", required=True)
    sp.add_argument("--set", action="append", metavar="KEY=VALUE",
                    help="override a config key (repeatable; flags win)")
    sp.set_defaults(fn=cmd_augment)

    sp = sub.add_parser("bench-knn", help="benchmark the neighbor search methods")
    sp.add_argument("--sizes", required=True, help="comma-separated point counts")
    sp.add_argument("--k", type=int, default=9)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--repeats", type=int, default=3)
    sp.add_argument("--queries", type=int, default=256)
    sp.add_argument("--methods", default="pixel_grid,brute_force_2d,ball_query_3d")
    sp.add_argument("--backends", choices=["active", "both"], default="active",
                    help="'both' adds numba-vs-numpy rows for the grid search")
    sp.add_argument("--out", required=True)
    sp.set_defaults(fn=cmd_bench_knn)

    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (CliError, ValueError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


def entry():
    sys.exit(main())


if __name__ == "__main__":
    entry()
