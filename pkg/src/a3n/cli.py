"""Command-line entry point.

Exit codes: 0 success, 2 invalid input or configuration, 3 numerical divergence.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np
import torch

from .errors import DivergenceError, ValidationError
from .evalcli.config import RunConfig, load_config, write_run_manifest
from .formats import read_weights

log = logging.getLogger("a3n")

EXIT_OK, EXIT_INVALID, EXIT_DIVERGED = 0, 2, 3


def _outdir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _manifest(path, cfg: RunConfig, argv, outputs) -> None:
    write_run_manifest(path, cfg, list(argv), [str(o) for o in outputs])


def _load_pipeline(paths, cfg: RunConfig, need_region: bool):
    """Sort weight files by kind; without region weights the detector falls back to true masks."""
    from .graspnet.train import load_grasp
    from .regionproposal.train import load_region
    from .scenesim.scan import Pipeline
    region = grasp = None
    for p in paths:
        kind = read_weights(p)[1].get("kind")
        if kind == "region":
            region = load_region(p)
        elif kind == "grasp":
            grasp = load_grasp(p)
        else:
            raise ValidationError(f"{p}: unknown weights kind {kind!r}")
    oracle = cfg.eval.oracle or (region is None and not need_region)
    return Pipeline(region, grasp, oracle, cfg.eval.score_threshold, cfg.eval.min_pixels)


def _test_scenes(data_dir, cfg: RunConfig, split: str = "test"):
    from .scenesim.dataset import load_manifest, load_scene
    ids = load_manifest(data_dir)["splits"][split][: cfg.eval.scenes]
    if not ids:
        raise ValidationError(f"split {split!r} of {data_dir} is empty")
    return [load_scene(data_dir, i) for i in ids]


def _data_setup(data_dir, cfg: RunConfig):
    """Intrinsics, noise and scene config recorded in a dataset's manifest."""
    from .geometry import CameraIntrinsics
    from .scenesim.dataset import load_manifest
    from .scenesim.render import NoiseModel
    from .scenesim.scene import SceneConfig
    m = load_manifest(data_dir)
    dc = m["config"]
    sc = SceneConfig(**{k: (tuple(v) if isinstance(v, list) else v) for k, v in dc["scene"].items()})
    noise = NoiseModel(enabled=dc["noise"], sigma0=dc["sigma0"], dropout_max=dc["dropout_max"])
    return CameraIntrinsics.from_dict(m["intrinsics"]), noise, sc


def cmd_gen(args, cfg: RunConfig, argv) -> int:
    from .scenesim.dataset import generate_dataset
    out = _outdir(args)
    generate_dataset(out, args.scenes, args.seed, cfg.data)
    _manifest(out / "run_manifest.json", cfg, argv, [out / "manifest.json"])
    print(f"wrote {args.scenes} scenes to {out}")
    return EXIT_OK


def _write_curve(path, curve, val=None) -> None:
    lines = ["step,loss"] + [f"{i},{v:.8f}" for i, v in enumerate(curve)]
    if val:
        lines += ["", "epoch,val_centre_rmse_cm"] + [f"{i},{v:.6f}" for i, v in enumerate(val)]
    Path(path).write_text("\n".join(lines) + "\n")


def cmd_train(args, cfg: RunConfig, argv) -> int:
    torch.manual_seed(cfg.seed)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    curve_path = Path(str(out) + ".curve.csv")
    if args.target == "region":
        from .regionproposal.train import samples_from_dataset, save_region, train_region
        samples = samples_from_dataset(args.data, "train", cfg.eval.min_pixels)
        if not samples:
            raise ValidationError(f"no training frames in {args.data}")
        model, curve = train_region(samples, cfg.region, cfg.region_train)
        save_region(out, model, cfg.region_train, {"config_hash": cfg.hash(), "seed": cfg.seed})
        _write_curve(curve_path, curve)
    else:
        from .graspnet.data import samples_from_dataset
        from .graspnet.train import save_grasp, train_grasp
        samples = samples_from_dataset(args.data, "train", cfg.grasp, cfg.eval.min_pixels, cfg.seed,
                                       mask_jitter=cfg.grasp_train.mask_jitter)
        val = samples_from_dataset(args.data, "val", cfg.grasp, cfg.eval.min_pixels, cfg.seed)
        model, curve, val_log = train_grasp(samples, cfg.grasp, cfg.grasp_train, val)
        save_grasp(out, model, cfg.grasp_train, {"config_hash": cfg.hash(), "seed": cfg.seed})
        _write_curve(curve_path, curve, val_log)
    _manifest(Path(str(out) + ".run.json"), cfg, argv, [out, curve_path])
    print(f"final loss {curve[-1]:.6f} after {len(curve)} steps; weights in {out}")
    return EXIT_OK


def cmd_eval(args, cfg: RunConfig, argv) -> int:
    from .evalcli import tables
    out = _outdir(args)
    if args.target == "detect":
        from .evalcli.metrics import compute_metrics, match_detections
        from .regionproposal.train import detect, load_region
        from .scenesim.dataset import frame_records, instance_truths, load_frame
        model = load_region(args.weights[0])
        matchings = []
        records = frame_records(args.data, args.split)
        for rec in records:
            frame, _ = load_frame(args.data, rec.scene_id, rec.index)
            kept, _ = instance_truths(frame.instance_id, cfg.eval.min_pixels)
            dets = detect(model, frame.rgb, cfg.eval.score_threshold)
            matchings.append(match_detections(dets, kept, cfg.eval.iou_threshold, cfg.eval.score_threshold))
        header, rows = tables.detection_table(compute_metrics(matchings), len(records))
        name = "eval_detect.csv"
    else:
        from .evalcli.sweeps import evaluate_samples
        from .graspnet.data import samples_from_dataset
        from .graspnet.train import load_grasp
        model = load_grasp(args.weights[0])
        samples = samples_from_dataset(args.data, args.split, model.config, cfg.eval.min_pixels, cfg.seed)
        if not samples:
            raise ValidationError(f"no instances in split {args.split!r}")
        net = evaluate_samples(model, samples)
        baseline = centroid_baseline(samples)
        header, rows = tables.grasp_table([("network", net), ("mask_centroid", baseline)])
        name = "eval_grasp.csv"
    text = tables.write_table(out / name, header, rows)
    _manifest(out / (name + ".run.json"), cfg, argv, [out / name])
    print(text, end="")
    return EXIT_OK


def centroid_baseline(samples):
    """Centre = mean of the masked points; approach = straight back to the camera."""
    from .evalcli.metrics import grasp_rmse
    from .grasp import GraspPose
    preds = {s.key: GraspPose(s.centroid, 0.0, 0.0, s.truth.box_extents) for s in samples}
    return grasp_rmse(preds, {s.key: s.truth for s in samples})


def cmd_sweep(args, cfg: RunConfig, argv) -> int:
    from .evalcli import tables
    from .evalcli.sweeps import corruption_sweep, distance_sweep, render_samples
    out = _outdir(args)
    intr, noise, scene_cfg = _data_setup(args.data, cfg)
    scenes = _test_scenes(args.data, cfg)
    pipeline = _load_pipeline(args.weights, cfg, need_region=False)
    if args.target == "corruption":
        if pipeline.grasp is None:
            raise ValidationError("corruption sweep needs grasp weights")
        by_dist = {d: render_samples(scenes, d, intr, noise, pipeline.grasp.config, scene_cfg, cfg.seed,
                                     cfg.eval.min_pixels) for d in cfg.eval.corruption_distances}
        reports = corruption_sweep(pipeline.grasp, by_dist, cfg.eval.fractions, seed=cfg.seed,
                                   repeats=cfg.eval.corruption_repeats)
    else:
        reports = [distance_sweep(pipeline, scenes, intr, cfg.eval.distances, noise, scene_cfg, cfg.seed)]
    header, rows = tables.sweep_table(reports)
    name = f"sweep_{args.target}.csv"
    text = tables.write_table(out / name, header, rows)
    outputs = [out / name]
    if cfg.eval.plot or args.plot:
        tables.plot_sweeps(out / f"sweep_{args.target}.png", reports)
        outputs.append(out / f"sweep_{args.target}.png")
    _manifest(out / (name + ".run.json"), cfg, argv, outputs)
    print(text, end="")
    return EXIT_OK


def cmd_compare(args, cfg: RunConfig, argv) -> int:
    from .evalcli import tables
    from .evalcli.sweeps import strategy_compare
    out = _outdir(args)
    intr, noise, scene_cfg = _data_setup(args.data, cfg)
    scenes = _test_scenes(args.data, cfg)
    pipeline = _load_pipeline(args.weights, cfg, need_region=False)
    rows = strategy_compare(pipeline, scenes, intr, noise, scene_cfg, cfg.seed, cfg.eval.global_distance,
                            cfg.eval.local_standoff)
    header, table = tables.strategy_table(rows)
    text = tables.write_table(out / "strategies.csv", header, table)
    _manifest(out / "strategies.csv.run.json", cfg, argv, [out / "strategies.csv"])
    print(text, end="")
    return EXIT_OK


def cmd_map(args, cfg: RunConfig, argv) -> int:
    from .formats import read_raster
    from .geometry import CameraIntrinsics, Pose, deproject
    from .occupancy import OccupancyMap
    frames = sorted(Path(args.frames).glob("*.depth"), key=lambda p: (len(p.stem), p.stem))
    if not frames:
        raise ValidationError(f"no .depth rasters in {args.frames}")
    occ = OccupancyMap(args.resolution, edge=args.edge)
    skipped = 0
    for path in frames:
        meta_path = path.with_suffix(".json")
        if not meta_path.exists():
            raise ValidationError(f"{path} has no pose/intrinsics sidecar {meta_path.name}")
        meta = json.loads(meta_path.read_text())
        depth = read_raster(path).astype(np.float64)
        intr = CameraIntrinsics.from_dict(meta["intrinsics"])
        cloud = deproject(depth, depth > 0, intr)
        skipped += occ.insert_scan(cloud, Pose.from_dict(meta["camera_pose"]))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    occ.save_json(out)
    _manifest(Path(str(out) + ".run.json"), cfg, argv, [out])
    print(f"{len(frames)} frames, {len(occ.occupied_voxels())} occupied voxels, {skipped} points outside the map")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="a3n", description="Fruit detection and grasp estimation on synthetic scenes.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out_default=None):
        sp.add_argument("--config", help="key-value config file")
        if out_default is not None:
            sp.add_argument("--out", default=out_default, help="output directory")

    g = sub.add_parser("gen", help="generate a synthetic dataset")
    g.add_argument("--scenes", type=int, required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.add_argument("--config")
    g.set_defaults(func=cmd_gen)

    t = sub.add_parser("train", help="train a network")
    t.add_argument("target", choices=["region", "grasp"])
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True, help="weights file")
    t.add_argument("--config")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate on a dataset split")
    e.add_argument("target", choices=["detect", "grasp"])
    e.add_argument("--weights", nargs=1, required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--split", default="test")
    common(e, ".")
    e.set_defaults(func=cmd_eval)

    s = sub.add_parser("sweep", help="corruption or distance sweep")
    s.add_argument("target", choices=["corruption", "distance"])
    s.add_argument("--weights", nargs="+", required=True, help="grasp weights, optionally region weights")
    s.add_argument("--data", required=True, help="dataset whose test scenes are swept")
    s.add_argument("--plot", action="store_true")
    common(s, ".")
    s.set_defaults(func=cmd_sweep)

    c = sub.add_parser("compare-strategies", help="global vs local vs global-to-local scanning")
    c.add_argument("--weights", nargs="+", required=True)
    c.add_argument("--data", required=True)
    common(c, ".")
    c.set_defaults(func=cmd_compare)

    m = sub.add_parser("map", help="build an occupancy map from posed depth frames")
    m.add_argument("--frames", required=True, help="directory of <k>.depth + <k>.json frames")
    m.add_argument("--out", required=True)
    m.add_argument("--resolution", type=float, default=0.05)
    m.add_argument("--edge", type=float, default=4.0)
    m.add_argument("--config")
    m.set_defaults(func=cmd_map)
    return p


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    torch.set_num_threads(1)
    try:
        cfg = load_config(args.config)
        if getattr(args, "seed", None) is not None and args.command == "gen":
            cfg.seed = args.seed
        return args.func(args, cfg, ["a3n", *argv])
    except DivergenceError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DIVERGED
    except (ValidationError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
