"""Command-line entry point: ``pathpose <command> [options]``.

Exit codes: 0 success, 2 validation/config error, 3 numeric failure
(degenerate rotation, undefined correlation), 4 I/O error. Set
``PATHPOSE_LOG`` (DEBUG, INFO, WARNING...) to control log verbosity.
"""

import argparse
import json
import logging
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import data as dataio
from . import evaluation
from .checkpoint import load_checkpoint
from .config import load_run_config, scene_from_args
from .errors import ConfigError, FormatError, InputError
from .model import encode_batched
from .scene import generate_trajectory, save_scene
from .training import train

log = logging.getLogger("pathpose")

EXIT_OK, EXIT_INVALID, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4


class Formatter(argparse.ArgumentDefaultsHelpFormatter):
    def __init__(self, prog):
        super().__init__(prog, width=88, max_help_position=32)


def _existing(path, what):
    if path is not None and not Path(path).exists():
        raise ConfigError(f"{what} not found: {path}")


def _load_config(args):
    _existing(args.config, "config file")
    return load_run_config(args.config)


def cmd_generate(args):
    cfg = _load_config(args)
    _existing(args.scene, "scene file")
    scene = scene_from_args(cfg, args.scene)
    traj = cfg.trajectory_config(n_frames=args.frames, n_passes=args.passes, seed=args.seed)
    frames = generate_trajectory(scene, traj)
    records = dataio.from_labeled(frames, video_id=args.video_id)
    dataio.write_dataset(records, args.out, n_classes=scene.n_classes)
    if args.write_scene:
        save_scene(scene, args.write_scene)
    log.info("wrote %d frames to %s", len(records), args.out)
    return EXIT_OK


def cmd_train(args):
    cfg = _load_config(args)
    _existing(args.data, "data file")
    records = dataio.read_dataset(args.data)
    if not records:
        raise InputError(f"{args.data}: dataset has no frames")
    n = records[0].n_classes
    model_cfg = cfg.model_config(n, rotation_enabled=False if args.no_rotation else None)
    train_cfg = cfg.train_config(epochs=args.epochs, seed=args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    snapshot = cfg.to_dict()
    snapshot["model"] = model_cfg.to_dict()
    snapshot["training"] = train_cfg.to_dict()
    (out / "config.json").write_text(json.dumps(snapshot, indent=2) + "\n")
    _, history = train(records, model_cfg, train_cfg, run_dir=out)
    log.info("final loss %.5f (epoch 0: %.5f)", history[-1].total, history[0].total)
    return EXIT_OK


def _oracle_latents(targets, corridor_length):
    z = np.array(
        [
            [t.pose.depth / corridor_length, t.pose.pitch / (math.pi / 2), t.pose.yaw / (math.pi / 2)]
            for t in targets
        ]
    )
    return z


def cmd_eval(args):
    cfg = _load_config(args)
    _existing(args.data, "data file")
    if not args.oracle:
        if args.ckpt is None:
            raise ConfigError("--ckpt is required")
        _existing(Path(args.ckpt).with_suffix(".json"), "checkpoint")
    records = dataio.read_dataset(args.data)
    ev = cfg.eval
    bins = args.bins or int(ev["bins"])
    L = args.corridor_length or float(cfg.scene["corridor_length"])

    if args.oracle:
        s = cfg.model_config(records[0].n_classes if records else 1).seq_len
        _, all_targets = evaluation.posed_windows(records, s, 1)
        Z_all = _oracle_latents(all_targets, L)
        variant = "oracle"
    else:
        model, _ = load_checkpoint(args.ckpt)
        Z_all, all_targets = evaluation.predict(model, records, 1)
        variant = "rotation" if model.cfg.rotation_enabled else "no-rotation"
    if len(all_targets) < 2:
        raise InputError("need at least two posed windows to evaluate")

    depth = np.array([t.pose.depth for t in all_targets])
    pitch = np.degrees([t.pose.pitch for t in all_targets])
    yaw = np.degrees([t.pose.yaw for t in all_targets])
    a = slice(None, None, int(ev["angle_stride"]))
    c = slice(None, None, int(ev["correlation_stride"]))
    reports = {
        "angle_errors": evaluation.angle_error_report(
            Z_all[a, 1] * 90.0, Z_all[a, 2] * 90.0, pitch[a], yaw[a]
        ),
        "depth_correlation": evaluation.correlation_report(Z_all[c, 0], depth[c]),
        "latent_spread": evaluation.spread_report(Z_all[:, 0], depth, L, bins, variant=variant),
    }
    evaluation.write_report(args.report, reports)
    if args.table:
        evaluation.write_latent_table(args.table, Z_all, all_targets)
    corr = reports["depth_correlation"]
    ang = reports["angle_errors"]
    print(
        f"|r|={corr.abs_r:.4f}  pitch MAE={ang.mean_abs_pitch_err:.3f}°  "
        f"yaw MAE={ang.mean_abs_yaw_err:.3f}°  spread={reports['latent_spread'].mean_range:.4f}"
    )
    return EXIT_OK


def _parse_reference(text):
    try:
        vals = [float(v) for v in text.split(",")]
    except ValueError as exc:
        raise ConfigError(f"--reference must be 'z1,z2,z3': {exc}") from exc
    if len(vals) != 3:
        raise ConfigError("--reference must have exactly three values z1,z2,z3")
    return vals


INFER_COLUMNS = ["video_id", "frame_index", "z1", "z2", "z3", "pitch_deg", "yaw_deg"]
GUIDANCE_COLUMNS = ["d_pitch_deg", "d_yaw_deg", "d_path"]


def cmd_infer(args):
    _existing(Path(args.ckpt).with_suffix(".json"), "checkpoint")
    _existing(args.data, "data file")
    reference = _parse_reference(args.reference) if args.reference else None
    model, _ = load_checkpoint(args.ckpt)
    records = dataio.read_dataset(args.data)
    frames, starts, targets = dataio.window_index(records, model.cfg.seq_len)
    Z = encode_batched(model, dataio.gather_windows(frames, starts, model.cfg.seq_len))
    cols = INFER_COLUMNS + (GUIDANCE_COLUMNS if reference else [])
    with open(args.out, "w") as f:
        f.write("\t".join(cols) + "\n")
        for z, t in zip(Z, targets):
            row = [t.video_id, str(t.frame_index), *(repr(float(v)) for v in z),
                   repr(float(z[1]) * 90.0), repr(float(z[2]) * 90.0)]
            if reference:
                row += [repr(v) for v in evaluation.guidance_delta(tuple(map(float, z)), reference)]
            f.write("\t".join(row) + "\n")
    log.info("wrote %d rows to %s", len(targets), args.out)
    return EXIT_OK


def _parse_ids(text):
    if not text:
        return frozenset()
    try:
        return frozenset(int(v) for v in text.split(",") if v.strip())
    except ValueError as exc:
        raise ConfigError(f"--drop must be comma-separated integers: {exc}") from exc


def cmd_ingest(args):
    if not Path(args.yolo_dir).is_dir():
        raise ConfigError(f"label directory not found: {args.yolo_dir}")
    if args.classes < 1:
        raise ConfigError("--classes must be >= 1")
    if args.stride < 1:
        raise ConfigError("--stride must be >= 1")
    class_map = dataio.ClassMap(args.classes, _parse_ids(args.drop))
    records = dataio.ingest_yolo_labels(args.yolo_dir, class_map, args.stride)
    dataio.write_dataset(records, args.out, n_classes=class_map.n_classes)
    log.info("ingested %d frames into %s", len(records), args.out)
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(
        prog="pathpose",
        description="Unsupervised path-position and viewing-angle embedding "
        "from bounding-box detection sequences.",
        formatter_class=Formatter,
    )
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("generate", help="simulate a synthetic trajectory dataset", formatter_class=Formatter)
    p.add_argument("--config", help="run config file (JSON)")
    p.add_argument("--scene", help="scene spec file; default scene from config otherwise")
    p.add_argument("--frames", type=int, help="number of frames (config default 4000)")
    p.add_argument("--passes", type=int, help="forward+backward sweeps (config default 4)")
    p.add_argument("--seed", type=int, help="trajectory seed (config default 1)")
    p.add_argument("--video-id", default="sim", help="video id written into the records")
    p.add_argument("--write-scene", help="also save the scene spec used")
    p.add_argument("--out", required=True, help="output dataset file (.jsonl)")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="train the autoencoder", formatter_class=Formatter)
    p.add_argument("--data", required=True, help="training dataset file")
    p.add_argument("--config", help="run config file (JSON)")
    p.add_argument("--out", required=True, help="run directory")
    p.add_argument("--no-rotation", action="store_true", help="train the rotation-free baseline")
    p.add_argument("--epochs", type=int, help="override training.epochs")
    p.add_argument("--seed", type=int, help="override training.seed")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="angle errors, depth correlation and latent spread", formatter_class=Formatter)
    p.add_argument("--data", required=True, help="posed evaluation dataset")
    p.add_argument("--ckpt", help="checkpoint manifest (model.json)")
    p.add_argument("--config", help="run config file (JSON)")
    p.add_argument("--report", required=True, help="output report file (JSON)")
    p.add_argument("--bins", type=int, help="depth bins for latent spread (config default 10)")
    p.add_argument("--corridor-length", type=float, help="depth range for binning (config default 10)")
    p.add_argument("--table", help="also write a per-window latent table (TSV)")
    p.add_argument("--oracle", action="store_true", help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("infer", help="per-window latents and guidance deltas", formatter_class=Formatter)
    p.add_argument("--ckpt", required=True, help="checkpoint manifest (model.json)")
    p.add_argument("--data", required=True, help="dataset file")
    p.add_argument("--out", required=True, help="output table (TSV)")
    p.add_argument("--reference", help="reference latent 'z1,z2,z3' for guidance deltas")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("ingest", help="convert YOLO label files to a dataset", formatter_class=Formatter)
    p.add_argument("--yolo-dir", required=True, help="directory of per-frame label files")
    p.add_argument("--classes", type=int, required=True, help="number of detector classes")
    p.add_argument("--drop", default="", help="comma-separated class ids to drop")
    p.add_argument("--stride", type=int, default=1, help="keep every k-th frame")
    p.add_argument("--out", required=True, help="output dataset file (.jsonl)")
    p.set_defaults(func=cmd_ingest)
    return parser


def main(argv=None):
    logging.basicConfig(
        level=os.environ.get("PATHPOSE_LOG", "WARNING").upper(),
        format="%(levelname)s %(name)s: %(message)s",
    )
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, InputError, FormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except ArithmeticError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
