"""Command-line interface.

Subcommands mirror the pipeline stages: ``keypoints`` picks 3D keypoints for
a model, ``synth`` renders a synthetic scene, ``vote`` aggregates a vector
field into keypoint distributions, ``pose`` runs the full field-to-pose path,
``bench`` executes a config-driven benchmark sweep.

Exit codes: 0 success, 1 runtime failure (missing file, degenerate data),
2 usage or config error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .bench import load_config, run_bench, write_results
from .errors import ConfigError, VotePoseError
from .field import NoiseConfig, load_field, load_mask_pgm
from .geometry import CameraIntrinsics
from .models import (
    ObjectModel,
    bbox_corners,
    fps_select,
    load_keypoints,
    load_model,
    save_keypoints,
)
from .pnp import Correspondence, epnp_pose, make_correspondences, solve_pose
from .synth import (
    PoseSamplerConfig,
    TruncationConfig,
    make_blob_model,
    make_cube_model,
    save_scene,
    synth_scene,
)
from .voting import VotingConfig, localize_keypoints


def _add_camera_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--fx", type=float, default=600.0, help="focal length x, px")
    p.add_argument("--fy", type=float, default=600.0, help="focal length y, px")
    p.add_argument("--cx", type=float, default=None, help="principal point x (default: width/2)")
    p.add_argument("--cy", type=float, default=None, help="principal point y (default: height/2)")
    p.add_argument("--width", type=int, default=640, help="image width, px")
    p.add_argument("--height", type=int, default=480, help="image height, px")


def _camera_from_args(args) -> CameraIntrinsics:
    cx = args.width / 2.0 if args.cx is None else args.cx
    cy = args.height / 2.0 if args.cy is None else args.cy
    return CameraIntrinsics(args.fx, args.fy, cx, cy, args.width, args.height)


def _resolve_model(spec: str) -> ObjectModel:
    """A model is a PLY path or one of the built-ins: cube, blob, blob:<seed>."""
    if spec == "cube":
        return make_cube_model()
    if spec == "blob":
        return make_blob_model()
    if spec.startswith("blob:"):
        return make_blob_model(seed=int(spec.split(":", 1)[1]))
    return load_model(spec)


def _keypoints_for(model: ObjectModel, scheme: str, k: int):
    if scheme == "bbox":
        return bbox_corners(model)
    return fps_select(model, k)


def _parse_pair(text: str, flag: str) -> tuple[float, float]:
    parts = text.split(",")
    if len(parts) != 2:
        raise ConfigError(f"{flag} expects MIN,MAX, got {text!r}")
    try:
        return float(parts[0]), float(parts[1])
    except ValueError as err:
        raise ConfigError(f"{flag} expects two numbers, got {text!r}") from err


def cmd_keypoints(args) -> int:
    model = _resolve_model(args.model)
    kps = _keypoints_for(model, args.scheme, args.k)
    save_keypoints(kps, args.out)
    print(f"wrote {kps.k} {kps.scheme.value} keypoints (+ center) to {args.out}")
    return 0


def cmd_synth(args) -> int:
    model = _resolve_model(args.model)
    if args.keypoints is not None:
        kps = load_keypoints(args.keypoints)
    else:
        kps = _keypoints_for(model, args.scheme, args.k)
    intr = _camera_from_args(args)
    trunc = None
    if args.truncate is not None:
        lo, hi = _parse_pair(args.truncate, "--truncate")
        trunc = TruncationConfig(lo, hi)
    noise = NoiseConfig(angular_sigma=args.sigma, outlier_rate=args.outlier_rate)
    scene = synth_scene(
        model,
        kps,
        intr,
        sampler=PoseSamplerConfig((args.depth_min, args.depth_max), args.center_margin),
        occlusion_frac=args.occlusion,
        truncation=trunc,
        noise=noise,
        seed=args.seed,
    )
    save_scene(scene, args.out_dir)
    save_keypoints(kps, Path(args.out_dir) / "keypoints.json")
    on_px = int(np.count_nonzero(scene.mask))
    print(
        f"wrote scene to {args.out_dir}: {scene.intr.width}x{scene.intr.height}, "
        f"{on_px} object px, occlusion {scene.achieved_occlusion:.3f}"
    )
    return 0


def _vote_config(args) -> VotingConfig:
    return VotingConfig(
        n_hypotheses=args.n_hyps,
        inlier_threshold=args.theta,
        seed=args.seed,
        cov_epsilon=args.cov_epsilon,
    )


def cmd_vote(args) -> int:
    field = load_field(args.field)
    mask = load_mask_pgm(args.mask)
    dists = localize_keypoints(mask, field, _vote_config(args))
    doc = {"distributions": [d.to_dict() for d in dists]}
    text = json.dumps(doc, indent=2, sort_keys=True)
    if args.out is None:
        print(text)
    else:
        Path(args.out).write_text(text + "\n")
        print(f"wrote {len(dists)} keypoint distributions to {args.out}")
    return 0


def cmd_pose(args) -> int:
    field = load_field(args.field)
    mask = load_mask_pgm(args.mask)
    kps = load_keypoints(args.keypoints)
    if field.shape[2] != kps.k + 1:
        raise ConfigError(
            f"field has {field.shape[2]} channels but keypoint set has {kps.k + 1} points"
        )
    h, w = mask.shape
    cx = w / 2.0 if args.cx is None else args.cx
    cy = h / 2.0 if args.cy is None else args.cy
    intr = CameraIntrinsics(args.fx, args.fy, cx, cy, w, h)
    dists = localize_keypoints(mask, field, _vote_config(args))
    corrs = make_correspondences(kps.points3d, dists)
    if args.pnp == "epnp":
        pose = epnp_pose(
            np.array([c.point3d for c in corrs]), np.array([c.mean for c in corrs]), intr
        )
        pose_doc = {"R": pose.rotation.tolist(), "t": pose.translation.tolist()}
    else:
        if args.pnp == "isotropic":
            corrs = [Correspondence(c.point3d, c.mean, np.eye(2)) for c in corrs]
        result = solve_pose(corrs, intr)
        pose_doc = result.to_dict()
    doc = {"pose": pose_doc, "distributions": [d.to_dict() for d in dists]}
    text = json.dumps(doc, indent=2, sort_keys=True)
    if args.out is None:
        print(text)
    else:
        Path(args.out).write_text(text + "\n")
        print(f"wrote pose estimate to {args.out}")
    return 0


def cmd_bench(args) -> int:
    cfg = load_config(args.config)

    def progress(cell, rows):
        rates = ", ".join(f"{r['metric']}={r['success_rate']:.2f}" for r in rows)
        print(f"cell {cell.index}: {cell.model.name}/{cell.keypoints.scheme.value}{cell.keypoints.k} {cell.pnp} {rates}")

    rows = run_bench(cfg, threads=args.threads, progress=progress if not args.quiet else None)
    csv_path, json_path = write_results(rows, cfg, args.out_dir)
    print(f"wrote {csv_path} and {json_path} ({len(rows)} rows)")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="votepose",
        description="Voting-based keypoint localization and uncertainty-driven pose estimation",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("keypoints", help="select 3D keypoints for a model")
    p.add_argument("--model", required=True, help="PLY path, or built-in: cube, blob, blob:<seed>")
    p.add_argument("--scheme", choices=["fps", "bbox"], default="fps", help="selection scheme")
    p.add_argument("--k", type=int, default=8, help="number of keypoints (fps only)")
    p.add_argument("--out", required=True, help="output keypoints JSON path")
    p.set_defaults(func=cmd_keypoints)

    p = sub.add_parser("synth", help="render a synthetic scene with ground truth")
    p.add_argument("--model", required=True, help="PLY path, or built-in: cube, blob, blob:<seed>")
    p.add_argument("--keypoints", default=None, help="keypoints JSON (else --scheme/--k pick them)")
    p.add_argument("--scheme", choices=["fps", "bbox"], default="fps", help="selection scheme")
    p.add_argument("--k", type=int, default=8, help="number of keypoints (fps only)")
    _add_camera_args(p)
    p.add_argument("--depth-min", type=float, default=4.0, help="nearest center depth")
    p.add_argument("--depth-max", type=float, default=8.0, help="farthest center depth")
    p.add_argument("--center-margin", type=float, default=0.8, help="central image fraction for the object center")
    p.add_argument("--occlusion", type=float, default=0.0, help="fraction of object pixels to occlude")
    p.add_argument("--truncate", default=None, metavar="MIN,MAX", help="visible-fraction band for truncation")
    p.add_argument("--sigma", type=float, default=0.0, help="angular noise stddev, radians")
    p.add_argument("--outlier-rate", type=float, default=0.0, help="fraction of pixels redirected uniformly")
    p.add_argument("--seed", type=int, default=0, help="master seed")
    p.add_argument("--out-dir", required=True, help="directory for field.pvf, mask.pgm, scene.json, keypoints.json")
    p.set_defaults(func=cmd_synth)

    def add_vote_args(p):
        p.add_argument("--field", required=True, help="vector field file (.pvf)")
        p.add_argument("--mask", required=True, help="object mask (PGM)")
        p.add_argument("--n-hyps", type=int, default=128, help="hypotheses per keypoint")
        p.add_argument("--theta", type=float, default=0.99, help="inlier cosine threshold")
        p.add_argument("--cov-epsilon", type=float, default=1e-6, help="covariance regularizer, px^2")
        p.add_argument("--seed", type=int, default=0, help="hypothesis sampling seed")
        p.add_argument("--out", default=None, help="output JSON path (default: stdout)")

    p = sub.add_parser("vote", help="aggregate a vector field into keypoint distributions")
    add_vote_args(p)
    p.set_defaults(func=cmd_vote)

    p = sub.add_parser("pose", help="estimate a 6DoF pose from a field, mask, and keypoints")
    add_vote_args(p)
    p.add_argument("--keypoints", required=True, help="keypoints JSON with 3D coordinates")
    p.add_argument("--pnp", choices=["epnp", "uncertainty", "isotropic"], default="uncertainty", help="solver variant")
    p.add_argument("--fx", type=float, default=600.0, help="focal length x, px")
    p.add_argument("--fy", type=float, default=600.0, help="focal length y, px")
    p.add_argument("--cx", type=float, default=None, help="principal point x (default: mask width/2)")
    p.add_argument("--cy", type=float, default=None, help="principal point y (default: mask height/2)")
    p.set_defaults(func=cmd_pose)

    p = sub.add_parser("bench", help="run a benchmark sweep from a JSON config")
    p.add_argument("--config", required=True, help="benchmark config JSON")
    p.add_argument("--out-dir", required=True, help="directory for results.csv and results.json")
    p.add_argument("--threads", type=int, default=1, help="worker threads for trials")
    p.add_argument("--quiet", action="store_true", help="suppress per-cell progress lines")
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        name = exc.filename if exc.filename is not None else exc
        print(f"error: file not found: {name}", file=sys.stderr)
        return 1
    except json.JSONDecodeError as exc:
        print(f"error: invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}", file=sys.stderr)
        return 2
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except VotePoseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
