"""Benchmark harness: config-driven sweeps over scenes, solvers, and metrics.

A config describes a grid of experiment cells (models x keypoint schemes x
solver variants x noise levels x occlusion fractions x truncation bands); each
cell runs a fixed number of trials and aggregates three metrics per cell.
Trial seeds derive from (master seed, cell index, trial index) alone, so
results are reproducible and independent of the thread count.
"""

from __future__ import annotations

import csv
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from itertools import product
from pathlib import Path

import jsonschema
import numpy as np

from .errors import ConfigError, VotePoseError
from .field import NoiseConfig
from .geometry import CameraIntrinsics, Pose
from .metrics import metric_2d_projection, metric_add
from .models import KeypointScheme, KeypointSet, ObjectModel, bbox_corners, fps_select, load_model, model_diameter
from .pnp import Correspondence, epnp_pose, make_correspondences, solve_pose
from .synth import PoseSamplerConfig, TruncationConfig, make_blob_model, make_cube_model, synth_scene
from .voting import VotingConfig, localize_keypoints

METRICS = ("2d-projection", "add", "add-s")
PNP_VARIANTS = ("epnp", "uncertainty", "isotropic")

CSV_COLUMNS = [
    "cell",
    "model",
    "scheme",
    "k",
    "pnp",
    "sigma",
    "outlier_rate",
    "occlusion",
    "truncation",
    "metric",
    "trials",
    "successes",
    "success_rate",
    "mean_value",
    "std_value",
]

_NUMBER = {"type": "number"}
_NONNEG = {"type": "number", "minimum": 0}

SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["camera", "models", "keypoints", "pnp", "noise", "occlusion", "trials", "seed"],
    "properties": {
        "camera": {
            "type": "object",
            "additionalProperties": False,
            "required": ["fx", "fy", "cx", "cy", "width", "height"],
            "properties": {
                "fx": {"type": "number", "exclusiveMinimum": 0},
                "fy": {"type": "number", "exclusiveMinimum": 0},
                "cx": _NUMBER,
                "cy": _NUMBER,
                "width": {"type": "integer", "minimum": 1},
                "height": {"type": "integer", "minimum": 1},
            },
        },
        "depth_range": {
            "type": "array",
            "minItems": 2,
            "maxItems": 2,
            "items": {"type": "number", "exclusiveMinimum": 0},
        },
        "center_margin": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
        "models": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "additionalProperties": False,
                "required": ["kind"],
                "properties": {
                    "kind": {"enum": ["cube", "blob", "ply"]},
                    "side": {"type": "number", "exclusiveMinimum": 0},
                    "n_points": {"type": "integer", "minimum": 4},
                    "seed": {"type": "integer", "minimum": 0},
                    "radius": {"type": "number", "exclusiveMinimum": 0},
                    "path": {"type": "string"},
                },
            },
        },
        "keypoints": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "additionalProperties": False,
                "required": ["scheme"],
                "properties": {
                    "scheme": {"enum": ["fps", "bbox"]},
                    "k": {"type": "integer", "minimum": 1},
                },
            },
        },
        "pnp": {"type": "array", "minItems": 1, "items": {"enum": list(PNP_VARIANTS)}},
        "noise": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "additionalProperties": False,
                "properties": {
                    "sigma": _NONNEG,
                    "outlier_rate": {"type": "number", "minimum": 0, "maximum": 1},
                },
            },
        },
        "occlusion": {"type": "array", "minItems": 1, "items": _NONNEG},
        "truncation": {
            "type": "array",
            "minItems": 1,
            "items": {
                "oneOf": [
                    {"type": "null"},
                    {
                        "type": "object",
                        "additionalProperties": False,
                        "required": ["min_visible", "max_visible"],
                        "properties": {
                            "min_visible": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                            "max_visible": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                        },
                    },
                ]
            },
        },
        "voting": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "n_hypotheses": {"type": "integer", "minimum": 1},
                "inlier_threshold": {"type": "number", "minimum": -1, "maximum": 1},
                "cov_epsilon": _NONNEG,
            },
        },
        "metrics": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "projection_px": {"type": "number", "exclusiveMinimum": 0},
                "add_rel": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "trials": {"type": "integer", "minimum": 1},
        "seed": {"type": "integer", "minimum": 0},
    },
}

_DEFAULTS = {
    "depth_range": [4.0, 8.0],
    "center_margin": 0.8,
    "truncation": [None],
    "voting": {},
    "metrics": {},
}


def validate_config(doc: dict) -> dict:
    """Schema-check a config and fill in defaults. Raises ConfigError."""
    try:
        jsonschema.validate(doc, SCHEMA)
    except jsonschema.ValidationError as err:
        raise ConfigError(f"{err.json_path}: {err.message}") from err
    out = dict(doc)
    for key, val in _DEFAULTS.items():
        out.setdefault(key, val)
    lo, hi = out["depth_range"]
    if lo > hi:
        raise ConfigError(f"$.depth_range: lower bound {lo} exceeds upper bound {hi}")
    for i, t in enumerate(out["truncation"]):
        if t is not None and t["min_visible"] > t["max_visible"]:
            raise ConfigError(f"$.truncation[{i}]: min_visible exceeds max_visible")
    for i, m in enumerate(out["models"]):
        if m["kind"] == "ply" and "path" not in m:
            raise ConfigError(f"$.models[{i}]: ply model needs a path")
    return out


def load_config(path) -> dict:
    """Parse and validate a JSON benchmark config file."""
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    return validate_config(doc)


def _build_model(spec: dict) -> ObjectModel:
    kind = spec["kind"]
    if kind == "cube":
        return make_cube_model(side=spec.get("side", 1.0), n_points=spec.get("n_points", 2400))
    if kind == "blob":
        return make_blob_model(
            seed=spec.get("seed", 0),
            n_points=spec.get("n_points", 2000),
            radius=spec.get("radius", 0.5),
        )
    return load_model(spec["path"])


def _build_keypoints(model: ObjectModel, spec: dict) -> KeypointSet:
    if spec["scheme"] == "bbox":
        return bbox_corners(model)
    return fps_select(model, spec.get("k", 8))


@dataclass(frozen=True)
class _Cell:
    index: int
    model: ObjectModel
    diameter: float
    keypoints: KeypointSet
    pnp: str
    sigma: float
    outlier_rate: float
    occlusion: float
    truncation: TruncationConfig | None


def _make_cells(cfg: dict) -> list[_Cell]:
    models = [(_build_model(m)) for m in cfg["models"]]
    diameters = [model_diameter(m) for m in models]
    kp_sets = [[_build_keypoints(m, spec) for spec in cfg["keypoints"]] for m in models]
    cells = []
    grid = product(
        range(len(models)),
        range(len(cfg["keypoints"])),
        cfg["pnp"],
        cfg["noise"],
        cfg["occlusion"],
        cfg["truncation"],
    )
    for idx, (mi, ki, pnp, noise, occ, trunc) in enumerate(grid):
        cells.append(
            _Cell(
                index=idx,
                model=models[mi],
                diameter=diameters[mi],
                keypoints=kp_sets[mi][ki],
                pnp=pnp,
                sigma=float(noise.get("sigma", 0.0)),
                outlier_rate=float(noise.get("outlier_rate", 0.0)),
                occlusion=float(occ),
                truncation=None if trunc is None else TruncationConfig(trunc["min_visible"], trunc["max_visible"]),
            )
        )
    return cells


def _estimate(cell: _Cell, corrs: list[Correspondence], intr: CameraIntrinsics) -> Pose:
    if cell.pnp == "epnp":
        X = np.array([c.point3d for c in corrs])
        mu = np.array([c.mean for c in corrs])
        return epnp_pose(X, mu, intr)
    if cell.pnp == "isotropic":
        corrs = [Correspondence(c.point3d, c.mean, np.eye(2)) for c in corrs]
    return solve_pose(corrs, intr).pose


def run_trial(cfg: dict, cell: _Cell, trial_idx: int, vote_cfg: VotingConfig) -> dict:
    """One scene + localization + pose + metrics. Never raises for the
    failure modes the sweep is designed to probe; those come back as
    {"ok": False} or as NaN metric values."""
    ss = np.random.SeedSequence(entropy=cfg["seed"], spawn_key=(cell.index, trial_idx))
    scene_ss, vote_ss = ss.spawn(2)
    intr = CameraIntrinsics(**cfg["camera"])
    sampler = PoseSamplerConfig(tuple(cfg["depth_range"]), cfg["center_margin"])
    noise = NoiseConfig(angular_sigma=cell.sigma, outlier_rate=cell.outlier_rate)
    values = {m: float("nan") for m in METRICS}
    correct = {m: False for m in METRICS}
    try:
        scene = synth_scene(
            cell.model,
            cell.keypoints,
            intr,
            sampler=sampler,
            occlusion_frac=cell.occlusion,
            truncation=cell.truncation,
            noise=noise,
            seed=scene_ss,
        )
        dists = localize_keypoints(scene.mask, scene.field, replace(vote_cfg, seed=vote_ss))
        corrs = make_correspondences(cell.keypoints.points3d, dists)
        est = _estimate(cell, corrs, scene.intr)
    except VotePoseError:
        return {"ok": False, "values": values, "correct": correct}

    mcfg = cfg["metrics"]
    proj_px = mcfg.get("projection_px", 5.0)
    add_rel = mcfg.get("add_rel", 0.1)
    try:
        rep = metric_2d_projection(est, scene.gt_pose, cell.model, scene.intr, threshold=proj_px)
        values["2d-projection"], correct["2d-projection"] = rep.value, rep.correct
    except VotePoseError:
        pass
    for name, symmetric in (("add", False), ("add-s", True)):
        rep = metric_add(est, scene.gt_pose, cell.model, cell.diameter, symmetric=symmetric, rel_threshold=add_rel)
        values[name], correct[name] = rep.value, rep.correct
    return {"ok": True, "values": values, "correct": correct}


def _aggregate(cell: _Cell, trials: list[dict]) -> list[dict]:
    trunc_label = (
        "none"
        if cell.truncation is None
        else f"{cell.truncation.min_visible:g}-{cell.truncation.max_visible:g}"
    )
    rows = []
    for metric in METRICS:
        vals = np.array([t["values"][metric] for t in trials], dtype=float)
        successes = int(sum(t["correct"][metric] for t in trials))
        finite = vals[np.isfinite(vals)]
        rows.append(
            {
                "cell": cell.index,
                "model": cell.model.name,
                "scheme": cell.keypoints.scheme.value,
                "k": cell.keypoints.k,
                "pnp": cell.pnp,
                "sigma": cell.sigma,
                "outlier_rate": cell.outlier_rate,
                "occlusion": cell.occlusion,
                "truncation": trunc_label,
                "metric": metric,
                "trials": len(trials),
                "successes": successes,
                "success_rate": successes / len(trials),
                "mean_value": float(finite.mean()) if finite.size else float("nan"),
                "std_value": float(finite.std()) if finite.size else float("nan"),
            }
        )
    return rows


def run_bench(cfg: dict, threads: int = 1, progress=None) -> list[dict]:
    """Run every cell of a validated config; returns aggregate rows.

    Results are a pure function of the config: per-trial seeds come from
    (seed, cell index, trial index), and trials are collected in index order,
    so the thread count changes timing only. A cell where every trial fails
    aggregates to a 0% success rate rather than an error.
    """
    if threads < 1:
        raise ConfigError(f"threads must be >= 1, got {threads}")
    cells = _make_cells(cfg)
    vote = cfg["voting"]
    vote_cfg = VotingConfig(
        n_hypotheses=vote.get("n_hypotheses", 128),
        inlier_threshold=vote.get("inlier_threshold", 0.99),
        cov_epsilon=vote.get("cov_epsilon", 1e-6),
    )
    rows: list[dict] = []
    with ThreadPoolExecutor(max_workers=threads) as ex:
        for cell in cells:
            results = list(
                ex.map(lambda t: run_trial(cfg, cell, t, vote_cfg), range(cfg["trials"]))
            )
            rows.extend(_aggregate(cell, results))
            if progress is not None:
                progress(cell, rows[-len(METRICS):])
    return rows


def _fmt(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_results(rows: list[dict], cfg: dict, out_dir) -> tuple[Path, Path]:
    """Write results.csv and results.json; returns both paths.

    Output bytes are deterministic: fixed column order, repr() floats, and
    "\\n" line endings regardless of platform.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / "results.csv"
    with open(csv_path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for row in rows:
            writer.writerow([_fmt(row[c]) for c in CSV_COLUMNS])
    json_path = out / "results.json"
    clean = [
        {k: (None if isinstance(v, float) and not np.isfinite(v) else v) for k, v in row.items()}
        for row in rows
    ]  # strict JSON has no NaN literal
    doc = {"config": cfg, "rows": clean}
    json_path.write_text(json.dumps(doc, indent=2, sort_keys=True, allow_nan=False) + "\n")
    return csv_path, json_path
