"""Synthetic scene generation for controlled occlusion and truncation studies.

A scene is produced in a fixed stage order so that paired experiments stay
comparable: pose sampling, silhouette rendering, rectangular occlusion,
keypoint projection, truncation crop, ground-truth field, noise corruption.
Each stage consumes its own child of the master seed, so two scenes built
from the same seed but different occlusion or truncation settings share the
identical pose and noise draws.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

from .errors import ObjectNotVisible
from .field import NoiseConfig, corrupt_field, gt_vector_field, save_field, save_mask_pgm
from .geometry import DEPTH_CUTOFF, CameraIntrinsics, Pose, project, transform_points
from .models import KeypointSet, ObjectModel

_MAX_SPLAT_HALF = 8  # cap on the adaptive point-splat radius, px


@dataclass(frozen=True)
class PoseSamplerConfig:
    """Ranges for random viewpoints: camera depth of the object center and
    the central image fraction its projection may land in."""

    depth_range: tuple[float, float] = (4.0, 8.0)
    center_margin: float = 0.8

    def __post_init__(self):
        lo, hi = self.depth_range
        if not 0.0 < lo <= hi:
            raise ValueError(f"depth_range must satisfy 0 < lo <= hi, got {self.depth_range}")
        if not 0.0 < self.center_margin <= 1.0:
            raise ValueError("center_margin must be in (0, 1]")


@dataclass(frozen=True)
class TruncationConfig:
    """Visible-fraction band to hit when cropping the object at an image edge."""

    min_visible: float = 0.4
    max_visible: float = 0.6

    def __post_init__(self):
        if not 0.0 < self.min_visible <= self.max_visible < 1.0:
            raise ValueError("need 0 < min_visible <= max_visible < 1")


@dataclass(frozen=True)
class SceneSample:
    """One rendered scene with its ground truth.

    ``keypoints2d`` are the projected model keypoints in the final (possibly
    cropped) image frame; with truncation they may lie outside the image
    bounds, which is exactly the case vote aggregation is meant to survive.
    """

    intr: CameraIntrinsics
    gt_pose: Pose
    mask: np.ndarray
    field: np.ndarray
    keypoints2d: np.ndarray
    requested_occlusion: float = 0.0
    achieved_occlusion: float = 0.0
    truncation: dict | None = None
    noise: NoiseConfig | None = None


def make_cube_model(side: float = 1.0, n_points: int = 2400, name: str = "cube") -> ObjectModel:
    """Axis-aligned cube centered at the origin, gridded on all six faces."""
    if side <= 0:
        raise ValueError("side must be positive")
    e = max(2, int(round(np.sqrt(n_points / 6.0))))
    lin = np.linspace(-side / 2.0, side / 2.0, e)
    a, b = np.meshgrid(lin, lin, indexing="ij")
    a, b = a.ravel(), b.ravel()
    faces = []
    for axis in range(3):
        for sign in (-side / 2.0, side / 2.0):
            face = np.empty((len(a), 3))
            face[:, axis] = sign
            face[:, (axis + 1) % 3] = a
            face[:, (axis + 2) % 3] = b
            faces.append(face)
    return ObjectModel(np.unique(np.vstack(faces), axis=0), name=name)


def make_blob_model(seed: int = 0, n_points: int = 2000, radius: float = 0.5) -> ObjectModel:
    """Smooth asymmetric star-shaped solid: a Fibonacci sphere with a
    seed-dependent low-frequency radial bump field."""
    if n_points < 4:
        raise ValueError("n_points must be >= 4")
    if radius <= 0:
        raise ValueError("radius must be positive")
    i = np.arange(n_points)
    z = 1.0 - 2.0 * (i + 0.5) / n_points
    phi = i * np.pi * (3.0 - np.sqrt(5.0))
    s = np.sqrt(1.0 - z * z)
    dirs = np.stack([s * np.cos(phi), s * np.sin(phi), z], axis=1)

    rng = np.random.default_rng(np.random.SeedSequence(seed))
    amp = rng.uniform(-0.3, 0.3, size=3)
    freq = rng.integers(1, 4, size=3)
    phase = rng.uniform(0.0, 2.0 * np.pi, size=3)
    bump = sum(amp[k] * np.sin(freq[k] * np.pi * dirs[:, k] + phase[k]) for k in range(3))
    r = radius * np.clip(1.0 + bump, 0.3, None)
    return ObjectModel(dirs * r[:, None], name=f"blob{seed}")


def sample_pose(
    model: ObjectModel,
    intr: CameraIntrinsics,
    cfg: PoseSamplerConfig,
    rng: np.random.Generator,
) -> Pose:
    """Uniform random orientation; the model centroid lands at a uniform depth
    and projects into the central ``center_margin`` fraction of the image."""
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    R = np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )
    depth = rng.uniform(*cfg.depth_range)
    m = cfg.center_margin
    u = rng.uniform(intr.width * (1 - m) / 2.0, intr.width * (1 + m) / 2.0)
    v = rng.uniform(intr.height * (1 - m) / 2.0, intr.height * (1 + m) / 2.0)
    cam_center = depth * np.array([(u - intr.cx) / intr.fx, (v - intr.cy) / intr.fy, 1.0])
    return Pose(R, cam_center - R @ model.centroid())


def render_mask(intr: CameraIntrinsics, pose: Pose, model: ObjectModel) -> np.ndarray:
    """Rasterize the silhouette by splatting projected surface points.

    The splat radius adapts to the model's sampling density and the viewing
    depth so the silhouette stays hole-free; a morphological closing then
    smooths the remainder. Points behind the camera are skipped rather than
    rejected, since truncated or edge-on views are legitimate here.

    Raises:
        ObjectNotVisible: no surface point lands inside the image.
    """
    pts = model.surface_points
    cam = transform_points(pose, pts)
    zs = cam[:, 2]
    vis = zs > DEPTH_CUTOFF
    if not vis.any():
        raise ObjectNotVisible("entire model is behind the camera")
    cam = cam[vis]
    u = intr.fx * cam[:, 0] / cam[:, 2] + intr.cx
    v = intr.fy * cam[:, 1] / cam[:, 2] + intr.cy
    ci = np.round(u).astype(int)
    ri = np.round(v).astype(int)

    # median surface spacing projected at median depth sets the splat size
    nn = cKDTree(pts).query(pts, k=2)[0][:, 1]
    spacing_px = float(np.median(nn)) * max(intr.fx, intr.fy) / float(np.median(cam[:, 2]))
    half = int(np.clip(np.ceil(0.5 * spacing_px), 1, _MAX_SPLAT_HALF))

    mask = np.zeros((intr.height, intr.width), dtype=bool)
    for dr in range(-half, half + 1):
        for dc in range(-half, half + 1):
            rr = ri + dr
            cc = ci + dc
            ok = (rr >= 0) & (rr < intr.height) & (cc >= 0) & (cc < intr.width)
            mask[rr[ok], cc[ok]] = True
    if not mask.any():
        raise ObjectNotVisible("model projects entirely outside the image")
    closed = ndimage.binary_closing(mask, structure=np.ones((3, 3), dtype=bool))
    return (mask | closed).astype(np.uint8)


def occlude_mask(
    mask: np.ndarray, frac: float, rng: np.random.Generator
) -> tuple[np.ndarray, float]:
    """Zero out a random axis-aligned rectangle covering ~frac of the on-pixels.

    The rectangle is centered on a random on-pixel with a random aspect ratio
    in [0.5, 2]; its size is the smallest one whose coverage reaches the
    target, found by bisection on prefix sums. Returns the new mask and the
    fraction actually removed (>= frac up to the rectangle granularity).
    """
    if not 0.0 <= frac:
        raise ValueError("occlusion fraction must be >= 0")
    m = (np.asarray(mask) != 0).astype(np.uint8)
    rows, cols = np.nonzero(m)
    n_on = len(rows)
    if n_on == 0:
        raise ObjectNotVisible("cannot occlude an empty mask")
    target = int(round(min(frac, 1.0) * n_on))
    if target <= 0:
        return m, 0.0
    if frac >= 1.0:
        return np.zeros_like(m), 1.0

    i = int(rng.integers(n_on))
    ar, ac = int(rows[i]), int(cols[i])
    aspect = float(rng.uniform(0.5, 2.0))
    h, w = m.shape
    P = np.zeros((h + 1, w + 1), dtype=np.int64)
    P[1:, 1:] = m.cumsum(axis=0).cumsum(axis=1)

    def count(size: int) -> tuple[int, tuple[int, int, int, int]]:
        # on-pixels inside the clipped rectangle, by prefix-sum inclusion-exclusion
        hh = size
        hw = int(round(aspect * size))
        r0, r1 = max(0, ar - hh), min(h, ar + hh + 1)
        c0, c1 = max(0, ac - hw), min(w, ac + hw + 1)
        n = int(P[r1, c1] - P[r0, c1] - P[r1, c0] + P[r0, c0])
        return n, (r0, r1, c0, c1)

    lo, hi = 0, max(h, w)
    while lo < hi:
        mid = (lo + hi) // 2
        if count(mid)[0] >= target:
            hi = mid
        else:
            lo = mid + 1
    n_removed, (r0, r1, c0, c1) = count(lo)
    out = m.copy()
    out[r0:r1, c0:c1] = 0
    return out, n_removed / n_on


def truncate_scene(
    mask: np.ndarray,
    keypoints2d: np.ndarray,
    intr: CameraIntrinsics,
    cfg: TruncationConfig,
    rng: np.random.Generator,
) -> tuple[np.ndarray, np.ndarray, CameraIntrinsics, dict]:
    """Crop the image at one edge so only a target fraction of the object stays.

    The cut edge is chosen at random among the sides that can hit the
    requested visible band; the other three sides are trimmed by random
    amounts that remove no object pixels (shrinking the canvas like a real
    detection crop would). Keypoint coordinates and the principal point are
    shifted into the new frame, so truncated keypoints get coordinates
    outside [0, width) x [0, height).

    Raises:
        ObjectNotVisible: the mask is already empty.
    """
    m = (np.asarray(mask) != 0).astype(np.uint8)
    total = int(m.sum())
    if total == 0:
        raise ObjectNotVisible("cannot truncate an empty mask")
    h, w = m.shape
    band = cfg.max_visible - cfg.min_visible
    pad = 0.1 * band
    target = float(rng.uniform(cfg.min_visible + pad, cfg.max_visible - pad))

    col_cum = m.sum(axis=0).cumsum()
    row_cum = m.sum(axis=1).cumsum()

    def best_cut(side: str) -> tuple[float, int]:
        # visible fraction as a function of the cut line; returns (frac, cut)
        if side in ("left", "right"):
            cum, extent = col_cum, w
        else:
            cum, extent = row_cum, h
        cuts = np.arange(1, extent)
        if side in ("left", "top"):
            vis = total - cum[cuts - 1]
        else:  # keep [0, cut)
            vis = cum[cuts - 1]
        frac = vis / total
        usable = (vis > 0) & (vis < total)
        if not usable.any():
            return np.inf, -1
        err = np.where(usable, np.abs(frac - target), np.inf)
        j = int(np.argmin(err))
        return float(frac[j]), int(cuts[j])

    sides = [["left", "right", "top", "bottom"][j] for j in rng.permutation(4)]
    chosen = None
    fallback = (np.inf, None)
    for side in sides:
        frac, cut = best_cut(side)
        if cut < 0:
            continue
        gap = abs(frac - target)
        if cfg.min_visible <= frac <= cfg.max_visible:
            chosen = (side, cut, frac)
            break
        if gap < fallback[0]:
            fallback = (gap, (side, cut, frac))
    if chosen is None:
        if fallback[1] is None:
            raise ObjectNotVisible("mask too small to truncate")
        chosen = fallback[1]
    side, cut, achieved = chosen

    x0, y0, x1, y1 = 0, 0, w, h
    if side == "left":
        x0 = cut
    elif side == "right":
        x1 = cut
    elif side == "top":
        y0 = cut
    else:
        y1 = cut

    kept = m[y0:y1, x0:x1]
    rr, cc = np.nonzero(kept)
    # random object-free trims on the three other sides; slacks are measured
    # once in the kept frame so one trim cannot eat into another's room
    left_slack = int(cc.min())
    right_slack = (x1 - x0) - int(cc.max()) - 1
    top_slack = int(rr.min())
    bottom_slack = (y1 - y0) - int(rr.max()) - 1
    if side != "left":
        x0 += int(rng.integers(0, left_slack + 1))
    if side != "right":
        x1 -= int(rng.integers(0, right_slack + 1))
    if side != "top":
        y0 += int(rng.integers(0, top_slack + 1))
    if side != "bottom":
        y1 -= int(rng.integers(0, bottom_slack + 1))

    out_mask = m[y0:y1, x0:x1]
    out_kps = np.asarray(keypoints2d, dtype=float) - np.array([x0, y0], dtype=float)
    out_intr = CameraIntrinsics(
        fx=intr.fx, fy=intr.fy, cx=intr.cx - x0, cy=intr.cy - y0,
        width=x1 - x0, height=y1 - y0,
    )
    meta = {
        "side": side,
        "target_visible": target,
        "achieved_visible": float(achieved),
        "crop": [int(x0), int(y0), int(x1), int(y1)],
    }
    return out_mask, out_kps, out_intr, meta


def synth_scene(
    model: ObjectModel,
    keypoints: KeypointSet,
    intr: CameraIntrinsics,
    sampler: PoseSamplerConfig = PoseSamplerConfig(),
    occlusion_frac: float = 0.0,
    truncation: TruncationConfig | None = None,
    noise: NoiseConfig | None = None,
    seed: int | np.random.SeedSequence = 0,
) -> SceneSample:
    """Build one scene: pose, silhouette, occlusion, truncation, field, noise.

    Four child seeds (pose, occlusion, truncation, noise) are split from
    ``seed`` up front, so scenes with the same seed but different stage
    settings share everything upstream of the difference.

    Raises:
        ObjectNotVisible: the object left no pixels at some stage.
        BehindCamera: a keypoint has non-positive depth (depth_range too
            shallow for the model extent).
    """
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    pose_ss, occ_ss, trunc_ss, noise_ss = ss.spawn(4)

    pose = sample_pose(model, intr, sampler, np.random.default_rng(pose_ss))
    mask = render_mask(intr, pose, model)
    kps2d = project(intr, pose, keypoints.points3d)

    achieved = 0.0
    if occlusion_frac > 0.0:
        mask, achieved = occlude_mask(mask, occlusion_frac, np.random.default_rng(occ_ss))
        if not mask.any():
            raise ObjectNotVisible("occlusion removed the whole object")

    trunc_meta = None
    cur_intr = intr
    if truncation is not None:
        mask, kps2d, cur_intr, trunc_meta = truncate_scene(
            mask, kps2d, intr, truncation, np.random.default_rng(trunc_ss)
        )
        if not mask.any():
            raise ObjectNotVisible("truncation removed the whole object")

    field = gt_vector_field(mask, kps2d)
    if noise is not None and (noise.angular_sigma > 0.0 or noise.outlier_rate > 0.0):
        field = corrupt_field(field, mask, replace(noise, seed=noise_ss))

    return SceneSample(
        intr=cur_intr,
        gt_pose=pose,
        mask=mask,
        field=field,
        keypoints2d=kps2d,
        requested_occlusion=float(occlusion_frac),
        achieved_occlusion=float(achieved),
        truncation=trunc_meta,
        noise=noise,
    )


def save_scene(scene: SceneSample, out_dir) -> None:
    """Write field.pvf, mask.pgm, and scene.json (camera, pose, ground truth)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_field(scene.field, out / "field.pvf")
    save_mask_pgm(scene.mask, out / "mask.pgm")
    doc = {
        "camera": scene.intr.to_dict(),
        "pose": scene.gt_pose.to_dict(),
        "keypoints2d": scene.keypoints2d.tolist(),
        "requested_occlusion": scene.requested_occlusion,
        "achieved_occlusion": scene.achieved_occlusion,
        "truncation": scene.truncation,
        "noise": None
        if scene.noise is None
        else {"angular_sigma": scene.noise.angular_sigma, "outlier_rate": scene.noise.outlier_rate},
    }
    (out / "scene.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
