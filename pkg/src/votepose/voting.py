"""Keypoint localization by pairwise ray-intersection voting.

For one keypoint channel: sample pairs of on-object pixels, intersect their
direction rays to get location hypotheses, weight each hypothesis by the
number of pixels whose direction agrees with it within a cosine threshold,
then summarize the weighted hypothesis cloud by its mean and covariance.
Multi-instance scenes are handled by mode-seeking over center hypotheses.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from numba import njit

from .errors import DimensionMismatch, NoValidHypotheses, TooFewPixels, ZeroTotalWeight
from .field import on_object

# a pair of rays is degenerate when |cross| <= this factor times the norms
PARALLEL_TOL = 1e-6


@dataclass(frozen=True)
class VotingConfig:
    n_hypotheses: int = 128
    inlier_threshold: float = 0.99
    seed: int | np.random.SeedSequence = 0
    cov_epsilon: float = 1e-6

    def __post_init__(self):
        if self.n_hypotheses < 1:
            raise ValueError("n_hypotheses must be >= 1")
        if not -1.0 <= self.inlier_threshold <= 1.0:
            raise ValueError("inlier_threshold must be a cosine in [-1, 1]")
        if self.cov_epsilon < 0:
            raise ValueError("cov_epsilon must be >= 0")


@dataclass(frozen=True)
class KeypointDistribution:
    """Voting outcome for one keypoint: weighted hypotheses and their moments."""

    mean: np.ndarray
    covariance: np.ndarray
    hypotheses: np.ndarray
    weights: np.ndarray
    keypoint_index: int = -1

    @property
    def n_hyps(self) -> int:
        return len(self.hypotheses)

    def to_dict(self) -> dict:
        return {
            "k": self.keypoint_index,
            "mean": self.mean.tolist(),
            "cov": self.covariance.tolist(),
            "n_hyps": self.n_hyps,
        }


@dataclass(frozen=True)
class Instance:
    """One detected object instance: center mode and its pixel support."""

    center: np.ndarray
    total_weight: float
    pixels: np.ndarray  # (H, W) bool


def _intersect_batch(p1, v1, p2, v2):
    """Vectorized forward ray intersection.

    Solves p1 + t*v1 = p2 + s*v2 row-wise; a row is valid when the rays are
    non-parallel (|cross| > PARALLEL_TOL * |v1| * |v2|) and both t > 0, s > 0.

    Returns:
        (points (m, 2), valid (m,) bool); points rows are garbage where invalid.
    """
    cross = v1[:, 0] * v2[:, 1] - v1[:, 1] * v2[:, 0]
    limit = PARALLEL_TOL * np.linalg.norm(v1, axis=1) * np.linalg.norm(v2, axis=1)
    d = p2 - p1
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (d[:, 0] * v2[:, 1] - d[:, 1] * v2[:, 0]) / cross
        s = (d[:, 0] * v1[:, 1] - d[:, 1] * v1[:, 0]) / cross
        points = p1 + t[:, None] * v1  # garbage rows masked by valid below
    valid = (np.abs(cross) > limit) & (t > 0.0) & (s > 0.0)
    return points, valid


def intersect_rays(p1, v1, p2, v2) -> np.ndarray | None:
    """Forward intersection of two pixel rays, or None when degenerate.

    Directions point toward the keypoint, so only intersections ahead of both
    pixels (t > 0 and s > 0) are geometrically consistent.
    """
    args = [np.asarray(a, dtype=float).reshape(1, 2) for a in (p1, v1, p2, v2)]
    points, valid = _intersect_batch(*args)
    return points[0] if valid[0] else None


def _pixel_pool(mask, field, k):
    """On-object pixels with a usable (nonzero) direction for channel k.

    Returns (positions (M, 2) float64 in (x, y), vectors (M, 2)), ordered
    row-major — the order the hypothesis sampler indexes into.
    """
    on = on_object(mask)
    f = np.asarray(field, dtype=float)
    if f.shape[:2] != on.shape:
        raise DimensionMismatch(f"field {f.shape[:2]} does not match mask {on.shape}")
    rows, cols = np.nonzero(on)
    vecs = f[rows, cols, k, :]
    keep = (vecs[:, 0] != 0.0) | (vecs[:, 1] != 0.0)
    pix = np.stack([cols, rows], axis=1).astype(float)[keep]
    return pix, vecs[keep]


def generate_hypotheses(mask, field, k: int, cfg: VotingConfig) -> np.ndarray:
    """Sample keypoint location hypotheses for channel k.

    Candidate pixel-index pairs are drawn in one bulk call,
    ``rng.integers(0, n_pixels, size=(10 * N, 2))`` with
    ``rng = np.random.default_rng(cfg.seed)``, then scanned in order; pairs
    that repeat a pixel or intersect degenerately (parallel or backward rays)
    are skipped, and scanning stops after N valid hypotheses. Pixels whose
    direction is the zero vector never enter the pool.

    Returns:
        (n, 2) float64 hypothesis locations, n <= cfg.n_hypotheses.

    Raises:
        TooFewPixels: fewer than 2 usable on-object pixels.
        NoValidHypotheses: every sampled pair was degenerate.
    """
    pix, vecs = _pixel_pool(mask, field, k)
    if len(pix) < 2:
        raise TooFewPixels(f"{len(pix)} usable pixels for keypoint {k}; need >= 2")
    rng = np.random.default_rng(cfg.seed)
    pairs = rng.integers(0, len(pix), size=(10 * cfg.n_hypotheses, 2))
    distinct = pairs[:, 0] != pairs[:, 1]
    points, valid = _intersect_batch(
        pix[pairs[:, 0]], vecs[pairs[:, 0]], pix[pairs[:, 1]], vecs[pairs[:, 1]]
    )
    hyps = points[distinct & valid][: cfg.n_hypotheses]
    if len(hyps) == 0:
        raise NoValidHypotheses(f"all {len(pairs)} sampled pairs degenerate for keypoint {k}")
    return hyps


@njit(cache=True, nogil=True)
def _vote_counts(px, py, vx, vy, vnorm2, hx, hy, theta):  # pragma: no cover - jit
    n_h = hx.shape[0]
    n_p = px.shape[0]
    out = np.zeros(n_h, np.int64)
    t2 = theta * theta
    nonneg = theta >= 0.0
    for i in range(n_h):
        c = 0
        for j in range(n_p):
            dx = hx[i] - px[j]
            dy = hy[i] - py[j]
            d2 = dx * dx + dy * dy
            if d2 <= 0.0 or vnorm2[j] <= 0.0:
                continue  # pixel coincides with the hypothesis, or zero vector
            dot = dx * vx[j] + dy * vy[j]
            if nonneg:
                if dot >= 0.0 and dot * dot >= t2 * d2 * vnorm2[j]:
                    c += 1
            else:
                if dot >= 0.0 or dot * dot <= t2 * d2 * vnorm2[j]:
                    c += 1
        out[i] = c
    return out


def score_hypotheses(mask, field, k: int, hyps, theta: float = 0.99) -> np.ndarray:
    """Vote weights: for each hypothesis, the count of on-object pixels whose
    direction points at it within the cosine threshold.

    The test is cos(angle(h - p, v_k(p))) >= theta, evaluated in squared form
    so predicted vectors need not be unit length; pixels coincident with the
    hypothesis or carrying a zero vector are skipped.

    Returns:
        (n,) int64 weights, one per hypothesis.
    """
    on = on_object(mask)
    f = np.asarray(field, dtype=float)
    h = np.asarray(hyps, dtype=float).reshape(-1, 2)
    rows, cols = np.nonzero(on)
    vecs = f[rows, cols, k, :]
    vnorm2 = vecs[:, 0] ** 2 + vecs[:, 1] ** 2
    return _vote_counts(
        np.ascontiguousarray(cols.astype(np.float64)),
        np.ascontiguousarray(rows.astype(np.float64)),
        np.ascontiguousarray(vecs[:, 0]),
        np.ascontiguousarray(vecs[:, 1]),
        np.ascontiguousarray(vnorm2),
        np.ascontiguousarray(h[:, 0]),
        np.ascontiguousarray(h[:, 1]),
        float(theta),
    )


def estimate_distribution(
    hyps, weights, cov_epsilon: float = 1e-6, keypoint_index: int = -1
) -> KeypointDistribution:
    """Weighted mean and weighted population covariance of the hypotheses,
    regularized by cov_epsilon * I so the covariance is always invertible.

    Raises:
        ZeroTotalWeight: no hypothesis received a vote.
    """
    h = np.asarray(hyps, dtype=float).reshape(-1, 2)
    w = np.asarray(weights, dtype=float).reshape(-1)
    if h.shape[0] != w.shape[0]:
        raise ValueError(f"{h.shape[0]} hypotheses vs {w.shape[0]} weights")
    total = w.sum()
    if total <= 0.0:
        raise ZeroTotalWeight("all voting weights are zero; threshold too strict")
    mean = (w[:, None] * h).sum(axis=0) / total
    d = h - mean
    cov = (w[:, None, None] * (d[:, :, None] * d[:, None, :])).sum(axis=0) / total
    cov = 0.5 * (cov + cov.T) + cov_epsilon * np.eye(2)
    return KeypointDistribution(
        mean=mean, covariance=cov, hypotheses=h, weights=w, keypoint_index=keypoint_index
    )


def localize_keypoints(mask, field, cfg: VotingConfig) -> list[KeypointDistribution]:
    """Run the full voting pipeline for every keypoint channel in the field.

    Each channel gets an independent RNG stream spawned from cfg.seed by
    channel index, so results do not depend on which channels are present.
    """
    f = np.asarray(field, dtype=float)
    n_channels = f.shape[2]
    base = cfg.seed if isinstance(cfg.seed, np.random.SeedSequence) else np.random.SeedSequence(cfg.seed)
    children = base.spawn(n_channels)
    out = []
    for k in range(n_channels):
        k_cfg = replace(cfg, seed=children[k])
        hyps = generate_hypotheses(mask, f, k, k_cfg)
        weights = score_hypotheses(mask, f, k, hyps, cfg.inlier_threshold)
        out.append(
            estimate_distribution(hyps, weights, cfg.cov_epsilon, keypoint_index=k)
        )
    return out


def _mean_shift_modes(points, weights, bandwidth, max_iter=500, tol=1e-8):
    """Flat-kernel weighted mean-shift started from every point.

    Returns the converged position for each starting point.
    """
    modes = np.empty_like(points)
    bw2 = bandwidth * bandwidth
    for i in range(len(points)):
        x = points[i]
        for _ in range(max_iter):
            near = ((points - x) ** 2).sum(axis=1) <= bw2
            wn = weights[near]
            x_new = (points[near] * wn[:, None]).sum(axis=0) / wn.sum()
            if ((x_new - x) ** 2).sum() < tol * tol:
                x = x_new
                break
            x = x_new
        modes[i] = x
    return modes


def find_instances(center_hyps, weights, mask, center_vectors, bandwidth: float = 20.0) -> list[Instance]:
    """Cluster center hypotheses into instance centers and split the mask.

    Weighted flat-kernel mean-shift over the positively-weighted hypotheses;
    converged modes closer than the bandwidth are merged, the heavier mode
    keeping its position. Every on-object pixel is then assigned to the mode
    its direction ray passes closest to (forward along the ray; pixels with a
    zero direction stay unassigned).

    Args:
        center_hyps: (n, 2) hypothesis locations for the center channel.
        weights: (n,) vote weights.
        mask: (H, W) labels.
        center_vectors: (H, W, 2) direction slice for the center channel.
        bandwidth: flat-kernel radius in pixels.

    Returns:
        Instances sorted by descending total weight.
    """
    h = np.asarray(center_hyps, dtype=float).reshape(-1, 2)
    w = np.asarray(weights, dtype=float).reshape(-1)
    on = on_object(mask)
    active = w > 0.0
    if not active.any():
        return []
    pts, pw = h[active], w[active]
    modes = _mean_shift_modes(pts, pw, bandwidth)

    # group co-converged modes (same basin), accumulating basin weight
    groups: list[list] = []  # [position, weight]
    for i in range(len(modes)):
        for g in groups:
            if ((modes[i] - g[0]) ** 2).sum() <= 1e-6:
                g[1] += pw[i]
                break
        else:
            groups.append([modes[i].copy(), float(pw[i])])

    # merge groups closer than the bandwidth; heavier group keeps its position
    groups.sort(key=lambda g: (-g[1], g[0][0], g[0][1]))
    kept: list[list] = []
    for g in groups:
        dists = [((g[0] - kg[0]) ** 2).sum() for kg in kept]
        if dists and min(dists) < bandwidth * bandwidth:
            kept[int(np.argmin(dists))][1] += g[1]
        else:
            kept.append(g)
    kept.sort(key=lambda g: (-g[1], g[0][0], g[0][1]))
    centers = np.array([g[0] for g in kept])

    # assign each on-object pixel to the center nearest its direction ray
    rows, cols = np.nonzero(on)
    vecs = np.asarray(center_vectors, dtype=float)[rows, cols]
    norms = np.hypot(vecs[:, 0], vecs[:, 1])
    usable = norms > 0.0
    pix = np.stack([cols, rows], axis=1).astype(float)
    unit = np.zeros_like(vecs)
    unit[usable] = vecs[usable] / norms[usable, None]
    dist2 = np.full((len(pix), len(centers)), np.inf)
    for ci, c in enumerate(centers):
        rel = c - pix
        t = np.clip((rel * unit).sum(axis=1), 0.0, None)
        closest = pix + t[:, None] * unit
        dist2[:, ci] = ((c - closest) ** 2).sum(axis=1)
    dist2[~usable] = np.inf
    assign = np.argmin(dist2, axis=1)

    instances = []
    for ci, (pos, weight) in enumerate(kept):
        pixmask = np.zeros(on.shape, dtype=bool)
        sel = usable & (assign == ci)
        pixmask[rows[sel], cols[sel]] = True
        instances.append(Instance(center=pos, total_weight=weight, pixels=pixmask))
    return instances
