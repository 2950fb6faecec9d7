"""Per-pixel direction fields toward keypoints: construction, corruption, loss, I/O.

Array conventions: a mask is an (H, W) integer label image, 0 = background; a
field is (H, W, K, 2) float64 whose last axis holds (vx, vy) in pixel axes
(x = column, y = row). Pixel centers sit at exact integer coordinates, so the
pixel at mask[r, c] is the point (c, r).

A pixel exactly coincident with a keypoint has no defined direction and
carries the zero vector; corruption leaves such zeros untouched and the voting
stage skips them.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DimensionMismatch, FileFormatError

FIELD_MAGIC = b"PVF1"


@dataclass(frozen=True)
class NoiseConfig:
    """Synthetic stand-in for prediction error: angular jitter plus outliers."""

    angular_sigma: float = 0.0
    outlier_rate: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.angular_sigma < 0:
            raise ValueError("angular_sigma must be >= 0")
        if not 0.0 <= self.outlier_rate <= 1.0:
            raise ValueError("outlier_rate must be in [0, 1]")


def on_object(mask) -> np.ndarray:
    """Boolean (H, W) view of a label mask: anything nonzero is on-object."""
    m = np.asarray(mask)
    if m.ndim != 2:
        raise DimensionMismatch(f"mask must be 2-D, got shape {m.shape}")
    return m != 0


def _check_field(field) -> np.ndarray:
    f = np.asarray(field, dtype=float)
    if f.ndim != 4 or f.shape[3] != 2:
        raise DimensionMismatch(f"field must be (H, W, K, 2), got {f.shape}")
    return f


def _check_pair(field, mask) -> tuple[np.ndarray, np.ndarray]:
    f = _check_field(field)
    m = on_object(mask)
    if f.shape[:2] != m.shape:
        raise DimensionMismatch(f"field {f.shape[:2]} vs mask {m.shape}")
    return f, m


def gt_vector_field(mask, keypoints2d) -> np.ndarray:
    """Unit directions from every on-object pixel toward each keypoint.

    Keypoints may lie anywhere, including far outside the image. Background
    pixels and pixels exactly on a keypoint get (0, 0).

    Args:
        mask: (H, W) labels, 0 = background.
        keypoints2d: (K, 2) keypoint positions in (x, y) pixel coordinates.

    Returns:
        (H, W, K, 2) float64 field.
    """
    on = on_object(mask)
    kps = np.asarray(keypoints2d, dtype=float)
    if kps.ndim != 2 or kps.shape[1] != 2:
        raise DimensionMismatch(f"keypoints2d must be (K, 2), got {kps.shape}")
    h, w = on.shape
    field = np.zeros((h, w, len(kps), 2))
    rows, cols = np.nonzero(on)
    if rows.size == 0:
        return field
    pix = np.stack([cols, rows], axis=1).astype(float)  # (M, 2) as (x, y)
    diff = kps[None, :, :] - pix[:, None, :]  # (M, K, 2)
    norm = np.linalg.norm(diff, axis=-1)
    out = np.zeros_like(diff)
    np.divide(diff, norm[..., None], out=out, where=norm[..., None] > 0.0)
    field[rows, cols] = out
    return field


def corrupt_field(field, mask, cfg: NoiseConfig) -> np.ndarray:
    """Rotate each on-object direction by N(0, sigma^2); replace a fraction with
    uniform random directions.

    Deterministic for a fixed cfg.seed: the generator is split per image row
    (SeedSequence spawn key = row index), and within a row the draw order is
    rotation angles, outlier selection, outlier angles. Zero vectors stay zero.
    """
    f, on = _check_pair(field, mask)
    out = f.copy()
    if cfg.angular_sigma == 0.0 and cfg.outlier_rate == 0.0:
        return out
    seed = cfg.seed if isinstance(cfg.seed, np.random.SeedSequence) else np.random.SeedSequence(cfg.seed)
    row_seeds = seed.spawn(out.shape[0])
    for r in range(out.shape[0]):
        cols = np.nonzero(on[r])[0]
        if cols.size == 0:
            continue
        rng = np.random.default_rng(row_seeds[r])
        v = out[r, cols]  # (m, K, 2)
        vx, vy = v[..., 0], v[..., 1]
        ang = rng.normal(0.0, cfg.angular_sigma, size=vx.shape)
        c, s = np.cos(ang), np.sin(ang)
        nx = c * vx - s * vy
        ny = s * vx + c * vy
        if cfg.outlier_rate > 0.0:
            repl = rng.random(size=vx.shape) < cfg.outlier_rate
            phi = rng.uniform(0.0, 2.0 * np.pi, size=vx.shape)
            nx = np.where(repl, np.cos(phi), nx)
            ny = np.where(repl, np.sin(phi), ny)
        nonzero = (vx != 0.0) | (vy != 0.0)
        out[r, cols, :, 0] = np.where(nonzero, nx, 0.0)
        out[r, cols, :, 1] = np.where(nonzero, ny, 0.0)
    return out


def smooth_l1_loss(pred, gt, mask) -> float:
    """Smooth-L1 between two fields, summed over keypoints, on-object pixels,
    and the x/y components separately: 0.5*d^2 below |d| = 1, |d| - 0.5 above."""
    p = _check_field(pred)
    g = _check_field(gt)
    if p.shape != g.shape:
        raise DimensionMismatch(f"pred {p.shape} vs gt {g.shape}")
    _, on = _check_pair(p, mask)
    d = (p - g)[on]
    a = np.abs(d)
    terms = np.where(a < 1.0, 0.5 * d * d, a - 0.5)
    return float(terms.sum())


def save_field(field, path) -> None:
    """Binary dump: 'PVF1' magic, u32 width/height/K (little-endian), then
    width*height*K*2 float32, row-major with keypoint index varying fastest."""
    f = _check_field(field)
    h, w, k, _ = f.shape
    header = FIELD_MAGIC + struct.pack("<III", w, h, k)
    Path(path).write_bytes(header + f.astype("<f4").tobytes(order="C"))


def load_field(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if len(data) < 16 or data[:4] != FIELD_MAGIC:
        raise FileFormatError(f"{path}: not a PVF1 field dump")
    w, h, k = struct.unpack("<III", data[4:16])
    n = w * h * k * 2
    if len(data) != 16 + 4 * n:
        raise FileFormatError(
            f"{path}: payload is {len(data) - 16} bytes, expected {4 * n}"
        )
    arr = np.frombuffer(data, dtype="<f4", count=n, offset=16)
    return arr.reshape(h, w, k, 2).astype(np.float64)


def save_mask_pgm(mask, path) -> None:
    """Write a label mask as binary PGM (P5, maxval 255)."""
    m = np.asarray(mask)
    if m.ndim != 2:
        raise DimensionMismatch(f"mask must be 2-D, got {m.shape}")
    if m.size and (m.min() < 0 or m.max() > 255):
        raise ValueError("labels must fit in 0..255 for PGM output")
    h, w = m.shape
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode() + m.astype(np.uint8).tobytes())


def load_mask_pgm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    tokens = []
    i = 0
    while len(tokens) < 4:
        while i < len(data) and data[i : i + 1].isspace():
            i += 1
        if i < len(data) and data[i : i + 1] == b"#":
            while i < len(data) and data[i] != 0x0A:
                i += 1
            continue
        j = i
        while j < len(data) and not data[j : j + 1].isspace():
            j += 1
        if j == i:
            raise FileFormatError(f"{path}: truncated PGM header")
        tokens.append(data[i:j])
        i = j
    if tokens[0] != b"P5":
        raise FileFormatError(f"{path}: not a P5 PGM")
    try:
        w, h, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    except ValueError:
        raise FileFormatError(f"{path}: non-numeric PGM header") from None
    if maxval != 255:
        raise FileFormatError(f"{path}: unsupported maxval {maxval}")
    i += 1  # single whitespace byte after maxval
    raster = data[i : i + w * h]
    if len(raster) != w * h:
        raise FileFormatError(f"{path}: raster is {len(raster)} bytes, expected {w * h}")
    return np.frombuffer(raster, dtype=np.uint8).reshape(h, w).copy()
