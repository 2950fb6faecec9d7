"""3D object models, keypoint selection, and a minimal ASCII PLY loader."""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np

from .errors import KTooLarge, PlyParseError, TooFewPoints

# singular-value ratio below which a point cloud counts as flat
COPLANAR_REL_TOL = 1e-6

# above this point count the diameter search reduces to hull vertices first
_DIAMETER_EXACT_LIMIT = 20_000


class KeypointScheme(str, Enum):
    FPS = "fps"
    BBOX = "bbox"


@dataclass(frozen=True)
class ObjectModel:
    """Point-sampled object surface in the object (model) frame."""

    surface_points: np.ndarray
    name: str = "model"

    def __post_init__(self):
        pts = np.asarray(self.surface_points, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise ValueError(f"surface_points must be (n, 3), got {pts.shape}")
        object.__setattr__(self, "surface_points", pts)

    def __len__(self) -> int:
        return len(self.surface_points)

    def centroid(self) -> np.ndarray:
        return self.surface_points.mean(axis=0)

    def is_coplanar(self, rel_tol: float = COPLANAR_REL_TOL) -> bool:
        """True when the cloud is flat within rel_tol (smallest/largest singular value)."""
        pts = self.surface_points
        if len(pts) < 4:
            return True
        s = np.linalg.svd(pts - self.centroid(), compute_uv=False)
        return bool(s[0] == 0.0 or s[2] / s[0] < rel_tol)


@dataclass(frozen=True)
class KeypointSet:
    """Object center plus K selected keypoints, all in the object frame.

    Row 0 of ``points3d`` is always the object center (centroid of the surface
    points); rows 1..K are the keypoints. ``degenerate`` is set when two
    entries coincide, which happens for bounding-box corners of a flat model.
    """

    points3d: np.ndarray
    scheme: KeypointScheme
    degenerate: bool = False

    def __post_init__(self):
        pts = np.asarray(self.points3d, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 3 or len(pts) < 2:
            raise ValueError(f"points3d must be (K+1, 3) with K >= 1, got {pts.shape}")
        object.__setattr__(self, "points3d", pts)
        d = np.linalg.norm(pts[:, None, :] - pts[None, :, :], axis=-1)
        np.fill_diagonal(d, np.inf)
        object.__setattr__(self, "degenerate", bool(self.degenerate or d.min() == 0.0))

    @property
    def k(self) -> int:
        return len(self.points3d) - 1

    def to_dict(self) -> dict:
        return {"scheme": self.scheme.value, "points3d": self.points3d.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "KeypointSet":
        return cls(
            points3d=np.asarray(d["points3d"], dtype=float),
            scheme=KeypointScheme(d["scheme"]),
        )


def save_keypoints(kps: KeypointSet, path) -> None:
    Path(path).write_text(json.dumps(kps.to_dict()) + "\n")


def load_keypoints(path) -> KeypointSet:
    return KeypointSet.from_dict(json.loads(Path(path).read_text()))


def fps_select(model: ObjectModel, k: int) -> KeypointSet:
    """Greedy farthest-point keypoint selection.

    The selected set is seeded with the object center (centroid); each step
    adds the surface point maximizing the minimum distance to everything
    selected so far, ties broken by lowest vertex index. The center itself is
    returned as row 0 but never counts as one of the K keypoints.

    Args:
        model: source point cloud.
        k: number of surface keypoints to select (1 <= k <= len(model)).

    Raises:
        KTooLarge: k exceeds the number of surface points.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    pts = model.surface_points
    if k > len(pts):
        raise KTooLarge(f"k={k} exceeds {len(pts)} surface points")
    center = pts.mean(axis=0)
    min_dist = np.linalg.norm(pts - center, axis=1)
    chosen: list[int] = []
    for _ in range(k):
        idx = int(np.argmax(min_dist))  # argmax takes the first max: lowest index wins ties
        chosen.append(idx)
        min_dist = np.minimum(min_dist, np.linalg.norm(pts - pts[idx], axis=1))
    kps = KeypointSet(np.vstack([center, pts[chosen]]), KeypointScheme.FPS)
    if kps.degenerate:
        raise ValueError("surface points too degenerate for distinct FPS keypoints")
    return kps


def bbox_corners(model: ObjectModel) -> KeypointSet:
    """Axis-aligned bounding-box corners plus the object center (9 points).

    Corner order is fixed: x varies slowest, z fastest, min before max.
    A flat model yields a zero-extent axis and coincident corners; the
    resulting set is flagged degenerate rather than rejected.
    """
    pts = model.surface_points
    lo = pts.min(axis=0)
    hi = pts.max(axis=0)
    corners = np.array(
        [[x, y, z] for x in (lo[0], hi[0]) for y in (lo[1], hi[1]) for z in (lo[2], hi[2])]
    )
    return KeypointSet(np.vstack([pts.mean(axis=0), corners]), KeypointScheme.BBOX)


def model_diameter(model: ObjectModel) -> float:
    """Maximum pairwise distance over the surface points.

    Exact O(n^2) search below _DIAMETER_EXACT_LIMIT points; larger clouds are
    first reduced to their convex hull vertices (the diameter endpoints are
    hull vertices, so this stays exact).
    """
    pts = model.surface_points
    if len(pts) < 2:
        raise TooFewPoints("diameter needs at least 2 points")
    if len(pts) > _DIAMETER_EXACT_LIMIT:
        from scipy.spatial import ConvexHull, QhullError

        try:
            pts = pts[ConvexHull(pts).vertices]
        except QhullError:
            pass  # flat/degenerate cloud: fall through to the exact search
    best = 0.0
    for start in range(0, len(pts), 1024):
        chunk = pts[start : start + 1024]
        d2 = ((chunk[:, None, :] - pts[None, :, :]) ** 2).sum(axis=-1)
        best = max(best, float(d2.max()))
    diameter = float(np.sqrt(best))
    if diameter == 0.0:
        raise ValueError("all points coincide; diameter undefined")
    return diameter


def load_model(path, name: str | None = None) -> ObjectModel:
    """Parse an ASCII PLY file, keeping vertex x/y/z in file order.

    Only the vertex element is consumed; other elements (faces etc.) are
    skipped line by line. Binary PLY is rejected.

    Raises:
        PlyParseError: malformed input, message carries the 1-based line number.
        TooFewPoints: fewer than 4 vertices.
    """
    path = Path(path)
    lines = path.read_text().splitlines()
    if not lines or lines[0].strip() != "ply":
        raise PlyParseError("missing 'ply' magic", line=1)

    elements: list[tuple[str, int, list[str]]] = []  # (name, count, property names)
    fmt_ok = False
    header_end = None
    for i, raw in enumerate(lines[1:], start=2):
        tok = raw.strip().split()
        if not tok or tok[0] in ("comment", "obj_info"):
            continue
        if tok[0] == "format":
            if tok[1:2] != ["ascii"]:
                raise PlyParseError(f"unsupported format {' '.join(tok[1:])!r}", line=i)
            fmt_ok = True
        elif tok[0] == "element":
            if len(tok) != 3:
                raise PlyParseError("malformed element declaration", line=i)
            try:
                count = int(tok[2])
            except ValueError:
                raise PlyParseError(f"bad element count {tok[2]!r}", line=i) from None
            elements.append((tok[1], count, []))
        elif tok[0] == "property":
            if not elements:
                raise PlyParseError("property before any element", line=i)
            # list properties (faces) have no fixed column; record a placeholder
            elements[-1][2].append(tok[-1] if tok[1] != "list" else "<list>")
        elif tok[0] == "end_header":
            header_end = i
            break
        else:
            raise PlyParseError(f"unexpected header keyword {tok[0]!r}", line=i)
    if header_end is None:
        raise PlyParseError("unterminated header", line=len(lines))
    if not fmt_ok:
        raise PlyParseError("missing 'format ascii' declaration", line=header_end)

    vertex_count = None
    points: list[list[float]] = []
    line_no = header_end
    for elem_name, count, props in elements:
        if elem_name == "vertex":
            vertex_count = count
            try:
                cols = [props.index(axis) for axis in ("x", "y", "z")]
            except ValueError:
                raise PlyParseError(
                    "vertex element lacks x/y/z properties", line=header_end
                ) from None
            for _ in range(count):
                line_no += 1
                if line_no > len(lines):
                    raise PlyParseError("unexpected end of file in vertex data", line=len(lines))
                tok = lines[line_no - 1].split()
                if len(tok) < len(props):
                    raise PlyParseError("short vertex row", line=line_no)
                try:
                    points.append([float(tok[c]) for c in cols])
                except ValueError:
                    raise PlyParseError("non-numeric vertex coordinate", line=line_no) from None
        else:
            line_no += count  # skip this element's data rows
    if vertex_count is None:
        raise PlyParseError("no vertex element declared", line=header_end)
    if vertex_count < 4:
        raise TooFewPoints(f"{vertex_count} vertices; need at least 4")
    return ObjectModel(np.asarray(points), name=name or path.stem)


def save_ply(points: np.ndarray, path) -> None:
    """Write points as a minimal ASCII PLY vertex list."""
    pts = np.asarray(points, dtype=float)
    rows = "\n".join(f"{x:.10g} {y:.10g} {z:.10g}" for x, y, z in pts)
    Path(path).write_text(
        "ply\nformat ascii 1.0\n"
        f"element vertex {len(pts)}\n"
        "property float x\nproperty float y\nproperty float z\n"
        "end_header\n" + rows + "\n"
    )
