"""Rigid transforms, pinhole projection, and rotation parameterization.

Conventions used throughout the package:

* World and camera coordinates are right-handed, camera looks down +z.
* A pose maps world points into the camera frame: ``x_cam = R @ x_world + t``.
* Pixel coordinates are ``(u, v) = (column, row)``, in pixels, origin at the
  top-left pixel center. Arrays indexed ``[row, col]`` therefore read ``[v, u]``.
* Projections are never clamped to the image rectangle; callers that care about
  visibility test against ``width``/``height`` themselves.

Points with camera-frame depth ``z <= DEPTH_CUTOFF`` cannot be projected and
raise :class:`~votepose.errors.BehindCamera`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import BehindCamera, InvalidRotation

# Minimum camera-frame depth accepted by project(). Anything at or below this
# is treated as behind the camera rather than risking a near-singular divide.
DEPTH_CUTOFF = 1e-9

_ORTHONORMAL_TOL = 1e-9


def _check_rotation(R: np.ndarray) -> np.ndarray:
    R = np.asarray(R, dtype=float)
    if R.shape != (3, 3):
        raise InvalidRotation(f"rotation must be 3x3, got {R.shape}")
    err = np.abs(R @ R.T - np.eye(3)).max()
    if err > _ORTHONORMAL_TOL:
        raise InvalidRotation(f"R @ R.T deviates from identity by {err:.3e}")
    if np.linalg.det(R) < 0.0:
        raise InvalidRotation("det(R) is negative (reflection, not rotation)")
    return R


@dataclass(frozen=True)
class Pose:
    """Rigid world-to-camera transform. ``rotation`` is validated on construction."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "rotation", _check_rotation(self.rotation))
        t = np.asarray(self.translation, dtype=float).reshape(3)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.eye(3), np.zeros(3))

    def to_dict(self) -> dict:
        return {"R": self.rotation.tolist(), "t": self.translation.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "Pose":
        return cls(np.asarray(d["R"], dtype=float), np.asarray(d["t"], dtype=float))


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole intrinsics. Focal lengths and image size must be positive."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if self.width < 1 or self.height < 1:
            raise ValueError("image size must be at least 1x1")

    def matrix(self) -> np.ndarray:
        return np.array(
            [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]]
        )

    def to_dict(self) -> dict:
        return {
            "fx": self.fx,
            "fy": self.fy,
            "cx": self.cx,
            "cy": self.cy,
            "width": self.width,
            "height": self.height,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CameraIntrinsics":
        return cls(
            fx=float(d["fx"]),
            fy=float(d["fy"]),
            cx=float(d["cx"]),
            cy=float(d["cy"]),
            width=int(d["width"]),
            height=int(d["height"]),
        )


def compose(outer: Pose, inner: Pose) -> Pose:
    """Pose applying ``inner`` first, then ``outer``."""
    return Pose(
        outer.rotation @ inner.rotation,
        outer.rotation @ inner.translation + outer.translation,
    )


def inverse(pose: Pose) -> Pose:
    Rt = pose.rotation.T
    return Pose(Rt, -Rt @ pose.translation)


def transform_points(pose: Pose, points: np.ndarray) -> np.ndarray:
    """Map world points into the camera frame.

    Args:
        pose: world-to-camera transform.
        points: (3,) or (n, 3).

    Returns:
        Array of the same shape as ``points``.
    """
    pts = np.asarray(points, dtype=float)
    single = pts.ndim == 1
    out = np.atleast_2d(pts) @ pose.rotation.T + pose.translation
    return out[0] if single else out


def project(intr: CameraIntrinsics, pose: Pose, points: np.ndarray) -> np.ndarray:
    """Project world points to pixel coordinates ``(u, v)``.

    Args:
        intr: pinhole intrinsics.
        pose: world-to-camera transform.
        points: (3,) or (n, 3) world points.

    Returns:
        (2,) or (n, 2) float pixel coordinates, possibly outside the image.

    Raises:
        BehindCamera: any point has camera-frame depth <= 1e-9.
    """
    cam = transform_points(pose, points)
    single = cam.ndim == 1
    cam = np.atleast_2d(cam)
    z = cam[:, 2]
    if np.any(z <= DEPTH_CUTOFF):
        bad = int(np.argmax(z <= DEPTH_CUTOFF))
        raise BehindCamera(f"point {bad} has depth {z[bad]:.3e} <= {DEPTH_CUTOFF}")
    uv = np.empty((cam.shape[0], 2))
    uv[:, 0] = intr.fx * cam[:, 0] / z + intr.cx
    uv[:, 1] = intr.fy * cam[:, 1] / z + intr.cy
    return uv[0] if single else uv


def skew(w: np.ndarray) -> np.ndarray:
    """Cross-product matrix: skew(w) @ x == np.cross(w, x)."""
    wx, wy, wz = w
    return np.array([[0.0, -wz, wy], [wz, 0.0, -wx], [-wy, wx, 0.0]])


def rotation_exp(w: np.ndarray) -> np.ndarray:
    """Rodrigues exponential: axis-angle vector (3,) to rotation matrix."""
    w = np.asarray(w, dtype=float).reshape(3)
    theta = np.linalg.norm(w)
    if theta < 1e-12:
        # second-order series keeps exactness for tiny steps
        K = skew(w)
        return np.eye(3) + K + 0.5 * (K @ K)
    K = skew(w / theta)
    return np.eye(3) + np.sin(theta) * K + (1.0 - np.cos(theta)) * (K @ K)


def rotation_log(R: np.ndarray) -> np.ndarray:
    """Inverse of rotation_exp. Returns the axis-angle vector with angle in [0, pi]."""
    R = _check_rotation(R)
    cos_theta = np.clip((np.trace(R) - 1.0) / 2.0, -1.0, 1.0)
    theta = np.arccos(cos_theta)
    if theta < 1e-12:
        # near identity the skew part is the answer to first order
        return np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]]) / 2.0
    if np.pi - theta < 1e-6:
        # axis from the symmetric part; sign fixed by the largest component
        A = (R + np.eye(3)) / 2.0
        axis = np.sqrt(np.clip(np.diag(A), 0.0, None))
        k = int(np.argmax(axis))
        if axis[k] > 0:
            axis = A[:, k] / axis[k]
            axis /= np.linalg.norm(axis)
        return theta * axis
    axis = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    return theta * axis / (2.0 * np.sin(theta))


def rotation_angle_between(Ra: np.ndarray, Rb: np.ndarray) -> float:
    """Geodesic angle in radians between two rotations.

    atan2 of the antisymmetric/trace parts rather than arccos of the trace:
    arccos loses ~sqrt(eps) of precision near 0 and pi, which would put a
    5e-8 rad noise floor under comparisons of nearly identical rotations.
    """
    C = Ra.T @ Rb
    sin_theta = np.linalg.norm(C - C.T) / (2.0 * np.sqrt(2.0))
    cos_theta = (np.trace(C) - 1.0) / 2.0
    return float(np.arctan2(sin_theta, cos_theta))
