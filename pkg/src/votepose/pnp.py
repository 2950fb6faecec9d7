"""Pose solving from keypoint distributions.

Initialization follows the EPnP recipe (control points, barycentric
coordinates, null space of the projection constraints, beta-case selection)
restricted to the four correspondences with the smallest covariance traces;
refinement runs Levenberg-Marquardt on covariance-whitened reprojection
residuals, so the minimized objective is the sum of squared Mahalanobis
distances between projected keypoints and their voted means.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations

import numpy as np

from .errors import BehindCamera, DegenerateConfiguration, TooFewPoints
from .geometry import DEPTH_CUTOFF, CameraIntrinsics, Pose, project, rotation_exp, skew
from .voting import KeypointDistribution

_COLLINEAR_TOL = 1e-9
_PLANAR_TOL = 1e-6


@dataclass(frozen=True)
class Correspondence:
    """A 3D keypoint paired with its voted 2D distribution."""

    point3d: np.ndarray
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "point3d", np.asarray(self.point3d, dtype=float).reshape(3))
        object.__setattr__(self, "mean", np.asarray(self.mean, dtype=float).reshape(2))
        object.__setattr__(self, "cov", np.asarray(self.cov, dtype=float).reshape(2, 2))

    @classmethod
    def from_distribution(cls, point3d, dist: KeypointDistribution) -> "Correspondence":
        return cls(point3d, dist.mean, dist.covariance)


@dataclass(frozen=True)
class PnPResult:
    pose: Pose
    final_cost: float
    iterations: int
    converged: bool

    def to_dict(self) -> dict:
        return {
            "R": self.pose.rotation.tolist(),
            "t": self.pose.translation.tolist(),
            "cost": self.final_cost,
            "iters": self.iterations,
            "converged": self.converged,
        }


def make_correspondences(points3d, dists: list[KeypointDistribution]) -> list[Correspondence]:
    """Pair keypoint rows with their voting distributions, index by index."""
    pts = np.asarray(points3d, dtype=float)
    if len(pts) != len(dists):
        raise ValueError(f"{len(pts)} points vs {len(dists)} distributions")
    return [Correspondence.from_distribution(pts[i], d) for i, d in enumerate(dists)]


def _unpack(corrs):
    X = np.array([c.point3d for c in corrs])
    mu = np.array([c.mean for c in corrs])
    covs = np.array([c.cov for c in corrs])
    return X, mu, covs


def _select_init_indices(covs: np.ndarray, count: int = 4) -> np.ndarray:
    """Indices of the `count` smallest-trace covariances, ties by index."""
    traces = covs[:, 0, 0] + covs[:, 1, 1]
    return np.argsort(traces, kind="stable")[:count]


# ---------------------------------------------------------------------------
# EPnP initialization


def _rigid_align(A: np.ndarray, B: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Least-squares rigid transform with B ~ R @ A + t (no scaling)."""
    ca, cb = A.mean(axis=0), B.mean(axis=0)
    H = (A - ca).T @ (B - cb)
    U, _, Vt = np.linalg.svd(H)
    D = np.diag([1.0, 1.0, float(np.sign(np.linalg.det(Vt.T @ U.T)))])
    R = Vt.T @ D @ U.T
    return R, cb - R @ ca


def _control_points(X: np.ndarray, planar: bool) -> np.ndarray:
    """Centroid plus principal axes scaled to the cloud's spread."""
    c0 = X.mean(axis=0)
    _, s, vt = np.linalg.svd(X - c0, full_matrices=False)
    axes = vt * (s / np.sqrt(len(X)))[:, None]
    n_axes = 2 if planar else 3
    return np.vstack([c0, c0 + axes[:n_axes]])


def _barycentric(ctrl: np.ndarray, X: np.ndarray) -> np.ndarray:
    """Coefficients alpha with X = alphas @ ctrl and rows summing to 1."""
    m = len(ctrl)
    A = np.vstack([ctrl.T, np.ones(m)])  # (4, m)
    B = np.vstack([X.T, np.ones(len(X))])  # (4, n)
    if m == 4:
        return np.linalg.solve(A, B).T
    sol, *_ = np.linalg.lstsq(A, B, rcond=None)
    return sol.T


def _build_M(alphas: np.ndarray, uv: np.ndarray, intr: CameraIntrinsics) -> np.ndarray:
    n, m = alphas.shape
    M = np.zeros((2 * n, 3 * m))
    for j in range(m):
        a = alphas[:, j]
        M[0::2, 3 * j] = a * intr.fx
        M[0::2, 3 * j + 2] = a * (intr.cx - uv[:, 0])
        M[1::2, 3 * j + 1] = a * intr.fy
        M[1::2, 3 * j + 2] = a * (intr.cy - uv[:, 1])
    return M


def _beta_cases(D: np.ndarray, rho: np.ndarray, n_kernel: int) -> list[np.ndarray]:
    """Initial beta vectors from the standard linearized cases N=1..3.

    D[p, m] holds the control-point difference of kernel vector m on pair p,
    rho the squared world distances; the quadratic distance constraints are
    linear in the beta products, solved here case by case.
    """
    dots = np.einsum("pmd,pnd->pmn", D, D)  # pairwise kernel-segment dots per pair
    cases = []

    b1 = np.zeros(n_kernel)
    b1[0] = 1.0  # N=1: direction only; the scale step fixes magnitude
    cases.append(b1)

    # N=2 over [b1^2, b1*b2, b2^2]
    L2 = np.stack([dots[:, 0, 0], 2.0 * dots[:, 0, 1], dots[:, 1, 1]], axis=1)
    y, *_ = np.linalg.lstsq(L2, rho, rcond=None)
    b2 = np.zeros(n_kernel)
    b2[0] = np.sqrt(abs(y[0]))
    b2[1] = np.copysign(np.sqrt(abs(y[2])), y[1])
    cases.append(b2)

    if n_kernel >= 3 and len(rho) >= 6:
        # N=3 over [b1^2, b1b2, b1b3, b2^2, b2b3, b3^2]
        L3 = np.stack(
            [
                dots[:, 0, 0],
                2.0 * dots[:, 0, 1],
                2.0 * dots[:, 0, 2],
                dots[:, 1, 1],
                2.0 * dots[:, 1, 2],
                dots[:, 2, 2],
            ],
            axis=1,
        )
        y, *_ = np.linalg.lstsq(L3, rho, rcond=None)
        b3 = np.zeros(n_kernel)
        b3[0] = np.sqrt(abs(y[0]))
        b3[1] = np.copysign(np.sqrt(abs(y[3])), y[1])
        b3[2] = np.copysign(np.sqrt(abs(y[5])), y[2])
        cases.append(b3)
    return cases


def _gauss_newton_betas(D: np.ndarray, rho: np.ndarray, beta: np.ndarray, iters: int = 50) -> np.ndarray:
    """Polish betas on the distance constraints ||sum_m b_m D[p,m]||^2 = rho_p."""
    b = beta.copy()
    for _ in range(iters):
        seg = np.einsum("m,pmd->pd", b, D)
        f = (seg**2).sum(axis=1) - rho
        J = 2.0 * np.einsum("pd,pmd->pm", seg, D)
        step, *_ = np.linalg.lstsq(J, -f, rcond=None)
        b = b + step
        if np.abs(step).max() <= 1e-14 * (1.0 + np.abs(b).max()):
            break
    return b


def _epnp_solve(X: np.ndarray, uv: np.ndarray, intr: CameraIntrinsics) -> Pose:
    """EPnP on explicit 3D points and 2D observations (n >= 4).

    Raises:
        DegenerateConfiguration: collinear 3D points.
    """
    n = len(X)
    s = np.linalg.svd(X - X.mean(axis=0), compute_uv=False)
    if s[0] == 0.0 or s[1] / s[0] < _COLLINEAR_TOL:
        raise DegenerateConfiguration("3D points are collinear")
    planar = s[2] / s[0] < _PLANAR_TOL

    ctrl_w = _control_points(X, planar)
    m = len(ctrl_w)  # 4 control points, or 3 for flat clouds
    alphas = _barycentric(ctrl_w, X)
    M = _build_M(alphas, uv, intr)
    _, vecs = np.linalg.eigh(M.T @ M)
    n_kernel = 4 if m == 4 else 3
    V = vecs[:, :n_kernel]  # ascending eigenvalues: near-null space first

    pairs = list(combinations(range(m), 2))
    D = np.empty((len(pairs), n_kernel, 3))
    for p, (i, j) in enumerate(pairs):
        D[p] = (V[3 * i : 3 * i + 3] - V[3 * j : 3 * j + 3]).T
    rho = np.array([((ctrl_w[i] - ctrl_w[j]) ** 2).sum() for i, j in pairs])

    best: tuple[int, float, Pose | None] = (n + 1, np.inf, None)
    for beta0 in _beta_cases(D, rho, n_kernel):
        beta = _gauss_newton_betas(D, rho, beta0)
        Cc = (V @ beta).reshape(m, 3)
        dc = np.array([np.linalg.norm(Cc[i] - Cc[j]) for i, j in pairs])
        den = (dc**2).sum()
        if den <= 0.0:
            continue
        Cc = Cc * ((dc * np.sqrt(rho)).sum() / den)
        Pc = alphas @ Cc
        if 2 * int((Pc[:, 2] < 0.0).sum()) > n:
            Pc = -Pc
        R, t = _rigid_align(X, Pc)
        cam = X @ R.T + t
        ok = cam[:, 2] > DEPTH_CUTOFF
        behind = int(n - ok.sum())
        if ok.any():
            pr = np.empty((int(ok.sum()), 2))
            pr[:, 0] = intr.fx * cam[ok, 0] / cam[ok, 2] + intr.cx
            pr[:, 1] = intr.fy * cam[ok, 1] / cam[ok, 2] + intr.cy
            err = float(np.linalg.norm(pr - uv[ok], axis=1).mean())
        else:
            err = np.inf
        if (behind, err) < best[:2]:
            best = (behind, err, Pose(R, t))
    if best[2] is None:
        raise DegenerateConfiguration("no usable EPnP candidate")
    return best[2]


def epnp_pose(points3d, points2d, intr: CameraIntrinsics) -> Pose:
    """Plain EPnP over explicit 3D-2D pairs, all points weighted equally.

    Raises:
        TooFewPoints: fewer than 4 pairs.
        DegenerateConfiguration: collinear 3D points.
    """
    X = np.asarray(points3d, dtype=float).reshape(-1, 3)
    uv = np.asarray(points2d, dtype=float).reshape(-1, 2)
    if len(X) != len(uv):
        raise ValueError(f"{len(X)} 3D points vs {len(uv)} observations")
    if len(X) < 4:
        raise TooFewPoints(f"EPnP needs >= 4 points, got {len(X)}")
    return _epnp_solve(X, uv, intr)


def epnp_init(corrs: list[Correspondence], intr: CameraIntrinsics) -> Pose:
    """Closed-form initialization from the 4 lowest-variance keypoints.

    When more than 4 correspondences are given, exactly the 4 whose
    covariance traces are smallest are used (ties broken by index); the rest
    participate only in refinement.

    Raises:
        TooFewPoints: fewer than 4 correspondences.
        DegenerateConfiguration: the selected points are collinear.
    """
    if len(corrs) < 4:
        raise TooFewPoints(f"PnP needs >= 4 correspondences, got {len(corrs)}")
    X, mu, covs = _unpack(corrs)
    idx = _select_init_indices(covs)
    return _epnp_solve(X[idx], mu[idx], intr)


# ---------------------------------------------------------------------------
# Mahalanobis objective and LM refinement


def mahalanobis_cost(pose: Pose, corrs: list[Correspondence], intr: CameraIntrinsics) -> float:
    """Sum over keypoints of (proj - mean)^T cov^-1 (proj - mean).

    Raises:
        BehindCamera: any keypoint has non-positive depth under the pose.
    """
    X, mu, covs = _unpack(corrs)
    r = project(intr, pose, X) - mu
    sol = np.linalg.solve(covs, r[:, :, None])[:, :, 0]
    return float((r * sol).sum())


def _whiten_rows(L: np.ndarray, rows: np.ndarray) -> np.ndarray:
    """Solve L y = rows for batched 2x2 lower-triangular L."""
    y0 = rows[:, 0] / L[:, 0, 0]
    y1 = (rows[:, 1] - L[:, 1, 0] * y0) / L[:, 1, 1]
    return np.stack([y0, y1], axis=1)


def _lm_evaluate(R, t, X, mu, L, intr, want_jacobian):
    """Whitened residuals (n, 2) and optionally the (n, 2, 6) Jacobian
    with respect to the local step (rotation increment, translation increment);
    None when any point falls at or behind the depth cutoff."""
    cam = X @ R.T + t
    z = cam[:, 2]
    if np.any(z <= DEPTH_CUTOFF):
        return None
    uv = np.stack([intr.fx * cam[:, 0] / z + intr.cx, intr.fy * cam[:, 1] / z + intr.cy], axis=1)
    res = _whiten_rows(L, uv - mu)
    if not want_jacobian:
        return res, None
    n = len(X)
    J = np.empty((n, 2, 6))
    RX = cam - t
    for i in range(n):
        x_, y_, z_ = cam[i]
        Jp = np.array(
            [
                [intr.fx / z_, 0.0, -intr.fx * x_ / (z_ * z_)],
                [0.0, intr.fy / z_, -intr.fy * y_ / (z_ * z_)],
            ]
        )
        Ji = np.hstack([Jp @ (-skew(RX[i])), Jp])
        # forward-substitute L_i against both Jacobian rows at once
        J[i, 0] = Ji[0] / L[i, 0, 0]
        J[i, 1] = (Ji[1] - L[i, 1, 0] * J[i, 0]) / L[i, 1, 1]
    return res, J


def refine_pose(
    init: Pose,
    corrs: list[Correspondence],
    intr: CameraIntrinsics,
    max_iters: int = 100,
    grad_tol: float = 1e-8,
) -> PnPResult:
    """Levenberg-Marquardt on whitened reprojection residuals.

    The 6-vector step is (rotation increment, translation increment) with the
    rotation applied on the left: R <- exp(dw) @ R. Damping is Marquardt-style
    (lambda times the Hessian diagonal), starting at 1e-3, x10 on rejection,
    /10 on acceptance. Steps that would push any keypoint to non-positive
    depth are rejected like cost increases; if no step can be taken the result
    is returned with converged=False.

    Raises:
        BehindCamera: the initial pose already has a keypoint at or behind
            the depth cutoff.
    """
    X, mu, covs = _unpack(corrs)
    L = np.linalg.cholesky(covs)
    R = init.rotation.copy()
    t = init.translation.copy()

    ev = _lm_evaluate(R, t, X, mu, L, intr, True)
    if ev is None:
        raise BehindCamera("initial pose places a keypoint behind the camera")
    res, J = ev
    cost = float((res**2).sum())
    lam = 1e-3
    iters = 0
    converged = False
    for _ in range(max_iters):
        rf = res.reshape(-1)
        Jf = J.reshape(-1, 6)
        g = Jf.T @ rf
        if np.abs(g).max() < grad_tol:
            converged = True
            break
        H = Jf.T @ Jf
        damp = np.diag(np.maximum(np.diag(H), 1e-12))
        accepted = False
        while lam <= 1e12:
            try:
                delta = np.linalg.solve(H + lam * damp, -g)
            except np.linalg.LinAlgError:
                delta = None
            if delta is not None:
                R_new = rotation_exp(delta[:3]) @ R
                t_new = t + delta[3:]
                trial = _lm_evaluate(R_new, t_new, X, mu, L, intr, False)
                if trial is not None:
                    new_cost = float((trial[0] ** 2).sum())
                    if new_cost < cost:
                        R, t, cost = R_new, t_new, new_cost
                        lam = max(lam / 10.0, 1e-12)
                        accepted = True
                        break
            lam *= 10.0
        if not accepted:
            break  # no admissible step: damped out or every step lands behind camera
        iters += 1
        res, J = _lm_evaluate(R, t, X, mu, L, intr, True)
        cost = float((res**2).sum())
    else:
        rf = res.reshape(-1)
        Jf = J.reshape(-1, 6)
        converged = bool(np.abs(Jf.T @ rf).max() < grad_tol)
    return PnPResult(Pose(R, t), cost, iters, converged)


def solve_pose(
    corrs: list[Correspondence],
    intr: CameraIntrinsics,
    max_iters: int = 300,
    grad_tol: float = 1e-8,
) -> PnPResult:
    """EPnP initialization (4 lowest-trace keypoints) followed by LM
    refinement over all correspondences.

    The default iteration budget is larger than refine_pose's because the
    minimal 4-point initialization can land far from the basin floor; the
    extra iterations are free for easy cases, which converge and stop early.

    An initialization that puts keypoints behind the camera cannot be refined;
    it is returned as-is with converged=False and infinite cost.
    """
    init = epnp_init(corrs, intr)
    try:
        return refine_pose(init, corrs, intr, max_iters=max_iters, grad_tol=grad_tol)
    except BehindCamera:
        return PnPResult(init, float("inf"), 0, False)
