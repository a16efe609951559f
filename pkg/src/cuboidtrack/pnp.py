"""Weighted perspective-n-point by Levenberg-Marquardt, bootstrapped by a DLT.

Rotation increments are axis-angle vectors applied on the left
(``R <- exp(w) R``); the parameter vector is ``(w, dt)``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.spatial.transform import Rotation

from .errors import Degenerate, NonPositiveDepth
from .geometry import (
    CameraIntrinsics,
    CuboidDimensions,
    RigidTransform,
    cuboid_vertices,
    orthonormalize,
    project,
    skew,
    so3_exp,
)

log = logging.getLogger(__name__)

MAX_ITERATIONS = 100
GRAD_TOL = 1e-8
STEP_TOL = 1e-10
LAMBDA_INIT = 1e-3
COARSE_ROTATIONS = 512
_COARSE_SEED = 20230


@dataclass(frozen=True)
class PnPProblem:
    image_points: np.ndarray
    model_points: np.ndarray
    weights: np.ndarray
    K: CameraIntrinsics

    def __post_init__(self):
        img = np.asarray(self.image_points, dtype=float).reshape(-1, 2)
        mdl = np.asarray(self.model_points, dtype=float).reshape(-1, 3)
        w = np.asarray(self.weights, dtype=float)
        if w.ndim == 1:
            w = np.repeat(w[:, None], 2, axis=1)
        w = np.broadcast_to(w, img.shape).copy()
        if len(img) != len(mdl):
            raise ValueError("image and model point counts differ")
        if np.any(w <= 0) or not np.all(np.isfinite(w)):
            raise ValueError("weights must be positive and finite")
        object.__setattr__(self, "image_points", img)
        object.__setattr__(self, "model_points", mdl)
        object.__setattr__(self, "weights", w)

    def __len__(self) -> int:
        return len(self.image_points)


@dataclass(frozen=True)
class PoseEstimate:
    pose: RigidTransform
    reprojection_rmse: float
    converged: bool
    iterations: int = 0


def model_points(dims: CuboidDimensions, include_center: bool = True) -> np.ndarray:
    """Canonical-pose cuboid vertices for normalized ``dims``, centre first when included."""
    verts = cuboid_vertices(dims.normalized(), RigidTransform.identity())
    if include_center:
        return np.vstack([np.zeros(3), verts])
    return verts


def build_problem(
    keypoints, keypoint_var, dims: CuboidDimensions, K: CameraIntrinsics, center=None, center_var=None
) -> PnPProblem:
    """Correspondences from 8 keypoints (and optionally the centre) with inverse-variance weights."""
    kp = np.asarray(keypoints, dtype=float).reshape(8, 2)
    var = np.broadcast_to(np.asarray(keypoint_var, dtype=float), (8, 2))
    if center is None:
        return PnPProblem(kp, model_points(dims, False), 1.0 / var, K)
    img = np.vstack([np.asarray(center, dtype=float).reshape(1, 2), kp])
    cvar = np.broadcast_to(np.asarray(center_var, dtype=float), (1, 2))
    return PnPProblem(img, model_points(dims, True), 1.0 / np.vstack([cvar, var]), K)


def _camera_points(pose: RigidTransform, problem: PnPProblem) -> np.ndarray:
    pc = pose.apply(problem.model_points)
    if np.any(pc[:, 2] <= 0):
        raise NonPositiveDepth("model point maps behind the camera")
    return pc


def reprojection_residuals(pose: RigidTransform, problem: PnPProblem) -> np.ndarray:
    """Weighted residuals ``sqrt(w) * (project(R X + t) - u)``, shape (N, 2)."""
    pc = _camera_points(pose, problem)
    return np.sqrt(problem.weights) * (project(pc, problem.K) - problem.image_points)


def reprojection_jacobian(pose: RigidTransform, problem: PnPProblem) -> np.ndarray:
    """d residuals / d (w, dt), shape (2N, 6), rows ordered point-major (u0, v0, u1, ...)."""
    pc = _camera_points(pose, problem)
    k = problem.K
    x, y, z = pc[:, 0], pc[:, 1], pc[:, 2]
    n = len(pc)
    dproj = np.zeros((n, 2, 3))
    dproj[:, 0, 0] = k.fx / z
    dproj[:, 0, 2] = -k.fx * x / z**2
    dproj[:, 1, 1] = k.fy / z
    dproj[:, 1, 2] = -k.fy * y / z**2
    rx = problem.model_points @ pose.rotation.T
    dpc = np.zeros((n, 3, 6))
    dpc[:, :, :3] = -np.array([skew(p) for p in rx])
    dpc[:, :, 3:] = np.eye(3)
    j = np.einsum("nij,njk->nik", dproj, dpc) * np.sqrt(problem.weights)[:, :, None]
    return j.reshape(2 * n, 6)


def _retract(pose: RigidTransform, delta: np.ndarray) -> RigidTransform:
    r = orthonormalize(so3_exp(delta[:3]) @ pose.rotation)
    return RigidTransform(r, pose.translation + delta[3:])


def _check_geometry(problem: PnPProblem) -> None:
    if len(problem) < 4:
        raise Degenerate(f"PnP needs at least 4 points, got {len(problem)}")
    centred = problem.image_points - problem.image_points.mean(axis=0)
    s = np.linalg.svd(centred, compute_uv=False)
    if s[0] < 1e-12 or s[1] < 1e-9 * s[0]:
        raise Degenerate("image points are collinear")


def dlt_pose(problem: PnPProblem) -> RigidTransform | None:
    """Weighted direct linear transform on normalized image coordinates.

    Returns None when there are fewer than 6 points or the solution puts the
    model behind the camera.
    """
    n = len(problem)
    if n < 6:
        return None
    k = problem.K
    xn = (problem.image_points[:, 0] - k.cx) / k.fx
    yn = (problem.image_points[:, 1] - k.cy) / k.fy
    # pixel weights -> normalized-coordinate weights; a global factor is irrelevant
    sw = np.sqrt(problem.weights / problem.weights.max())
    xh = np.hstack([problem.model_points, np.ones((n, 1))])
    a = np.zeros((2 * n, 12))
    a[0::2, 0:4] = xh
    a[0::2, 8:12] = -xn[:, None] * xh
    a[1::2, 4:8] = xh
    a[1::2, 8:12] = -yn[:, None] * xh
    a[0::2] *= sw[:, 0:1]
    a[1::2] *= sw[:, 1:2]
    _, _, vt = np.linalg.svd(a)
    p = vt[-1].reshape(3, 4)
    m = p[:, :3]
    if np.linalg.det(m) < 0:
        p = -p
        m = -m
    u, s, vt3 = np.linalg.svd(m)
    scale = s.mean()
    if scale <= 0:
        return None
    pose = RigidTransform(orthonormalize(u @ vt3), p[:, 3] / scale)
    if np.any(pose.apply(problem.model_points)[:, 2] <= 0):
        return None
    return pose


def _coarse_rotations(n: int = COARSE_ROTATIONS) -> np.ndarray:
    return Rotation.random(n, random_state=_COARSE_SEED).as_matrix()


_ROTATION_GRID = _coarse_rotations()


def _fallback_pose(problem: PnPProblem) -> RigidTransform:
    """Best of a fixed rotation set, model pushed along the mean viewing ray to match image extent."""
    k = problem.K
    extent_3d = np.ptp(problem.model_points, axis=0).max()
    extent_px = max(np.ptp(problem.image_points, axis=0).max(), 1.0)
    depth = max(k.fx, k.fy) * extent_3d / extent_px
    c = problem.image_points.mean(axis=0)
    ray = np.array([(c[0] - k.cx) / k.fx, (c[1] - k.cy) / k.fy, 1.0])
    centred = problem.model_points - problem.model_points.mean(axis=0)
    t = ray * depth
    pc = np.einsum("rij,nj->rni", _ROTATION_GRID, centred) + t
    z = np.maximum(pc[..., 2], 1e-9)
    proj = np.stack([k.fx * pc[..., 0] / z + k.cx, k.fy * pc[..., 1] / z + k.cy], axis=-1)
    cost = np.sum(problem.weights * (proj - problem.image_points) ** 2, axis=(1, 2))
    cost[np.any(pc[..., 2] <= 0, axis=1)] = np.inf
    r = _ROTATION_GRID[int(np.argmin(cost))]
    return RigidTransform(r, t - r @ problem.model_points.mean(axis=0))


def _cost(pose, problem):
    try:
        r = reprojection_residuals(pose, problem)
    except NonPositiveDepth:
        return np.inf
    return float(np.sum(r * r))


def pixel_rmse(pose: RigidTransform, problem: PnPProblem) -> float:
    d = project(pose.apply(problem.model_points), problem.K) - problem.image_points
    return float(np.sqrt(np.mean(np.sum(d * d, axis=1))))


def solve_pnp(
    problem: PnPProblem,
    init: RigidTransform | None = None,
    max_iterations: int = MAX_ITERATIONS,
) -> PoseEstimate:
    """Minimize the weighted squared reprojection error.

    Raises :class:`Degenerate` for fewer than 4 points or collinear image
    points. Hitting ``max_iterations`` returns the best pose with
    ``converged=False``.
    """
    _check_geometry(problem)
    candidates = [p for p in (init, dlt_pose(problem)) if p is not None]
    costs = [_cost(p, problem) for p in candidates]
    if not any(np.isfinite(costs)):
        candidates.append(_fallback_pose(problem))
        costs.append(_cost(candidates[-1], problem))
    best = int(np.argmin(costs))
    pose, cost = candidates[best], costs[best]
    if not np.isfinite(cost):
        raise Degenerate("no initial pose places the model in front of the camera")
    lam = LAMBDA_INIT
    converged = False
    it = 0
    for it in range(1, max_iterations + 1):
        r = reprojection_residuals(pose, problem).ravel()
        j = reprojection_jacobian(pose, problem)
        g = j.T @ r
        if np.linalg.norm(g) < GRAD_TOL:
            converged = True
            break
        a = j.T @ j
        damp = np.diag(np.maximum(np.diag(a), 1e-12))
        try:
            delta = np.linalg.solve(a + lam * damp, -g)
        except np.linalg.LinAlgError:
            lam *= 10.0
            continue
        if np.linalg.norm(delta) < STEP_TOL:
            converged = True
            break
        candidate = _retract(pose, delta)
        new_cost = _cost(candidate, problem)
        if new_cost < cost:
            pose, cost = candidate, new_cost
            lam = max(lam * 0.1, 1e-12)
        else:
            lam = min(lam * 10.0, 1e16)
    if not converged:
        log.warning("PnP stopped after %d iterations without converging", max_iterations)
    return PoseEstimate(pose, pixel_rmse(pose, problem), converged, it if converged else max_iterations)
