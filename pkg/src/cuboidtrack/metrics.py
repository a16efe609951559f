"""Evaluation metrics: oriented 3D IoU, projection error, view angles, consistency.

Predictions carry relative dimensions only, so every comparison against
ground truth first rescales the prediction (size and distance to the camera
together, which leaves its projection unchanged) to the ground-truth height.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import DegenerateHeading, EmptyInput, NonPositiveDepth, TooFewFrames
from .geometry import (
    CUBOID_FACES,
    VERTEX_SIGNS,
    CameraIntrinsics,
    Cuboid,
    RigidTransform,
    axis_rotation,
    compose,
    project,
)

SYMMETRY_SAMPLES = 100
IOU_THRESHOLD = 0.5
AZIMUTH_THRESHOLD_DEG = 15.0
ELEVATION_THRESHOLD_DEG = 10.0
CONSISTENCY_WINDOW = 5
_EPS = 1e-12


# -- 3D IoU ---------------------------------------------------------------


def _box_faces(rotation, translation, dims, shift) -> list[list[tuple[float, float, float]]]:
    v = ((VERTEX_SIGNS * (dims / 2.0)) @ rotation.T + (translation - shift)).tolist()
    return [[tuple(v[i]) for i in f] for f in CUBOID_FACES]


def _box_planes(rotation, translation, dims, shift) -> list[tuple[float, float, float, float]]:
    """Outward normals and offsets ``(nx, ny, nz, h)``: inside means ``n @ x <= h``."""
    c = translation - shift
    planes = []
    for axis in range(3):
        n = rotation[:, axis]
        nc = float(n @ c)
        half = float(dims[axis]) / 2.0
        planes.append((float(n[0]), float(n[1]), float(n[2]), nc + half))
        planes.append((-float(n[0]), -float(n[1]), -float(n[2]), -nc + half))
    return planes


def _clip(faces, plane, tol):
    """Clip a closed convex polytope (list of outward-CCW faces) by one half-space."""
    nx, ny, nz, h = plane
    out = []
    cap = []
    face_on_plane = False
    for poly in faces:
        d = [nx * p[0] + ny * p[1] + nz * p[2] - h for p in poly]
        if max(d) <= tol:
            out.append(poly)
            on = [p for p, di in zip(poly, d) if abs(di) <= tol]
            if len(on) == len(poly):
                face_on_plane = True
            cap.extend(on)
            continue
        if min(d) > tol:
            continue
        kept = []
        m = len(poly)
        for i in range(m):
            j = i + 1 if i + 1 < m else 0
            di, dj = d[i], d[j]
            pi = poly[i]
            in_i = di <= tol
            if in_i:
                kept.append(pi)
                if abs(di) <= tol:
                    cap.append(pi)
            if in_i != (dj <= tol) and abs(di) > tol and abs(dj) > tol:
                t = di / (di - dj)
                pj = poly[j]
                q = (pi[0] + t * (pj[0] - pi[0]), pi[1] + t * (pj[1] - pi[1]), pi[2] + t * (pj[2] - pi[2]))
                kept.append(q)
                cap.append(q)
        if len(kept) >= 3:
            out.append(kept)
    if len(cap) >= 3 and not face_on_plane:
        # in-plane basis (u, v) with u x v = n, so ascending angle is CCW seen from outside
        if abs(nx) < 0.9:
            ux, uy, uz = 0.0, nz, -ny
        else:
            ux, uy, uz = -nz, 0.0, nx
        un = math.sqrt(ux * ux + uy * uy + uz * uz)
        ux, uy, uz = ux / un, uy / un, uz / un
        vx, vy, vz = ny * uz - nz * uy, nz * ux - nx * uz, nx * uy - ny * ux
        k = len(cap)
        cx = sum(p[0] for p in cap) / k
        cy = sum(p[1] for p in cap) / k
        cz = sum(p[2] for p in cap) / k
        keyed = []
        for p in cap:
            rx, ry, rz = p[0] - cx, p[1] - cy, p[2] - cz
            keyed.append((math.atan2(rx * vx + ry * vy + rz * vz, rx * ux + ry * uy + rz * uz), p))
        keyed.sort(key=lambda e: e[0])
        out.append([p for _, p in keyed])
    return out


def _polytope_volume(faces) -> float:
    """Divergence theorem: V = 1/3 * sum over faces of (point on face) . (area vector)."""
    vol = 0.0
    for poly in faces:
        ax = ay = az = 0.0
        m = len(poly)
        for i in range(m):
            p = poly[i]
            q = poly[i + 1 if i + 1 < m else 0]
            ax += p[1] * q[2] - p[2] * q[1]
            ay += p[2] * q[0] - p[0] * q[2]
            az += p[0] * q[1] - p[1] * q[0]
        p0 = poly[0]
        vol += 0.5 * (p0[0] * ax + p0[1] * ay + p0[2] * az)
    return vol / 3.0


def _intersection(ra, ta, da, rb, tb, db) -> float:
    """Intersection volume of two boxes given as (rotation, centre, dims) arrays."""
    rad_a = 0.5 * float(np.linalg.norm(da))
    rad_b = 0.5 * float(np.linalg.norm(db))
    if float(np.linalg.norm(ta - tb)) >= rad_a + rad_b:
        return 0.0
    # coordinates relative to b's centre keep the arithmetic well conditioned
    faces = _box_faces(ra, ta, da, tb)
    tol = _EPS * max(rad_a, rad_b, 1.0)
    for plane in _box_planes(rb, tb, db, tb):
        faces = _clip(faces, plane, tol)
        if len(faces) < 4:
            return 0.0
    return max(_polytope_volume(faces), 0.0)


def _iou(ra, ta, da, rb, tb, db) -> float:
    inter = _intersection(ra, ta, da, rb, tb, db)
    if inter <= 0.0:
        return 0.0
    union = float(np.prod(da)) + float(np.prod(db)) - inter
    return float(min(max(inter / union, 0.0), 1.0))


def intersection_volume(a: Cuboid, b: Cuboid) -> float:
    """Volume of ``a ∩ b`` by clipping ``a``'s faces against ``b``'s six half-spaces."""
    return _intersection(a.pose.rotation, a.pose.translation, a.dims.d, b.pose.rotation, b.pose.translation, b.dims.d)


def iou3d(a: Cuboid, b: Cuboid) -> float:
    return _iou(a.pose.rotation, a.pose.translation, a.dims.d, b.pose.rotation, b.pose.translation, b.dims.d)


def iou3d_monte_carlo(a: Cuboid, b: Cuboid, samples: int = 1_000_000, seed: int = 0) -> float:
    """Sampling estimate of IoU over the union's axis-aligned bounding box."""
    va, vb = a.vertices(), b.vertices()
    allv = np.vstack([va, vb])
    lo, hi = allv.min(axis=0), allv.max(axis=0)
    rng = np.random.default_rng(seed)
    pts = rng.uniform(lo, hi, size=(samples, 3))

    def inside(box):
        local = (pts - box.center) @ box.pose.rotation
        return np.all(np.abs(local) <= box.dims.d / 2.0, axis=1)

    ia, ib = inside(a), inside(b)
    union = np.count_nonzero(ia | ib)
    return np.count_nonzero(ia & ib) / union if union else 0.0


# -- symmetric objects ----------------------------------------------------


def rotate_about_local_axis(box: Cuboid, axis: int, angle: float) -> Cuboid:
    r = box.pose.rotation @ axis_rotation(axis, angle)
    return Cuboid(RigidTransform(r, box.pose.translation), box.dims)


def _turns(n: int, set_invariant: bool) -> range:
    # a box maps onto itself under a half turn about any local axis, so for
    # metrics that only see the point set the second half of the grid repeats the first
    return range(n // 2) if set_invariant and n % 2 == 0 else range(n)


def symmetric_best_pose(
    metric: Callable[[Cuboid, Cuboid], float],
    pred: Cuboid,
    gt: Cuboid,
    axis: int = 1,
    n: int = SYMMETRY_SAMPLES,
    maximize: bool = True,
    set_invariant: bool = False,
) -> tuple[float, Cuboid]:
    """Best ``metric(rotated pred, gt)`` over ``n`` uniform turns of ``pred`` about its local ``axis``.

    ``set_invariant`` declares that the metric depends only on the box as a
    point set (true for IoU, false for index-matched vertex errors).
    """
    best, best_box = None, pred
    for k in _turns(n, set_invariant):
        cand = rotate_about_local_axis(pred, axis, 2.0 * math.pi * k / n) if k else pred
        val = metric(cand, gt)
        if best is None or (val > best if maximize else val < best):
            best, best_box = val, cand
    return float(best), best_box


def symmetric_best(
    metric: Callable[[Cuboid, Cuboid], float],
    pred: Cuboid,
    gt: Cuboid,
    axis: int = 1,
    n: int = SYMMETRY_SAMPLES,
    maximize: bool = True,
    set_invariant: bool = False,
) -> float:
    return symmetric_best_pose(metric, pred, gt, axis, n, maximize, set_invariant)[0]


def _turn_rotations(rotation, axis: int, n: int, set_invariant: bool = False) -> np.ndarray:
    """``rotation @ R_axis(2 pi k / n)`` for every turn ``k`` considered, shape (m, 3, 3)."""
    ks = np.array(_turns(n, set_invariant), dtype=float)
    ang = 2.0 * math.pi * ks / n
    c, s = np.cos(ang), np.sin(ang)
    i, j = [a for a in range(3) if a != axis]
    if axis == 1:
        # right-handed order about y is (z, x)
        i, j = j, i
    turn = np.zeros((len(ks), 3, 3))
    turn[:, axis, axis] = 1.0
    turn[:, i, i] = c
    turn[:, j, j] = c
    turn[:, j, i] = s
    turn[:, i, j] = -s
    return np.einsum("ab,kbc->kac", rotation, turn)


def _clip_polygons(poly: np.ndarray, count: np.ndarray, normal: np.ndarray, offset: np.ndarray, tol: float = 0.0):
    """Clip a batch of planar convex polygons by one half-space each (``n @ x <= h``).

    ``poly`` is (B, V, 3) with slots past ``count`` holding the first vertex,
    so rolling by one closes every polygon. Returns the clipped batch with
    one extra slot. Distances within ``tol`` of the plane count as on it.
    """
    b, v, _ = poly.shape
    d = np.einsum("bvi,bi->bv", poly, normal) - offset[:, None]
    d = np.where(np.abs(d) <= tol, 0.0, d)
    nxt, dn = np.roll(poly, -1, axis=1), np.roll(d, -1, axis=1)
    valid = np.arange(v)[None, :] < count[:, None]
    cross = valid & (((d < 0) & (dn > 0)) | ((d > 0) & (dn < 0)))
    t = np.where(cross, d / np.where(cross, d - dn, 1.0), 0.0)
    q = poly + t[..., None] * (nxt - poly)
    cand = np.stack([poly, q], axis=2).reshape(b, 2 * v, 3)
    keep = np.stack([valid & (d <= 0), cross], axis=2).reshape(b, 2 * v)
    order = np.argsort(~keep, axis=1, kind="stable")[:, : v + 1]
    out = np.take_along_axis(cand, order[..., None], axis=1)
    new_count = keep.sum(axis=1)
    pad = np.arange(v + 1)[None, :] >= new_count[:, None]
    out = np.where(pad[..., None], out[:, :1, :], out)
    return out, new_count


def _face_terms(poly: np.ndarray, count: np.ndarray) -> np.ndarray:
    """Divergence-theorem term ``p0 . area_vector / 3`` of each polygon."""
    valid = np.arange(poly.shape[1])[None, :] < count[:, None]
    area = 0.5 * np.sum(np.cross(poly, np.roll(poly, -1, axis=1)) * valid[..., None], axis=1)
    return np.where(count >= 3, np.einsum("bi,bi->b", poly[:, 0], area) / 3.0, 0.0)


def _box_arrays(rotations: np.ndarray, centers: np.ndarray, dims: np.ndarray):
    """Faces (m, 6, 4, 3) and planes ``(normals (m, 6, 3), offsets (m, 6))`` of m boxes."""
    local = VERTEX_SIGNS * (dims[:, None, :] / 2.0)
    verts = np.einsum("mij,mvj->mvi", rotations, local) + centers[:, None, :]
    faces = verts[:, np.array(CUBOID_FACES)]
    normals = np.concatenate([rotations.transpose(0, 2, 1), -rotations.transpose(0, 2, 1)], axis=1)
    normals = normals[:, [0, 3, 1, 4, 2, 5]]
    half = np.repeat(dims / 2.0, 2, axis=1)
    offsets = np.einsum("mki,mi->mk", normals, centers) + half
    return faces, normals, offsets


def iou3d_batch(rotations, center, dims, gt: Cuboid) -> np.ndarray:
    """IoU of m boxes sharing ``center`` and ``dims`` (rotations (m, 3, 3)) against ``gt``.

    Every face of each box is clipped by the other box's six half-spaces and
    the surviving pieces form the boundary of the intersection, whose volume
    follows from the divergence theorem. Faces shared by both boxes with the
    same outward normal are counted once.
    """
    rots = np.asarray(rotations, dtype=float).reshape(-1, 3, 3)
    m = len(rots)
    shift = gt.pose.translation
    da = np.broadcast_to(np.asarray(dims, dtype=float), (m, 3))
    ca = np.broadcast_to(np.asarray(center, dtype=float) - shift, (m, 3))
    db = gt.dims.d
    fa, na, ha = _box_arrays(rots, ca, da)
    fb, nb, hb = _box_arrays(gt.pose.rotation[None], np.zeros((1, 3)), db[None])
    fb, nb, hb = np.repeat(fb, m, axis=0), np.repeat(nb, m, axis=0), np.repeat(hb, m, axis=0)
    tol = _EPS * max(float(np.linalg.norm(db)), float(np.linalg.norm(da[0])), 1.0)
    # a face of b lying in a face plane of a with the same orientation is already covered
    same = (np.einsum("mki,mli->mkl", nb, na) > 1.0 - 1e-12) & (np.abs(hb[:, :, None] - ha[:, None, :]) <= tol)
    dup = same.any(axis=2)
    # (m*12) polygons: a's faces cut by b's planes, then b's faces cut by a's planes
    poly = np.concatenate([fa, fb], axis=1).reshape(m * 12, 4, 3)
    cut_n = np.concatenate([np.repeat(nb[:, None], 6, axis=1), np.repeat(na[:, None], 6, axis=1)], axis=1)
    cut_h = np.concatenate([np.repeat(hb[:, None], 6, axis=1), np.repeat(ha[:, None], 6, axis=1)], axis=1)
    cut_n = cut_n.reshape(m * 12, 6, 3)
    cut_h = cut_h.reshape(m * 12, 6)
    count = np.full(m * 12, 4)
    for k in range(6):
        poly, count = _clip_polygons(poly, count, cut_n[:, k], cut_h[:, k], tol)
    terms = _face_terms(poly, count).reshape(m, 12)
    terms[:, 6:][dup] = 0.0
    inter = np.maximum(terms.sum(axis=1), 0.0)
    union = np.prod(da, axis=1) + float(np.prod(db)) - inter
    return np.clip(inter / union, 0.0, 1.0)


def symmetric_iou(pred: Cuboid, gt: Cuboid, axis: int = 1, n: int = SYMMETRY_SAMPLES) -> float:
    """Best IoU over ``n`` turns of ``pred`` about its local ``axis``."""
    rots = _turn_rotations(pred.pose.rotation, axis, n, True)
    return float(iou3d_batch(rots, pred.pose.translation, pred.dims.d, gt).max())


def _project_many(points: np.ndarray, k: CameraIntrinsics) -> np.ndarray:
    z = points[..., 2]
    if np.any(z <= 0):
        raise NonPositiveDepth("point at or behind the camera")
    return np.stack([k.fx * points[..., 0] / z + k.cx, k.fy * points[..., 1] / z + k.cy], axis=-1)


def _normalize_pixels(err, k: CameraIntrinsics, normalizer: str):
    if normalizer == "diagonal":
        return err / k.diagonal
    if normalizer == "width":
        return err / k.width
    if normalizer == "none":
        return err
    raise ValueError(f"unknown normalizer {normalizer!r}")


# -- 2D and angular errors -------------------------------------------------


def pixel_error(pred: Cuboid, gt: Cuboid, k: CameraIntrinsics, normalizer: str = "diagonal") -> float:
    """Mean distance between index-matched projected vertices, divided by the image diagonal (or width)."""
    pp = project(pred.vertices(), k)
    pg = project(gt.vertices(), k)
    return float(_normalize_pixels(np.mean(np.linalg.norm(pp - pg, axis=1)), k, normalizer))


def symmetric_pixel_error(
    pred: Cuboid, gt: Cuboid, k: CameraIntrinsics, normalizer: str = "diagonal", axis: int = 1, n: int = SYMMETRY_SAMPLES
) -> float:
    """Smallest :func:`pixel_error` over ``n`` turns of ``pred`` about its local ``axis``."""
    rots = _turn_rotations(pred.pose.rotation, axis, n)
    local = VERTEX_SIGNS * (pred.dims.d / 2.0)
    verts = np.einsum("kab,vb->kva", rots, local) + pred.pose.translation
    pp = _project_many(verts, k)
    pg = project(gt.vertices(), k)
    err = np.mean(np.linalg.norm(pp - pg, axis=2), axis=1)
    return float(_normalize_pixels(err.min(), k, normalizer))


def _in_plane_basis(up: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    e1 = np.cross(up, [1.0, 0.0, 0.0] if abs(up[0]) < 0.9 else [0.0, 1.0, 0.0])
    e1 /= np.linalg.norm(e1)
    return e1, np.cross(up, e1)


def _heading_elevation_many(rots: np.ndarray, up: np.ndarray, forward_axis: int):
    f = rots[:, :, forward_axis]
    s = np.clip(f @ up, -1.0, 1.0)
    e1, e2 = _in_plane_basis(up)
    heading = np.arctan2(f @ e2, f @ e1)
    elevation = np.arcsin(s)
    degenerate = 1.0 - np.abs(s) < 1e-6
    return heading, elevation, degenerate


def _heading_elevation(r: np.ndarray, up: np.ndarray, forward_axis: int) -> tuple[float, float]:
    h, e, bad = _heading_elevation_many(r[None], up, forward_axis)
    if bad[0]:
        raise DegenerateHeading("forward axis is aligned with the up axis")
    return float(h[0]), float(e[0])


def _unit(v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    return v / np.linalg.norm(v)


def _angle_errors(hp, ep, hg, eg):
    daz = np.abs((hp - hg + math.pi) % (2.0 * math.pi) - math.pi)
    return np.degrees(daz), np.degrees(np.abs(ep - eg))


def view_angles(pred_pose: RigidTransform, gt_pose: RigidTransform, up_axis, forward_axis: int = 0):
    """(azimuth error, elevation error) in degrees of the objects' forward axes in a common frame."""
    up = _unit(up_axis)
    hp, ep = _heading_elevation(pred_pose.rotation, up, forward_axis)
    hg, eg = _heading_elevation(gt_pose.rotation, up, forward_axis)
    az, el = _angle_errors(hp, ep, hg, eg)
    return float(az), float(el)


def symmetric_view_angles(
    pred_world: RigidTransform,
    gt_world: RigidTransform,
    up_axis,
    forward_axis: int = 0,
    axis: int = 1,
    n: int = SYMMETRY_SAMPLES,
):
    """View-angle errors at the turn of ``pred`` about ``axis`` with the smallest azimuth error."""
    up = _unit(up_axis)
    hg, eg = _heading_elevation(gt_world.rotation, up, forward_axis)
    hp, ep, bad = _heading_elevation_many(_turn_rotations(pred_world.rotation, axis, n), up, forward_axis)
    az, el = _angle_errors(hp, ep, hg, eg)
    az = np.where(bad, np.inf, az)
    best = int(np.argmin(az))
    if not np.isfinite(az[best]):
        raise DegenerateHeading("forward axis is aligned with the up axis for every turn")
    return float(az[best]), float(el[best])


# -- aggregate scores -----------------------------------------------------


def consistency(boxes: Sequence[Cuboid | None], window: int = CONSISTENCY_WINDOW) -> float:
    """Mean pairwise IoU inside each sliding window, averaged over windows.

    Missing predictions (``None``) score 0 against everything.
    """
    n = len(boxes)
    if n < 2 or window > n:
        raise TooFewFrames(f"need at least max(2, {window}) frames, got {n}")
    window = max(window, 2)
    cache: dict[tuple[int, int], float] = {}

    def pair(i, j):
        key = (i, j)
        if key not in cache:
            a, b = boxes[i], boxes[j]
            cache[key] = 0.0 if a is None or b is None else iou3d(a, b)
        return cache[key]

    scores = []
    for s in range(n - window + 1):
        vals = [pair(i, j) for i in range(s, s + window) for j in range(i + 1, s + window)]
        scores.append(sum(vals) / len(vals))
    return float(np.mean(scores))


def ap_at_threshold(values, threshold: float, higher_is_better: bool = True) -> float:
    """Fraction of frames meeting the threshold (``>=`` for scores, ``<`` for errors)."""
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        raise EmptyInput("no values to score")
    hits = v >= threshold if higher_is_better else v < threshold
    return float(np.count_nonzero(hits) / v.size)


# -- per-sequence evaluation ---------------------------------------------


@dataclass
class FrameResult:
    """One frame of one object. ``pred`` is None when nothing was reported."""

    pred: Cuboid | None
    gt: Cuboid
    cam_to_world: RigidTransform
    K: CameraIntrinsics
    symmetric: bool = False
    symmetry_axis: int = 1


@dataclass
class MetricReport:
    ap_iou50: float
    mean_pixel_error: float
    ap_azimuth15: float
    ap_elevation10: float
    consistency: float
    frames: int = 0
    name: str = ""


@dataclass
class FrameMetrics:
    iou: float
    pixel_error: float
    azimuth_err: float
    elevation_err: float


def align_scale(pred: Cuboid, gt: Cuboid, axis: int = 1) -> Cuboid:
    """Rescale ``pred`` so its ``axis`` dimension equals the ground truth's."""
    return pred.scaled(gt.dims.d[axis] / pred.dims.d[axis])


def forward_axis_for(dims) -> int:
    """Longest horizontal local axis (x or z; y is up)."""
    return 0 if dims[0] >= dims[2] else 2


def frame_metrics(
    fr: FrameResult,
    up_axis=(0.0, 0.0, 1.0),
    normalizer: str = "diagonal",
    symmetry_samples: int = SYMMETRY_SAMPLES,
) -> FrameMetrics:
    if fr.pred is None:
        return FrameMetrics(0.0, math.nan, math.inf, math.inf)
    pred = align_scale(fr.pred, fr.gt)

    gw = compose(fr.cam_to_world, fr.gt.pose)
    pw = compose(fr.cam_to_world, pred.pose)
    fwd = forward_axis_for(fr.gt.dims.d)
    try:
        if fr.symmetric:
            # heading about the symmetry axis is unobservable; score the best turn
            az, el = symmetric_view_angles(pw, gw, up_axis, fwd, fr.symmetry_axis, symmetry_samples)
        else:
            az, el = view_angles(pw, gw, up_axis, fwd)
    except DegenerateHeading:
        az, el = math.inf, math.inf
    if fr.symmetric:
        iou = symmetric_iou(pred, fr.gt, fr.symmetry_axis, symmetry_samples)
        pe = symmetric_pixel_error(pred, fr.gt, fr.K, normalizer, fr.symmetry_axis, symmetry_samples)
    else:
        iou = iou3d(pred, fr.gt)
        pe = pixel_error(pred, fr.gt, fr.K, normalizer)
    return FrameMetrics(iou, pe, az, el)


def evaluate_sequence(
    frames: Sequence[FrameResult],
    up_axis=(0.0, 0.0, 1.0),
    normalizer: str = "diagonal",
    window: int = CONSISTENCY_WINDOW,
    symmetry_samples: int = SYMMETRY_SAMPLES,
    name: str = "",
) -> tuple[MetricReport, list[FrameMetrics]]:
    per_frame = [frame_metrics(fr, up_axis, normalizer, symmetry_samples) for fr in frames]
    world = [
        None if fr.pred is None else align_scale(fr.pred, fr.gt).transformed(fr.cam_to_world) for fr in frames
    ]
    pix = [m.pixel_error for m in per_frame if not math.isnan(m.pixel_error)]
    report = MetricReport(
        ap_iou50=ap_at_threshold([m.iou for m in per_frame], IOU_THRESHOLD),
        mean_pixel_error=float(np.mean(pix)) if pix else math.nan,
        ap_azimuth15=ap_at_threshold([m.azimuth_err for m in per_frame], AZIMUTH_THRESHOLD_DEG, False),
        ap_elevation10=ap_at_threshold([m.elevation_err for m in per_frame], ELEVATION_THRESHOLD_DEG, False),
        consistency=consistency(world, window),
        frames=len(frames),
        name=name,
    )
    return report, per_frame


REPORT_FIELDS = ("name", "frames", "ap_iou50", "mean_pixel_error", "ap_azimuth15", "ap_elevation10", "consistency")


def aggregate(reports: Sequence[MetricReport], name: str = "mean") -> MetricReport:
    def mean(attr):
        vals = [getattr(r, attr) for r in reports if not math.isnan(getattr(r, attr))]
        return float(np.mean(vals)) if vals else math.nan

    return MetricReport(
        ap_iou50=mean("ap_iou50"),
        mean_pixel_error=mean("mean_pixel_error"),
        ap_azimuth15=mean("ap_azimuth15"),
        ap_elevation10=mean("ap_elevation10"),
        consistency=mean("consistency"),
        frames=sum(r.frames for r in reports),
        name=name,
    )


def reports_to_csv(reports: Sequence[MetricReport]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=REPORT_FIELDS, lineterminator="\n")
    w.writeheader()
    for r in reports:
        w.writerow({k: getattr(r, k) for k in REPORT_FIELDS})
    return buf.getvalue()


def reports_to_json(reports: Sequence[MetricReport], aggregate_report: MetricReport | None = None) -> str:
    doc = {"sequences": [asdict(r) for r in reports]}
    if aggregate_report is not None:
        doc["aggregate"] = asdict(aggregate_report)
    return json.dumps(doc, indent=2, sort_keys=True, allow_nan=True) + "\n"
