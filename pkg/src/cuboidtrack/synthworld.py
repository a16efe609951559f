"""Synthetic sequences and a mock keypoint detector standing in for the network.

World frame is z-up. Objects rest on the z = 0 plane with their local y axis
(the height dimension) pointing up; the camera orbits the scene looking at it.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from .errors import NonPositiveDepth
from .filtering import GaussianEstimate2D
from .geometry import (
    CameraIntrinsics,
    Cuboid,
    CuboidDimensions,
    RigidTransform,
    compose,
    invert,
    look_at,
    project,
    rot_z,
)
from .heatmap import PeakDetection, render_scale
from .tracker import NUM_KEYPOINTS, ConditioningHeatmaps, Observation

WORLD_UP = np.array([0.0, 0.0, 1.0])
# local y (height) -> world z, local x -> world x, local z -> world -y
_UPRIGHT = np.array([[1.0, 0.0, 0.0], [0.0, 0.0, 1.0], [0.0, -1.0, 0.0]]).T
MIN_SIGMA = 1e-3


class CategorySpec(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    name: str
    dims_low: tuple[float, float, float]
    dims_high: tuple[float, float, float]
    symmetric: bool = False

    @model_validator(mode="after")
    def _check(self):
        if any(lo <= 0 or hi < lo for lo, hi in zip(self.dims_low, self.dims_high)):
            raise ValueError("dims ranges need 0 < low <= high")
        return self


DEFAULT_CATEGORIES = (
    CategorySpec(name="box", dims_low=(0.15, 0.20, 0.05), dims_high=(0.30, 0.35, 0.12)),
    CategorySpec(name="bottle", dims_low=(0.06, 0.18, 0.06), dims_high=(0.10, 0.30, 0.10), symmetric=True),
    CategorySpec(name="shoe", dims_low=(0.09, 0.08, 0.24), dims_high=(0.12, 0.13, 0.32)),
)


class SceneSpec(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    object_count: int = Field(1, ge=1)
    categories: tuple[CategorySpec, ...] = DEFAULT_CATEGORIES
    orbit_radius: float = Field(0.9, gt=0.0)
    orbit_radius_jitter: float = Field(0.15, ge=0.0)
    angular_rate_deg: float = 0.8
    elevation_deg: float = 30.0
    elevation_jitter_deg: float = 8.0
    wobble: float = Field(0.01, ge=0.0)
    frame_count: int = Field(100, ge=2)
    frame_rate: float = Field(30.0, gt=0.0)
    object_spread: float = Field(0.25, ge=0.0)
    fx: float = 600.0
    fy: float = 600.0
    width: int = 640
    height: int = 480

    def intrinsics(self) -> CameraIntrinsics:
        return CameraIntrinsics(self.fx, self.fy, self.width / 2.0, self.height / 2.0, self.width, self.height)


class MockDetectorSpec(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    keypoint_sigma: float = Field(3.0, ge=0.0)
    center_sigma: float = Field(2.0, ge=0.0)
    calibration: float = Field(1.0, gt=0.0)
    dropout: float = Field(0.1, ge=0.0, le=1.0)
    dims_sigma: float = Field(0.08, ge=0.0)
    offset_sigma: float = Field(1.0, ge=0.0)
    conditioning_gain: float = Field(0.6, ge=0.0, le=1.0)


@dataclass(frozen=True)
class ObjectRecord:
    id: int
    dims: np.ndarray
    world_pose: RigidTransform
    symmetric: bool = False
    category: str = ""

    @property
    def cuboid(self) -> Cuboid:
        return Cuboid(self.world_pose, CuboidDimensions(self.dims))


@dataclass
class SequenceRecord:
    frame: int
    intrinsics: CameraIntrinsics
    cam_to_world: RigidTransform
    objects: list[ObjectRecord]
    observations: list[Observation] = field(default_factory=list)

    def camera_cuboid(self, obj: ObjectRecord) -> Cuboid:
        return obj.cuboid.transformed(invert(self.cam_to_world))


def generate_sequence(spec: SceneSpec, seed: int) -> list[SequenceRecord]:
    """Static objects on a ground plane seen from a smoothly orbiting camera."""
    rng = np.random.default_rng([seed, 0x5CE4E])
    objects = []
    for i in range(spec.object_count):
        cat = spec.categories[int(rng.integers(len(spec.categories)))]
        dims = rng.uniform(cat.dims_low, cat.dims_high)
        if cat.symmetric:
            dims[2] = dims[0]
        yaw = rng.uniform(0.0, 2.0 * np.pi)
        offset = np.zeros(2) if i == 0 else rng.uniform(-spec.object_spread, spec.object_spread, 2)
        pose = RigidTransform(rot_z(yaw) @ _UPRIGHT, [offset[0], offset[1], dims[1] / 2.0])
        objects.append(ObjectRecord(i + 1, dims, pose, cat.symmetric, cat.name))

    target = np.mean([o.world_pose.translation for o in objects], axis=0)
    radius = spec.orbit_radius + rng.uniform(-1.0, 1.0) * spec.orbit_radius_jitter
    # back off until the layout's bounding sphere fits in 75% of the narrower half field of view
    bound = max(np.linalg.norm(o.world_pose.translation - target) + 0.5 * np.linalg.norm(o.dims) for o in objects)
    half_fov = np.arctan(min(spec.width / (2.0 * spec.fx), spec.height / (2.0 * spec.fy)))
    radius = max(radius, (bound + spec.wobble) / np.sin(0.75 * half_fov))
    elev = np.radians(spec.elevation_deg + rng.uniform(-1.0, 1.0) * spec.elevation_jitter_deg)
    theta0 = rng.uniform(0.0, 2.0 * np.pi)
    rate = np.radians(spec.angular_rate_deg) * rng.choice([-1.0, 1.0])
    wobble_phase = rng.uniform(0.0, 2.0 * np.pi, 3)
    K = spec.intrinsics()
    records = []
    for f in range(spec.frame_count):
        theta = theta0 + rate * f
        eye = target + radius * np.array([np.cos(elev) * np.cos(theta), np.cos(elev) * np.sin(theta), np.sin(elev)])
        # slow hand-held drift of the look-at point
        drift = spec.wobble * np.sin(0.07 * f + wobble_phase)
        records.append(SequenceRecord(f, K, look_at(eye, target + drift, WORLD_UP), list(objects)))
    return records


def _project_object(record: SequenceRecord, obj: ObjectRecord):
    cub = record.camera_cuboid(obj)
    return project(cub.center, record.intrinsics), project(cub.vertices(), record.intrinsics)


def _in_image(p, k: CameraIntrinsics) -> bool:
    return bool(0.0 <= p[0] < k.width and 0.0 <= p[1] < k.height)


def effective_sigma(sigma: float, gain: float, prior_confidence: float) -> float:
    """Detector noise after conditioning on a prior heatmap value in [0, 1]."""
    return float(sigma * (1.0 - gain * np.clip(prior_confidence, 0.0, 1.0)))


def _peak(loc, sigma_eff, calibration) -> PeakDetection | None:
    s = max(np.sqrt(calibration) * sigma_eff, MIN_SIGMA)
    conf = render_scale(s)
    if conf <= 0.0:
        return None
    return PeakDetection(loc, conf, (s, s))


def mock_detect(
    record: SequenceRecord,
    previous: SequenceRecord | None,
    heatmaps: ConditioningHeatmaps | None,
    spec: MockDetectorSpec,
    seed,
) -> list[Observation]:
    """Noisy observations of every object whose projected centre is in view.

    Noise draws are standard normals from a stream keyed by ``seed`` and scaled
    afterwards, so two runs that differ only in conditioning see the same
    underlying noise. ``previous=None`` means no motion (first frame).
    """
    rng = np.random.default_rng(seed)
    k = record.intrinsics
    prev = previous if previous is not None else record
    prev_objects = {o.id: o for o in prev.objects}
    out = []
    for obj in record.objects:
        # fixed draw layout per object keeps streams aligned across configurations
        z_kp = rng.normal(size=(NUM_KEYPOINTS, 2))
        z_off = rng.normal(size=(NUM_KEYPOINTS, 2))
        z_c = rng.normal(size=2)
        z_coff = rng.normal(size=2)
        z_dims = rng.normal(size=3)
        u_drop = rng.random(NUM_KEYPOINTS)
        try:
            c2d, v2d = _project_object(record, obj)
        except NonPositiveDepth:
            continue
        if not _in_image(c2d, k):
            continue
        try:
            pc2d, pv2d = _project_object(prev, prev_objects.get(obj.id, obj))
        except NonPositiveDepth:
            pc2d, pv2d = c2d, v2d

        def prior(hm, p):
            return 0.0 if hm is None else hm.sample(p)

        g = spec.conditioning_gain
        sig_c = effective_sigma(spec.center_sigma, g, prior(heatmaps and heatmaps.center, c2d))
        center_peak = _peak(c2d + sig_c * z_c, sig_c, spec.calibration)
        if center_peak is None:
            continue
        peaks: list[PeakDetection | None] = []
        offsets: list[GaussianEstimate2D | None] = []
        off_var = max(spec.calibration * spec.offset_sigma**2, MIN_SIGMA**2)
        for j in range(NUM_KEYPOINTS):
            offsets.append(GaussianEstimate2D(v2d[j] - pv2d[j] + spec.offset_sigma * z_off[j], off_var))
            if u_drop[j] < spec.dropout or not _in_image(v2d[j], k):
                peaks.append(None)
                continue
            hm = heatmaps.keypoints[j] if heatmaps is not None else None
            sig = effective_sigma(spec.keypoint_sigma, g, prior(hm, v2d[j]))
            peaks.append(_peak(v2d[j] + sig * z_kp[j], sig, spec.calibration))
        dims = obj.dims / obj.dims[1]
        noisy_dims = dims + spec.dims_sigma * z_dims
        noisy_dims[1] = 1.0
        noisy_dims = np.maximum(noisy_dims, 0.05)
        dims_var = max(spec.calibration * spec.dims_sigma**2, MIN_SIGMA**2)
        out.append(
            Observation(
                center_peak=center_peak,
                keypoint_peaks=peaks,
                keypoint_offsets=offsets,
                center_offset=c2d - pc2d + spec.offset_sigma * z_coff,
                dims_mean=noisy_dims,
                dims_var=np.full(3, dims_var),
                bbox2d=np.ptp(v2d, axis=0),
            )
        )
    return out


def frustum_fraction(records: list[SequenceRecord]) -> float:
    """Fraction of frames where every projected vertex of every object lies in the image."""
    hits = 0
    for rec in records:
        ok = True
        for obj in rec.objects:
            try:
                _, v2d = _project_object(rec, obj)
            except NonPositiveDepth:
                ok = False
                break
            if not all(_in_image(p, rec.intrinsics) for p in v2d):
                ok = False
                break
        hits += ok
    return hits / len(records)


def camera_frame_gt(record: SequenceRecord) -> list[Cuboid]:
    return [record.camera_cuboid(o) for o in record.objects]


def world_from_camera(record: SequenceRecord, cub: Cuboid) -> Cuboid:
    return Cuboid(compose(record.cam_to_world, cub.pose), cub.dims)
