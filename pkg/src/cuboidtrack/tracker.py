"""Per-frame tracking pipeline: associate, fuse, filter, solve pose, render priors."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Literal, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from .errors import Degenerate, MissingGroundTruth, NonPositiveDepth
from .filtering import (
    DimensionBelief,
    GaussianEstimate2D,
    KeypointFilterState,
    bayes_fuse,
    dim_update,
    kalman_predict,
    kalman_update,
    process_noise,
)
from .geometry import (
    CameraIntrinsics,
    Cuboid,
    CuboidDimensions,
    RigidTransform,
    project,
    so3_exp,
)
from .heatmap import Heatmap, PeakDetection, render_gaussian, render_scale
from .pnp import PoseEstimate, build_problem, solve_pnp

log = logging.getLogger(__name__)

NUM_KEYPOINTS = 8
InitMode = Literal["ground_truth", "noisy_gt", "detector", "none"]


class TrackerConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    init_mode: InitMode = "ground_truth"
    conditioning: bool = True
    filtering: bool = True
    max_misses: int = Field(5, ge=0)
    # with filtering on, unmatched tracklets report a pose from their predicted keypoints
    coast_poses: bool = True
    gate_px: float = Field(60.0, gt=0.0)
    include_center: bool = True
    velocity_var: float = Field(20.0, gt=0.0)
    # "measurement": velocity_var is the noise on the offset observation;
    # "initial_state": it only seeds the state covariance and offsets keep their own variance
    velocity_var_role: Literal["measurement", "initial_state"] = "measurement"
    accel_std: float = Field(0.5, ge=0.0)
    heatmap_stride: int = Field(4, ge=1)
    min_render_sigma: float = Field(2.0, gt=0.0)
    gt_keypoint_var: float = Field(1.0, gt=0.0)
    gt_dims_var: float = Field(1e-4, gt=0.0)
    unseen_keypoint_var: float = Field(1e6, gt=0.0)
    init_sigma_scale: float = Field(0.2, ge=0.0)
    init_sigma_rot_deg: float = Field(5.0, ge=0.0)
    init_sigma_trans: float = Field(0.03, ge=0.0)
    init_mc_samples: int = Field(256, ge=2)


@dataclass
class Observation:
    """One detected object in one frame (what the network heads would report)."""

    center_peak: PeakDetection
    keypoint_peaks: list[PeakDetection | None]
    keypoint_offsets: list[GaussianEstimate2D | None]
    center_offset: np.ndarray
    dims_mean: np.ndarray
    dims_var: np.ndarray
    bbox2d: np.ndarray = field(default_factory=lambda: np.zeros(2))

    def __post_init__(self):
        if len(self.keypoint_peaks) != NUM_KEYPOINTS or len(self.keypoint_offsets) != NUM_KEYPOINTS:
            raise ValueError("an observation carries exactly 8 keypoint slots")
        self.center_offset = np.asarray(self.center_offset, dtype=float).reshape(2)
        self.dims_mean = np.asarray(self.dims_mean, dtype=float).reshape(3)
        self.dims_var = np.broadcast_to(np.asarray(self.dims_var, dtype=float), (3,)).copy()
        self.bbox2d = np.asarray(self.bbox2d, dtype=float).reshape(2)

    @property
    def center_estimate(self) -> GaussianEstimate2D:
        return GaussianEstimate2D(self.center_peak.location, self.center_peak.var)


@dataclass
class Tracklet:
    id: int
    center_state: KeypointFilterState
    keypoints: list[KeypointFilterState]
    dims: DimensionBelief
    bbox2d: np.ndarray = field(default_factory=lambda: np.zeros(2))
    age: int = 0
    misses: int = 0
    last_pose: PoseEstimate | None = None

    @property
    def center(self) -> GaussianEstimate2D:
        return self.center_state.position_estimate

    def keypoint_positions(self) -> np.ndarray:
        return np.array([k.position for k in self.keypoints])

    def keypoint_sigmas(self) -> np.ndarray:
        return np.sqrt(np.array([k.position_var for k in self.keypoints]))

    def cuboid(self) -> Cuboid | None:
        """Camera-frame box at the solver's scale (height dimension = 1)."""
        if self.last_pose is None:
            return None
        return Cuboid(self.last_pose.pose, CuboidDimensions(self.dims.mean).normalized())


@dataclass
class ConditioningHeatmaps:
    center: Heatmap
    keypoints: list[Heatmap]

    @classmethod
    def empty(cls, camera: CameraIntrinsics, stride: int) -> ConditioningHeatmaps:
        return cls(
            Heatmap.empty(camera.width, camera.height, stride),
            [Heatmap.empty(camera.width, camera.height, stride) for _ in range(NUM_KEYPOINTS)],
        )


@dataclass
class StepResult:
    tracklets: list[Tracklet]
    poses: dict[int, PoseEstimate]
    heatmaps: ConditioningHeatmaps


def associate(tracklets: Sequence[Tracklet], observations: Sequence[Observation], gate: float):
    """Greedy nearest-neighbour matching of back-projected observation centres.

    Each observation's centre minus its tracking offset is compared with the
    tracklet centres; the globally closest pair is taken first and pairs
    beyond ``gate`` pixels are never matched.

    Returns ``(matches, unmatched_tracklets, unmatched_observations)`` with
    matches as ``(tracklet_index, observation_index)`` pairs.
    """
    nt, no = len(tracklets), len(observations)
    if nt == 0 or no == 0:
        return [], list(range(nt)), list(range(no))
    tc = np.array([t.center_state.position for t in tracklets])
    oc = np.array([o.center_peak.location - o.center_offset for o in observations])
    dist = np.linalg.norm(tc[:, None, :] - oc[None, :, :], axis=2)
    order = np.argsort(dist, axis=None, kind="stable")
    used_t, used_o, matches = set(), set(), []
    for flat in order:
        i, j = divmod(int(flat), no)
        if dist[i, j] > gate:
            break
        if i in used_t or j in used_o:
            continue
        matches.append((i, j))
        used_t.add(i)
        used_o.add(j)
    return (
        matches,
        [i for i in range(nt) if i not in used_t],
        [j for j in range(no) if j not in used_o],
    )


def _perturb(cuboid: Cuboid, cfg: TrackerConfig, rng: np.random.Generator) -> Cuboid:
    """Gaussian initialization error: one relative size factor, rotation about a random axis, translation.

    The size error is a single scalar, as in 9-DoF pose (R, t, s), so the
    box keeps its aspect ratios.
    """
    factor = max(1.0 + rng.normal(0.0, cfg.init_sigma_scale), 0.1)
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    angle = rng.normal(0.0, np.radians(cfg.init_sigma_rot_deg))
    rot = so3_exp(axis * angle) @ cuboid.pose.rotation
    trans = cuboid.pose.translation + rng.normal(0.0, cfg.init_sigma_trans, 3)
    return Cuboid(RigidTransform(rot, trans), CuboidDimensions(cuboid.dims.d * factor))


def _projected_keypoints(cuboid: Cuboid, camera: CameraIntrinsics):
    return project(cuboid.center, camera), project(cuboid.vertices(), camera)


class Tracker:
    """Stateful single-sequence tracker; not thread-safe."""

    def __init__(self, config: TrackerConfig | None = None, seed: int = 0):
        self.config = config or TrackerConfig()
        self.tracklets: list[Tracklet] = []
        self._next_id = 1
        self._rng = np.random.default_rng(seed)
        self._q = process_noise(self.config.accel_std)
        self.frame = 0

    # -- initialization -------------------------------------------------

    def _new_id(self) -> int:
        i = self._next_id
        self._next_id += 1
        return i

    def _tracklet_from_cuboid(self, cuboid: Cuboid, camera, kp_var, dims_var, center_var) -> Tracklet:
        c2d, v2d = _projected_keypoints(cuboid, camera)
        vvar = self.config.velocity_var
        kps = [
            KeypointFilterState.from_measurement(GaussianEstimate2D(v2d[j], kp_var[j]), velocity_var=vvar)
            for j in range(NUM_KEYPOINTS)
        ]
        center = KeypointFilterState.from_measurement(GaussianEstimate2D(c2d, center_var), velocity_var=vvar)
        height = cuboid.dims.d[1]
        pose = RigidTransform(cuboid.pose.rotation, cuboid.pose.translation / height)
        return Tracklet(
            id=self._new_id(),
            center_state=center,
            keypoints=kps,
            dims=DimensionBelief(cuboid.dims.d / height, dims_var),
            bbox2d=np.ptp(v2d, axis=0),
            last_pose=PoseEstimate(pose, 0.0, True, 0),
        )

    def initialize(
        self,
        camera: CameraIntrinsics,
        ground_truth: Sequence[Cuboid] | None = None,
        detections: Sequence[Observation] | None = None,
    ) -> list[Tracklet]:
        """Seed tracklets for the configured ``init_mode``.

        ``ground_truth`` holds camera-frame cuboids with metric dimensions.
        ``noisy_gt`` perturbs them with the configured Gaussians and sets
        keypoint and dimension variances from a Monte-Carlo spread of that
        same perturbation model. ``detector`` takes ``detections`` as-is.
        """
        cfg = self.config
        mode = cfg.init_mode
        self.tracklets = []
        if mode == "none":
            return []
        if mode == "detector":
            self.tracklets = [self._spawn(o) for o in (detections or [])]
            return list(self.tracklets)
        if not ground_truth:
            raise MissingGroundTruth(f"init mode {mode!r} requires ground-truth cuboids")
        for gt in ground_truth:
            if mode == "ground_truth":
                kp_var = np.full((NUM_KEYPOINTS, 2), cfg.gt_keypoint_var)
                tr = self._tracklet_from_cuboid(gt, camera, kp_var, cfg.gt_dims_var, cfg.gt_keypoint_var)
            else:
                noisy = _perturb(gt, cfg, self._rng)
                samples = [_perturb(gt, cfg, self._rng) for _ in range(cfg.init_mc_samples)]
                proj = []
                dims = []
                for s in samples:
                    try:
                        c2d, v2d = _projected_keypoints(s, camera)
                    except NonPositiveDepth:
                        continue
                    proj.append(np.vstack([c2d, v2d]))
                    dims.append(s.dims.d / s.dims.d[1])
                proj = np.array(proj)
                var = np.maximum(proj.var(axis=0), cfg.gt_keypoint_var)
                dims_var = np.maximum(np.array(dims).var(axis=0), cfg.gt_dims_var)
                tr = self._tracklet_from_cuboid(noisy, camera, var[1:], dims_var, var[0])
            self.tracklets.append(tr)
        return list(self.tracklets)

    # -- per-frame update -----------------------------------------------

    def _velocity_measurement(self, offset: GaussianEstimate2D) -> GaussianEstimate2D:
        if self.config.velocity_var_role == "measurement":
            return GaussianEstimate2D(offset.mean, self.config.velocity_var)
        return offset

    def _spawn(self, obs: Observation) -> Tracklet:
        cfg = self.config
        vvar = self.config.velocity_var
        kps = []
        for peak in obs.keypoint_peaks:
            if peak is not None:
                z = GaussianEstimate2D(peak.location, peak.var)
            else:
                # no evidence yet: park it on the centre with a flat variance
                z = GaussianEstimate2D(obs.center_peak.location, cfg.unseen_keypoint_var)
            kps.append(KeypointFilterState.from_measurement(z, velocity_var=vvar))
        center = KeypointFilterState.from_measurement(obs.center_estimate, velocity_var=vvar)
        return Tracklet(
            id=self._new_id(),
            center_state=center,
            keypoints=kps,
            dims=DimensionBelief(obs.dims_mean, obs.dims_var),
            bbox2d=obs.bbox2d.copy(),
        )

    def _filter_point(
        self,
        prev: KeypointFilterState,
        peak: PeakDetection | None,
        offset: GaussianEstimate2D | None,
    ) -> KeypointFilterState:
        estimates = []
        if offset is not None:
            estimates.append(GaussianEstimate2D(prev.position + offset.mean, prev.position_var + offset.var))
        if peak is not None:
            estimates.append(GaussianEstimate2D(peak.location, peak.var))
        z_pos = bayes_fuse(estimates) if estimates else None
        z_vel = self._velocity_measurement(offset) if offset is not None else None
        return kalman_update(kalman_predict(prev, self._q), z_pos, z_vel)

    def _raw_point(
        self,
        prev: KeypointFilterState,
        peak: PeakDetection | None,
        offset: GaussianEstimate2D | None,
    ) -> KeypointFilterState:
        """Unfiltered path: the peak when present, else the offset-propagated point."""
        if peak is not None:
            z = GaussianEstimate2D(peak.location, peak.var)
        elif offset is not None:
            z = GaussianEstimate2D(prev.position + offset.mean, prev.position_var + offset.var)
        else:
            z = prev.position_estimate
        return KeypointFilterState.from_measurement(z, velocity_var=self.config.velocity_var)

    def _update(self, tr: Tracklet, obs: Observation) -> None:
        point = self._filter_point if self.config.filtering else self._raw_point
        tr.keypoints = [
            point(prev, obs.keypoint_peaks[j], obs.keypoint_offsets[j]) for j, prev in enumerate(tr.keypoints)
        ]
        center_offset = GaussianEstimate2D(obs.center_offset, self.config.velocity_var)
        if self.config.filtering:
            tr.center_state = kalman_update(
                kalman_predict(tr.center_state, self._q),
                obs.center_estimate,
                self._velocity_measurement(center_offset),
            )
            tr.dims = dim_update(tr.dims, obs.dims_mean, obs.dims_var)
        else:
            tr.center_state = KeypointFilterState.from_measurement(obs.center_estimate)
            tr.dims = DimensionBelief(obs.dims_mean, obs.dims_var)
        tr.bbox2d = obs.bbox2d.copy()
        tr.misses = 0

    def _coast(self, tr: Tracklet) -> None:
        tr.misses += 1
        if self.config.filtering:
            tr.keypoints = [kalman_predict(k, self._q) for k in tr.keypoints]
            tr.center_state = kalman_predict(tr.center_state, self._q)

    def _solve(self, tr: Tracklet, camera: CameraIntrinsics) -> PoseEstimate | None:
        cfg = self.config
        dims = CuboidDimensions(tr.dims.mean)
        kp = tr.keypoint_positions()
        kvar = np.array([k.position_var for k in tr.keypoints])
        if cfg.include_center:
            problem = build_problem(kp, kvar, dims, camera, tr.center.mean, tr.center.var)
        else:
            problem = build_problem(kp, kvar, dims, camera)
        warm = cfg.filtering and tr.last_pose is not None and tr.last_pose.converged
        init = tr.last_pose.pose if warm else None
        try:
            est = solve_pnp(problem, init=init)
        except (Degenerate, NonPositiveDepth) as exc:
            log.debug("tracklet %d: no pose this frame (%s)", tr.id, exc)
            return None
        tr.last_pose = est
        return est

    def render(self, camera: CameraIntrinsics) -> ConditioningHeatmaps:
        """Conditioning heatmaps from the current tracklet posteriors."""
        cfg = self.config
        maps = ConditioningHeatmaps.empty(camera, cfg.heatmap_stride)
        if not cfg.conditioning:
            return maps
        for tr in self.tracklets:
            states = [(maps.center, tr.center_state)] + list(zip(maps.keypoints, tr.keypoints))
            for hm, st in states:
                std = np.sqrt(st.position_var)
                scale = render_scale(float(std.mean()))
                if scale > 0.0:
                    render_gaussian(hm, st.position, np.maximum(std, cfg.min_render_sigma), scale)
        return maps

    def step(self, observations: Sequence[Observation], camera: CameraIntrinsics) -> StepResult:
        """Advance one frame. Tracklets missed more than ``max_misses`` times are retired."""
        cfg = self.config
        matches, lost, fresh = associate(self.tracklets, observations, cfg.gate_px)
        poses: dict[int, PoseEstimate] = {}
        updated = []
        for ti, oi in matches:
            tr = self.tracklets[ti]
            self._update(tr, observations[oi])
            updated.append(tr)
        lost_tracks = [self.tracklets[ti] for ti in lost]
        for tr in lost_tracks:
            self._coast(tr)
        for tr in self.tracklets:
            tr.age += 1
        self.tracklets = [t for t in self.tracklets if t.misses <= cfg.max_misses]
        for oi in fresh:
            tr = self._spawn(observations[oi])
            self.tracklets.append(tr)
            updated.append(tr)
        if cfg.filtering and cfg.coast_poses:
            alive = {id(t) for t in self.tracklets}
            updated += [t for t in lost_tracks if id(t) in alive]
        for tr in updated:
            est = self._solve(tr, camera)
            if est is not None:
                poses[tr.id] = est
        self.frame += 1
        return StepResult(list(self.tracklets), poses, self.render(camera))
