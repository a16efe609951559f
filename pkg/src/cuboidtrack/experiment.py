"""Experiment plumbing: configuration, simulate -> track -> eval, and the ablation driver."""

from __future__ import annotations

import logging
import math
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Literal, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from .geometry import Cuboid, CuboidDimensions, RigidTransform
from .metrics import (
    CONSISTENCY_WINDOW,
    SYMMETRY_SAMPLES,
    FrameMetrics,
    FrameResult,
    MetricReport,
    aggregate,
    align_scale,
    evaluate_sequence,
    iou3d,
)
from .noise_sim import CENTER_NOISE, KEYPOINT_NOISE, NoiseConfig, corrupt
from .records import dumps_line, sequence_record_to_dict
from .synthworld import (
    MockDetectorSpec,
    SceneSpec,
    SequenceRecord,
    camera_frame_gt,
    generate_sequence,
    mock_detect,
)
from .filtering import GaussianEstimate2D
from .heatmap import PeakDetection
from .tracker import NUM_KEYPOINTS, Observation, Tracker, TrackerConfig

log = logging.getLogger(__name__)

SEED_MAX = 2**64 - 1


class FrameMisalignment(ValueError):
    """Predictions and ground truth do not cover the same frames."""


class NoiseSpec(BaseModel):
    """Detection-level events layered on the mock detector.

    When ``detection_events`` is on, each frame's objects pass through the
    corruption model: a dropped centre removes the whole detection, a dropped
    keypoint removes that peak, and a centre false positive adds a phantom
    detection with no keypoint evidence.
    """

    model_config = ConfigDict(extra="forbid", frozen=True)

    detection_events: bool = True
    center: NoiseConfig = CENTER_NOISE
    keypoint: NoiseConfig = KEYPOINT_NOISE


class MetricOptions(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    consistency_window: int = Field(CONSISTENCY_WINDOW, ge=2)
    symmetry_samples: int = Field(SYMMETRY_SAMPLES, ge=1)
    pixel_normalizer: Literal["diagonal", "width", "none"] = "diagonal"


class OutputSpec(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    dir: str = "out"


class ExperimentConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    seed: int = Field(42, ge=0, le=SEED_MAX)
    sequences: int = Field(20, ge=1)
    # run the detector inside the loop so it sees the tracker's heatmaps
    closed_loop: bool = True
    scene: SceneSpec = SceneSpec()
    detector: MockDetectorSpec = MockDetectorSpec()
    noise: NoiseSpec = NoiseSpec()
    tracker: TrackerConfig = TrackerConfig()
    metrics: MetricOptions = MetricOptions()
    output: OutputSpec = OutputSpec()

    def with_tracker(self, **changes) -> ExperimentConfig:
        return self.model_copy(update={"tracker": self.tracker.model_copy(update=changes)})


# -- seeding ----------------------------------------------------------------


def _derive(*keys: int) -> int:
    return int(np.random.SeedSequence([int(k) for k in keys]).generate_state(1, dtype=np.uint64)[0])


def sequence_seed(seed: int, index: int) -> int:
    return _derive(seed, index, 0x51)


def sequence_key(records: Sequence[SequenceRecord]) -> int:
    """Stable content hash of a sequence's ground truth, used to key its noise streams."""
    head = sequence_record_to_dict(records[0])
    head["observations"] = []
    return zlib.crc32(dumps_line(head).encode("utf-8"))


def detector_seed(seed: int, key: int, frame: int) -> list[int]:
    return [seed, key, frame, 0xDE7]


# -- simulate -----------------------------------------------------------------


def _phantom(location, obs_like: Observation | None, unseen_var: float) -> Observation:
    peak = PeakDetection(location, 0.5, (4.0, 4.0))
    zeros = GaussianEstimate2D(np.zeros(2), unseen_var)
    return Observation(
        center_peak=peak,
        keypoint_peaks=[None] * NUM_KEYPOINTS,
        keypoint_offsets=[zeros] * NUM_KEYPOINTS,
        center_offset=np.zeros(2),
        dims_mean=np.ones(3) if obs_like is None else obs_like.dims_mean,
        dims_var=np.ones(3),
    )


def detect(
    cfg: ExperimentConfig,
    records: Sequence[SequenceRecord],
    frame: int,
    heatmaps,
    key: int,
    salt: int = 0,
) -> list[Observation]:
    """Mock detections for ``records[frame]`` with optional detection-level events."""
    rec = records[frame]
    prev = records[frame - 1] if frame > 0 else None
    seed = detector_seed(cfg.seed, key, frame) + [salt]
    obs = mock_detect(rec, prev, heatmaps, cfg.detector, seed)
    if not cfg.noise.detection_events or not obs:
        return obs
    k = rec.intrinsics
    centers = np.array([o.center_peak.location for o in obs])
    kps = np.array(
        [[p.location if p is not None else (np.nan, np.nan) for p in o.keypoint_peaks] for o in obs]
    )
    events = corrupt(centers, kps, (k.width, k.height), cfg.noise.center, cfg.noise.keypoint, seed + [1])
    kept: dict[int, set[int]] = {}
    phantoms = []
    for p in events.points:
        if p.is_false_positive:
            if p.is_center:
                phantoms.append(p.location)
            continue
        kept.setdefault(p.obj, set())
        if not p.is_center:
            kept[p.obj].add(p.keypoint)
    out = []
    for i, o in enumerate(obs):
        if i not in kept:
            continue
        peaks = [pk if j in kept[i] else None for j, pk in enumerate(o.keypoint_peaks)]
        out.append(
            Observation(o.center_peak, peaks, o.keypoint_offsets, o.center_offset, o.dims_mean, o.dims_var, o.bbox2d)
        )
    out.extend(_phantom(loc, obs[0], cfg.tracker.unseen_keypoint_var) for loc in phantoms)
    return out


def simulate(cfg: ExperimentConfig, index: int) -> list[SequenceRecord]:
    """Ground truth plus open-loop (unconditioned) observations for one sequence."""
    records = generate_sequence(cfg.scene, sequence_seed(cfg.seed, index))
    key = sequence_key(records)
    for f, rec in enumerate(records):
        rec.observations = detect(cfg, records, f, None, key)
    return records


# -- track --------------------------------------------------------------------


def prediction_record(frame: int, tracklet, estimate) -> dict:
    pose = estimate.pose
    return {
        "frame": int(frame),
        "id": int(tracklet.id),
        "rotation": [float(x) for x in pose.rotation.ravel()],
        "translation": [float(x) for x in pose.translation],
        "dims": [float(x) for x in CuboidDimensions(tracklet.dims.mean).normalized().d],
        "keypoints_2d": tracklet.keypoint_positions().tolist(),
        "keypoint_sigmas": tracklet.keypoint_sigmas().tolist(),
        "converged": bool(estimate.converged),
    }


def track(
    cfg: ExperimentConfig,
    records: Sequence[SequenceRecord],
    tracker_cfg: TrackerConfig | None = None,
    closed_loop: bool | None = None,
) -> list[dict]:
    """Run the tracker over a sequence and return prediction records in frame order.

    In closed-loop mode the mock detector is re-run every frame with the
    tracker's conditioning heatmaps; otherwise the observations stored in
    ``records`` are replayed.
    """
    tcfg = tracker_cfg or cfg.tracker
    closed_loop = cfg.closed_loop if closed_loop is None else closed_loop
    if not records:
        return []
    key = sequence_key(records)
    camera = records[0].intrinsics
    tracker = Tracker(tcfg, seed=_derive(cfg.seed, key, 0x7A))
    if tcfg.init_mode in ("ground_truth", "noisy_gt"):
        tracker.initialize(camera, ground_truth=camera_frame_gt(records[0]))
    elif tcfg.init_mode == "detector":
        # an independent first-frame detection, as from a separate detector
        tracker.initialize(camera, detections=detect(cfg, records, 0, None, key, salt=1))
    heatmaps = tracker.render(camera) if tcfg.conditioning else None
    out = []
    for f, rec in enumerate(records):
        if closed_loop:
            obs = detect(cfg, records, f, heatmaps if tcfg.conditioning else None, key)
        else:
            obs = rec.observations
        result = tracker.step(obs, rec.intrinsics)
        heatmaps = result.heatmaps
        by_id = {t.id: t for t in result.tracklets}
        for tid in sorted(result.poses):
            out.append(prediction_record(rec.frame, by_id[tid], result.poses[tid]))
    return out


# -- eval ---------------------------------------------------------------------


def prediction_cuboid(p: dict) -> Cuboid:
    pose = RigidTransform(np.array(p["rotation"], dtype=float).reshape(3, 3), p["translation"])
    return Cuboid(pose, CuboidDimensions(p["dims"]))


def check_alignment(records: Sequence[SequenceRecord], predictions: Sequence[dict], frames: int | None = None):
    """Raise :class:`FrameMisalignment` unless predictions fit the sequence's frame range."""
    n = len(records)
    if [r.frame for r in records] != list(range(n)):
        raise FrameMisalignment("sequence frames are not numbered 0..n-1")
    if frames is not None and frames != n:
        raise FrameMisalignment(f"predictions cover {frames} frames, sequence has {n}")
    bad = [p["frame"] for p in predictions if not 0 <= int(p["frame"]) < n]
    if bad:
        raise FrameMisalignment(f"prediction frame {bad[0]} outside sequence of {n} frames")


def _match(gts: list[Cuboid], preds: list[Cuboid]) -> dict[int, int]:
    """Greedy one-to-one assignment of predictions to GT boxes, best IoU first."""
    pairs = []
    for i, g in enumerate(gts):
        for j, p in enumerate(preds):
            a = align_scale(p, g)
            iou = iou3d(a, g)
            score = iou if iou > 0 else -float(np.linalg.norm(a.center - g.center))
            pairs.append((-score, i, j))
    pairs.sort()
    used_g, used_p, out = set(), set(), {}
    for _, i, j in pairs:
        if i in used_g or j in used_p:
            continue
        out[i] = j
        used_g.add(i)
        used_p.add(j)
    return out


def evaluate(
    cfg: ExperimentConfig,
    records: Sequence[SequenceRecord],
    predictions: Sequence[dict],
    name: str = "",
    frames: int | None = None,
) -> list[tuple[MetricReport, list[FrameMetrics]]]:
    """One report per ground-truth object of the sequence."""
    check_alignment(records, predictions, frames)
    by_frame: dict[int, list[dict]] = {}
    for p in predictions:
        by_frame.setdefault(int(p["frame"]), []).append(p)
    objects = records[0].objects
    results: list[list[FrameResult]] = [[] for _ in objects]
    for rec in records:
        gts = camera_frame_gt(rec)
        preds = [prediction_cuboid(p) for p in by_frame.get(rec.frame, [])]
        assignment = _match(gts, preds)
        for i, obj in enumerate(rec.objects):
            pred = preds[assignment[i]] if i in assignment else None
            results[i].append(FrameResult(pred, gts[i], rec.cam_to_world, rec.intrinsics, obj.symmetric))
    opts = cfg.metrics
    out = []
    for obj, frs in zip(objects, results):
        label = name if len(objects) == 1 else f"{name}:{obj.id}"
        out.append(
            evaluate_sequence(
                frs,
                normalizer=opts.pixel_normalizer,
                window=min(opts.consistency_window, len(frs)),
                symmetry_samples=opts.symmetry_samples,
                name=label,
            )
        )
    return out


# -- ablation -----------------------------------------------------------------


@dataclass(frozen=True)
class Variant:
    name: str
    table: str
    changes: tuple[tuple[str, object], ...]


VARIANTS = (
    Variant("full", "components", ()),
    Variant("w/o filtering", "components", (("filtering", False),)),
    Variant("w/o heatmap", "components", (("conditioning", False),)),
    Variant("GT", "initialization", (("init_mode", "ground_truth"),)),
    Variant("Noisy GT", "initialization", (("init_mode", "noisy_gt"),)),
    Variant("detector", "initialization", (("init_mode", "detector"),)),
    Variant("None", "initialization", (("init_mode", "none"),)),
)


def _variant_config(cfg: ExperimentConfig, v: Variant) -> TrackerConfig:
    return cfg.tracker.model_copy(update=dict(v.changes))


def ablate_sequence(cfg: ExperimentConfig, index: int) -> dict[str, list[MetricReport]]:
    records = simulate(cfg, index)
    name = f"seq_{index:04d}"
    done: dict[TrackerConfig, list[MetricReport]] = {}
    out = {}
    for v in VARIANTS:
        tcfg = _variant_config(cfg, v)
        if tcfg not in done:
            preds = track(cfg, records, tcfg)
            done[tcfg] = [rep for rep, _ in evaluate(cfg, records, preds, name)]
        out[v.name] = done[tcfg]
    return out


def _ablate_job(args):
    cfg_json, index = args
    return ablate_sequence(ExperimentConfig.model_validate_json(cfg_json), index)


def map_sequences(fn, cfg: ExperimentConfig, jobs: int):
    """``fn((cfg_json, index))`` over all sequences, in index order."""
    tasks = [(cfg.model_dump_json(), i) for i in range(cfg.sequences)]
    if jobs <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, tasks))


@dataclass
class AblationResult:
    rows: dict[str, MetricReport]
    per_sequence: dict[str, list[MetricReport]]

    def table(self) -> str:
        lines = []
        for table in ("components", "initialization"):
            lines.append(f"[{table}]")
            lines.append(f"{'method':<14} {'AP@0.5':>8} {'pix err':>8} {'AP az15':>8} {'AP el10':>8} {'consist':>8}")
            for v in VARIANTS:
                if v.table != table:
                    continue
                r = self.rows[v.name]
                lines.append(
                    f"{v.name:<14} {r.ap_iou50:8.4f} {r.mean_pixel_error:8.4f} "
                    f"{r.ap_azimuth15:8.4f} {r.ap_elevation10:8.4f} {r.consistency:8.4f}"
                )
        return "\n".join(lines) + "\n"


def ablate(cfg: ExperimentConfig, jobs: int = 1) -> AblationResult:
    per_seq = map_sequences(_ablate_job, cfg, jobs)
    per_variant = {v.name: [r for s in per_seq for r in s[v.name]] for v in VARIANTS}
    rows = {name: aggregate(reps, name) for name, reps in per_variant.items()}
    return AblationResult(rows, per_variant)


def is_finite_report(r: MetricReport) -> bool:
    return all(math.isfinite(x) for x in (r.ap_iou50, r.ap_azimuth15, r.ap_elevation10, r.consistency))
