"""JSON-Lines serialization of sequence and prediction records.

Sequence line::

    {"frame": int,
     "intrinsics": {"fx", "fy", "cx", "cy", "w", "h"},
     "cam_to_world": {"R": [9 floats, row-major], "t": [3]},
     "objects": [{"id", "dims": [3], "world_pose": {"R": [9], "t": [3]}, "symmetric": bool}],
     "observations": [observation, ...]}

Observation::

    {"center": peak, "keypoints": [peak | null] * 8,
     "offsets": [{"mean": [2], "var": [2]} | null] * 8,
     "center_offset": [2], "dims": {"mean": [3], "var": [3]}, "bbox2d": [2]}

    peak = {"xy": [2], "sigma": [2], "confidence": float}

Prediction line::

    {"frame", "id", "rotation": [9], "translation": [3], "dims": [3],
     "keypoints_2d": [[2] * 8], "keypoint_sigmas": [[2] * 8], "converged": bool}

Floats are written with Python's shortest round-trip repr, so reading a file
back reproduces every value bit for bit.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Iterable

import numpy as np

from .filtering import GaussianEstimate2D
from .geometry import CameraIntrinsics, RigidTransform
from .heatmap import PeakDetection
from .synthworld import ObjectRecord, SequenceRecord
from .tracker import Observation


class RecordError(ValueError):
    """A JSON-Lines record is malformed; ``line`` is 1-based."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


def _floats(a) -> list[float]:
    return [float(x) for x in np.asarray(a, dtype=float).ravel()]


def _pose_dict(t: RigidTransform) -> dict:
    return {"R": _floats(t.rotation), "t": _floats(t.translation)}


def _pose(d) -> RigidTransform:
    return RigidTransform(np.array(d["R"], dtype=float).reshape(3, 3), d["t"])


def _peak_dict(p: PeakDetection | None):
    if p is None:
        return None
    return {"xy": _floats(p.location), "sigma": _floats(p.sigma), "confidence": float(p.confidence)}


def _peak(d) -> PeakDetection | None:
    if d is None:
        return None
    return PeakDetection(d["xy"], float(d["confidence"]), d["sigma"])


def observation_to_dict(o: Observation) -> dict:
    return {
        "center": _peak_dict(o.center_peak),
        "keypoints": [_peak_dict(p) for p in o.keypoint_peaks],
        "offsets": [None if g is None else {"mean": _floats(g.mean), "var": _floats(g.var)} for g in o.keypoint_offsets],
        "center_offset": _floats(o.center_offset),
        "dims": {"mean": _floats(o.dims_mean), "var": _floats(o.dims_var)},
        "bbox2d": _floats(o.bbox2d),
    }


def observation_from_dict(d) -> Observation:
    return Observation(
        center_peak=_peak(d["center"]),
        keypoint_peaks=[_peak(p) for p in d["keypoints"]],
        keypoint_offsets=[None if g is None else GaussianEstimate2D(g["mean"], g["var"]) for g in d["offsets"]],
        center_offset=d["center_offset"],
        dims_mean=d["dims"]["mean"],
        dims_var=d["dims"]["var"],
        bbox2d=d.get("bbox2d", [0.0, 0.0]),
    )


def sequence_record_to_dict(r: SequenceRecord) -> dict:
    k = r.intrinsics
    return {
        "frame": int(r.frame),
        "intrinsics": {"fx": k.fx, "fy": k.fy, "cx": k.cx, "cy": k.cy, "w": k.width, "h": k.height},
        "cam_to_world": _pose_dict(r.cam_to_world),
        "objects": [
            {"id": o.id, "dims": _floats(o.dims), "world_pose": _pose_dict(o.world_pose), "symmetric": bool(o.symmetric)}
            for o in r.objects
        ],
        "observations": [observation_to_dict(o) for o in r.observations],
    }


def sequence_record_from_dict(d) -> SequenceRecord:
    k = d["intrinsics"]
    return SequenceRecord(
        frame=int(d["frame"]),
        intrinsics=CameraIntrinsics(
            float(k["fx"]), float(k["fy"]), float(k["cx"]), float(k["cy"]), int(k["w"]), int(k["h"])
        ),
        cam_to_world=_pose(d["cam_to_world"]),
        objects=[
            ObjectRecord(int(o["id"]), np.array(o["dims"], dtype=float), _pose(o["world_pose"]), bool(o["symmetric"]))
            for o in d["objects"]
        ],
        observations=[observation_from_dict(o) for o in d.get("observations", [])],
    )


def dumps_line(obj) -> str:
    return json.dumps(obj, separators=(",", ":"), allow_nan=False)


def write_jsonl(path, rows: Iterable[dict]) -> None:
    path = Path(path)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for row in rows:
            fh.write(dumps_line(row))
            fh.write("\n")


def read_jsonl(path, parse=lambda d: d) -> list:
    """Parse every non-blank line; raises :class:`RecordError` with the offending line number."""
    out = []
    with open(Path(path), encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                out.append(parse(json.loads(line)))
            except (ValueError, KeyError, TypeError, IndexError) as exc:
                raise RecordError(f"{type(exc).__name__}: {exc}", lineno) from exc
    return out


def write_sequence(path, records: Iterable[SequenceRecord]) -> None:
    write_jsonl(path, (sequence_record_to_dict(r) for r in records))


def read_sequence(path) -> list[SequenceRecord]:
    return read_jsonl(path, sequence_record_from_dict)


PREDICTION_FIELDS = (
    "frame",
    "id",
    "rotation",
    "translation",
    "dims",
    "keypoints_2d",
    "keypoint_sigmas",
    "converged",
)


def _check_prediction(d) -> dict:
    missing = [f for f in PREDICTION_FIELDS if f not in d]
    if missing:
        raise KeyError(f"prediction missing fields {missing}")
    if len(d["rotation"]) != 9 or len(d["translation"]) != 3 or len(d["dims"]) != 3:
        raise ValueError("prediction pose/dims have the wrong length")
    return d


def read_predictions(path) -> list[dict]:
    return read_jsonl(path, _check_prediction)
