"""Test-time error model for conditioning heatmaps.

Ground-truth object centres and keypoints are jittered, randomly dropped and
padded with false positives, then rendered with a noise-dependent peak scale.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from .errors import EmptyWindow
from .heatmap import Heatmap, render_gaussian

NOISE_ALPHA = 2.0
NOISE_BETA = 4.5


class NoiseConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    sigma: float = Field(1.0, ge=0.0)
    lambda_fp: float = Field(0.1, ge=0.0, le=1.0)
    lambda_fn: float = Field(0.2, ge=0.0, le=1.0)
    alpha: float = Field(NOISE_ALPHA, gt=1.0)
    beta_noise: float = NOISE_BETA
    frame_window: int = Field(5, ge=1)


CENTER_NOISE = NoiseConfig(sigma=1.0, lambda_fp=0.1, lambda_fn=0.2)
KEYPOINT_NOISE = NoiseConfig(sigma=1.0, lambda_fp=0.05, lambda_fn=0.1)


def noise_scale(n, alpha: float = NOISE_ALPHA, beta_noise: float = NOISE_BETA):
    """Render scale for a point displaced by ``n`` pixels: max(1 - alpha**(n - beta), 0)."""
    n = np.asarray(n, dtype=float)
    k = np.where(n >= beta_noise, 0.0, np.maximum(1.0 - alpha ** (n - beta_noise), 0.0))
    return float(k) if k.ndim == 0 else k


@dataclass(frozen=True)
class NoisyPoint:
    """One rendered point.

    ``obj`` is the source object index, or -1 for an injected false positive.
    ``keypoint`` is the vertex index, or -1 for an object centre.
    """

    location: np.ndarray
    scale: float
    obj: int
    keypoint: int

    @property
    def is_center(self) -> bool:
        return self.keypoint == -1

    @property
    def is_false_positive(self) -> bool:
        return self.obj == -1


@dataclass
class CorruptedPoints:
    points: list[NoisyPoint]
    # bookkeeping for rate checks
    centers_dropped: int = 0
    keypoints_dropped: int = 0
    center_slots: int = 0
    keypoint_slots: int = 0
    center_fp: int = 0
    keypoint_fp: int = 0

    def centers(self) -> list[NoisyPoint]:
        return [p for p in self.points if p.is_center]

    def keypoints(self) -> list[NoisyPoint]:
        return [p for p in self.points if not p.is_center]


def _jitter(rng, sigma, cfg: NoiseConfig):
    n = rng.normal(0.0, 1.0, 2) * sigma
    return n, noise_scale(float(np.hypot(*n)), cfg.alpha, cfg.beta_noise)


def _false_positive(rng, width, height, cfg: NoiseConfig, keypoint: int) -> NoisyPoint:
    loc = rng.uniform((0.0, 0.0), (width, height))
    _, k = _jitter(rng, cfg.sigma, cfg)
    return NoisyPoint(loc, k, -1, keypoint)


def corrupt(
    centers,
    keypoints,
    image_size: tuple[int, int],
    center_cfg: NoiseConfig = CENTER_NOISE,
    keypoint_cfg: NoiseConfig = KEYPOINT_NOISE,
    rng_seed=0,
) -> CorruptedPoints:
    """Apply jitter, false negatives and false positives to labelled points.

    ``centers`` is (M, 2); ``keypoints`` is (M, K, 2) with NaN rows for
    unlabelled keypoints. Each surviving point gets ``noise_scale`` of its
    jitter norm. Every emitted point independently spawns a false positive
    of its role with probability ``lambda_fp``, placed uniformly over the
    image. Keypoints of an object are considered only when that object's
    centre survived.
    """
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    centers = np.asarray(centers, dtype=float).reshape(-1, 2)
    keypoints = np.asarray(keypoints, dtype=float).reshape(len(centers), -1, 2)
    width, height = image_size
    out = CorruptedPoints([])
    for i, c in enumerate(centers):
        out.center_slots += 1
        if rng.random() < center_cfg.lambda_fn:
            out.centers_dropped += 1
            continue
        n, k = _jitter(rng, center_cfg.sigma, center_cfg)
        out.points.append(NoisyPoint(c + n, k, i, -1))
        if rng.random() < center_cfg.lambda_fp:
            out.center_fp += 1
            out.points.append(_false_positive(rng, width, height, center_cfg, -1))
        for j, kp in enumerate(keypoints[i]):
            if np.any(np.isnan(kp)):
                continue
            out.keypoint_slots += 1
            if rng.random() < keypoint_cfg.lambda_fn:
                out.keypoints_dropped += 1
                continue
            n, k = _jitter(rng, keypoint_cfg.sigma, keypoint_cfg)
            out.points.append(NoisyPoint(kp + n, k, i, j))
            if rng.random() < keypoint_cfg.lambda_fp:
                out.keypoint_fp += 1
                out.points.append(_false_positive(rng, width, height, keypoint_cfg, j))
    return out


def render_corrupted(
    corrupted: CorruptedPoints,
    image_size: tuple[int, int],
    num_keypoints: int = 8,
    stride: int = 4,
    render_sigma: float = 2.0,
) -> tuple[Heatmap, list[Heatmap]]:
    """Render a centre heatmap and one heatmap per keypoint index."""
    width, height = image_size
    center_map = Heatmap.empty(width, height, stride)
    kp_maps = [Heatmap.empty(width, height, stride) for _ in range(num_keypoints)]
    for p in corrupted.points:
        target = center_map if p.is_center else kp_maps[p.keypoint]
        render_gaussian(target, p.location, render_sigma, p.scale)
    return center_map, kp_maps


def sample_paired_frame(t: int, frame_window: int, length: int, rng) -> int:
    """Uniform pick of ``k != t`` with ``|k - t| < frame_window`` inside ``[0, length)``."""
    if frame_window < 1:
        raise ValueError("frame_window must be >= 1")
    lo = max(0, t - frame_window + 1)
    hi = min(length - 1, t + frame_window - 1)
    candidates = [k for k in range(lo, hi + 1) if k != t]
    if not candidates:
        raise EmptyWindow(f"no frame within {frame_window} of {t} in a sequence of {length}")
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    return int(candidates[rng.integers(len(candidates))])
