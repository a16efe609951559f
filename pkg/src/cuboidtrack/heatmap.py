"""Uncertainty-scaled Gaussian heatmaps: rendering, peak extraction, PGM dump.

A heatmap cell ``(row, col)`` is centred on pixel ``(col * stride, row * stride)``,
so a pixel location is cell-aligned when both coordinates are multiples of
the stride.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.ndimage import maximum_filter

RENDER_A = 9.0
RENDER_B = 3.0
RENDER_C = 0.15
DEFAULT_STRIDE = 4
MIN_PEAK_SIGMA = 0.5


@dataclass
class Heatmap:
    values: np.ndarray
    stride: int = DEFAULT_STRIDE

    def __post_init__(self):
        if self.stride < 1:
            raise ValueError("stride must be >= 1")
        self.values = np.asarray(self.values, dtype=float)

    @classmethod
    def empty(cls, width: int, height: int, stride: int = DEFAULT_STRIDE) -> Heatmap:
        rows = -(-height // stride)
        cols = -(-width // stride)
        return cls(np.zeros((rows, cols)), stride)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def copy(self) -> Heatmap:
        return Heatmap(self.values.copy(), self.stride)

    def sample(self, xy) -> float:
        """Bilinear lookup at a pixel location; 0 outside the grid."""
        x, y = float(xy[0]) / self.stride, float(xy[1]) / self.stride
        rows, cols = self.values.shape
        if not (0 <= x <= cols - 1 and 0 <= y <= rows - 1):
            return 0.0
        c0, r0 = min(int(x), cols - 2), min(int(y), rows - 2)
        fx, fy = x - c0, y - r0
        v = self.values
        top = v[r0, c0] * (1 - fx) + v[r0, c0 + 1] * fx
        bot = v[r0 + 1, c0] * (1 - fx) + v[r0 + 1, c0 + 1] * fx
        return float(top * (1 - fy) + bot * fy)


@dataclass(frozen=True)
class PeakDetection:
    location: np.ndarray
    confidence: float
    sigma: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "location", np.asarray(self.location, dtype=float).reshape(2))
        object.__setattr__(self, "sigma", np.asarray(self.sigma, dtype=float).reshape(2))
        if not 0.0 < self.confidence <= 1.0:
            raise ValueError(f"peak confidence must lie in (0, 1], got {self.confidence}")
        if not np.all(self.sigma > 0):
            raise ValueError("peak sigma must be positive")

    @property
    def var(self) -> np.ndarray:
        return self.sigma**2


def render_scale(sigma, a: float = RENDER_A, b: float = RENDER_B, c: float = RENDER_C):
    """Peak height for a prediction with pixel std ``sigma``: max(1 - c**((a - sigma)/(a - b)), 0)."""
    sigma = np.asarray(sigma, dtype=float)
    k = np.maximum(1.0 - c ** ((a - sigma) / (a - b)), 0.0)
    k = np.where(sigma >= a, 0.0, k)
    return float(k) if k.ndim == 0 else k


def sigma_from_scale(k, a: float = RENDER_A, b: float = RENDER_B, c: float = RENDER_C):
    """Inverse of :func:`render_scale`, clamped to ``[MIN_PEAK_SIGMA, a]``."""
    k = np.asarray(k, dtype=float)
    k_max = render_scale(0.0, a, b, c)
    with np.errstate(divide="ignore", invalid="ignore"):
        s = a - (a - b) * np.log(np.clip(1.0 - k, 1e-300, None)) / math.log(c)
    s = np.where(k >= k_max, MIN_PEAK_SIGMA, s)
    s = np.clip(s, MIN_PEAK_SIGMA, a)
    return float(s) if s.ndim == 0 else s


def render_gaussian(hm: Heatmap, center, sigma, scale: float, truncate: float = 4.0) -> Heatmap:
    """Max-composite ``scale * exp(-dx²/2σx² - dy²/2σy²)`` into ``hm`` in place.

    ``center`` and ``sigma`` are in pixels. Centres outside the image are ignored.
    """
    if not 0.0 <= scale <= 1.0:
        raise ValueError("scale must lie in [0, 1]")
    sigma = np.broadcast_to(np.asarray(sigma, dtype=float), (2,))
    if np.any(sigma <= 0):
        raise ValueError("sigma must be positive")
    if scale == 0.0:
        return hm
    rows, cols = hm.values.shape
    s = hm.stride
    cx, cy = float(center[0]) / s, float(center[1]) / s
    if not (-0.5 <= cx <= cols - 0.5 and -0.5 <= cy <= rows - 0.5):
        return hm
    sx, sy = sigma[0] / s, sigma[1] / s
    c0 = max(int(math.floor(cx - truncate * sx)), 0)
    c1 = min(int(math.ceil(cx + truncate * sx)), cols - 1)
    r0 = max(int(math.floor(cy - truncate * sy)), 0)
    r1 = min(int(math.ceil(cy + truncate * sy)), rows - 1)
    dx = np.arange(c0, c1 + 1) - cx
    dy = np.arange(r0, r1 + 1) - cy
    g = scale * np.exp(-0.5 * (dy[:, None] / sy) ** 2 - 0.5 * (dx[None, :] / sx) ** 2)
    window = hm.values[r0 : r1 + 1, c0 : c1 + 1]
    np.maximum(window, g, out=window)
    return hm


def _refine(lm: float, l0: float, lp: float) -> tuple[float, float]:
    """Vertex offset and height of the parabola through (-1, lm), (0, l0), (1, lp)."""
    denom = lm - 2.0 * l0 + lp
    if denom >= 0.0:
        return 0.0, l0
    off = 0.5 * (lm - lp) / denom
    off = float(np.clip(off, -0.5, 0.5))
    return off, l0 - 0.25 * (lm - lp) * off


def extract_peaks(
    hm: Heatmap,
    threshold: float = 0.1,
    max_peaks: int = 10,
    a: float = RENDER_A,
    b: float = RENDER_B,
    c: float = RENDER_C,
) -> list[PeakDetection]:
    """Local maxima above ``threshold`` in descending confidence.

    Sub-cell position and peak height come from a per-axis parabola fitted to
    log-values over the 3-cell neighbourhood, which is exact for an isolated
    Gaussian. Peak sigma is recovered by inverting the render scale.
    """
    if not 0.0 < threshold < 1.0:
        raise ValueError("threshold must lie in (0, 1)")
    v = hm.values
    if v.size == 0 or v.max() <= threshold:
        return []
    is_max = (v == maximum_filter(v, size=3, mode="constant", cval=0.0)) & (v > threshold)
    rows, cols = np.nonzero(is_max)
    order = np.argsort(-v[rows, cols], kind="stable")
    nrows, ncols = v.shape
    peaks = []
    with np.errstate(divide="ignore"):
        logv = np.log(v)
    for idx in order:
        if len(peaks) >= max_peaks:
            break
        r, col = int(rows[idx]), int(cols[idx])
        l0 = logv[r, col]
        ox = oy = 0.0
        hx = hy = l0
        if 0 < col < ncols - 1 and np.isfinite(logv[r, col - 1]) and np.isfinite(logv[r, col + 1]):
            ox, hx = _refine(logv[r, col - 1], l0, logv[r, col + 1])
        if 0 < r < nrows - 1 and np.isfinite(logv[r - 1, col]) and np.isfinite(logv[r + 1, col]):
            oy, hy = _refine(logv[r - 1, col], l0, logv[r + 1, col])
        # separable Gaussian: log-peak = l0 + (hx - l0) + (hy - l0)
        conf = float(min(math.exp(hx + hy - l0), 1.0))
        loc = np.array([(col + ox) * hm.stride, (r + oy) * hm.stride])
        # plateaus flag adjacent cells as maxima of the same blob
        if any(np.max(np.abs(p.location - loc)) <= hm.stride for p in peaks):
            continue
        sig = sigma_from_scale(conf, a, b, c)
        peaks.append(
            PeakDetection(
                location=loc,
                confidence=conf,
                sigma=(sig, sig),
            )
        )
    return peaks


def write_pgm(hm: Heatmap, path) -> None:
    """Binary greyscale PGM (P5, maxval 255) debug dump."""
    img = np.clip(np.rint(hm.values * 255.0), 0, 255).astype(np.uint8)
    rows, cols = img.shape
    with open(Path(path), "wb") as fh:
        fh.write(f"P5\n{cols} {rows}\n255\n".encode("ascii"))
        fh.write(img.tobytes())


def read_pgm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    m = re.match(rb"P5\s+(\d+)\s+(\d+)\s+(\d+)\s", data)
    if m is None:
        raise ValueError("not a binary PGM file")
    cols, rows, maxval = (int(g) for g in m.groups())
    pixels = np.frombuffer(data[m.end() : m.end() + rows * cols], dtype=np.uint8)
    return pixels.reshape(rows, cols).astype(float) / maxval
