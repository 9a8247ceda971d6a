"""Color appearance model: 10x10x10 HSV histograms compared with the
Bhattacharyya distance, combined into a foreground/background likelihood."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import Box
from .imaging import Frame, rgb_to_hsv

BINS = 10
N_BINS = BINS ** 3
LIKELIHOOD_FLOOR = 1e-12


class EmptyHistogramError(ValueError):
    """The requested region has no pixels inside the frame."""


@dataclass(frozen=True)
class TargetState:
    """Box center ``(x, y)`` in pixels and scale ``s`` of the reference box."""

    x: float
    y: float
    s: float = 1.0

    def box(self, ref_w: int, ref_h: int) -> Box:
        w = max(1, int(round(ref_w * self.s)))
        h = max(1, int(round(ref_h * self.s)))
        x0 = int(math.floor(self.x - w / 2 + 0.5))
        y0 = int(math.floor(self.y - h / 2 + 0.5))
        return Box(x0, y0, x0 + w, y0 + h)

    @classmethod
    def from_box(cls, box: Box) -> "TargetState":
        return cls(box.x0 + box.width / 2, box.y0 + box.height / 2, 1.0)


def hsv_bin_image(frame: Frame) -> np.ndarray:
    """Per-pixel histogram bin index (0..999)."""
    hsv = rgb_to_hsv(frame.pixels)
    hi = np.minimum((hsv[..., 0] / 36.0).astype(int), BINS - 1)
    si = np.minimum((hsv[..., 1] * BINS).astype(int), BINS - 1)
    vi = np.minimum((hsv[..., 2] * BINS).astype(int), BINS - 1)
    return (hi * BINS + si) * BINS + vi


def _normalize(counts: np.ndarray) -> np.ndarray:
    total = counts.sum()
    if total <= 0:
        raise EmptyHistogramError("histogram region contains no pixels")
    return counts / total


def histogram_from_bins(bins: np.ndarray, box: Box) -> np.ndarray:
    h, w = bins.shape
    c = box.clip(w, h)
    if c.is_empty():
        raise EmptyHistogramError(f"box {box} lies outside the {w}x{h} frame")
    counts = np.bincount(bins[c.y0:c.y1, c.x0:c.x1].ravel(), minlength=N_BINS)
    return _normalize(counts.astype(np.float64))


def build_histogram(frame: Frame, box: Box) -> np.ndarray:
    """Normalized HSV histogram of the pixels of ``box`` inside ``frame``."""
    return histogram_from_bins(hsv_bin_image(frame), box)


def background_box(box: Box, frame_w: int, frame_h: int) -> Box:
    margin = max(1, min(box.width, box.height) // 2)
    return box.expand(margin).clip(frame_w, frame_h)


def background_histogram(frame: Frame, box: Box) -> np.ndarray:
    """Histogram of the ring around ``box`` whose width is half the box's
    shorter side, clipped to the frame."""
    bins = hsv_bin_image(frame)
    outer = background_box(box, frame.width, frame.height)
    ring = outer.mask(frame.width, frame.height) & ~box.mask(frame.width, frame.height)
    counts = np.bincount(bins[ring].ravel(), minlength=N_BINS).astype(np.float64)
    return _normalize(counts)


def bhattacharyya(h1: np.ndarray, h2: np.ndarray) -> float:
    """``sqrt(1 - sum(sqrt(h1 * h2)))`` for two normalized histograms."""
    h1 = np.asarray(h1, dtype=np.float64)
    h2 = np.asarray(h2, dtype=np.float64)
    for h in (h1, h2):
        if h.min() < 0 or abs(h.sum() - 1.0) > 1e-6:
            raise ValueError("histograms must be non-negative and sum to 1")
    bc = float(np.sqrt(h1 * h2).sum())
    return math.sqrt(max(0.0, 1.0 - bc))


def logistic_likelihood(d_fg: float, d_bg: float) -> float:
    return 1.0 / (1.0 + math.exp(d_fg - d_bg))


def likelihood(frame: Frame, state: TargetState, h_fg, h_bg, ref_size: tuple[int, int]) -> float:
    """Foreground-vs-background likelihood of the box at ``state``."""
    return AppearanceModel(ref_size[0], ref_size[1], np.asarray(h_fg), np.asarray(h_bg)).evaluator(
        frame
    )(state)


@dataclass(frozen=True)
class AppearanceModel:
    """Fixed templates built once from the first frame."""

    ref_w: int
    ref_h: int
    h_fg: np.ndarray
    h_bg: np.ndarray

    @classmethod
    def from_frame(cls, frame: Frame, box: Box) -> "AppearanceModel":
        if box.clip(frame.width, frame.height).is_empty():
            raise ValueError(f"initial box {box} lies outside the frame")
        return cls(box.width, box.height, build_histogram(frame, box), background_histogram(frame, box))

    def evaluator(self, frame: Frame):
        """Return ``state -> likelihood`` for one frame (bins computed once)."""
        bins = hsv_bin_image(frame)
        h, w = bins.shape
        sq_fg = np.sqrt(self.h_fg)
        sq_bg = np.sqrt(self.h_bg)

        def evaluate(state: TargetState) -> float:
            c = state.box(self.ref_w, self.ref_h).clip(w, h)
            if c.is_empty():
                return LIKELIHOOD_FLOOR
            counts = np.bincount(bins[c.y0:c.y1, c.x0:c.x1].ravel(), minlength=N_BINS)
            sq = np.sqrt(counts / counts.sum())
            d_fg = math.sqrt(max(0.0, 1.0 - float(sq @ sq_fg)))
            d_bg = math.sqrt(max(0.0, 1.0 - float(sq @ sq_bg)))
            return max(LIKELIHOOD_FLOOR, logistic_likelihood(d_fg, d_bg))

        return evaluate
