"""Tracking metrics, ground-truth IO and a synthetic teleport-sequence generator.

Boxes here are continuous ``(x, y, w, h)`` tuples with ``(x, y)`` the
top-left corner.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter

from .imaging import Frame, write_ppm

PRECISION_THRESHOLDS = np.arange(0, 51, dtype=np.float64)
SUCCESS_THRESHOLDS = np.linspace(0.0, 1.0, 101)


def box_center(b) -> tuple[float, float]:
    x, y, w, h = b
    return x + w / 2.0, y + h / 2.0


def center_location_error(b_r, b_g) -> float:
    """Euclidean distance between the two box centers."""
    (xr, yr), (xg, yg) = box_center(b_r), box_center(b_g)
    return math.hypot(xr - xg, yr - yg)


def voc_overlap(b_r, b_g) -> float:
    """Intersection over union of two continuous rectangles."""
    xr, yr, wr, hr = b_r
    xg, yg, wg, hg = b_g
    iw = min(xr + wr, xg + wg) - max(xr, xg)
    ih = min(yr + hr, yg + hg) - max(yr, yg)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    # rounding can push near-identical boxes a hair above 1
    return min(1.0, inter / (wr * hr + wg * hg - inter))


def precision_curve(cle, thresholds=PRECISION_THRESHOLDS) -> np.ndarray:
    """Fraction of frames with CLE <= R for each threshold R."""
    cle = np.asarray(cle, dtype=np.float64)
    if cle.size == 0:
        raise ValueError("empty CLE series")
    thr = np.asarray(thresholds, dtype=np.float64)
    return (cle[None, :] <= thr[:, None]).mean(axis=1)


def precision_at(cle, r: float = 20.0) -> float:
    return float(precision_curve(cle, [r])[0])


def _trapezoid(y: np.ndarray, x: np.ndarray) -> float:
    return float(((y[1:] + y[:-1]) * 0.5 * np.diff(x)).sum())


def success_curve(vor, thresholds=SUCCESS_THRESHOLDS) -> tuple[np.ndarray, float]:
    """Fraction of frames with VOR > tau per threshold, and the trapezoid
    area under the curve."""
    vor = np.asarray(vor, dtype=np.float64)
    if vor.size == 0:
        raise ValueError("empty VOR series")
    thr = np.asarray(thresholds, dtype=np.float64)
    curve = (vor[None, :] > thr[:, None]).mean(axis=1)
    auc = _trapezoid(curve, thr) if thr.size > 1 else 0.0
    return curve, auc


# --- ground truth ------------------------------------------------------------


@dataclass
class GroundTruth:
    """Per-frame boxes keyed by 1-based frame index."""

    boxes: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.boxes)

    def frames(self) -> list[int]:
        return sorted(self.boxes)

    def check_inside(self, width: int, height: int) -> None:
        for t, (x, y, w, h) in self.boxes.items():
            if x < 0 or y < 0 or x + w > width or y + h > height:
                raise ValueError(f"ground-truth box of frame {t} leaves the {width}x{height} frame")


def write_ground_truth(gt: GroundTruth, path, seed: int | None = None) -> None:
    with open(path, "w", newline="") as fh:
        if seed is not None:
            fh.write(f"# seed={seed}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["frame", "x", "y", "w", "h"])
        for t in gt.frames():
            w.writerow([t, *(format(float(v), "g") for v in gt.boxes[t])])


def _data_rows(path):
    with open(path, newline="") as fh:
        lines = [ln for ln in fh if ln.strip() and not ln.lstrip().startswith("#")]
    return list(csv.DictReader(lines))


def read_ground_truth(path) -> GroundTruth:
    gt = GroundTruth()
    for row in _data_rows(path):
        t = int(row["frame"])
        if t in gt.boxes:
            raise ValueError(f"{path}: duplicate frame {t}")
        gt.boxes[t] = tuple(float(row[k]) for k in ("x", "y", "w", "h"))
    return gt


def read_results(path) -> tuple[dict, int | None]:
    """Tracker results as ``{frame: (x, y, s)}`` plus the recorded seed."""
    seed = None
    with open(path) as fh:
        first = fh.readline()
    if first.startswith("# seed="):
        seed = int(first.split("=", 1)[1])
    out = {}
    for row in _data_rows(path):
        out[int(row["frame"])] = (float(row["x"]), float(row["y"]), float(row.get("s") or 1.0))
    return out, seed


def state_box(x: float, y: float, s: float, ref_w: float, ref_h: float):
    w, h = ref_w * s, ref_h * s
    return (x - w / 2.0, y - h / 2.0, w, h)


@dataclass
class EvalSummary:
    frames: list
    cle: np.ndarray
    vor: np.ndarray
    precision: np.ndarray
    success: np.ndarray
    success_auc: float

    @property
    def avg_cle(self) -> float:
        return float(self.cle.mean())

    @property
    def avg_vor(self) -> float:
        return float(self.vor.mean())

    @property
    def precision_at_20(self) -> float:
        return precision_at(self.cle, 20.0)


def evaluate(results: dict, truth: GroundTruth) -> EvalSummary:
    """Score ``{frame: (x, y, s)}`` center states against the ground truth.

    The reference box size is the first ground-truth box, scaled by ``s``.
    """
    if not results:
        raise ValueError("results contain no frames")
    missing = sorted(set(results) - set(truth.boxes))
    if missing:
        raise ValueError(f"frames missing from ground truth: {missing}")
    ref_w, ref_h = truth.boxes[truth.frames()[0]][2:]
    frames = sorted(results)
    cle, vor = [], []
    for t in frames:
        b_r = state_box(*results[t], ref_w, ref_h)
        b_g = truth.boxes[t]
        cle.append(center_location_error(b_r, b_g))
        vor.append(voc_overlap(b_r, b_g))
    cle, vor = np.array(cle), np.array(vor)
    success, auc = success_curve(vor)
    return EvalSummary(frames, cle, vor, precision_curve(cle), success, auc)


# --- synthetic sequences -----------------------------------------------------


@dataclass(frozen=True)
class SyntheticSpec:
    width: int = 320
    height: int = 240
    frames: int = 64
    target_size: tuple[int, int] = (30, 30)
    target_color: tuple[float, float, float] = (0.85, 0.1, 0.1)
    step: float = 3.0  # smooth motion, pixels per frame
    teleport_every: int = 8  # 0 disables; teleports land on frames 1 + k * period
    teleport_frames: tuple[int, ...] | None = None  # explicit list overrides the period
    min_jump: float = 0.3  # fraction of the frame diagonal
    clutter: int = 3
    clutter_size: tuple[int, int] = (26, 26)
    noise: float = 0.02
    texture: float = 0.25  # background contrast
    seed: int = 0

    def __post_init__(self):
        tw, th = self.target_size
        if tw < 1 or th < 1 or tw > self.width or th > self.height:
            raise ValueError(f"target {tw}x{th} does not fit a {self.width}x{self.height} frame")
        if self.frames < 1:
            raise ValueError("frames must be >= 1")
        if self.noise < 0 or self.clutter < 0 or self.step < 0 or self.teleport_every < 0:
            raise ValueError("noise, clutter, step and teleport_every must be non-negative")

    def teleports(self) -> list[int]:
        if self.teleport_frames is not None:
            return sorted(t for t in self.teleport_frames if 2 <= t <= self.frames)
        if self.teleport_every == 0:
            return []
        return list(range(1 + self.teleport_every, self.frames + 1, self.teleport_every))


_CLUTTER_COLORS = [
    (0.1, 0.7, 0.2),
    (0.15, 0.3, 0.85),
    (0.85, 0.8, 0.15),
    (0.6, 0.2, 0.75),
    (0.1, 0.75, 0.75),
]


def _background(spec: SyntheticSpec, rng: np.random.Generator) -> np.ndarray:
    noise = rng.standard_normal((spec.height, spec.width, 3))
    smooth = np.stack([gaussian_filter(noise[..., c], 3.0) for c in range(3)], axis=-1)
    smooth /= smooth.std() + 1e-12
    # grey-ish base so the saturated target colors stay distinct
    base = np.array([0.45, 0.47, 0.5])
    return np.clip(base + spec.texture * 0.5 * smooth, 0.0, 1.0)


def _bounce(pos, vel, lo, hi):
    pos = pos + vel
    for k in range(2):
        if pos[k] < lo[k]:
            pos[k] = 2 * lo[k] - pos[k]
            vel[k] = -vel[k]
        elif pos[k] > hi[k]:
            pos[k] = 2 * hi[k] - pos[k]
            vel[k] = -vel[k]
    return np.clip(pos, lo, hi), vel


def _teleport(pos, lo, hi, min_dist, rng, tries=1000):
    for _ in range(tries):
        cand = lo + rng.random(2) * (hi - lo)
        if np.hypot(*(cand - pos)) >= min_dist:
            return cand
    raise ValueError(
        f"no teleport destination at least {min_dist:.1f} px away fits inside the frame"
    )


def _paint(img, x, y, w, h, color):
    img[y:y + h, x:x + w] = color


def generate_synthetic(spec: SyntheticSpec, out_dir=None) -> tuple[list[Frame], GroundTruth]:
    """Render a teleport sequence: a colored rectangle over a smooth random
    texture, static-size distractors drifting slowly, additive pixel noise.

    Frames are quantized to 8 bits so the returned frames equal the files
    written to ``out_dir`` (``frame_0001.ppm`` ... and ``groundtruth.csv``).
    """
    rng = np.random.default_rng(spec.seed)
    tw, th = spec.target_size
    lo = np.array([0.0, 0.0])
    hi = np.array([spec.width - tw, spec.height - th], dtype=float)
    diag = math.hypot(spec.width, spec.height)
    min_dist = spec.min_jump * diag + 1.0  # slack for rounding to whole pixels
    teleports = set(spec.teleports())

    bg = _background(spec, rng)
    pos = lo + rng.random(2) * (hi - lo)
    angle = rng.random() * 2 * np.pi
    vel = spec.step * np.array([math.cos(angle), math.sin(angle)])

    cw, ch = spec.clutter_size
    chi = np.array([spec.width - cw, spec.height - ch], dtype=float)
    c_pos = [rng.random(2) * chi for _ in range(spec.clutter)]
    c_vel = []
    for _ in range(spec.clutter):
        a = rng.random() * 2 * np.pi
        c_vel.append(1.0 * np.array([math.cos(a), math.sin(a)]))

    frames, gt = [], GroundTruth()
    for t in range(1, spec.frames + 1):
        if t > 1:
            if t in teleports:
                pos = _teleport(pos, lo, hi, min_dist, rng)
            else:
                pos, vel = _bounce(pos, vel, lo, hi)
            for i in range(spec.clutter):
                c_pos[i], c_vel[i] = _bounce(c_pos[i], c_vel[i], np.zeros(2), chi)
        img = bg.copy()
        for i in range(spec.clutter):
            cx, cy = (int(round(v)) for v in c_pos[i])
            _paint(img, cx, cy, cw, ch, _CLUTTER_COLORS[i % len(_CLUTTER_COLORS)])
        x, y = (int(round(v)) for v in pos)
        _paint(img, x, y, tw, th, spec.target_color)
        if spec.noise > 0:
            img = img + spec.noise * rng.standard_normal(img.shape)
        frame = Frame.from_uint8(np.clip(np.rint(np.clip(img, 0, 1) * 255), 0, 255))
        frames.append(frame)
        gt.boxes[t] = (float(x), float(y), float(tw), float(th))

    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        for t, frame in enumerate(frames, start=1):
            write_ppm(out / f"frame_{t:04d}.ppm", frame)
        write_ground_truth(gt, out / "groundtruth.csv", seed=spec.seed)
    return frames, gt
