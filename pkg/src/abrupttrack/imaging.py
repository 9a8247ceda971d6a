"""Frame container and the few image primitives the tracker needs.

Frames hold RGB values in [0, 1] as a ``(height, width, 3)`` float array.
Scalar maps (error images, edge maps) are plain 2-D numpy arrays of the
same height and width.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])


class FrameLoadError(RuntimeError):
    """A frame file could not be read; carries the 1-based frame index."""

    def __init__(self, index: int, path: Path | str, reason: str):
        super().__init__(f"frame {index} ({path}): {reason}")
        self.index = index
        self.path = Path(path)


@dataclass(frozen=True)
class Frame:
    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.float64)
        if px.ndim != 3 or px.shape[2] != 3:
            raise ValueError(f"expected (H, W, 3) pixels, got shape {px.shape}")
        if px.shape[0] == 0 or px.shape[1] == 0:
            raise ValueError("frame must have positive width and height")
        if px.size and (px.min() < 0.0 or px.max() > 1.0):
            raise ValueError("channel values must lie in [0, 1]")
        px.setflags(write=False)
        object.__setattr__(self, "pixels", px)

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def pixel_count(self) -> int:
        return self.width * self.height

    def luminance(self) -> np.ndarray:
        return self.pixels @ LUMA_WEIGHTS

    @classmethod
    def from_uint8(cls, data: np.ndarray) -> "Frame":
        return cls(np.asarray(data, dtype=np.float64) / 255.0)

    def to_uint8(self) -> np.ndarray:
        return np.clip(np.rint(self.pixels * 255.0), 0, 255).astype(np.uint8)


def rgb_to_hsv(rgb) -> np.ndarray:
    """Hexcone RGB -> HSV, vectorised over a trailing axis of length 3.

    Hue is in degrees, ``[0, 360)``; saturation and value in ``[0, 1]``.
    Gray pixels (zero chroma) get hue 0.
    """
    rgb = np.asarray(rgb, dtype=np.float64)
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    v = rgb.max(axis=-1)
    c = v - rgb.min(axis=-1)
    safe_c = np.where(c > 0, c, 1.0)
    safe_v = np.where(v > 0, v, 1.0)
    s = np.where(v > 0, c / safe_v, 0.0)

    h = np.zeros_like(v)
    is_r = (v == r) & (c > 0)
    is_g = (v == g) & (c > 0) & ~is_r
    is_b = (c > 0) & ~is_r & ~is_g
    h = np.where(is_r, np.mod((g - b) / safe_c, 6.0), h)
    h = np.where(is_g, (b - r) / safe_c + 2.0, h)
    h = np.where(is_b, (r - g) / safe_c + 4.0, h)
    h = h * 60.0
    h = np.where(h >= 360.0, h - 360.0, h)
    return np.stack([h, s, v], axis=-1)


def hsv_to_rgb(hsv) -> np.ndarray:
    """Inverse of :func:`rgb_to_hsv`."""
    hsv = np.asarray(hsv, dtype=np.float64)
    h, s, v = hsv[..., 0], hsv[..., 1], hsv[..., 2]
    c = v * s
    hp = np.mod(h, 360.0) / 60.0
    x = c * (1.0 - np.abs(np.mod(hp, 2.0) - 1.0))
    sector = np.floor(hp).astype(int) % 6
    zero = np.zeros_like(c)
    table = [
        (c, x, zero),
        (x, c, zero),
        (zero, c, x),
        (zero, x, c),
        (x, zero, c),
        (c, zero, x),
    ]
    out = np.zeros(hsv.shape, dtype=np.float64)
    for k, (r1, g1, b1) in enumerate(table):
        sel = sector == k
        out[..., 0] = np.where(sel, r1, out[..., 0])
        out[..., 1] = np.where(sel, g1, out[..., 1])
        out[..., 2] = np.where(sel, b1, out[..., 2])
    return out + (v - c)[..., None]


def sobel_magnitude(lum: np.ndarray) -> np.ndarray:
    """3x3 Sobel gradient magnitude; pixels without a full neighborhood get 0."""
    lum = np.asarray(lum, dtype=np.float64)
    h, w = lum.shape
    mag = np.zeros((h, w))
    if h < 3 or w < 3:
        return mag
    p = lum
    gx = (
        (p[:-2, 2:] + 2 * p[1:-1, 2:] + p[2:, 2:])
        - (p[:-2, :-2] + 2 * p[1:-1, :-2] + p[2:, :-2])
    )
    gy = (
        (p[2:, :-2] + 2 * p[2:, 1:-1] + p[2:, 2:])
        - (p[:-2, :-2] + 2 * p[:-2, 1:-1] + p[:-2, 2:])
    )
    mag[1:-1, 1:-1] = np.hypot(gx, gy)
    return mag


def edge_map_from_luminance(lum: np.ndarray, rel_threshold: float = 0.25) -> np.ndarray:
    mag = sobel_magnitude(lum)
    peak = mag.max() if mag.size else 0.0
    if peak <= 0.0:
        return np.zeros_like(mag)
    return ((mag > 0) & (mag >= rel_threshold * peak)).astype(np.float64)


def edge_map(frame: Frame, rel_threshold: float = 0.25) -> np.ndarray:
    """Binary edge map: Sobel magnitude on luminance, thresholded at
    ``rel_threshold`` times the frame's maximum magnitude."""
    return edge_map_from_luminance(frame.luminance(), rel_threshold)


def dilate3(mask: np.ndarray) -> np.ndarray:
    """Binary dilation by a 3x3 all-ones element; outside the map counts as 0."""
    m = np.asarray(mask, dtype=np.float64)
    h, w = m.shape
    padded = np.zeros((h + 2, w + 2))
    padded[1:-1, 1:-1] = m
    out = np.zeros_like(m)
    for dy in range(3):
        for dx in range(3):
            np.maximum(out, padded[dy:dy + h, dx:dx + w], out=out)
    return out


# --- file IO -----------------------------------------------------------------

_PPM_TOKEN = re.compile(rb"\s*(?:#[^\n]*\n\s*)*(\S+)")


def read_ppm(path) -> Frame:
    """Read a binary (P6) PPM with maxval <= 255."""
    data = Path(path).read_bytes()
    pos = 0
    tokens = []
    for _ in range(4):
        m = _PPM_TOKEN.match(data, pos)
        if m is None:
            raise ValueError(f"{path}: truncated PPM header")
        tokens.append(m.group(1))
        pos = m.end()
    magic, w, h, maxval = tokens
    if magic != b"P6":
        raise ValueError(f"{path}: not a P6 PPM (magic {magic!r})")
    w, h, maxval = int(w), int(h), int(maxval)
    if not 0 < maxval <= 255:
        raise ValueError(f"{path}: only 8-bit PPM supported (maxval {maxval})")
    pos += 1  # single whitespace byte after maxval
    raw = np.frombuffer(data, dtype=np.uint8, count=w * h * 3, offset=pos)
    if raw.size != w * h * 3:
        raise ValueError(f"{path}: pixel data truncated")
    return Frame(raw.reshape(h, w, 3).astype(np.float64) / maxval)


def write_ppm(path, frame: Frame | np.ndarray) -> None:
    data = frame.to_uint8() if isinstance(frame, Frame) else np.asarray(frame, dtype=np.uint8)
    h, w, _ = data.shape
    with open(path, "wb") as fh:
        fh.write(b"P6\n%d %d\n255\n" % (w, h))
        fh.write(np.ascontiguousarray(data).tobytes())


def read_image(path) -> Frame:
    path = Path(path)
    if path.suffix.lower() == ".ppm":
        return read_ppm(path)
    from PIL import Image

    with Image.open(path) as img:
        return Frame.from_uint8(np.asarray(img.convert("RGB")))


_FRAME_SUFFIXES = {".ppm", ".png"}


def list_frame_files(directory) -> list[Path]:
    """Numbered image files in ``directory``, ordered by the last integer in the name."""
    directory = Path(directory)
    files = []
    for p in directory.iterdir():
        if p.suffix.lower() not in _FRAME_SUFFIXES:
            continue
        nums = re.findall(r"\d+", p.stem)
        if nums:
            files.append((int(nums[-1]), p))
    files.sort()
    return [p for _, p in files]


def load_frames(directory) -> list[Frame]:
    frames = []
    for i, path in enumerate(list_frame_files(directory), start=1):
        try:
            frames.append(read_image(path))
        except Exception as exc:  # noqa: BLE001 - re-raised with frame index
            raise FrameLoadError(i, path, str(exc)) from exc
    return frames
