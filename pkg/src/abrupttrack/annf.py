"""Approximate nearest-neighbor fields between frames and the confidence map
derived from them.

The matcher is PatchMatch (random init plus the zero offset, alternating
scan-order propagation, exponentially shrinking random search) over RGB
sum-of-squared differences.  Fields are indexed by patch *center*; a patch
with side ``P`` has its center at ``top_left + P // 2``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from numba import njit
from numpy.lib.stride_tricks import sliding_window_view

from .geometry import Box, RegionGrid
from .imaging import Frame


@dataclass(frozen=True)
class PatchField:
    """Per-center displacement into the destination frame plus match error.

    ``offsets[y, x] = (dx, dy)`` and ``errors[y, x]`` (raw SSD) are meaningful
    only where ``valid[y, x]``.
    """

    patch: int
    offsets: np.ndarray
    errors: np.ndarray
    valid: np.ndarray

    @property
    def width(self) -> int:
        return self.valid.shape[1]

    @property
    def height(self) -> int:
        return self.valid.shape[0]

    def target(self, x: int, y: int) -> tuple[int, int]:
        dx, dy = self.offsets[y, x]
        return int(x + dx), int(y + dy)

    def error_image(self) -> np.ndarray:
        """Match errors scaled to [0, 1] per patch element; 0 off-field."""
        norm = self.patch * self.patch * 3
        return np.where(self.valid, self.errors / norm, 0.0)

    def to_csv(self, path) -> None:
        ys, xs = np.nonzero(self.valid)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["x", "y", "dx", "dy", "error"])
            for y, x in zip(ys, xs):
                dx, dy = self.offsets[y, x]
                w.writerow([x, y, dx, dy, repr(float(self.errors[y, x]))])


@dataclass(frozen=True)
class ConfidenceGrid:
    grid: RegionGrid
    lam: np.ndarray

    @property
    def m(self) -> int:
        return self.grid.m


# --- PatchMatch kernel ---------------------------------------------------------


@njit(cache=True)
def _ssd(a, b, ay, ax, by, bx, p, limit):
    s = 0.0
    for i in range(p):
        for j in range(p):
            for c in range(3):
                d = a[ay + i, ax + j, c] - b[by + i, bx + j, c]
                s += d * d
        if s >= limit:
            return s
    return s


@njit(cache=True)
def _patchmatch(a, b, p, iters, active, seed, min_probes, off, err):
    np.random.seed(seed)
    ha = a.shape[0] - p + 1
    wa = a.shape[1] - p + 1
    hb = b.shape[0] - p + 1
    wb = b.shape[1] - p + 1
    inf = np.inf

    for y in range(ha):
        for x in range(wa):
            if not active[y, x]:
                continue
            best = inf
            bdx = 0
            bdy = 0
            if y < hb and x < wb:
                best = _ssd(a, b, y, x, y, x, p, inf)
            ry = np.random.randint(0, hb)
            rx = np.random.randint(0, wb)
            d = _ssd(a, b, y, x, ry, rx, p, best)
            if d < best:
                best = d
                bdx = rx - x
                bdy = ry - y
            off[y, x, 0] = bdx
            off[y, x, 1] = bdy
            err[y, x] = best

    radius0 = max(hb, wb)
    levels = 0
    r = radius0
    while r >= 1:
        levels += 1
        r //= 2
    per_level = max(1, min_probes // levels)
    for it in range(iters):
        if it % 2 == 0:
            y_start, y_stop, step = 0, ha, 1
            x_start, x_stop = 0, wa
        else:
            y_start, y_stop, step = ha - 1, -1, -1
            x_start, x_stop = wa - 1, -1
        for y in range(y_start, y_stop, step):
            for x in range(x_start, x_stop, step):
                if not active[y, x]:
                    continue
                best = err[y, x]
                bdx = off[y, x, 0]
                bdy = off[y, x, 1]
                # propagation from the already-visited neighbors
                for k in range(2):
                    nx = x - step if k == 0 else x
                    ny = y if k == 0 else y - step
                    if nx < 0 or nx >= wa or ny < 0 or ny >= ha or not active[ny, nx]:
                        continue
                    cx = x + off[ny, nx, 0]
                    cy = y + off[ny, nx, 1]
                    if cx < 0 or cx >= wb or cy < 0 or cy >= hb:
                        continue
                    if cx - x == bdx and cy - y == bdy:
                        continue
                    d = _ssd(a, b, y, x, cy, cx, p, best)
                    if d < best:
                        best = d
                        bdx = cx - x
                        bdy = cy - y
                # random search around the current best
                r = radius0
                while r >= 1:
                    tx = x + bdx
                    ty = y + bdy
                    x_lo = max(tx - r, 0)
                    x_hi = min(tx + r, wb - 1)
                    y_lo = max(ty - r, 0)
                    y_hi = min(ty + r, hb - 1)
                    for _ in range(per_level):
                        cx = np.random.randint(x_lo, x_hi + 1)
                        cy = np.random.randint(y_lo, y_hi + 1)
                        d = _ssd(a, b, y, x, cy, cx, p, best)
                        if d < best:
                            best = d
                            bdx = cx - x
                            bdy = cy - y
                    r //= 2
                off[y, x, 0] = bdx
                off[y, x, 1] = bdy
                err[y, x] = best


def _check_pair(src: Frame, dst: Frame, patch: int) -> None:
    if (src.width, src.height) != (dst.width, dst.height):
        raise ValueError(
            f"frame size mismatch: {src.width}x{src.height} vs {dst.width}x{dst.height}"
        )
    if patch < 1 or patch > min(src.width, src.height):
        raise ValueError(f"patch size {patch} does not fit a {src.width}x{src.height} frame")


def _active_topleft(shape, patch: int, centers: Box | None) -> np.ndarray:
    h, w = shape
    active = np.ones((h - patch + 1, w - patch + 1), dtype=np.bool_)
    if centers is not None:
        half = patch // 2
        tl = Box(centers.x0 - half, centers.y0 - half, centers.x1 - half, centers.y1 - half)
        active &= tl.mask(w - patch + 1, h - patch + 1)
    return active


def _to_center_field(patch, shape, active, off, err) -> PatchField:
    h, w = shape
    half = patch // 2
    ha, wa = active.shape
    offsets = np.zeros((h, w, 2), dtype=np.int64)
    errors = np.zeros((h, w), dtype=np.float64)
    valid = np.zeros((h, w), dtype=bool)
    offsets[half:half + ha, half:half + wa] = off
    errors[half:half + ha, half:half + wa] = np.where(active, err, 0.0)
    valid[half:half + ha, half:half + wa] = active
    offsets[~valid] = 0
    for arr in (offsets, errors, valid):
        arr.setflags(write=False)
    return PatchField(patch, offsets, errors, valid)


def compute_annf(
    src: Frame,
    dst: Frame,
    patch: int = 8,
    iterations: int = 5,
    seed: int = 0,
    centers: Box | None = None,
    min_probes: int = 16,
) -> PatchField:
    """PatchMatch field from ``src`` to ``dst``.

    Args:
        patch: patch side length in pixels.
        iterations: propagation / random-search sweeps.
        seed: RNG seed; the field is a pure function of the inputs and seed.
        centers: restrict the field to patch centers inside this box
            (default: every center whose patch fits in the frame).
        min_probes: lower bound on random-search probes per center per
            sweep; small frames have few search radii, so each radius is
            probed several times to keep the effort per sweep comparable.
    """
    _check_pair(src, dst, patch)
    h, w = src.height, src.width
    a = np.ascontiguousarray(src.pixels)
    b = np.ascontiguousarray(dst.pixels)
    active = _active_topleft((h, w), patch, centers)
    off = np.zeros(active.shape + (2,), dtype=np.int64)
    err = np.zeros(active.shape, dtype=np.float64)
    if active.any():
        _patchmatch(a, b, patch, iterations, active, seed & 0x7FFFFFFF, min_probes, off, err)
    return _to_center_field(patch, (h, w), active, off, err)


def exhaustive_annf(src: Frame, dst: Frame, patch: int, centers: Box | None = None) -> PatchField:
    """Brute-force nearest-neighbor field (reference for the matcher)."""
    _check_pair(src, dst, patch)
    a, b = src.pixels, dst.pixels
    active = _active_topleft(a.shape[:2], patch, centers)
    pa = sliding_window_view(a, (patch, patch, 3))[:, :, 0]
    pb = sliding_window_view(b, (patch, patch, 3))[:, :, 0]
    hb, wb = pb.shape[:2]
    best = np.full(active.shape, np.inf)
    off = np.zeros(active.shape + (2,), dtype=np.int64)
    yy, xx = np.mgrid[0:active.shape[0], 0:active.shape[1]]
    for by in range(hb):
        for bx in range(wb):
            d = ((pa - pb[by, bx]) ** 2).sum(axis=(2, 3, 4))
            better = d < best
            best = np.where(better, d, best)
            off[..., 0] = np.where(better, bx - xx, off[..., 0])
            off[..., 1] = np.where(better, by - yy, off[..., 1])
    return _to_center_field(patch, a.shape[:2], active, off, np.where(active, best, 0.0))


def _box_centers(fwd: PatchField, box: Box):
    c = box.clip(fwd.width, fwd.height)
    region = np.zeros_like(fwd.valid)
    region[c.y0:c.y1, c.x0:c.x1] = True
    ys, xs = np.nonzero(region & fwd.valid)
    tx = xs + fwd.offsets[ys, xs, 0]
    ty = ys + fwd.offsets[ys, xs, 1]
    return xs, ys, tx, ty


def forward_backward_filter(fwd: PatchField, bwd: PatchField, box: Box) -> np.ndarray:
    """Boolean mask (frame t) of forward targets whose backward match lands
    back inside ``box`` (frame t-1)."""
    survivors = np.zeros((bwd.height, bwd.width), dtype=bool)
    if box.is_empty():
        return survivors
    _, _, tx, ty = _box_centers(fwd, box)
    if tx.size == 0:
        return survivors
    ok = bwd.valid[ty, tx]
    tx, ty = tx[ok], ty[ok]
    sx = tx + bwd.offsets[ty, tx, 0]
    sy = ty + bwd.offsets[ty, tx, 1]
    inside = (sx >= box.x0) & (sx < box.x1) & (sy >= box.y0) & (sy < box.y1)
    survivors[ty[inside], tx[inside]] = True
    return survivors


def forward_targets(fwd: PatchField, box: Box) -> tuple[np.ndarray, np.ndarray]:
    """``(x, y)`` arrays of forward matches of the box's patch centers."""
    _, _, tx, ty = _box_centers(fwd, box)
    return tx, ty


def incoherence_map(survivors: np.ndarray, fwd: PatchField, box: Box) -> np.ndarray:
    """In-degree of each surviving pixel under the forward mapping of box centers."""
    counts = np.zeros(survivors.shape, dtype=np.float64)
    if box.is_empty():
        return counts
    _, _, tx, ty = _box_centers(fwd, box)
    np.add.at(counts, (ty, tx), 1.0)
    return np.where(survivors, counts, 0.0)


def confidence_map(h: np.ndarray, grid: RegionGrid) -> ConfidenceGrid:
    """Per-cell mean of the incoherence map."""
    h = np.asarray(h, dtype=np.float64)
    if h.shape != (grid.height, grid.width):
        raise ValueError(f"incoherence map {h.shape} does not match grid {grid.height}x{grid.width}")
    labels = grid.label_image().ravel()
    sums = np.bincount(labels, weights=h.ravel(), minlength=grid.m)
    return ConfidenceGrid(grid, sums / grid.areas())
