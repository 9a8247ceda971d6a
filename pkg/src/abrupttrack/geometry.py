"""Axis-aligned pixel boxes and the uniform cell partition of the image plane."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class Box:
    """Integer pixel rectangle ``[x0, x1) x [y0, y1)``."""

    x0: int
    y0: int
    x1: int
    y1: int

    @classmethod
    def from_xywh(cls, x, y, w, h) -> "Box":
        return cls(int(x), int(y), int(x) + int(w), int(y) + int(h))

    @property
    def width(self) -> int:
        return max(0, self.x1 - self.x0)

    @property
    def height(self) -> int:
        return max(0, self.y1 - self.y0)

    @property
    def area(self) -> int:
        return self.width * self.height

    def is_empty(self) -> bool:
        return self.area == 0

    def contains(self, x, y) -> bool:
        return self.x0 <= x < self.x1 and self.y0 <= y < self.y1

    def clip(self, width: int, height: int) -> "Box":
        return Box(
            min(max(self.x0, 0), width),
            min(max(self.y0, 0), height),
            min(max(self.x1, 0), width),
            min(max(self.y1, 0), height),
        )

    def expand(self, margin: int) -> "Box":
        return Box(self.x0 - margin, self.y0 - margin, self.x1 + margin, self.y1 + margin)

    def mask(self, width: int, height: int) -> np.ndarray:
        out = np.zeros((height, width), dtype=bool)
        c = self.clip(width, height)
        out[c.y0:c.y1, c.x0:c.x1] = True
        return out


@dataclass(frozen=True)
class RegionGrid:
    width: int
    height: int
    rows: int = 15
    cols: int = 15
    x_edges: np.ndarray = field(init=False, repr=False)
    y_edges: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise ValueError("grid needs a positive image size")
        if not (1 <= self.cols <= self.width and 1 <= self.rows <= self.height):
            raise ValueError(
                f"{self.rows}x{self.cols} grid does not fit a {self.width}x{self.height} image"
            )
        xe = (np.arange(self.cols + 1) * self.width) // self.cols
        ye = (np.arange(self.rows + 1) * self.height) // self.rows
        object.__setattr__(self, "x_edges", xe)
        object.__setattr__(self, "y_edges", ye)

    @property
    def m(self) -> int:
        return self.rows * self.cols

    def cell_of(self, x: float, y: float) -> int:
        """Index of the cell containing pixel ``(x, y)`` (row-major)."""
        col = int(np.searchsorted(self.x_edges, x, side="right")) - 1
        row = int(np.searchsorted(self.y_edges, y, side="right")) - 1
        if not (0 <= col < self.cols and 0 <= row < self.rows):
            raise ValueError(f"({x}, {y}) lies outside the {self.width}x{self.height} image")
        return row * self.cols + col

    def row_col(self, index: int) -> tuple[int, int]:
        return divmod(index, self.cols)

    def bounds(self, index: int) -> tuple[int, int, int, int]:
        """``(x0, y0, x1, y1)`` with exclusive upper ends."""
        r, c = self.row_col(index)
        return (
            int(self.x_edges[c]),
            int(self.y_edges[r]),
            int(self.x_edges[c + 1]),
            int(self.y_edges[r + 1]),
        )

    def areas(self) -> np.ndarray:
        w = np.diff(self.x_edges)
        h = np.diff(self.y_edges)
        return np.outer(h, w).ravel().astype(np.float64)

    def centers(self) -> np.ndarray:
        """``(m, 2)`` array of cell centers ``(x, y)`` in pixel coordinates."""
        cx = (self.x_edges[:-1] + self.x_edges[1:] - 1) / 2.0
        cy = (self.y_edges[:-1] + self.y_edges[1:] - 1) / 2.0
        yy, xx = np.meshgrid(cy, cx, indexing="ij")
        return np.stack([xx.ravel(), yy.ravel()], axis=1)

    def center_distances(self) -> np.ndarray:
        c = self.centers()
        diff = c[:, None, :] - c[None, :, :]
        return np.sqrt((diff ** 2).sum(axis=-1))

    def label_image(self) -> np.ndarray:
        """``(height, width)`` array of cell indices."""
        cols = np.searchsorted(self.x_edges, np.arange(self.width), side="right") - 1
        rows = np.searchsorted(self.y_edges, np.arange(self.height), side="right") - 1
        return rows[:, None] * self.cols + cols[None, :]
