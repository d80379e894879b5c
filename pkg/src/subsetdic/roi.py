"""Region-of-interest masks and the subset grid laid out inside them.

A subset center is kept only when the full subset footprint lies inside the
mask, so every retained subset reads exclusively valid pixels.  Grids stay
rectangular: centers whose footprint leaves the mask keep their (row, col)
address but are marked absent, which keeps downstream fields addressable as
plain 2D arrays.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import BorderTooLarge, EmptyGrid, UnsupportedFormat
from .image import GrayImage

__all__ = [
    "RoiMask", "SubsetGrid", "roi_exclude_border", "roi_from_mask_image",
    "roi_from_rects", "build_subset_grid",
]


@dataclass
class RoiMask:
    """Boolean pixel mask; True marks pixels available for correlation."""

    width: int
    height: int
    mask: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.mask)
        if m.dtype != np.bool_:
            m = m.astype(bool)
        if m.shape != (self.height, self.width):
            raise UnsupportedFormat(
                f"mask shape {m.shape} does not match {self.height}x{self.width}")
        self.mask = m

    @property
    def count(self) -> int:
        return int(self.mask.sum())


def roi_exclude_border(width: int, height: int, border: int) -> RoiMask:
    """Mask that keeps everything except a `border`-pixel frame.

    border = 0 keeps the full image.  Raises BorderTooLarge when the frame
    would consume the whole image.
    """
    if border < 0:
        raise BorderTooLarge("border must be non-negative")
    if 2 * border >= min(width, height):
        raise BorderTooLarge(
            f"border {border} leaves no interior in a {width}x{height} image")
    mask = np.zeros((height, width), dtype=bool)
    mask[border:height - border, border:width - border] = True
    return RoiMask(width=width, height=height, mask=mask)


def roi_from_mask_image(image: GrayImage) -> RoiMask:
    """Interpret a grayscale image as a mask: nonzero means inside."""
    return RoiMask(width=image.width, height=image.height,
                   mask=image.pixels != 0.0)


def roi_from_rects(width: int, height: int,
                   rects: list[tuple[int, int, int, int]]) -> RoiMask:
    """Union of (x, y, w, h) rectangles, clipped to the image bounds."""
    mask = np.zeros((height, width), dtype=bool)
    for x, y, w, h in rects:
        x0 = max(0, int(x))
        y0 = max(0, int(y))
        x1 = min(width, int(x) + int(w))
        y1 = min(height, int(y) + int(h))
        if x1 > x0 and y1 > y0:
            mask[y0:y1, x0:x1] = True
    return RoiMask(width=width, height=height, mask=mask)


@dataclass
class SubsetGrid:
    """Rectangular lattice of subset centers.

    ``xs``/``ys`` hold the center coordinates of each column/row and
    ``present[row, col]`` is False where the subset footprint would leave
    the ROI.  ``xs[0]``/``ys[0]`` anchor the lattice at the first center
    that fits inside the ROI bounding box.
    """

    xs: np.ndarray
    ys: np.ndarray
    present: np.ndarray
    subset_size: int
    subset_step: int

    @property
    def cols(self) -> int:
        return len(self.xs)

    @property
    def rows(self) -> int:
        return len(self.ys)

    @property
    def grid_dims(self) -> tuple[int, int]:
        return (self.cols, self.rows)

    @property
    def n_present(self) -> int:
        return int(self.present.sum())

    def centers(self) -> list[tuple[int, int]]:
        """All present centers as (x, y), row-major."""
        out = []
        for r in range(self.rows):
            for c in range(self.cols):
                if self.present[r, c]:
                    out.append((int(self.xs[c]), int(self.ys[r])))
        return out

    def nearest_present(self, x: float, y: float) -> tuple[int, int]:
        """(row, col) of the present grid point closest to pixel (x, y)."""
        if not self.present.any():
            raise EmptyGrid("grid has no present points")
        rr, cc = np.nonzero(self.present)
        d2 = (self.xs[cc] - x) ** 2 + (self.ys[rr] - y) ** 2
        i = int(np.argmin(d2))
        return int(rr[i]), int(cc[i])


def build_subset_grid(roi: RoiMask, subset_size: int, subset_step: int) -> SubsetGrid:
    """Lay out subset centers on a step lattice inside the ROI.

    The lattice is anchored at the ROI bounding box: the first center sits
    a half-subset in from the box corner, so the first and last columns of
    subsets touch the box edges when the step divides evenly.  A center is
    present only if every pixel of its footprint is inside the mask (which
    also guarantees the footprint is inside the image).  Raises EmptyGrid
    when nothing fits.
    """
    if subset_size < 5 or subset_size % 2 == 0:
        raise EmptyGrid(f"subset size must be odd and >= 5, got {subset_size}")
    if subset_step < 1:
        raise EmptyGrid(f"subset step must be >= 1, got {subset_step}")
    ys_any, xs_any = np.nonzero(roi.mask)
    if len(xs_any) == 0:
        raise EmptyGrid("ROI mask is empty")
    half = (subset_size - 1) // 2
    bx0, bx1 = int(xs_any.min()), int(xs_any.max())
    by0, by1 = int(ys_any.min()), int(ys_any.max())
    x_first, x_last = bx0 + half, bx1 - half
    y_first, y_last = by0 + half, by1 - half
    if x_last < x_first or y_last < y_first:
        raise EmptyGrid("ROI bounding box is smaller than one subset")
    xs = np.arange(x_first, x_last + 1, subset_step, dtype=np.int64)
    ys = np.arange(y_first, y_last + 1, subset_step, dtype=np.int64)

    # Footprint-in-mask test via a summed-area table: a center survives iff
    # its size^2 window sums to exactly size^2 true pixels.
    sat = np.zeros((roi.height + 1, roi.width + 1), dtype=np.int64)
    np.cumsum(np.cumsum(roi.mask, axis=0), axis=1, out=sat[1:, 1:])
    full = subset_size * subset_size
    xl = xs - half
    yt = ys - half
    win = (sat[np.ix_(yt + subset_size, xl + subset_size)]
           - sat[np.ix_(yt, xl + subset_size)]
           - sat[np.ix_(yt + subset_size, xl)]
           + sat[np.ix_(yt, xl)])
    present = win == full
    if not present.any():
        raise EmptyGrid("no subset footprint fits inside the ROI mask")
    return SubsetGrid(xs=xs, ys=ys, present=present,
                      subset_size=subset_size, subset_step=subset_step)
