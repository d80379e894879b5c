"""Cubic B-spline interpolation of grayscale images.

The interpolant is separable: a recursive prefilter turns pixel samples
into B-spline coefficients (causal + anticausal first-order passes per
axis, pole sqrt(3) - 2, overall gain 6, mirror boundary), after which any
subpixel value is a 4x4 weighted sum of coefficients.  The same 4x4 stencil
differentiated once gives the intensity gradient, which is what the subset
optimizer consumes.

Evaluation is restricted to [1.5, W - 2.5] x [1.5, H - 2.5] so the stencil
never leaves the coefficient array and no boundary logic is needed in the
hot loop.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .errors import ImageTooSmall, OutOfDomain
from .image import GrayImage

__all__ = ["SplineCoefficients", "prefilter"]

_POLE = math.sqrt(3.0) - 2.0
_GAIN = 6.0
# Number of terms after which pole^k falls below 1e-12 and the causal
# initialization sum can be truncated.
_HORIZON = int(math.ceil(math.log(1e-12) / math.log(abs(_POLE))))


def _causal_init(x: np.ndarray) -> np.ndarray:
    """First causal coefficient for each row of `x` under mirror extension.

    For short rows the mirrored signal is periodic with period 2n - 2 and
    the geometric series is summed exactly; for long rows the sum is
    truncated once pole^k is below 1e-12.
    """
    n = x.shape[1]
    z = _POLE
    if n - 1 <= _HORIZON:
        p = 2 * n - 2
        zk = z ** np.arange(n)
        s = x @ zk
        if n > 2:
            j = np.arange(1, n - 1)
            s = s + x[:, j] @ (z ** (p - j))
        return s / (1.0 - z ** p)
    zk = z ** np.arange(_HORIZON + 1)
    return x[:, :_HORIZON + 1] @ zk


def _prefilter_rows(x: np.ndarray) -> np.ndarray:
    """Run the causal/anticausal pole filter along axis 1."""
    n = x.shape[1]
    c = x * _GAIN
    z = _POLE
    cp = np.empty_like(c)
    cp[:, 0] = _causal_init(c)
    for k in range(1, n):
        cp[:, k] = c[:, k] + z * cp[:, k - 1]
    cm = np.empty_like(c)
    cm[:, n - 1] = (z / (z * z - 1.0)) * (cp[:, n - 1] + z * cp[:, n - 2])
    for k in range(n - 2, -1, -1):
        cm[:, k] = z * (cm[:, k + 1] - cp[:, k])
    return cm


@njit(cache=True, nogil=True)
def _eval_point(c, x, y):
    """Interpolated value at (x, y); caller guarantees the domain."""
    ix = int(math.floor(x))
    iy = int(math.floor(y))
    tx = x - ix
    ty = y - iy
    ox = 1.0 - tx
    oy = 1.0 - ty
    wx0 = ox * ox * ox / 6.0
    wx1 = (3.0 * tx * tx * tx - 6.0 * tx * tx + 4.0) / 6.0
    wx2 = (-3.0 * tx * tx * tx + 3.0 * tx * tx + 3.0 * tx + 1.0) / 6.0
    wx3 = tx * tx * tx / 6.0
    wy0 = oy * oy * oy / 6.0
    wy1 = (3.0 * ty * ty * ty - 6.0 * ty * ty + 4.0) / 6.0
    wy2 = (-3.0 * ty * ty * ty + 3.0 * ty * ty + 3.0 * ty + 1.0) / 6.0
    wy3 = ty * ty * ty / 6.0
    v = 0.0
    r0 = (c[iy - 1, ix - 1] * wx0 + c[iy - 1, ix] * wx1
          + c[iy - 1, ix + 1] * wx2 + c[iy - 1, ix + 2] * wx3)
    r1 = (c[iy, ix - 1] * wx0 + c[iy, ix] * wx1
          + c[iy, ix + 1] * wx2 + c[iy, ix + 2] * wx3)
    r2 = (c[iy + 1, ix - 1] * wx0 + c[iy + 1, ix] * wx1
          + c[iy + 1, ix + 1] * wx2 + c[iy + 1, ix + 2] * wx3)
    r3 = (c[iy + 2, ix - 1] * wx0 + c[iy + 2, ix] * wx1
          + c[iy + 2, ix + 1] * wx2 + c[iy + 2, ix + 2] * wx3)
    v = r0 * wy0 + r1 * wy1 + r2 * wy2 + r3 * wy3
    return v


@njit(cache=True, nogil=True)
def _eval_point_grad(c, x, y):
    """Value and (d/dx, d/dy) at (x, y); caller guarantees the domain."""
    ix = int(math.floor(x))
    iy = int(math.floor(y))
    tx = x - ix
    ty = y - iy
    ox = 1.0 - tx
    oy = 1.0 - ty
    wx0 = ox * ox * ox / 6.0
    wx1 = (3.0 * tx * tx * tx - 6.0 * tx * tx + 4.0) / 6.0
    wx2 = (-3.0 * tx * tx * tx + 3.0 * tx * tx + 3.0 * tx + 1.0) / 6.0
    wx3 = tx * tx * tx / 6.0
    wy0 = oy * oy * oy / 6.0
    wy1 = (3.0 * ty * ty * ty - 6.0 * ty * ty + 4.0) / 6.0
    wy2 = (-3.0 * ty * ty * ty + 3.0 * ty * ty + 3.0 * ty + 1.0) / 6.0
    wy3 = ty * ty * ty / 6.0
    dx0 = -ox * ox / 2.0
    dx1 = (3.0 * tx * tx - 4.0 * tx) / 2.0
    dx2 = (-3.0 * tx * tx + 2.0 * tx + 1.0) / 2.0
    dx3 = tx * tx / 2.0
    dy0 = -oy * oy / 2.0
    dy1 = (3.0 * ty * ty - 4.0 * ty) / 2.0
    dy2 = (-3.0 * ty * ty + 2.0 * ty + 1.0) / 2.0
    dy3 = ty * ty / 2.0
    val = 0.0
    gx = 0.0
    gy = 0.0
    for m in range(4):
        row = iy - 1 + m
        rv = (c[row, ix - 1] * wx0 + c[row, ix] * wx1
              + c[row, ix + 1] * wx2 + c[row, ix + 2] * wx3)
        rd = (c[row, ix - 1] * dx0 + c[row, ix] * dx1
              + c[row, ix + 1] * dx2 + c[row, ix + 2] * dx3)
        if m == 0:
            val += rv * wy0
            gx += rd * wy0
            gy += rv * dy0
        elif m == 1:
            val += rv * wy1
            gx += rd * wy1
            gy += rv * dy1
        elif m == 2:
            val += rv * wy2
            gx += rd * wy2
            gy += rv * dy2
        else:
            val += rv * wy3
            gx += rd * wy3
            gy += rv * dy3
    return val, gx, gy


@njit(cache=True, nogil=True)
def _eval_many(c, xs, ys, out):
    for i in range(xs.shape[0]):
        out[i] = _eval_point(c, xs[i], ys[i])


@njit(cache=True, nogil=True)
def _eval_grad_many(c, xs, ys, val, gx, gy):
    for i in range(xs.shape[0]):
        v, dx, dy = _eval_point_grad(c, xs[i], ys[i])
        val[i] = v
        gx[i] = dx
        gy[i] = dy


@dataclass
class SplineCoefficients:
    """Prefiltered cubic B-spline coefficients for one image.

    The coefficient array has the same shape as the image; evaluating at
    integer pixel coordinates reproduces the source samples to rounding
    error.  Treated as immutable after construction.
    """

    width: int
    height: int
    coeffs: np.ndarray

    @property
    def domain(self) -> tuple[float, float, float, float]:
        """(xmin, xmax, ymin, ymax) where evaluation is allowed."""
        return (1.5, self.width - 2.5, 1.5, self.height - 2.5)

    def contains(self, x, y):
        xmin, xmax, ymin, ymax = self.domain
        return ((np.asarray(x) >= xmin) & (np.asarray(x) <= xmax)
                & (np.asarray(y) >= ymin) & (np.asarray(y) <= ymax))

    def _check_domain(self, xs: np.ndarray, ys: np.ndarray) -> None:
        ok = self.contains(xs, ys)
        if not np.all(ok):
            bad = np.nonzero(~np.atleast_1d(ok))[0][0]
            raise OutOfDomain(
                f"evaluation at ({np.atleast_1d(xs)[bad]}, {np.atleast_1d(ys)[bad]}) "
                f"is outside the safe domain {self.domain}")

    def eval(self, x, y):
        """Interpolate at (x, y); scalars or same-shape arrays."""
        xs = np.asarray(x, dtype=np.float64)
        ys = np.asarray(y, dtype=np.float64)
        xs, ys = np.broadcast_arrays(xs, ys)
        self._check_domain(xs, ys)
        flat_x = np.ascontiguousarray(xs.ravel())
        flat_y = np.ascontiguousarray(ys.ravel())
        out = np.empty(flat_x.shape[0], dtype=np.float64)
        _eval_many(self.coeffs, flat_x, flat_y, out)
        if xs.ndim == 0:
            return float(out[0])
        return out.reshape(xs.shape)

    def eval_grad(self, x, y):
        """Interpolated value plus (d/dx, d/dy) at (x, y)."""
        xs = np.asarray(x, dtype=np.float64)
        ys = np.asarray(y, dtype=np.float64)
        xs, ys = np.broadcast_arrays(xs, ys)
        self._check_domain(xs, ys)
        flat_x = np.ascontiguousarray(xs.ravel())
        flat_y = np.ascontiguousarray(ys.ravel())
        val = np.empty(flat_x.shape[0], dtype=np.float64)
        gx = np.empty_like(val)
        gy = np.empty_like(val)
        _eval_grad_many(self.coeffs, flat_x, flat_y, val, gx, gy)
        if xs.ndim == 0:
            return float(val[0]), float(gx[0]), float(gy[0])
        shape = xs.shape
        return val.reshape(shape), gx.reshape(shape), gy.reshape(shape)


def prefilter(image: GrayImage | np.ndarray) -> SplineCoefficients:
    """Compute B-spline coefficients for an image.

    Accepts a GrayImage or a bare 2D float array.  Requires at least 4
    pixels along each axis (the anticausal initialization needs two
    samples and evaluation needs a 4-wide stencil).
    """
    arr = image.pixels if isinstance(image, GrayImage) else np.asarray(image, dtype=np.float64)
    if arr.ndim != 2:
        raise ImageTooSmall("expected a 2D array")
    h, w = arr.shape
    if w < 4 or h < 4:
        raise ImageTooSmall(f"need at least 4x4 pixels to prefilter, got {w}x{h}")
    c = _prefilter_rows(np.ascontiguousarray(arr, dtype=np.float64))
    c = np.ascontiguousarray(_prefilter_rows(np.ascontiguousarray(c.T)).T)
    return SplineCoefficients(width=w, height=h, coeffs=c)
