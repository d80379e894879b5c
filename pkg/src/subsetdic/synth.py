"""Synthetic speckle images with analytically known deformation.

Speckle patterns are random Gaussian blobs: unit impulses splatted
bilinearly at uniform random subpixel centers, blurred to the requested
blob diameter, and normalized to 8-bit range.  Deformed copies are made by
inverse mapping: each output pixel (optionally supersampled) pulls its
value from the reference image through the spline interpolant at the
analytically inverted source position, so the imposed displacement field
is known exactly and these images can serve as ground truth for accuracy
and metrology studies.

Every generator rounds its output to integer gray levels, like the sensor
it stands in for.  This matters beyond realism: the implied quantization
noise spreads energy across the whole spectrum, without which the
phase-normalized correlation search would amplify the empty high-frequency
bins of a smooth noise-free synthetic image into junk votes.  It also
makes the in-memory image identical to its PGM round trip.

All generators are deterministic given their seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np
from numba import njit
from scipy.ndimage import gaussian_filter

from .bspline import _eval_point, prefilter
from .errors import NonInvertibleSpec
from .image import GrayImage, gray_image_from_array

__all__ = [
    "FieldKind", "DeformationFieldSpec", "gen_speckle", "deform_image",
    "add_noise", "star_phase", "star_period", "star_crest_positions",
]

# FWHM of a Gaussian = 2 sqrt(2 ln 2) sigma; blob diameter is its FWHM
_FWHM = 2.354820045030949


class FieldKind(Enum):
    TRANSLATION = "translation"
    UNIFORM_STRAIN = "uniform_strain"
    RADIAL_STRETCH = "radial_stretch"
    STAR_SINUSOID = "star_sinusoid"


def star_phase(x, period_start: float, period_rate: float):
    """Accumulated phase of a sinusoid whose period grows linearly with x.

    T(x) = period_start + period_rate * x; phase is the integral of 1/T.
    """
    x = np.asarray(x, dtype=np.float64)
    if period_rate > 1e-12:
        out = np.log1p(period_rate * x / period_start) / period_rate
    else:
        out = x / period_start
    return float(out) if out.ndim == 0 else out


def star_period(x, period_start: float, period_rate: float):
    """Local period T(x) of the swept sinusoid at position x."""
    x = np.asarray(x, dtype=np.float64)
    out = period_start + period_rate * x
    return float(out) if out.ndim == 0 else out


def star_crest_positions(x_max: float, period_start: float,
                         period_rate: float) -> np.ndarray:
    """x positions where |sin(2 pi phase)| = 1, ascending, within [0, x_max].

    These are the sample sites where the imposed displacement reaches the
    full +-amplitude, which is where attenuation is measured.
    """
    out = []
    k = 0
    while True:
        phi = 0.25 + 0.5 * k
        if period_rate > 1e-12:
            x = period_start * math.expm1(period_rate * phi) / period_rate
        else:
            x = period_start * phi
        if x > x_max:
            break
        out.append(x)
        k += 1
    return np.array(out)


@dataclass
class DeformationFieldSpec:
    """Analytic displacement field with an exact inverse.

    kind selects the field; the other attributes are read per kind:

    - TRANSLATION: ``shift``.
    - UNIFORM_STRAIN: symmetric strain components ``exx, eyy, exy`` about
      ``center`` (image center when None), plus an optional rigid
      ``shift``.  Material displacement is u(X) = shift + E (X - c).
    - RADIAL_STRETCH: ``edge_extension`` px of outward displacement reached
      at the midpoint of the nearer image edge.
    - STAR_SINUSOID: vertical displacement u_y = amplitude * sin(2 pi
      phase(x)), uniform in y, with the local period growing linearly from
      ``period_start`` at x=0 by ``period_rate`` px per px.
    """

    kind: FieldKind
    shift: tuple[float, float] = (0.0, 0.0)
    exx: float = 0.0
    eyy: float = 0.0
    exy: float = 0.0
    center: tuple[float, float] | None = None
    edge_extension: float = 0.0
    amplitude: float = 0.5
    period_start: float = 10.0
    period_rate: float = 0.0

    def _center(self, width: int, height: int) -> tuple[float, float]:
        if self.center is not None:
            return (float(self.center[0]), float(self.center[1]))
        return ((width - 1) / 2.0, (height - 1) / 2.0)

    def _radial_scale(self, width: int, height: int) -> float:
        # displacement reaches edge_extension at the edge-pixel midpoint of
        # the nearer image edge
        return self.edge_extension / ((min(width, height) - 1) / 2.0)

    def validate(self, width: int, height: int) -> None:
        if self.kind is FieldKind.UNIFORM_STRAIN:
            f = np.array([[1.0 + self.exx, self.exy],
                          [self.exy, 1.0 + self.eyy]])
            if np.linalg.det(f) <= 0.0:
                raise NonInvertibleSpec(
                    f"uniform strain ({self.exx}, {self.eyy}, {self.exy}) "
                    "has non-positive determinant")
        elif self.kind is FieldKind.RADIAL_STRETCH:
            if 1.0 + self._radial_scale(width, height) <= 0.0:
                raise NonInvertibleSpec(
                    f"radial extension {self.edge_extension} collapses the image")
        elif self.kind is FieldKind.STAR_SINUSOID:
            if self.period_start <= 0.0 or self.period_rate < 0.0:
                raise NonInvertibleSpec("star period map must be positive and growing")

    def displacement(self, x, y, width: int, height: int):
        """Ground-truth displacement of the material point at reference
        position (x, y): the deformed image shows this point at
        (x + ux, y + uy)."""
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        if self.kind is FieldKind.TRANSLATION:
            ux = np.full_like(x, self.shift[0])
            uy = np.full_like(y, self.shift[1])
        elif self.kind is FieldKind.UNIFORM_STRAIN:
            cx, cy = self._center(width, height)
            ux = self.shift[0] + self.exx * (x - cx) + self.exy * (y - cy)
            uy = self.shift[1] + self.exy * (x - cx) + self.eyy * (y - cy)
        elif self.kind is FieldKind.RADIAL_STRETCH:
            a = self._radial_scale(width, height)
            cx, cy = self._center(width, height)
            ux = a * (x - cx)
            uy = a * (y - cy)
        else:
            ux = np.zeros_like(x)
            uy = self.amplitude * np.sin(
                2.0 * math.pi * star_phase(x, self.period_start, self.period_rate))
        if np.ndim(ux) == 0:
            return float(ux), float(uy)
        return ux, uy

    def _kernel_args(self, width: int, height: int):
        """(kind code, parameter vector) consumed by the warp kernel."""
        p = np.zeros(8)
        if self.kind is FieldKind.TRANSLATION:
            code = 0
            p[0], p[1] = self.shift
        elif self.kind is FieldKind.UNIFORM_STRAIN:
            code = 1
            cx, cy = self._center(width, height)
            f = np.array([[1.0 + self.exx, self.exy],
                          [self.exy, 1.0 + self.eyy]])
            fi = np.linalg.inv(f)
            p[:] = (cx, cy, self.shift[0], self.shift[1],
                    fi[0, 0], fi[0, 1], fi[1, 0], fi[1, 1])
        elif self.kind is FieldKind.RADIAL_STRETCH:
            code = 2
            cx, cy = self._center(width, height)
            p[0], p[1] = cx, cy
            p[2] = 1.0 / (1.0 + self._radial_scale(width, height))
        else:
            code = 3
            p[0] = self.amplitude
            p[1] = self.period_start
            p[2] = self.period_rate
        return code, p


@njit(cache=True, nogil=True)
def _source_coords(code, p, x, y):
    """Reference-image position whose material point lands at (x, y)."""
    if code == 0:
        return x - p[0], y - p[1]
    elif code == 1:
        dx = x - p[0] - p[2]
        dy = y - p[1] - p[3]
        return p[0] + p[4] * dx + p[5] * dy, p[1] + p[6] * dx + p[7] * dy
    elif code == 2:
        return p[0] + (x - p[0]) * p[2], p[1] + (y - p[1]) * p[2]
    else:
        if p[2] > 1e-12:
            phi = math.log(1.0 + p[2] * x / p[1]) / p[2]
        else:
            phi = x / p[1]
        return x, y - p[0] * math.sin(2.0 * math.pi * phi)


@njit(cache=True, nogil=True)
def _warp_kernel(coeffs, code, p, ss, max_gray, out):
    h, w = coeffs.shape
    xmin, xmax = 1.5, w - 2.5
    ymin, ymax = 1.5, h - 2.5
    inv = 1.0 / ss
    scale = inv * inv
    for j in range(out.shape[0]):
        for i in range(out.shape[1]):
            acc = 0.0
            for sj in range(ss):
                yy = j + (sj + 0.5) * inv - 0.5
                for si in range(ss):
                    xx = i + (si + 0.5) * inv - 0.5
                    sx, sy = _source_coords(code, p, xx, yy)
                    if sx < xmin:
                        sx = xmin
                    elif sx > xmax:
                        sx = xmax
                    if sy < ymin:
                        sy = ymin
                    elif sy > ymax:
                        sy = ymax
                    acc += _eval_point(coeffs, sx, sy)
            val = acc * scale
            if val < 0.0:
                val = 0.0
            elif val > max_gray:
                val = max_gray
            out[j, i] = val


def gen_speckle(width: int, height: int, mean_diameter: float = 4.0,
                density: float = 0.5, seed: int = 0) -> GrayImage:
    """Random speckle pattern with the given mean blob diameter (FWHM, px)
    and areal blob density (blob area x count / image area).

    Density near the 0.5 default gives overlapping blobs everywhere, which
    is what subset matching wants; density near 0 leaves flat patches that
    the subset variance check downstream will reject.
    """
    if width < 4 or height < 4:
        raise ValueError("speckle image must be at least 4x4")
    if mean_diameter <= 0.0:
        raise ValueError("mean_diameter must be positive")
    if density < 0.0:
        raise ValueError("density must be >= 0")
    rng = np.random.default_rng(seed)
    sigma = mean_diameter / _FWHM
    blob_area = math.pi * (mean_diameter / 2.0) ** 2
    n_blobs = int(round(density * width * height / blob_area))
    field = np.zeros((height, width))
    if n_blobs > 0:
        bx = rng.uniform(0.0, width - 1.0, n_blobs)
        by = rng.uniform(0.0, height - 1.0, n_blobs)
        amp = rng.uniform(0.5, 1.0, n_blobs)
        ix = np.floor(bx).astype(np.int64)
        iy = np.floor(by).astype(np.int64)
        tx = bx - ix
        ty = by - iy
        ix1 = np.minimum(ix + 1, width - 1)
        iy1 = np.minimum(iy + 1, height - 1)
        np.add.at(field, (iy, ix), amp * (1 - tx) * (1 - ty))
        np.add.at(field, (iy, ix1), amp * tx * (1 - ty))
        np.add.at(field, (iy1, ix), amp * (1 - tx) * ty)
        np.add.at(field, (iy1, ix1), amp * tx * ty)
        field = gaussian_filter(field, sigma, truncate=4.0)
    top = field.max()
    if top > 0.0:
        field *= 255.0 / top
    np.rint(field, out=field)
    return gray_image_from_array(field, source_depth=8, label=f"speckle_{seed}")


def deform_image(image: GrayImage, spec: DeformationFieldSpec,
                 supersample: int = 4, label: str = "") -> GrayImage:
    """Apply an analytic deformation to an image by inverse mapping.

    Each output pixel averages `supersample`^2 spline samples of the
    reference image taken at the exactly inverted source positions, which
    approximates sensor-area integration.  supersample=1 samples pixel
    centers only, making a pure integer translation an exact pixel shift.
    Source positions falling outside the spline domain clamp to its edge,
    so a border band of the output (as wide as the local displacement)
    holds smeared content; keep the ROI away from it.
    """
    if supersample < 1:
        raise ValueError("supersample must be >= 1")
    spec.validate(image.width, image.height)
    code, p = spec._kernel_args(image.width, image.height)
    coeffs = prefilter(image)
    out = np.empty_like(image.pixels)
    _warp_kernel(coeffs.coeffs, code, p, supersample, image.max_gray, out)
    np.rint(out, out=out)
    return gray_image_from_array(out, image.source_depth,
                                 label or f"deformed_{image.label or 'image'}")


def add_noise(image: GrayImage, sigma: float, seed: int = 0) -> GrayImage:
    """Additive Gaussian noise in gray levels, clamped to the valid range."""
    if sigma < 0.0:
        raise ValueError("sigma must be >= 0")
    rng = np.random.default_rng(seed)
    noisy = image.pixels + rng.normal(0.0, sigma, size=image.pixels.shape)
    np.clip(noisy, 0.0, image.max_gray, out=noisy)
    np.rint(noisy, out=noisy)
    return gray_image_from_array(noisy, image.source_depth,
                                 label=image.label + "_noisy" if image.label else "noisy")
