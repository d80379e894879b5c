"""Metrological benchmarking: displacement noise, spatial resolution, MEI.

The methodology follows the DIC Challenge 2.0 star-image protocol. The
displacement noise n is the 1-sigma scatter of vertical displacement when
a reference image is correlated against itself plus sensor noise. The
spatial resolution l10 is read off a swept-sinusoid displacement field:
a 12th-order polynomial is fit to the measured midline amplitude profile,
and the local sinusoid period where that fit drops through 90% of the
plateau amplitude (10% attenuation) is the resolution. Their product is
the metrological efficiency indicator, MEI = n * l10; a benchmark sweep
over subset sizes is summarized as the mean of the three lowest MEI
values.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from numpy.polynomial import Polynomial

from .errors import AllInvalid, NoCrossing, TooFewEntries
from .image import GrayImage
from .params import DicParams
from .rgdic import correlate_2d
from .roi import RoiMask, roi_exclude_border
from .synth import star_crest_positions, star_period, star_phase

__all__ = [
    "MetrologyEntry", "MetrologyReport", "noise_floor", "spatial_resolution",
    "mei", "mei_summary", "star_benchmark",
]

_FIT_DEGREE = 12
_ATTENUATION = 0.10
# fraction of the profile (rightmost columns) used to estimate the plateau
_PLATEAU_TAIL = 0.10


def noise_floor(ref: GrayImage, ref_noisy: GrayImage, params: DicParams,
                roi: RoiMask | None = None,
                seed: tuple[float, float] | None = None) -> float:
    """1-sigma vertical displacement when matching an image to itself.

    Correlates ``ref`` against ``ref_noisy`` (the same scene, different
    sensor noise) and returns the standard deviation of v over converged
    points. With identical inputs this is the interpolation noise floor,
    well below 1e-6 px.
    """
    if (ref.width, ref.height) != (ref_noisy.width, ref_noisy.height):
        raise ValueError("reference and noisy reference must share dims")
    if roi is None:
        roi = roi_exclude_border(ref.width, ref.height, params.subset_size)
    if seed is None:
        seed = (ref.width / 2.0, ref.height / 2.0)
    res = correlate_2d(ref, [ref_noisy], roi, seed, params)[0]
    v = res.v[res.converged]
    if v.size == 0:
        raise AllInvalid("no converged points in the noise-floor run")
    return float(np.std(v))


def _fit_bias_profile(x, bias, degree):
    """Polynomial fit plus the plateau-derived detection threshold."""
    x = np.asarray(x, dtype=np.float64)
    bias = np.asarray(bias, dtype=np.float64)
    if x.shape != bias.shape or x.ndim != 1:
        raise ValueError("profile must be matching 1-d x and bias arrays")
    if x.size < degree + 1:
        raise ValueError(f"need at least {degree + 1} profile samples for "
                         f"a degree-{degree} fit, got {x.size}")
    order = np.argsort(x)
    x, bias = x[order], bias[order]
    tail = max(2, int(np.ceil(_PLATEAU_TAIL * x.size)))
    plateau = float(np.median(bias[-tail:]))
    threshold = (1.0 - _ATTENUATION) * plateau
    poly = Polynomial.fit(x, bias, degree)
    return poly, plateau, threshold, x


def _largest_crossing(poly: Polynomial, threshold: float,
                      lo: float, hi: float) -> float:
    roots = (poly - threshold).roots()
    real = roots[np.abs(roots.imag) < 1e-9 * max(1.0, abs(hi))].real
    inside = real[(real >= lo) & (real <= hi)]
    if inside.size == 0:
        raise NoCrossing(
            f"bias fit never crosses {threshold:.6g} inside "
            f"[{lo:.6g}, {hi:.6g}]")
    return float(inside.max())


def spatial_resolution(x, bias, period_of_x, degree: int = _FIT_DEGREE
                       ) -> float:
    """Sinusoid period at which the measured amplitude loses 10%.

    ``x``/``bias`` sample the measured midline amplitude against position;
    ``period_of_x`` maps a position to the local period of the imposed
    sinusoid there. A polynomial least-squares fit smooths the profile and
    its largest crossing of 90% of the plateau amplitude marks the
    resolution limit.

    Raises NoCrossing when the fit stays on one side of the threshold over
    the sampled range (e.g. every period resolved, or none).
    """
    poly, _, threshold, xs = _fit_bias_profile(x, bias, degree)
    x_cross = _largest_crossing(poly, threshold, xs[0], xs[-1])
    return float(period_of_x(x_cross))


def mei(noise: float, l10: float) -> float:
    """Metrological efficiency indicator: noise times spatial resolution."""
    return noise * l10


def mei_summary(values) -> float:
    """Mean of the three lowest MEI values of a benchmark sweep."""
    vals = sorted(float(v) for v in values)
    if len(vals) < 3:
        raise TooFewEntries(f"summary needs at least 3 MEI values, "
                            f"got {len(vals)}")
    return float(np.mean(vals[:3]))


@dataclass
class MetrologyEntry:
    """One subset size's metrology numbers; mei is derived, never stored."""

    subset_size: int
    noise: float
    l10: float

    @property
    def mei(self) -> float:
        return mei(self.noise, self.l10)


@dataclass
class MetrologyReport:
    """Noise, resolution and MEI per subset size for one image set."""

    entries: list

    @property
    def summary(self) -> float:
        return mei_summary(e.mei for e in self.entries)

    def entry(self, subset_size: int) -> MetrologyEntry:
        for e in self.entries:
            if e.subset_size == subset_size:
                return e
        raise KeyError(subset_size)


def _midline_bias(result, period_start, period_rate):
    """Measured amplitude at each sinusoid crest along the middle row.

    Returns (crest_x, bias) where bias is the signed midline displacement
    folded back to a positive amplitude, converging to ``amplitude`` where
    the period is long enough to resolve.
    """
    grid = result.grid
    mid = int(np.argmin(np.abs(grid.ys - grid.ys.mean())))
    ok = result.converged[mid]
    if ok.sum() < 2:
        raise AllInvalid("midline row has fewer than 2 converged points")
    xs = grid.xs[ok].astype(np.float64)
    v = result.v[mid][ok]
    crest_x = star_crest_positions(float(xs.max()), period_start,
                                   period_rate)
    crest_x = crest_x[crest_x >= xs.min()]
    sign = np.sign(np.sin(
        2.0 * np.pi * star_phase(crest_x, period_start, period_rate)))
    bias = np.interp(crest_x, xs, v) * sign
    return crest_x, bias


def star_benchmark(ref: GrayImage, ref_noisy: GrayImage,
                   deformed: GrayImage, subset_sizes, params: DicParams,
                   period_start: float, period_rate: float,
                   amplitude: float = 0.5, roi: RoiMask | None = None,
                   seed: tuple[float, float] | None = None,
                   output_dir=None, delimiter: str = ",",
                   ) -> MetrologyReport:
    """Noise + resolution sweep over subset sizes on a star image set.

    For each subset size the noise floor is measured from ``ref`` vs
    ``ref_noisy`` and the spatial resolution from the midline of ``ref``
    vs ``deformed`` (a swept vertical sinusoid of the given amplitude and
    period map). When ``output_dir`` is set, a delimited table and
    diagnostic figures are written there.
    """
    if seed is None:
        seed = (ref.width / 2.0, ref.height / 2.0)
    entries = []
    profiles = []
    for size in subset_sizes:
        p = replace(params, subset_size=int(size))
        run_roi = roi if roi is not None else roi_exclude_border(
            ref.width, ref.height, p.subset_size)
        n = noise_floor(ref, ref_noisy, p, run_roi, seed)
        res = correlate_2d(ref, [deformed], run_roi, seed, p)[0]
        crest_x, bias = _midline_bias(res, period_start, period_rate)
        l10 = spatial_resolution(
            crest_x, bias,
            lambda x: star_period(x, period_start, period_rate))
        entries.append(MetrologyEntry(int(size), n, l10))
        profiles.append((int(size), crest_x, bias))
    report = MetrologyReport(entries)
    if output_dir is not None:
        _write_report_files(report, profiles, amplitude, Path(output_dir),
                            delimiter)
    return report


def _write_report_files(report, profiles, amplitude, out: Path, delimiter):
    out.mkdir(parents=True, exist_ok=True)
    table = out / "metrology_report.csv"
    with open(table, "w", newline="") as fh:
        try:
            fh.write(f"# mei_summary: {report.summary:.9g}\n")
        except TooFewEntries:
            pass
        fh.write(delimiter.join(("subset_size", "noise_px", "l10_px",
                                 "mei")) + "\n")
        for e in report.entries:
            fh.write(delimiter.join((
                str(e.subset_size), format(e.noise, ".9g"),
                format(e.l10, ".9g"), format(e.mei, ".9g"))) + "\n")
    _render_figures(report, profiles, amplitude, out)


def _render_figures(report, profiles, amplitude, out: Path):
    # imported here so plain engine use never pulls in a plotting stack
    from matplotlib.figure import Figure

    fig = Figure(figsize=(8.0, 4.5))
    ax = fig.subplots()
    for size, crest_x, bias in profiles:
        ax.plot(crest_x, bias, marker=".", lw=1.0, label=f"subset {size}")
    ax.axhline(amplitude, color="k", lw=0.8, ls="--")
    ax.axhline(0.9 * amplitude, color="k", lw=0.8, ls=":")
    ax.set_xlabel("x (px)")
    ax.set_ylabel("measured midline amplitude (px)")
    ax.set_title("Midline convergence toward the imposed amplitude")
    ax.legend(fontsize=8)
    fig.savefig(out / "midline_convergence.png", dpi=130,
                bbox_inches="tight")

    sizes = [e.subset_size for e in report.entries]
    fig = Figure(figsize=(6.0, 4.0))
    ax = fig.subplots()
    ax.plot(sizes, [e.l10 for e in report.entries], "o-")
    ax.set_xlabel("subset size (px)")
    ax.set_ylabel("spatial resolution $\\ell_{10\\%}$ (px)")
    ax.set_title("Spatial resolution vs subset size")
    fig.savefig(out / "spatial_resolution.png", dpi=130,
                bbox_inches="tight")

    fig = Figure(figsize=(6.0, 4.0))
    ax = fig.subplots()
    ax.plot(sizes, [e.mei for e in report.entries], "s-")
    try:
        ax.axhline(report.summary, color="r", lw=0.8, ls="--",
                   label=f"summary {report.summary:.3g}")
        ax.legend(fontsize=8)
    except TooFewEntries:
        pass
    ax.set_xlabel("subset size (px)")
    ax.set_ylabel("MEI (px$^2$)")
    ax.set_title("Metrological efficiency indicator")
    fig.savefig(out / "mei.png", dpi=130, bbox_inches="tight")
