"""Noise floor, spatial resolution, and MEI with independent oracles.

The spatial-resolution oracle replaces the 12th-order polynomial fit with
dense numerical root-finding on the linearly interpolated raw profile;
the two must agree on the fixture within 10%.
"""

from functools import lru_cache

import numpy as np
import pytest

from subsetdic.errors import NoCrossing, TooFewEntries
from subsetdic.image import GrayImage
from subsetdic.metrology import (
    MetrologyEntry, MetrologyReport, _fit_bias_profile, _midline_bias, mei,
    mei_summary, noise_floor, spatial_resolution, star_benchmark,
)
from subsetdic.params import DicParams
from subsetdic.rgdic import correlate_2d
from subsetdic.roi import roi_exclude_border
from subsetdic.synth import (
    DeformationFieldSpec, FieldKind, add_noise, deform_image, gen_speckle,
    star_period,
)

W, H = 1000, 250
PERIOD_START, PERIOD_RATE = 8.0, 0.12


@lru_cache(maxsize=1)
def _star_set():
    ref = gen_speckle(W, H, seed=11)
    spec = DeformationFieldSpec(kind=FieldKind.STAR_SINUSOID, amplitude=0.5,
                                period_start=PERIOD_START,
                                period_rate=PERIOD_RATE)
    star = deform_image(ref, spec)
    noisy = add_noise(ref, 2.0, seed=5)
    return ref, noisy, star


def _params(size, step=6):
    return DicParams(subset_size=size, subset_step=step,
                     max_displacement=3.0, threads=1)


@lru_cache(maxsize=None)
def _noise(size):
    ref, noisy, _ = _star_set()
    return noise_floor(ref, noisy, _params(size))


@lru_cache(maxsize=None)
def _star_result(size):
    ref, _, star = _star_set()
    roi = roi_exclude_border(W, H, 31)
    return correlate_2d(ref, [star], roi, (W / 2, H / 2),
                        _params(size, step=4))[0]


# ------------------------------------------------------------------- MEI


def test_mei_zero_noise_is_zero():
    assert mei(0.0, 55.0) == 0.0


def test_mei_is_the_product():
    assert mei(0.01, 60.0) == pytest.approx(0.6, abs=1e-15)


def test_mei_summary_worked_example():
    assert mei_summary([0.6, 0.58, 0.55, 0.9]) == pytest.approx(
        (0.55 + 0.58 + 0.6) / 3, abs=1e-12)


def test_mei_summary_permutation_invariant():
    vals = [0.72, 0.31, 0.55, 0.48, 0.91]
    want = mei_summary(vals)
    rng = np.random.default_rng(0)
    for _ in range(10):
        rng.shuffle(vals)
        assert mei_summary(vals) == want


def test_mei_summary_too_few_entries():
    with pytest.raises(TooFewEntries):
        mei_summary([0.5, 0.6])


def test_entry_mei_is_exact_product():
    e = MetrologyEntry(subset_size=21, noise=0.0123, l10=47.5)
    assert e.mei == 0.0123 * 47.5


def test_report_summary_and_lookup():
    rep = MetrologyReport([MetrologyEntry(11, 0.02, 30.0),
                           MetrologyEntry(21, 0.01, 55.0),
                           MetrologyEntry(31, 0.007, 80.0)])
    assert rep.summary == pytest.approx(
        mei_summary([0.02 * 30, 0.01 * 55, 0.007 * 80]))
    assert rep.entry(21).l10 == 55.0
    with pytest.raises(KeyError):
        rep.entry(99)


def test_report_too_few_entries():
    with pytest.raises(TooFewEntries):
        MetrologyReport([MetrologyEntry(11, 0.02, 30.0)]).summary


# ------------------------------------------------------- spatial_resolution


def test_resolution_linear_profile_exact():
    # the profile lies in the fit's span, so the fit reproduces it exactly
    # and the crossing can be computed by hand: plateau is the median of
    # the last 5 of 41 samples (x = 90..100 -> 0.975), the threshold is
    # 0.9 * 0.975, and the ramp 0.5 + 0.005 x meets it at x = 75.5
    x = np.linspace(0.0, 100.0, 41)
    bias = 0.5 + 0.005 * x
    l10 = spatial_resolution(x, bias, lambda xc: 3.0 + 0.1 * xc)
    assert l10 == pytest.approx(3.0 + 0.1 * 75.5, rel=1e-6)


def test_resolution_step_profile():
    x = np.linspace(0.0, 120.0, 61)
    step_at, width = 50.0, 1.5
    bias = 1.0 / (1.0 + np.exp(-(x - step_at) / width))
    l10 = spatial_resolution(x, bias, lambda xc: 2.0 + 0.2 * xc)
    # a logistic step reaches 90% of its plateau at center + width*ln(9);
    # the polynomial smoothing may shift that by a ripple or so
    x90 = step_at + width * np.log(9.0)
    assert l10 == pytest.approx(2.0 + 0.2 * x90, rel=0.08)


def test_resolution_takes_largest_crossing():
    x = np.linspace(0.0, 100.0, 201)
    bias = 0.5 + 0.005 * x - 0.3 * np.exp(-((x - 85.0) / 3.0) ** 2)
    period = lambda xc: 3.0 + 0.1 * xc  # noqa: E731
    l10 = spatial_resolution(x, bias, period)
    # the plain ramp crosses at 75.5; the dip at x = 85 forces a later
    # re-crossing, and that one must win
    assert l10 > period(80.0)


def test_resolution_no_crossing():
    x = np.linspace(0.0, 100.0, 41)
    with pytest.raises(NoCrossing):
        spatial_resolution(x, np.full(41, 0.5), lambda xc: xc)


def test_resolution_input_validation():
    x = np.linspace(0.0, 10.0, 8)
    with pytest.raises(ValueError, match="samples"):
        spatial_resolution(x, np.ones(8), lambda xc: xc)
    with pytest.raises(ValueError, match="1-d"):
        spatial_resolution(np.linspace(0, 1, 20), np.ones(19),
                           lambda xc: xc)


def test_resolution_matches_dense_root_finding_oracle():
    res = _star_result(25)
    crest_x, bias = _midline_bias(res, PERIOD_START, PERIOD_RATE)
    l10 = spatial_resolution(
        crest_x, bias, lambda x: star_period(x, PERIOD_START, PERIOD_RATE))

    _, _, threshold, _ = _fit_bias_profile(crest_x, bias, 12)
    dense = np.linspace(crest_x.min(), crest_x.max(), 200001)
    above = np.interp(dense, crest_x, bias) - threshold
    flips = np.nonzero(np.diff(np.sign(above)) != 0)[0]
    assert flips.size, "raw profile never crosses its threshold"
    i = flips[-1]
    x_cross = dense[i] - above[i] * (dense[i + 1] - dense[i]) / (
        above[i + 1] - above[i])
    oracle = star_period(x_cross, PERIOD_START, PERIOD_RATE)
    assert l10 == pytest.approx(oracle, rel=0.10)


# ------------------------------------------------------------ noise floor


def test_noise_floor_self_is_numerically_zero():
    ref, _, _ = _star_set()
    assert noise_floor(ref, ref, _params(21, step=8)) < 1e-6


def test_noise_floor_shrinks_with_subset_size():
    n = {s: _noise(s) for s in (11, 21, 31)}
    assert n[11] > n[21] > n[31] > 0


def test_noise_floor_deterministic():
    ref, noisy, _ = _star_set()
    a = noise_floor(ref, noisy, _params(21, step=8))
    b = noise_floor(ref, noisy, _params(21, step=8))
    assert a == b


def test_noise_floor_dim_mismatch():
    ref, _, _ = _star_set()
    small = gen_speckle(64, 64, seed=1)
    with pytest.raises(ValueError):
        noise_floor(ref, small, _params(21))


# -------------------------------------------------------------- benchmark


def test_star_benchmark_report_and_files(tmp_path):
    ref, noisy, star = _star_set()
    sizes = [21, 25, 31]
    rep = star_benchmark(ref, noisy, star, sizes, _params(21),
                         period_start=PERIOD_START,
                         period_rate=PERIOD_RATE, output_dir=tmp_path)
    assert [e.subset_size for e in rep.entries] == sizes
    for e in rep.entries:
        assert e.noise > 0 and e.l10 > PERIOD_START
        assert e.mei == e.noise * e.l10
    assert rep.summary == pytest.approx(
        mei_summary(e.mei for e in rep.entries))
    # resolution cannot improve when the subset grows
    l10s = [rep.entry(s).l10 for s in sizes]
    assert l10s == sorted(l10s)

    names = {p.name for p in tmp_path.iterdir()}
    assert {"metrology_report.csv", "midline_convergence.png",
            "spatial_resolution.png", "mei.png"} <= names
    text = (tmp_path / "metrology_report.csv").read_text().splitlines()
    assert text[0].startswith("# mei_summary:")
    assert text[1] == "subset_size,noise_px,l10_px,mei"
    assert len(text) == 2 + len(sizes)
