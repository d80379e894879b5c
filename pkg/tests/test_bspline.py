"""Cubic B-spline prefilter and evaluator.

The oracle for the recursive prefilter is a dense linear solve: under the
mirror boundary, coefficients satisfy (c[i-1] + 4 c[i] + c[i+1]) / 6 = x[i]
with reflected indices, a symmetric tridiagonal-plus-corrections system
solved here explicitly per axis.
"""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from subsetdic import ImageTooSmall, OutOfDomain, gray_image_from_array, prefilter


def _mirror(i, n):
    if i < 0:
        return -i
    if i > n - 1:
        return 2 * (n - 1) - i
    return i


def _dense_coeffs_1d(x):
    n = len(x)
    a = np.zeros((n, n))
    for i in range(n):
        for j, w in ((i - 1, 1 / 6), (i, 4 / 6), (i + 1, 1 / 6)):
            a[i, _mirror(j, n)] += w
    return np.linalg.solve(a, x)


def _dense_coeffs_2d(img):
    c = np.apply_along_axis(_dense_coeffs_1d, 1, img)
    return np.apply_along_axis(_dense_coeffs_1d, 0, c)


def _rand_image(shape, seed):
    rng = np.random.default_rng(seed)
    return rng.uniform(0, 255, size=shape)


def test_prefilter_matches_dense_solve():
    img = _rand_image((16, 16), 42)
    got = prefilter(img).coeffs
    want = _dense_coeffs_2d(img)
    np.testing.assert_allclose(got, want, rtol=1e-10, atol=1e-8)


def test_prefilter_matches_dense_solve_rect():
    img = _rand_image((9, 37), 1)
    np.testing.assert_allclose(prefilter(img).coeffs, _dense_coeffs_2d(img),
                               rtol=1e-10, atol=1e-8)


def test_reproduces_samples_at_integers():
    img = _rand_image((32, 40), 7)
    sp = prefilter(img)
    xs, ys = np.meshgrid(np.arange(2, 38), np.arange(2, 30))
    vals = sp.eval(xs.astype(float), ys.astype(float))
    np.testing.assert_allclose(vals, img[2:30, 2:38], rtol=1e-8, atol=1e-8)


def test_constant_image_exact_everywhere():
    img = np.full((6, 6), 7.25)
    sp = prefilter(img)
    np.testing.assert_allclose(sp.coeffs, 7.25, rtol=1e-12)
    assert sp.eval(2.37, 3.01) == pytest.approx(7.25, rel=1e-12)


def test_linear_ramp_exact_in_interior():
    x = np.arange(48, dtype=float)
    img = np.tile(x, (48, 1))
    sp = prefilter(img)
    for px in (20.0, 22.3, 23.75, 24.5):
        assert sp.eval(px, 24.2) == pytest.approx(px, abs=1e-9)
    _, gx, gy = sp.eval_grad(23.4, 24.6)
    assert gx == pytest.approx(1.0, abs=1e-9)
    assert gy == pytest.approx(0.0, abs=1e-9)


def test_cubic_polynomial_reproduced_in_interior():
    # cubic splines reproduce polynomials up to degree 3 away from the
    # boundary, where the mirror extension bends the signal
    n = 64
    yy, xx = np.mgrid[0:n, 0:n].astype(float)
    img = 0.002 * xx**3 - 0.04 * xx * yy + 0.6 * yy + 5.0 + 0.001 * yy**3
    sp = prefilter(img)
    rng = np.random.default_rng(3)
    pts = rng.uniform(25, 38, size=(50, 2))
    for px, py in pts:
        want = 0.002 * px**3 - 0.04 * px * py + 0.6 * py + 5.0 + 0.001 * py**3
        assert sp.eval(px, py) == pytest.approx(want, rel=1e-9)


def test_gradient_matches_finite_differences():
    from scipy.ndimage import gaussian_filter

    img = gaussian_filter(_rand_image((40, 40), 9), 1.2)
    sp = prefilter(img)
    rng = np.random.default_rng(4)
    h = 1e-5
    for px, py in rng.uniform(5, 34, size=(25, 2)):
        _, gx, gy = sp.eval_grad(px, py)
        fx = (sp.eval(px + h, py) - sp.eval(px - h, py)) / (2 * h)
        fy = (sp.eval(px, py + h) - sp.eval(px, py - h)) / (2 * h)
        assert gx == pytest.approx(fx, rel=1e-4, abs=1e-6)
        assert gy == pytest.approx(fy, rel=1e-4, abs=1e-6)


def test_domain_edges():
    sp = prefilter(_rand_image((20, 30), 5))
    assert sp.domain == (1.5, 27.5, 1.5, 17.5)
    sp.eval(1.5, 1.5)
    sp.eval(27.5, 17.5)
    for bad in ((1.499, 5.0), (27.501, 5.0), (5.0, 1.45), (5.0, 17.51)):
        with pytest.raises(OutOfDomain):
            sp.eval(*bad)


def test_array_and_scalar_eval_agree():
    sp = prefilter(_rand_image((24, 24), 8))
    xs = np.array([3.25, 10.5, 19.75])
    ys = np.array([4.0, 12.3, 20.5])
    arr = sp.eval(xs, ys)
    for i in range(3):
        assert arr[i] == pytest.approx(sp.eval(float(xs[i]), float(ys[i])), rel=1e-14)


def test_minimum_size_and_too_small():
    prefilter(_rand_image((4, 4), 2))
    with pytest.raises(ImageTooSmall):
        prefilter(_rand_image((3, 10), 2))


def test_gray_image_input():
    img = gray_image_from_array(_rand_image((8, 8), 6))
    sp = prefilter(img)
    assert sp.width == 8 and sp.height == 8


@settings(max_examples=20, deadline=None)
@given(st.floats(-3, 3, allow_nan=False), st.floats(-3, 3, allow_nan=False),
       st.integers(0, 2**31 - 1))
def test_prefilter_is_linear(a, b, seed):
    rng = np.random.default_rng(seed)
    f = rng.uniform(0, 255, size=(12, 12))
    g = rng.uniform(0, 255, size=(12, 12))
    lhs = prefilter(a * f + b * g).coeffs
    rhs = a * prefilter(f).coeffs + b * prefilter(g).coeffs
    np.testing.assert_allclose(lhs, rhs, rtol=1e-9, atol=1e-7)
