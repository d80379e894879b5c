"""Strain fields from displacement grids.

Displacements are smoothed by a local polynomial fit over an N x N window
of grid points, the deformation gradient F = I + grad(u) is read from the
fit's linear coefficients at the window center, and a strain tensor is
derived from F in the requested formulation.  The window size times the
subset step sets the physical averaging length: vsg = (N - 1) * step +
subset_size pixels, the virtual strain gauge.

Matrix square roots and logarithms of the 2x2 stretch tensors are computed
from an analytic symmetric eigendecomposition, so the five formulations
are exact and allocation-free per window.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .errors import GridTooSmall, RankDeficient, SingularDeformation
from .params import PointStatus, StrainBasis, StrainFormulation, StrainParams
from .rgdic import DicResult

__all__ = [
    "StrainField",
    "fit_window",
    "deformation_gradient",
    "strain_tensor",
    "calculate_strain_field",
]

_FORM_CODE = {
    StrainFormulation.GREEN_LAGRANGE: 0,
    StrainFormulation.HENCKY: 1,
    StrainFormulation.EULER_ALMANSI: 2,
    StrainFormulation.BIOT_RIGHT: 3,
    StrainFormulation.BIOT_LEFT: 4,
}

# Minimum valid points for a standalone fit; the field computation is
# stricter (basis size + 2) so single outliers cannot dominate a window.
_MIN_POINTS = {StrainBasis.BILINEAR: 3, StrainBasis.BIQUADRATIC: 9}


def _design_matrix(xs: np.ndarray, ys: np.ndarray, k: int) -> np.ndarray:
    cols = [np.ones_like(xs), xs, ys]
    if k == 8:
        cols += [xs * xs, ys * ys, xs * xs * ys, xs * ys * ys,
                 xs * xs * ys * ys]
    return np.column_stack(cols)


def fit_window(values: np.ndarray, subset_step: int,
               basis: StrainBasis) -> np.ndarray:
    """Least-squares polynomial coefficients for one displacement window.

    ``values`` is the N x N window of one displacement component; NaN
    entries are excluded from the fit.  Local coordinates are pixels,
    centered on the window's middle point, so the returned linear
    coefficients are displacement gradients in px/px.  The basis is
    [1, x, y] or [1, x, y, x^2, y^2, x^2 y, x y^2, x^2 y^2].

    Raises RankDeficient when too few points remain or the points do not
    determine all coefficients (e.g. a single surviving row of data).
    """
    vals = np.asarray(values, dtype=np.float64)
    if vals.ndim != 2 or vals.shape[0] != vals.shape[1]:
        raise ValueError("values must be a square N x N window")
    n = vals.shape[0]
    if n % 2 == 0:
        raise ValueError("window side must be odd")
    half = n // 2
    ys, xs = np.mgrid[-half:half + 1, -half:half + 1]
    xs = xs.reshape(-1) * float(subset_step)
    ys = ys.reshape(-1) * float(subset_step)
    flat = vals.reshape(-1)
    keep = np.isfinite(flat)
    k = basis.n_terms
    if keep.sum() < _MIN_POINTS[basis]:
        raise RankDeficient(
            f"{int(keep.sum())} valid points cannot support a "
            f"{basis.value} fit (needs {_MIN_POINTS[basis]})")
    P = _design_matrix(xs[keep], ys[keep], k)
    c, _, rank, _ = np.linalg.lstsq(P, flat[keep], rcond=None)
    if rank < k:
        raise RankDeficient(
            f"valid points span rank {rank} < {k} for a {basis.value} fit")
    return c


def deformation_gradient(c_x: np.ndarray, c_y: np.ndarray) -> np.ndarray:
    """F = I + grad(u) at the window center from fitted coefficients.

    Only the linear coefficients survive differentiation at the center
    (every higher basis term has a vanishing first derivative at x=y=0),
    so the same two entries serve both bases.
    """
    return np.array([[1.0 + c_x[1], c_x[2]],
                     [c_y[1], 1.0 + c_y[2]]])


@njit(cache=True, nogil=True)
def _sym_eig2(a, b, d):
    """Eigenvalues (l1 >= l2) and unit eigenvector of l1 for [[a,b],[b,d]]."""
    if b == 0.0:
        if a >= d:
            return a, d, 1.0, 0.0
        return d, a, 0.0, 1.0
    tr = a + d
    disc = math.hypot(a - d, 2.0 * b)
    l1 = 0.5 * (tr + disc)
    l2 = 0.5 * (tr - disc)
    # two equivalent eigenvector forms; take the one whose leading entry
    # is at least disc/2 so roundoff in the eigenvalue cannot flip it
    if a >= d:
        vx = l1 - d
        vy = b
    else:
        vx = b
        vy = l1 - a
    nrm = math.hypot(vx, vy)
    return l1, l2, vx / nrm, vy / nrm


@njit(cache=True, nogil=True)
def _sym_apply(l1, l2, c, s, f1, f2):
    """Rebuild f(S) = f2*I + (f1-f2)*v v^T from eigen data; returns
    (xx, yy, xy)."""
    d = f1 - f2
    return f2 + d * c * c, f2 + d * s * s, d * c * s


@njit(cache=True, nogil=True)
def _strain_from_f(fxx, fxy, fyx, fyy, code):
    """One strain tensor from one deformation gradient.

    Returns (exx, eyy, exy, ok); ok is False when the formulation's
    preconditions fail (singular stretch, non-positive determinant for
    the spatial inverse).
    """
    det = fxx * fyy - fxy * fyx
    if code == 0:
        cxx = fxx * fxx + fyx * fyx
        cxy = fxx * fxy + fyx * fyy
        cyy = fxy * fxy + fyy * fyy
        return 0.5 * (cxx - 1.0), 0.5 * (cyy - 1.0), 0.5 * cxy, True
    if code == 2:
        if det <= 0.0:
            return np.nan, np.nan, np.nan, False
        bxx = fxx * fxx + fxy * fxy
        bxy = fxx * fyx + fxy * fyy
        byy = fyx * fyx + fyy * fyy
        d2 = det * det
        return (0.5 * (1.0 - byy / d2), 0.5 * (1.0 - bxx / d2),
                0.5 * bxy / d2, True)
    if code == 1 or code == 3:
        sxx = fxx * fxx + fyx * fyx
        sxy = fxx * fxy + fyx * fyy
        syy = fxy * fxy + fyy * fyy
    else:
        sxx = fxx * fxx + fxy * fxy
        sxy = fxx * fyx + fxy * fyy
        syy = fyx * fyx + fyy * fyy
    l1, l2, c, s = _sym_eig2(sxx, sxy, syy)
    if l2 <= 0.0:
        return np.nan, np.nan, np.nan, False
    if code == 1:
        f1 = 0.5 * math.log(l1)
        f2 = 0.5 * math.log(l2)
    else:
        f1 = math.sqrt(l1) - 1.0
        f2 = math.sqrt(l2) - 1.0
    xx, yy, xy = _sym_apply(l1, l2, c, s, f1, f2)
    return xx, yy, xy, True


def strain_tensor(F: np.ndarray, formulation: StrainFormulation) -> np.ndarray:
    """Symmetric 2x2 strain tensor for one deformation gradient.

    Green-Lagrange (F^T F - I)/2 and Euler-Almansi (I - (F F^T)^-1)/2 via
    direct algebra; Hencky ln sqrt(F^T F) and the two Biot stretches via
    eigendecomposition.  Raises SingularDeformation when the deformation
    cannot support the requested measure.
    """
    F = np.asarray(F, dtype=np.float64)
    if F.shape != (2, 2):
        raise ValueError("F must be 2x2")
    xx, yy, xy, ok = _strain_from_f(F[0, 0], F[0, 1], F[1, 0], F[1, 1],
                                    _FORM_CODE[formulation])
    if not ok:
        raise SingularDeformation(
            f"deformation gradient det={np.linalg.det(F):.6g} cannot "
            f"support {formulation.value}")
    return np.array([[xx, xy], [xy, yy]])


@dataclass
class StrainField:
    """Strain evaluated at every full window position of a displacement
    grid.

    Arrays are (out_rows, out_cols) with out_rows = rows - N + 1 (stride
    one grid point); ``xs``/``ys`` give the window-center pixel
    coordinates.  ``valid`` is False where too few converged points,
    a rank-deficient fit, or a singular deformation left the window
    unusable; those entries are NaN throughout.
    """

    xs: np.ndarray
    ys: np.ndarray
    F: np.ndarray
    exx: np.ndarray
    eyy: np.ndarray
    exy: np.ndarray
    valid: np.ndarray
    vsg: float
    window_points: int
    basis: StrainBasis
    formulation: StrainFormulation
    image_label: str

    @property
    def n_valid(self) -> int:
        return int(self.valid.sum())


@njit(cache=True, nogil=True)
def _strain_field_kernel(u, v, usable, step, n_win, k, min_pts, form_code,
                         F_out, exx_out, eyy_out, exy_out, ok_out):
    rows, cols = u.shape
    orows = rows - n_win + 1
    ocols = cols - n_win + 1
    half = (n_win - 1) // 2
    npts = n_win * n_win
    xs = np.empty(npts)
    ys = np.empty(npts)
    for wr in range(orows):
        for wc in range(ocols):
            m = 0
            for a in range(n_win):
                for b in range(n_win):
                    if usable[wr + a, wc + b]:
                        xs[m] = (b - half) * step
                        ys[m] = (a - half) * step
                        m += 1
            if m < min_pts:
                continue
            P = np.empty((m, k))
            rhs = np.empty((m, 2))
            i = 0
            for a in range(n_win):
                for b in range(n_win):
                    if usable[wr + a, wc + b]:
                        x = xs[i]
                        y = ys[i]
                        P[i, 0] = 1.0
                        P[i, 1] = x
                        P[i, 2] = y
                        if k == 8:
                            P[i, 3] = x * x
                            P[i, 4] = y * y
                            P[i, 5] = x * x * y
                            P[i, 6] = x * y * y
                            P[i, 7] = x * x * y * y
                        rhs[i, 0] = u[wr + a, wc + b]
                        rhs[i, 1] = v[wr + a, wc + b]
                        i += 1
            sol, _, rank, _ = np.linalg.lstsq(P, rhs)
            if rank < k:
                continue
            fxx = 1.0 + sol[1, 0]
            fxy = sol[2, 0]
            fyx = sol[1, 1]
            fyy = 1.0 + sol[2, 1]
            xx, yy, xy, ok = _strain_from_f(fxx, fxy, fyx, fyy, form_code)
            if not ok:
                continue
            F_out[wr, wc, 0, 0] = fxx
            F_out[wr, wc, 0, 1] = fxy
            F_out[wr, wc, 1, 0] = fyx
            F_out[wr, wc, 1, 1] = fyy
            exx_out[wr, wc] = xx
            eyy_out[wr, wc] = yy
            exy_out[wr, wc] = xy
            ok_out[wr, wc] = True


def calculate_strain_field(result: DicResult,
                           params: StrainParams) -> StrainField:
    """Windowed strain over a correlation result.

    The N x N window slides with stride one over the displacement grid;
    only CONVERGED, finite points participate in each window's fit, and a
    window needs at least basis-size + 2 of them (and full rank) to
    produce a value.  Raises GridTooSmall when even one window does not
    fit.
    """
    params.validate()
    grid = result.grid
    n = params.window_points
    if grid.rows < n or grid.cols < n:
        raise GridTooSmall(
            f"{grid.rows}x{grid.cols} displacement grid cannot hold a "
            f"{n}x{n} strain window")
    k = params.basis.n_terms
    usable = ((result.status == int(PointStatus.CONVERGED))
              & np.isfinite(result.u) & np.isfinite(result.v))
    orows = grid.rows - n + 1
    ocols = grid.cols - n + 1
    F = np.full((orows, ocols, 2, 2), np.nan)
    exx = np.full((orows, ocols), np.nan)
    eyy = np.full((orows, ocols), np.nan)
    exy = np.full((orows, ocols), np.nan)
    ok = np.zeros((orows, ocols), dtype=np.bool_)
    _strain_field_kernel(np.ascontiguousarray(result.u, dtype=np.float64),
                         np.ascontiguousarray(result.v, dtype=np.float64),
                         np.ascontiguousarray(usable),
                         float(grid.subset_step), n, k, k + 2,
                         _FORM_CODE[params.formulation],
                         F, exx, eyy, exy, ok)
    half = (n - 1) // 2
    return StrainField(
        xs=grid.xs[half:half + ocols].astype(np.float64),
        ys=grid.ys[half:half + orows].astype(np.float64),
        F=F, exx=exx, eyy=eyy, exy=exy, valid=ok,
        vsg=float((n - 1) * grid.subset_step + grid.subset_size),
        window_points=n, basis=params.basis,
        formulation=params.formulation, image_label=result.image_label)
