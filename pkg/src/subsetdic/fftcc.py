"""Multi-window FFT cross-correlation displacement search.

Rigid displacement estimates for every subset center, computed coarse to
fine: window sizes descend through powers of two from the smallest power
of two exceeding the configured maximum displacement down to the subset
size itself.  Each level correlates 50%-overlapping windows with the
phase-normalized cross-spectrum, hands bilinearly interpolated guesses to
the next level, and is cleaned by a median-absolute-deviation outlier
filter.  The final level has the (odd) subset size, where an FFT buys
nothing; it scores a direct zero-normalized spatial correlation over a
small search range around the guess instead.

The pyramid output is integer-valued; a per-axis 3-point log-Gaussian peak
fit refines it to subpixel when the run stops here instead of continuing
into subset optimization.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass

import numpy as np
from numba import njit

from .errors import AllInvalid
from .image import GrayImage
from .params import DicParams, MethodKind
from .roi import SubsetGrid

__all__ = [
    "WindowPyramid", "InitField", "plan_window_pyramid", "fftcc_window",
    "gaussian_subpixel", "mad_filter", "multiwindow_displacement",
]

# chunk size (in pixels per window stack) for batched FFTs
_CHUNK_PIXELS = 1 << 24


@dataclass
class WindowPyramid:
    """Descending window sizes; all power-of-two except the final subset size."""

    sizes: list[int]


@dataclass
class InitField:
    """Per-grid-point rigid displacement estimate.

    ``valid`` marks points whose correlation was trusted; invalid points
    still carry a usable value (neighbor median after filtering) so they
    can serve as guesses downstream.  ``peak_quality`` is the correlation
    peak value; at the final pyramid level this is a spatial ZNCC in
    [-1, 1].
    """

    u: np.ndarray
    v: np.ndarray
    valid: np.ndarray
    peak_quality: np.ndarray

    @property
    def shape(self) -> tuple[int, int]:
        return self.u.shape


def plan_window_pyramid(max_displacement: float, subset_size: int) -> WindowPyramid:
    """Window sizes for the coarse-to-fine displacement search."""
    if subset_size < 5:
        raise ValueError(f"subset_size must be >= 5, got {subset_size}")
    if not (max_displacement >= 0 and math.isfinite(max_displacement)):
        raise ValueError(f"max_displacement must be finite and >= 0")
    if max_displacement < subset_size:
        return WindowPyramid(sizes=[subset_size])
    head = 1
    while head <= max_displacement:
        head *= 2
    sizes = []
    s = head
    while s > subset_size:
        sizes.append(s)
        s //= 2
    sizes.append(subset_size)
    return WindowPyramid(sizes=sizes)


def _wrap_shift(idx: int, n: int) -> int:
    """Map an FFT bin index to a signed shift in (-n/2, n/2]."""
    return idx - n if idx > n // 2 else idx


def _wrap_candidates(d: int, guess: int, window: int, bound: float) -> list:
    """All shifts congruent to d (mod window) whose total stays in range."""
    cands = [c for c in (d, d - window, d + window)
             if abs(guess + c) <= bound + 1.0]
    return cands or [d]


def _disambiguate_shift(ref_px, def_px, cx, cy, gx, gy, du, dv,
                        window, bound):
    """Resolve the circular-correlation ambiguity of one window's peak.

    The FFT argmax determines the shift only modulo the window size; when
    the declared search range exceeds half the window, two congruent
    shifts per axis are plausible.  Score each in-range combination with
    direct ZNCC on the actual (non-periodic) image content and keep the
    best.  The evaluation patch is capped so top-level windows stay cheap.
    """
    cu = _wrap_candidates(du, gx, window, bound)
    cv = _wrap_candidates(dv, gy, window, bound)
    if len(cu) == 1 and len(cv) == 1:
        return cu[0], cv[0]
    half_eval = min((window - 1) // 2, 192)
    best = -3.0
    best_uv = (du, dv)
    for a in cu:
        for b in cv:
            z = _zncc_at_shift(ref_px, def_px, cx, cy, half_eval,
                               gx + a, gy + b)
            if z > best:
                best = z
                best_uv = (a, b)
    return best_uv


def fftcc_window(ref_window: np.ndarray, def_window: np.ndarray):
    """Integer displacement of `def_window` relative to `ref_window`.

    Inverse FFT of the phase-normalized cross-spectrum; the global peak
    position gives the circular shift (wrap-around convention, shifts
    beyond n/2 count negative).  Returns (du, dv, peak_value).
    """
    f = np.asarray(ref_window, dtype=np.float64)
    g = np.asarray(def_window, dtype=np.float64)
    if f.shape != g.shape or f.ndim != 2 or f.shape[0] != f.shape[1]:
        raise ValueError("windows must be square and of equal size")
    n = f.shape[0]
    ff = np.fft.rfft2(f)
    fg = np.fft.rfft2(g)
    cross = ff * np.conj(fg)
    mag = np.abs(ff) * np.abs(fg)
    peak_mag = mag.max()
    if peak_mag == 0.0:
        return 0, 0, 0.0
    keep = mag >= 1e-12 * peak_mag
    norm = np.zeros_like(cross)
    np.divide(cross, mag, out=norm, where=keep)
    r = np.fft.irfft2(norm, s=(n, n))
    py, px = np.unravel_index(int(np.argmax(r)), r.shape)
    return -_wrap_shift(px, n), -_wrap_shift(py, n), float(r[py, px])


def gaussian_subpixel(r_map: np.ndarray, peak_index: tuple[int, int]):
    """Per-axis 3-point log-Gaussian refinement of a correlation peak.

    `peak_index` is (row, col) of the integer peak.  Neighbor samples wrap
    circularly (the map is periodic).  Any non-positive sample, zero
    denominator, or offset outside (-1, 1) makes that axis fall back to 0.
    """
    py, px = peak_index
    h, w = r_map.shape

    def fit(rm1, r0, rp1):
        if rm1 <= 0.0 or r0 <= 0.0 or rp1 <= 0.0:
            return 0.0
        a, b, c = math.log(rm1), math.log(r0), math.log(rp1)
        den = 2.0 * a - 4.0 * b + 2.0 * c
        if den == 0.0:
            return 0.0
        d = (a - c) / den
        return d if -1.0 < d < 1.0 else 0.0

    dx = fit(r_map[py, (px - 1) % w], r_map[py, px], r_map[py, (px + 1) % w])
    dy = fit(r_map[(py - 1) % h, px], r_map[py, px], r_map[(py + 1) % h, px])
    return dx, dy


def _neighbor_median(vals: np.ndarray, good: np.ndarray, r: int, c: int,
                     fallback: float) -> float:
    rows, cols = vals.shape
    r0, r1 = max(0, r - 1), min(rows, r + 2)
    c0, c1 = max(0, c - 1), min(cols, c + 2)
    block = vals[r0:r1, c0:c1]
    ok = good[r0:r1, c0:c1].copy()
    ok[r - r0, c - c0] = False
    if not ok.any():
        return fallback
    return float(np.median(block[ok]))


def mad_filter(field: InitField, k: float) -> InitField:
    """Median-absolute-deviation outlier rejection on a displacement field.

    Per component over valid points: median m, MAD' = 1.4826 x median of
    |x - m|; points deviating beyond k x MAD' lose their valid flag.  Every
    invalid point (newly flagged or already invalid) gets its value
    replaced by the median of its valid 8-neighborhood, falling back to m,
    so downstream consumers always see a plausible field.
    """
    u = field.u.copy()
    v = field.v.copy()
    valid = field.valid.copy()
    if not valid.any():
        return InitField(u=u, v=v, valid=valid, peak_quality=field.peak_quality.copy())
    med_u = float(np.median(u[valid]))
    med_v = float(np.median(v[valid]))
    mad_u = 1.4826 * float(np.median(np.abs(u[valid] - med_u)))
    mad_v = 1.4826 * float(np.median(np.abs(v[valid] - med_v)))
    flag = valid & ((np.abs(u - med_u) > k * mad_u) | (np.abs(v - med_v) > k * mad_v))
    valid &= ~flag
    bad_rows, bad_cols = np.nonzero(~valid)
    for r, c in zip(bad_rows, bad_cols):
        u[r, c] = _neighbor_median(u, valid, r, c, med_u)
        v[r, c] = _neighbor_median(v, valid, r, c, med_v)
    return InitField(u=u, v=v, valid=valid, peak_quality=field.peak_quality.copy())


# ------------------------------------------------------------------ levels

def _level_axis(extent: int, window: int) -> np.ndarray | None:
    """Centers of `window`-sized windows at 50% overlap along one axis."""
    spacing = max(1, window // 2)
    if window > extent:
        return None
    count = (extent - window) // spacing + 1
    return window // 2 + spacing * np.arange(count, dtype=np.int64)


def _bilinear_field(xs_c, ys_c, u_c, v_c, xq, yq):
    """Sample a coarse displacement field at query centers (bilinear)."""
    sp_x = xs_c[1] - xs_c[0] if len(xs_c) > 1 else 1
    sp_y = ys_c[1] - ys_c[0] if len(ys_c) > 1 else 1
    fx = np.clip((xq - xs_c[0]) / sp_x, 0.0, len(xs_c) - 1.0)
    fy = np.clip((yq - ys_c[0]) / sp_y, 0.0, len(ys_c) - 1.0)
    i0 = np.clip(fx.astype(np.int64), 0, max(0, len(xs_c) - 2))
    j0 = np.clip(fy.astype(np.int64), 0, max(0, len(ys_c) - 2))
    i1 = np.minimum(i0 + 1, len(xs_c) - 1)
    j1 = np.minimum(j0 + 1, len(ys_c) - 1)
    tx = fx - i0
    ty = fy - j0
    JJ0, II0 = np.meshgrid(j0, i0, indexing="ij")
    JJ1, II1 = np.meshgrid(j1, i1, indexing="ij")
    TY, TX = np.meshgrid(ty, tx, indexing="ij")

    def sample(a):
        return ((1 - TY) * ((1 - TX) * a[JJ0, II0] + TX * a[JJ0, II1])
                + TY * ((1 - TX) * a[JJ1, II0] + TX * a[JJ1, II1]))

    return sample(u_c), sample(v_c)


def _fft_level(ref_px, def_px, xs, ys, gu, gv, window, cand_bound=0.0):
    """One power-of-two pyramid level over its whole window grid.

    Returns (u, v, valid, peak) arrays of shape (len(ys), len(xs)).
    Displacements are accumulated as rounded-guess + measured shift, since
    the deformed window is extracted at the integer-rounded guess.  A
    positive ``cand_bound`` (the per-axis displacement bound when this
    level runs without a coarser guess) turns on wrap disambiguation for
    shifts beyond half the window.
    """
    h, w = ref_px.shape
    rows, cols = len(ys), len(xs)
    u = np.empty((rows, cols))
    v = np.empty((rows, cols))
    valid = np.zeros((rows, cols), dtype=bool)
    peak = np.zeros((rows, cols))
    half = window // 2
    gui = np.rint(gu).astype(np.int64)
    gvi = np.rint(gv).astype(np.int64)

    flat = [(r, c) for r in range(rows) for c in range(cols)]
    per_chunk = max(1, _CHUNK_PIXELS // (window * window))
    for start in range(0, len(flat), per_chunk):
        batch = flat[start:start + per_chunk]
        stack_f = np.empty((len(batch), window, window))
        stack_g = np.empty_like(stack_f)
        usable = []
        for bi, (r, c) in enumerate(batch):
            cx, cy = int(xs[c]), int(ys[r])
            dx0 = cx + int(gui[r, c]) - half
            dy0 = cy + int(gvi[r, c]) - half
            if dx0 < 0 or dy0 < 0 or dx0 + window > w or dy0 + window > h:
                continue  # shifted window leaves the image: point stays invalid
            stack_f[bi] = ref_px[cy - half:cy - half + window,
                                 cx - half:cx - half + window]
            stack_g[bi] = def_px[dy0:dy0 + window, dx0:dx0 + window]
            usable.append(bi)
        if not usable:
            continue
        idx = np.array(usable)
        ff = np.fft.rfft2(stack_f[idx], axes=(-2, -1))
        fg = np.fft.rfft2(stack_g[idx], axes=(-2, -1))
        cross = ff * np.conj(fg)
        mag = np.abs(ff) * np.abs(fg)
        peak_mag = mag.max(axis=(1, 2), keepdims=True)
        keep = mag >= 1e-12 * np.maximum(peak_mag, 1e-300)
        norm = np.zeros_like(cross)
        np.divide(cross, mag, out=norm, where=keep)
        rmap = np.fft.irfft2(norm, s=(window, window), axes=(-2, -1))
        flatmax = rmap.reshape(len(idx), -1).argmax(axis=1)
        pys, pxs = np.unravel_index(flatmax, (window, window))
        for bi, py, px, rm in zip(idx, pys, pxs, rmap):
            r, c = batch[bi]
            pv = float(rm[py, px])
            if pv <= 0.0:
                continue  # no usable peak (flat or fully decorrelated window)
            du = -_wrap_shift(int(px), window)
            dv = -_wrap_shift(int(py), window)
            ddx, ddy = gaussian_subpixel(rm, (int(py), int(px)))
            if cand_bound > window / 2:
                du, dv = _disambiguate_shift(
                    ref_px, def_px, int(xs[c]), int(ys[r]),
                    int(gui[r, c]), int(gvi[r, c]), du, dv, window,
                    cand_bound)
            u[r, c] = gui[r, c] + du + ddx
            v[r, c] = gvi[r, c] + dv + ddy
            peak[r, c] = pv
            valid[r, c] = True
    # invalid points still need a guess value for the next level
    if valid.any() and not valid.all():
        med_u = float(np.median(u[valid]))
        med_v = float(np.median(v[valid]))
        for r, c in zip(*np.nonzero(~valid)):
            u[r, c] = _neighbor_median(u, valid, r, c, med_u)
            v[r, c] = _neighbor_median(v, valid, r, c, med_v)
    elif not valid.any():
        u[:] = np.rint(gu)
        v[:] = np.rint(gv)
    return u, v, valid, peak


@njit(cache=True, nogil=True)
def _spatial_ncc_level(ref_px, def_px, cxs, cys, present, gui, gvi, half,
                       search, u, v, peak, ok):
    """Direct ZNCC search at the final (odd, subset-sized) level.

    For each present grid point, scores every integer shift within
    +-search of the rounded guess and keeps the best; 3-point log-Gaussian
    samples around the winner are stored in `peak` neighbors' place by the
    caller when needed.
    """
    n = 2 * half + 1
    npix = n * n
    h, w = def_px.shape
    for i in range(cxs.shape[0]):
        ok[i] = 0
        u[i] = gui[i]
        v[i] = gvi[i]
        peak[i] = 0.0
        if not present[i]:
            continue
        cx = cxs[i]
        cy = cys[i]
        fx0 = cx - half
        fy0 = cy - half
        # reference subset statistics
        sf = 0.0
        sf2 = 0.0
        for a in range(n):
            for b in range(n):
                t = ref_px[fy0 + a, fx0 + b]
                sf += t
                sf2 += t * t
        fmean = sf / npix
        fvar = sf2 - sf * sf / npix
        if fvar <= 1e-12:
            continue  # flat reference subset carries no signal
        fnorm = math.sqrt(fvar)
        best = -2.0
        best_sx = 0
        best_sy = 0
        for sy in range(-search, search + 1):
            gy0 = cy + gvi[i] + sy - half
            if gy0 < 0 or gy0 + n > h:
                continue
            for sx in range(-search, search + 1):
                gx0 = cx + gui[i] + sx - half
                if gx0 < 0 or gx0 + n > w:
                    continue
                sg = 0.0
                sg2 = 0.0
                sfg = 0.0
                for a in range(n):
                    for b in range(n):
                        gval = def_px[gy0 + a, gx0 + b]
                        fval = ref_px[fy0 + a, fx0 + b]
                        sg += gval
                        sg2 += gval * gval
                        sfg += fval * gval
                gvar = sg2 - sg * sg / npix
                if gvar <= 1e-12:
                    continue
                zncc = (sfg - sf * sg / npix) / (fnorm * math.sqrt(gvar))
                if zncc > best:
                    best = zncc
                    best_sx = sx
                    best_sy = sy
        if best <= -2.0:
            continue
        u[i] = gui[i] + best_sx
        v[i] = gvi[i] + best_sy
        peak[i] = best
        ok[i] = 1


@njit(cache=True, nogil=True)
def _zncc_at_shift(ref_px, def_px, cx, cy, half, sx, sy):
    """ZNCC of one subset at one integer shift; -2 when out of bounds/flat."""
    n = 2 * half + 1
    npix = n * n
    h, w = def_px.shape
    gx0 = cx + sx - half
    gy0 = cy + sy - half
    if gx0 < 0 or gy0 < 0 or gx0 + n > w or gy0 + n > h:
        return -2.0
    fx0 = cx - half
    fy0 = cy - half
    sf = 0.0
    sf2 = 0.0
    sg = 0.0
    sg2 = 0.0
    sfg = 0.0
    for a in range(n):
        for b in range(n):
            fval = ref_px[fy0 + a, fx0 + b]
            gval = def_px[gy0 + a, gx0 + b]
            sf += fval
            sf2 += fval * fval
            sg += gval
            sg2 += gval * gval
            sfg += fval * gval
    fvar = sf2 - sf * sf / npix
    gvar = sg2 - sg * sg / npix
    if fvar <= 1e-12 or gvar <= 1e-12:
        return -2.0
    return (sfg - sf * sg / npix) / math.sqrt(fvar * gvar)


def _run_slab(fn, n_items, n_threads):
    """Static partitioning: run fn(start, stop) on contiguous slabs."""
    n_threads = max(1, min(n_threads, n_items))
    if n_threads == 1:
        fn(0, n_items)
        return
    bounds = np.linspace(0, n_items, n_threads + 1).astype(int)
    workers = []
    for t in range(n_threads):
        th = threading.Thread(target=fn, args=(int(bounds[t]), int(bounds[t + 1])))
        th.start()
        workers.append(th)
    for th in workers:
        th.join()


def multiwindow_displacement(ref: GrayImage, deformed: GrayImage,
                             grid: SubsetGrid, params: DicParams) -> InitField:
    """Coarse-to-fine rigid displacement estimate at every grid point.

    Power-of-two levels run batched FFT correlation on 50%-overlapping
    windows; each level's field, cleaned by the MAD filter, seeds the next
    through bilinear interpolation.  The final level sits on the true
    subset centers and scores a direct spatial ZNCC around the guess.
    Raises AllInvalid when not a single grid point yields a usable peak.
    """
    if ref.pixels.shape != deformed.pixels.shape:
        raise ValueError("reference and deformed images must have equal dims")
    pyr = plan_window_pyramid(params.max_displacement, params.subset_size)
    ref_px = np.ascontiguousarray(ref.pixels)
    def_px = np.ascontiguousarray(deformed.pixels)
    h, w = ref_px.shape

    prev = None  # (xs, ys, u, v)
    for window in pyr.sizes[:-1]:
        xs = _level_axis(w, window)
        ys = _level_axis(h, window)
        if xs is None or ys is None:
            continue  # window larger than the image: nothing to correlate
        if prev is None:
            gu = np.zeros((len(ys), len(xs)))
            gv = np.zeros_like(gu)
            # first executed level searches the full declared range alone
            cand_bound = params.max_displacement
        else:
            gu, gv = _bilinear_field(prev[0], prev[1], prev[2], prev[3],
                                     xs.astype(np.float64), ys.astype(np.float64))
            cand_bound = 0.0
        u, v, valid, peak = _fft_level(ref_px, def_px, xs, ys, gu, gv, window,
                                       cand_bound)
        fld = InitField(u=u, v=v, valid=valid, peak_quality=peak)
        if params.mad_enabled:
            fld = mad_filter(fld, params.mad_k)
        prev = (xs, ys, fld.u, fld.v)

    # final level: subset centers, direct spatial search
    subset = params.subset_size
    half = (subset - 1) // 2
    rows, cols = grid.rows, grid.cols
    cys, cxs = np.meshgrid(grid.ys, grid.xs, indexing="ij")
    cxs = np.ascontiguousarray(cxs.ravel().astype(np.int64))
    cys = np.ascontiguousarray(cys.ravel().astype(np.int64))
    present = np.ascontiguousarray(grid.present.ravel())
    if prev is None:
        gu = np.zeros((rows, cols))
        gv = np.zeros_like(gu)
        search = max(2, int(math.ceil(params.max_displacement)) + 2)
    else:
        gu, gv = _bilinear_field(prev[0], prev[1], prev[2], prev[3],
                                 grid.xs.astype(np.float64), grid.ys.astype(np.float64))
        search = 2
    gui = np.ascontiguousarray(np.rint(gu).ravel().astype(np.int64))
    gvi = np.ascontiguousarray(np.rint(gv).ravel().astype(np.int64))
    n_pts = rows * cols
    u = np.zeros(n_pts)
    v = np.zeros(n_pts)
    peak = np.zeros(n_pts)
    ok = np.zeros(n_pts, dtype=np.uint8)

    def slab(start, stop):
        _spatial_ncc_level(ref_px, def_px, cxs[start:stop], cys[start:stop],
                           present[start:stop], gui[start:stop], gvi[start:stop],
                           half, search, u[start:stop], v[start:stop],
                           peak[start:stop], ok[start:stop])

    _run_slab(slab, n_pts, params.resolve_threads())

    if params.method is MethodKind.MULTIWINDOW:
        # subpixel refinement from the spatial correlation samples
        for i in range(n_pts):
            if not ok[i]:
                continue
            cx, cy = int(cxs[i]), int(cys[i])
            iu, iv = int(round(u[i])), int(round(v[i]))
            r0 = peak[i]
            rxm = _zncc_at_shift(ref_px, def_px, cx, cy, half, iu - 1, iv)
            rxp = _zncc_at_shift(ref_px, def_px, cx, cy, half, iu + 1, iv)
            rym = _zncc_at_shift(ref_px, def_px, cx, cy, half, iu, iv - 1)
            ryp = _zncc_at_shift(ref_px, def_px, cx, cy, half, iu, iv + 1)
            row = np.array([[rxm, r0, rxp]])
            colm = np.array([[rym], [r0], [ryp]])
            dx, _ = gaussian_subpixel(row, (0, 1))
            _, dy = gaussian_subpixel(colm, (1, 0))
            u[i] += dx
            v[i] += dy

    u = u.reshape(rows, cols)
    v = v.reshape(rows, cols)
    valid = (ok.reshape(rows, cols) == 1) & grid.present
    peak = peak.reshape(rows, cols)
    fld = InitField(u=u, v=v, valid=valid, peak_quality=peak)
    if not fld.valid.any():
        raise AllInvalid("no grid point produced a usable correlation peak")
    if params.mad_enabled:
        fld = mad_filter(fld, params.mad_k)
    return fld
