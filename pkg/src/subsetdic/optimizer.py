"""Per-subset shape-function optimization.

A subset is a small square of reference-image pixels around a grid point.
Matching it against the deformed image means finding shape-function
parameters p (translation, optionally gradients and curvatures) that
minimize a gray-level cost between the reference values f and the
spline-interpolated deformed values g at the warped coordinates.

The minimizer is Levenberg-Marquardt on the residual vector of the chosen
cost, with a Gauss-Newton Hessian approximation and Marquardt (diagonal)
damping.  Reference values are taken at integer pixels; only the deformed
image is interpolated.  The update is forward-additive: every iteration
re-warps the original reference coordinates with the current parameters.

All heavy loops are compiled with numba and hold no global state, so any
number of threads may run lm_minimize concurrently against the same
spline coefficients.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .bspline import SplineCoefficients, _eval_point_grad
from .errors import DegenerateSubset, OutOfDomain
from .image import GrayImage
from .params import CostKind, DicParams, PointStatus, ShapeKind

__all__ = [
    "ShapeParams",
    "SubsetData",
    "SubsetResult",
    "warp",
    "cost",
    "zncc",
    "lm_minimize",
]

# A zero-mean (or plain) L2 norm below this is treated as a flat subset.
_NORM_TINY = 1e-9

# Damping bounds.  Exceeding the ceiling means no acceptable step exists
# at any damping, i.e. the optimization is stuck.
_LAMBDA_START = 1e-3
_LAMBDA_MIN = 1e-12
_LAMBDA_MAX = 1e15

_COST_CODE = {CostKind.SSD: 0, CostKind.NSSD: 1, CostKind.ZNSSD: 2}


@dataclass
class ShapeParams:
    """Shape-function parameters p0..p11, truncated to the shape order.

    RIGID carries (p0, p1) in pixels.  AFFINE adds the four dimensionless
    displacement gradients p2..p5.  QUADRATIC adds the six curvature terms
    p6..p11 in 1/pixels.  The mapping of a local subset coordinate (x, y)
    to its displaced position is

        xi  = p0 + (1 + p2) x + p3 y + p6 x^2 + p7 x y + p8 y^2
        eta = p1 + p4 x + (1 + p5) y + p9 x^2 + p10 x y + p11 y^2

    with the higher-order terms absent for lower orders.
    """

    kind: ShapeKind
    p: np.ndarray

    def __post_init__(self) -> None:
        self.p = np.asarray(self.p, dtype=np.float64).reshape(-1)
        if self.p.shape[0] != self.kind.n_params:
            raise ValueError(
                f"{self.kind.value} shape takes {self.kind.n_params} "
                f"parameters, got {self.p.shape[0]}")
        if not np.all(np.isfinite(self.p)):
            raise ValueError("shape parameters must be finite")

    @classmethod
    def zero(cls, kind: ShapeKind) -> "ShapeParams":
        return cls(kind, np.zeros(kind.n_params))

    @classmethod
    def translation(cls, kind: ShapeKind, u: float, v: float) -> "ShapeParams":
        """Pure translation (u, v) with all higher-order terms zero."""
        p = np.zeros(kind.n_params)
        p[0] = u
        p[1] = v
        return cls(kind, p)

    @classmethod
    def from_padded(cls, kind: ShapeKind, full: np.ndarray) -> "ShapeParams":
        return cls(kind, np.asarray(full, dtype=np.float64)[:kind.n_params])

    def padded(self) -> np.ndarray:
        """The parameter vector zero-extended to all 12 entries."""
        full = np.zeros(12)
        full[:self.p.shape[0]] = self.p
        return full

    @property
    def u(self) -> float:
        return float(self.p[0])

    @property
    def v(self) -> float:
        return float(self.p[1])


@dataclass
class SubsetData:
    """Reference-side data for one subset, precomputed once.

    ``x``/``y`` are local pixel offsets from the center covering the full
    subset square, ``f`` the reference intensities at those pixels.  The
    mean, the zero-mean norm and the plain L2 norm are cached because every
    cost evaluation needs them.
    """

    center: tuple[int, int]
    size: int
    x: np.ndarray
    y: np.ndarray
    f: np.ndarray
    f_mean: float
    f_norm: float
    f_l2: float

    @classmethod
    def from_image(cls, image: GrayImage | np.ndarray, center: tuple[int, int],
                   subset_size: int) -> "SubsetData":
        pixels = image.pixels if isinstance(image, GrayImage) else np.asarray(
            image, dtype=np.float64)
        if subset_size < 3 or subset_size % 2 == 0:
            raise ValueError("subset_size must be odd and at least 3")
        cx, cy = int(center[0]), int(center[1])
        half = subset_size // 2
        h, w = pixels.shape
        if cx - half < 0 or cy - half < 0 or cx + half >= w or cy + half >= h:
            raise OutOfDomain(
                f"subset of size {subset_size} at ({cx}, {cy}) leaves the "
                f"{w}x{h} image")
        patch = pixels[cy - half:cy + half + 1, cx - half:cx + half + 1]
        ys, xs = np.mgrid[-half:half + 1, -half:half + 1]
        f = np.ascontiguousarray(patch.reshape(-1), dtype=np.float64)
        f_mean = float(f.mean())
        f_norm = float(np.sqrt(np.sum((f - f_mean) ** 2)))
        if f_norm <= _NORM_TINY:
            raise DegenerateSubset(
                f"subset at ({cx}, {cy}) has no intensity variation")
        return cls(center=(cx, cy), size=subset_size,
                   x=np.ascontiguousarray(xs.reshape(-1), dtype=np.float64),
                   y=np.ascontiguousarray(ys.reshape(-1), dtype=np.float64),
                   f=f, f_mean=f_mean, f_norm=f_norm,
                   f_l2=float(np.sqrt(np.sum(f ** 2))))


@dataclass
class SubsetResult:
    """Outcome of optimizing one subset against one deformed image."""

    center: tuple[int, int]
    params: ShapeParams
    zncc: float
    final_cost: float
    iterations: int
    status: PointStatus
    grid_index: tuple[int, int] = (-1, -1)

    @property
    def u(self) -> float:
        return self.params.u

    @property
    def v(self) -> float:
        return self.params.v


def warp(shape: ShapeParams, x, y):
    """Displaced local coordinates (xi, eta) for local offsets (x, y)."""
    p = shape.padded()
    xs = np.asarray(x, dtype=np.float64)
    ys = np.asarray(y, dtype=np.float64)
    xi = (p[0] + (1.0 + p[2]) * xs + p[3] * ys
          + p[6] * xs * xs + p[7] * xs * ys + p[8] * ys * ys)
    eta = (p[1] + p[4] * xs + (1.0 + p[5]) * ys
           + p[9] * xs * xs + p[10] * xs * ys + p[11] * ys * ys)
    if xs.ndim == 0 and ys.ndim == 0:
        return float(xi), float(eta)
    return xi, eta


def _as_value_vector(values, name: str) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64).reshape(-1)
    if arr.size == 0:
        raise ValueError(f"{name} is empty")
    return arr


def cost(kind: CostKind, f_values, g_values) -> float:
    """Evaluate one of the matching costs on plain value vectors.

    SSD is the raw squared difference.  NSSD divides each vector by its
    L2 norm first.  ZNSSD removes the mean before normalizing, so it is
    blind to linear intensity changes between the two vectors.
    """
    f = _as_value_vector(f_values, "f_values")
    g = _as_value_vector(g_values, "g_values")
    if f.shape != g.shape:
        raise ValueError("f_values and g_values must have equal length")
    if kind is CostKind.SSD:
        return float(np.sum((f - g) ** 2))
    if kind is CostKind.NSSD:
        nf = float(np.sqrt(np.sum(f ** 2)))
        ng = float(np.sqrt(np.sum(g ** 2)))
        if nf <= _NORM_TINY or ng <= _NORM_TINY:
            raise DegenerateSubset("zero-norm value vector in NSSD")
        return float(np.sum((f / nf - g / ng) ** 2))
    fb = f - f.mean()
    gb = g - g.mean()
    nf = float(np.sqrt(np.sum(fb ** 2)))
    ng = float(np.sqrt(np.sum(gb ** 2)))
    if nf <= _NORM_TINY or ng <= _NORM_TINY:
        raise DegenerateSubset("flat value vector in ZNSSD")
    return float(np.sum((fb / nf - gb / ng) ** 2))


def zncc(f_values, g_values) -> float:
    """Zero-normalized cross-correlation of two value vectors, in [-1, 1]."""
    f = _as_value_vector(f_values, "f_values")
    g = _as_value_vector(g_values, "g_values")
    if f.shape != g.shape:
        raise ValueError("f_values and g_values must have equal length")
    fb = f - f.mean()
    gb = g - g.mean()
    nf = float(np.sqrt(np.sum(fb ** 2)))
    ng = float(np.sqrt(np.sum(gb ** 2)))
    if nf <= _NORM_TINY or ng <= _NORM_TINY:
        raise DegenerateSubset("flat value vector in ZNCC")
    return float(np.dot(fb, gb) / (nf * ng))


@njit(cache=True, nogil=True)
def _warp_eval(c, x, y, cx, cy, p, g, gx, gy):
    """Warp all subset points with p and sample the deformed spline.

    Fills g/gx/gy and returns True, or returns False as soon as any warped
    point leaves the safe interpolation domain (outputs then undefined).
    """
    h = c.shape[0]
    w = c.shape[1]
    xmin = 1.5
    ymin = 1.5
    xmax = w - 2.5
    ymax = h - 2.5
    for i in range(x.shape[0]):
        xl = x[i]
        yl = y[i]
        xi = (p[0] + (1.0 + p[2]) * xl + p[3] * yl
              + p[6] * xl * xl + p[7] * xl * yl + p[8] * yl * yl)
        eta = (p[1] + p[4] * xl + (1.0 + p[5]) * yl
               + p[9] * xl * xl + p[10] * xl * yl + p[11] * yl * yl)
        px = cx + xi
        py = cy + eta
        if px < xmin or px > xmax or py < ymin or py > ymax:
            return False
        v, dx, dy = _eval_point_grad(c, px, py)
        g[i] = v
        gx[i] = dx
        gy[i] = dy
    return True


@njit(cache=True, nogil=True)
def _cost_value(code, f, f_mean, f_norm, f_l2, g):
    """Cost of the current deformed samples; ok=False on a flat g."""
    n = f.shape[0]
    if code == 0:
        s = 0.0
        for i in range(n):
            d = f[i] - g[i]
            s += d * d
        return True, s
    if code == 1:
        sg = 0.0
        for i in range(n):
            sg += g[i] * g[i]
        sg = math.sqrt(sg)
        if sg <= _NORM_TINY:
            return False, np.inf
        s = 0.0
        for i in range(n):
            d = f[i] / f_l2 - g[i] / sg
            s += d * d
        return True, s
    gm = 0.0
    for i in range(n):
        gm += g[i]
    gm /= n
    sg = 0.0
    for i in range(n):
        d = g[i] - gm
        sg += d * d
    sg = math.sqrt(sg)
    if sg <= _NORM_TINY:
        return False, np.inf
    s = 0.0
    for i in range(n):
        d = (f[i] - f_mean) / f_norm - (g[i] - gm) / sg
        s += d * d
    return True, s


@njit(cache=True, nogil=True)
def _zncc_value(f, f_mean, f_norm, g):
    n = f.shape[0]
    gm = 0.0
    for i in range(n):
        gm += g[i]
    gm /= n
    sg = 0.0
    for i in range(n):
        d = g[i] - gm
        sg += d * d
    sg = math.sqrt(sg)
    if sg <= _NORM_TINY:
        return 0.0
    s = 0.0
    for i in range(n):
        s += (f[i] - f_mean) * (g[i] - gm)
    return s / (f_norm * sg)


@njit(cache=True, nogil=True)
def _residual_jacobian(code, f, f_mean, f_norm, f_l2, g, gx, gy, x, y,
                       n_active, r, J):
    """Residual vector and its Jacobian w.r.t. the active parameters.

    The raw sensitivity of a deformed sample to parameter k is the image
    gradient times the warp derivative: columns (gx, gy, gx*x, gx*y,
    gy*x, gy*y, gx*x^2, gx*xy, gx*y^2, gy*x^2, gy*xy, gy*y^2).  The cost
    kind then reshapes those columns through its normalization.  Callers
    only invoke this at points whose cost evaluation already succeeded,
    so the norms are known to be finite and positive.
    """
    n = f.shape[0]
    for i in range(n):
        xl = x[i]
        yl = y[i]
        J[i, 0] = gx[i]
        J[i, 1] = gy[i]
        if n_active > 2:
            J[i, 2] = gx[i] * xl
            J[i, 3] = gx[i] * yl
            J[i, 4] = gy[i] * xl
            J[i, 5] = gy[i] * yl
        if n_active > 6:
            J[i, 6] = gx[i] * xl * xl
            J[i, 7] = gx[i] * xl * yl
            J[i, 8] = gx[i] * yl * yl
            J[i, 9] = gy[i] * xl * xl
            J[i, 10] = gy[i] * xl * yl
            J[i, 11] = gy[i] * yl * yl
    if code == 0:
        for i in range(n):
            r[i] = f[i] - g[i]
            for k in range(n_active):
                J[i, k] = -J[i, k]
        return
    if code == 1:
        sg = 0.0
        for i in range(n):
            sg += g[i] * g[i]
        sg = math.sqrt(sg)
        sg3 = sg * sg * sg
        for k in range(n_active):
            a = 0.0
            for i in range(n):
                a += g[i] * J[i, k]
            for i in range(n):
                J[i, k] = -J[i, k] / sg + g[i] * a / sg3
        for i in range(n):
            r[i] = f[i] / f_l2 - g[i] / sg
        return
    gm = 0.0
    for i in range(n):
        gm += g[i]
    gm /= n
    sg = 0.0
    for i in range(n):
        d = g[i] - gm
        sg += d * d
    sg = math.sqrt(sg)
    sg3 = sg * sg * sg
    for k in range(n_active):
        colmean = 0.0
        a = 0.0
        for i in range(n):
            colmean += J[i, k]
            a += (g[i] - gm) * J[i, k]
        colmean /= n
        for i in range(n):
            J[i, k] = -(J[i, k] - colmean) / sg + (g[i] - gm) * a / sg3
    for i in range(n):
        r[i] = (f[i] - f_mean) / f_norm - (g[i] - gm) / sg


@njit(cache=True, nogil=True)
def _lm_core(c, x, y, f, f_mean, f_norm, f_l2, cx, cy, p_init, n_active,
             cost_code, max_iter, precision, half_width, out_p, trace):
    """Full Levenberg-Marquardt loop for one subset.

    Returns (status, iterations, final_cost, zncc) with status encoded as
    PointStatus integers.  out_p receives the final padded parameters and
    trace[i] the cost after the i-th accepted step (trace[0] is the cost
    at the initial guess).

    The parameter update norm is scaled by (1, 1, h, h, h, h, h^2, ...)
    with h the subset half-width, so translation, gradient and curvature
    updates are all measured as pixel motion at the subset edge before
    comparison against the precision threshold.
    """
    n = x.shape[0]
    p = p_init.copy()
    g = np.empty(n)
    gx = np.empty(n)
    gy = np.empty(n)
    gt = np.empty(n)
    gxt = np.empty(n)
    gyt = np.empty(n)
    weights = np.empty(12)
    weights[0] = 1.0
    weights[1] = 1.0
    for j in range(2, 6):
        weights[j] = half_width
    for j in range(6, 12):
        weights[j] = half_width * half_width

    for j in range(12):
        out_p[j] = p[j]
    if not _warp_eval(c, x, y, cx, cy, p, g, gx, gy):
        return 2, 0, np.inf, 0.0
    ok, current = _cost_value(cost_code, f, f_mean, f_norm, f_l2, g)
    if not ok or not np.isfinite(current):
        return 3, 0, np.inf, _zncc_value(f, f_mean, f_norm, g)
    trace[0] = current

    lam = _LAMBDA_START
    status = 1
    iters = 0
    r = np.empty(n)
    J = np.empty((n, n_active))
    A = np.empty((n_active, n_active))
    b = np.empty(n_active)
    trial = np.empty(12)

    for it in range(max_iter):
        iters = it + 1
        _residual_jacobian(cost_code, f, f_mean, f_norm, f_l2, g, gx, gy,
                           x, y, n_active, r, J)
        diag_ok = True
        for ka in range(n_active):
            for kb in range(ka, n_active):
                s = 0.0
                for i in range(n):
                    s += J[i, ka] * J[i, kb]
                A[ka, kb] = s
                A[kb, ka] = s
            if not A[ka, ka] > 0.0:
                diag_ok = False
            s = 0.0
            for i in range(n):
                s += J[i, ka] * r[i]
            b[ka] = -s
        if not diag_ok:
            # A zero curvature direction: the deformed samples carry no
            # gradient information for some parameter, damping cannot fix
            # the solve.
            status = 3
            break

        accepted = False
        ood_reject = False
        delta = b
        while True:
            M = A.copy()
            for j in range(n_active):
                M[j, j] += lam * A[j, j]
            delta = np.linalg.solve(M, b)
            for j in range(12):
                trial[j] = p[j]
            for j in range(n_active):
                trial[j] = p[j] + delta[j]
            if not _warp_eval(c, x, y, cx, cy, trial, gt, gxt, gyt):
                ood_reject = True
                lam *= 10.0
                if lam > _LAMBDA_MAX:
                    break
                continue
            okc, trial_cost = _cost_value(cost_code, f, f_mean, f_norm,
                                          f_l2, gt)
            if not okc or not np.isfinite(trial_cost) or trial_cost > current:
                ood_reject = False
                lam *= 10.0
                if lam > _LAMBDA_MAX:
                    break
                continue
            for j in range(12):
                p[j] = trial[j]
            tmp = g
            g = gt
            gt = tmp
            tmp = gx
            gx = gxt
            gxt = tmp
            tmp = gy
            gy = gyt
            gyt = tmp
            current = trial_cost
            lam = lam / 10.0
            if lam < _LAMBDA_MIN:
                lam = _LAMBDA_MIN
            accepted = True
            break
        if not accepted:
            # No step at any damping improved the cost.  If the last
            # rejection was a domain violation the subset is being pushed
            # off the image, otherwise the optimization has stalled.
            status = 2 if ood_reject else 3
            break
        trace[iters] = current
        norm = 0.0
        for j in range(n_active):
            d = delta[j] * weights[j]
            norm += d * d
        norm = math.sqrt(norm)
        if norm <= precision:
            status = 0
            break

    for j in range(12):
        out_p[j] = p[j]
    return status, iters, current, _zncc_value(f, f_mean, f_norm, g)


def lm_minimize(subset: SubsetData, deformed: SplineCoefficients,
                init: ShapeParams, params: DicParams,
                grid_index: tuple[int, int] = (-1, -1),
                trace_out: list | None = None) -> SubsetResult:
    """Optimize one subset against a deformed image.

    The shape order and cost come from ``params``; ``init`` may be of a
    lower order than the requested shape (its vector is zero-extended),
    which is the normal case when seeding an affine or quadratic fit from
    a rigid displacement estimate.

    Status semantics: CONVERGED requires both the scaled update norm to
    drop below ``update_precision`` and the final ZNCC to reach
    ``zncc_accept_threshold``; a norm-converged point with poor
    correlation is reported as DIVERGED since it sits in a minimum that
    does not match the reference.  An initial guess whose warp leaves the
    interpolation domain returns OUT_OF_DOMAIN with zero iterations and a
    ZNCC of 0, as no deformed values exist to correlate.

    If ``trace_out`` is a list it receives the accepted-step cost history
    (element 0 is the cost at the initial guess).
    """
    shape = params.shape
    if init.kind.n_params > shape.n_params:
        raise ValueError(
            f"cannot initialize a {shape.value} shape from richer "
            f"{init.kind.value} parameters")
    out_p = np.zeros(12)
    trace = np.full(params.max_iterations + 1, np.nan)
    status_code, iters, final_cost, zn = _lm_core(
        deformed.coeffs, subset.x, subset.y, subset.f,
        subset.f_mean, subset.f_norm, subset.f_l2,
        float(subset.center[0]), float(subset.center[1]),
        init.padded(), shape.n_params, _COST_CODE[params.cost],
        params.max_iterations, params.update_precision,
        (subset.size - 1) / 2.0, out_p, trace)
    status = PointStatus(status_code)
    if status is PointStatus.CONVERGED and zn < params.zncc_accept_threshold:
        status = PointStatus.DIVERGED
    if trace_out is not None:
        trace_out.extend(float(t) for t in trace[np.isfinite(trace)])
    return SubsetResult(center=subset.center,
                        params=ShapeParams.from_padded(shape, out_p),
                        zncc=float(zn), final_cost=float(final_cost),
                        iterations=int(iters), status=status,
                        grid_index=grid_index)
