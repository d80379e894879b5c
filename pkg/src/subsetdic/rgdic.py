"""Reliability-guided propagation of subset optimization across the grid.

The seed point and its four neighbors are optimized first.  From there the
field grows outward: every converged point offers its parameters as the
initial guess for its unclaimed neighbors, and candidates are processed in
order of the spawning point's correlation quality, so the best-matched
regions are consumed first and poor matches are reached last with the
most context.  Worker threads keep private priority queues and steal from
each other when they run dry; a global claim mask guarantees every grid
point is optimized exactly once no matter how many threads run.

Points the propagation cannot reach (ROI islands disconnected from the
seed's region) are picked up afterwards by a sweep that reseeds each
remaining patch from the FFT displacement estimates.
"""
from __future__ import annotations

import heapq
import itertools
import threading
from dataclasses import dataclass

import numpy as np

from .bspline import prefilter
from .errors import DegenerateSubset, EmptyGrid, SeedFailed
from .fftcc import InitField, multiwindow_displacement
from .image import GrayImage
from .optimizer import ShapeParams, SubsetData, SubsetResult, lm_minimize
from .params import CostKind, DicParams, MethodKind, PointStatus, ShapeKind
from .roi import RoiMask, SubsetGrid, build_subset_grid

__all__ = ["DicResult", "correlate_2d", "flag_unconverged"]

_UNCLAIMED = 0
_CLAIMED = 1
_DONE = 2

# How long an idle worker sleeps between termination checks.  Wakeups are
# also signalled on every push and on the last completion, so this only
# bounds the shutdown latency after a missed signal.
_IDLE_WAIT = 0.005


@dataclass
class DicResult:
    """Dense per-grid-point correlation output for one deformed image.

    All arrays are (rows, cols) over the subset grid.  ``point_params``
    holds the full shape-function vector per point; ``u``/``v`` duplicate
    its first two entries for convenient field access.  Absent points
    (subset footprint outside the ROI) carry NaN displacements and status
    ABSENT.  Unconverged points keep the rigid estimate from the FFT
    initialization unless flagged to NaN.
    """

    grid: SubsetGrid
    image_label: str
    shape_kind: ShapeKind
    u: np.ndarray
    v: np.ndarray
    zncc: np.ndarray
    iterations: np.ndarray
    status: np.ndarray
    point_params: np.ndarray
    # provenance carried into result files; (0, 0) means "not recorded"
    cost: CostKind = CostKind.ZNSSD
    image_shape: tuple[int, int] = (0, 0)

    def params_at(self, row: int, col: int) -> ShapeParams:
        return ShapeParams(self.shape_kind, self.point_params[row, col].copy())

    @property
    def converged(self) -> np.ndarray:
        return self.status == int(PointStatus.CONVERGED)

    @property
    def n_converged(self) -> int:
        return int(self.converged.sum())


def flag_unconverged(result: DicResult, as_nan: bool) -> DicResult:
    """Optionally blank displacements that did not converge.

    With ``as_nan`` the u/v values (and the translation entries of the
    stored parameters) of every non-CONVERGED point become NaN; statuses
    and correlation values are untouched.  Always returns a new result
    with copied arrays.
    """
    out = DicResult(grid=result.grid, image_label=result.image_label,
                    shape_kind=result.shape_kind,
                    u=result.u.copy(), v=result.v.copy(),
                    zncc=result.zncc.copy(),
                    iterations=result.iterations.copy(),
                    status=result.status.copy(),
                    point_params=result.point_params.copy(),
                    cost=result.cost, image_shape=result.image_shape)
    if as_nan:
        bad = out.status != int(PointStatus.CONVERGED)
        out.u[bad] = np.nan
        out.v[bad] = np.nan
        out.point_params[bad, 0] = np.nan
        out.point_params[bad, 1] = np.nan
    return out


class _PointQueue:
    """One worker's candidate heap, locked for thieves."""

    __slots__ = ("heap", "lock")

    def __init__(self):
        self.heap = []
        self.lock = threading.Lock()

    def push(self, entry) -> None:
        with self.lock:
            heapq.heappush(self.heap, entry)

    def pop(self):
        with self.lock:
            if self.heap:
                return heapq.heappop(self.heap)
        return None


class _Runner:
    """State for one reference/deformed pair."""

    def __init__(self, ref: GrayImage, spline, grid: SubsetGrid,
                 init: InitField, params: DicParams, n_threads: int,
                 order_log=None, queue_trace=None, counters=None):
        self.ref_pixels = ref.pixels
        self.spline = spline
        self.grid = grid
        self.init = init
        self.params = params
        self.shape = params.shape
        self.n_threads = n_threads
        rows, cols = grid.rows, grid.cols
        self.claim = np.where(grid.present, _UNCLAIMED, _DONE).astype(np.uint8)
        self.claim_lock = threading.Lock()
        self.queues = [_PointQueue() for _ in range(n_threads)]
        self.live = 0
        self.live_cv = threading.Condition()
        self.failure: BaseException | None = None
        self.seq = itertools.count()
        self.order_log = order_log
        self.queue_trace = queue_trace
        self.counters = counters
        self.log_lock = threading.Lock()

        k = self.shape.n_params
        self.u = np.full((rows, cols), np.nan)
        self.v = np.full((rows, cols), np.nan)
        self.zncc = np.full((rows, cols), np.nan)
        self.iterations = np.zeros((rows, cols), dtype=np.int32)
        self.status = np.full((rows, cols), int(PointStatus.ABSENT),
                              dtype=np.uint8)
        self.point_params = np.full((rows, cols, k), np.nan)

    # ------------------------------------------------------------- claiming

    def try_claim(self, r: int, c: int) -> bool:
        with self.claim_lock:
            if self.claim[r, c] == _UNCLAIMED:
                self.claim[r, c] = _CLAIMED
                return True
            return False

    def neighbors(self, r: int, c: int):
        rows, cols = self.grid.rows, self.grid.cols
        for rr, cc in ((r - 1, c), (r + 1, c), (r, c - 1), (r, c + 1)):
            if 0 <= rr < rows and 0 <= cc < cols and self.grid.present[rr, cc]:
                yield rr, cc

    # ----------------------------------------------------------- processing

    def _bump(self, key: str) -> None:
        if self.counters is not None:
            with self.log_lock:
                self.counters[key] = self.counters.get(key, 0) + 1

    def optimize_point(self, r: int, c: int, init: ShapeParams) -> bool:
        """Optimize one claimed point, store its row, return convergence."""
        cx = int(self.grid.xs[c])
        cy = int(self.grid.ys[r])
        fallback = ShapeParams.translation(
            self.shape, float(self.init.u[r, c]), float(self.init.v[r, c]))
        try:
            sub = SubsetData.from_image(self.ref_pixels, (cx, cy),
                                        self.grid.subset_size)
        except DegenerateSubset:
            res = None
        else:
            res = lm_minimize(sub, self.spline, init, self.params,
                              grid_index=(r, c))
            self._bump("lm_calls")
            if (res.status is not PointStatus.CONVERGED
                    and not np.array_equal(fallback.padded(), init.padded())):
                retry = lm_minimize(sub, self.spline, fallback, self.params,
                                    grid_index=(r, c))
                self._bump("lm_calls")
                if (retry.status is PointStatus.CONVERGED
                        or retry.zncc > res.zncc):
                    res = retry
        self._store(r, c, res, fallback)
        self._bump("processed")
        if self.order_log is not None:
            with self.log_lock:
                self.order_log.append((r, c))
        converged = res is not None and res.status is PointStatus.CONVERGED
        self.claim[r, c] = _DONE
        return converged

    def _store(self, r: int, c: int, res: SubsetResult | None,
               fallback: ShapeParams) -> None:
        if res is not None and res.status is PointStatus.CONVERGED:
            self.u[r, c] = res.params.u
            self.v[r, c] = res.params.v
            self.point_params[r, c] = res.params.p
        else:
            # keep the rigid FFT estimate for anything that did not settle
            self.u[r, c] = fallback.u
            self.v[r, c] = fallback.v
            self.point_params[r, c] = fallback.p
        if res is None:
            self.zncc[r, c] = 0.0
            self.iterations[r, c] = 0
            self.status[r, c] = int(PointStatus.DIVERGED)
        else:
            self.zncc[r, c] = res.zncc
            self.iterations[r, c] = res.iterations
            self.status[r, c] = int(res.status)

    # ------------------------------------------------------------ the queue

    def spawn_from(self, r: int, c: int, tid: int) -> None:
        """Claim and enqueue the unclaimed neighbors of a converged point."""
        pri = float(self.zncc[r, c])
        p12 = ShapeParams(self.shape, self.point_params[r, c]).padded()
        pushed = False
        for rr, cc in self.neighbors(r, c):
            if not self.try_claim(rr, cc):
                continue
            with self.live_cv:
                self.live += 1
            entry = (-pri, next(self.seq), rr, cc, p12)
            if self.queue_trace is not None:
                with self.log_lock:
                    self.queue_trace.append(("push", pri, rr, cc))
            self.queues[tid].push(entry)
            pushed = True
        if pushed:
            with self.live_cv:
                self.live_cv.notify_all()

    def _take(self, tid: int):
        entry = self.queues[tid].pop()
        if entry is None:
            for k in range(1, self.n_threads):
                entry = self.queues[(tid + k) % self.n_threads].pop()
                if entry is not None:
                    break
        return entry

    def worker(self, tid: int) -> None:
        while True:
            with self.live_cv:
                if self.failure is not None:
                    return
            entry = self._take(tid)
            if entry is None:
                with self.live_cv:
                    if self.live == 0 or self.failure is not None:
                        return
                    self.live_cv.wait(_IDLE_WAIT)
                continue
            negpri, _, r, c, p12 = entry
            if self.queue_trace is not None:
                with self.log_lock:
                    self.queue_trace.append(("pop", -negpri, r, c))
            if self.optimize_point(r, c, ShapeParams.from_padded(self.shape,
                                                                 p12)):
                self.spawn_from(r, c, tid)
            with self.live_cv:
                self.live -= 1
                if self.live == 0:
                    self.live_cv.notify_all()

    def _guarded_worker(self, tid: int) -> None:
        try:
            self.worker(tid)
        except BaseException as exc:
            # release the other workers instead of hanging the pool
            with self.live_cv:
                if self.failure is None:
                    self.failure = exc
                self.live_cv.notify_all()

    def run_workers(self) -> None:
        with self.live_cv:
            if self.live == 0:
                return
        if self.n_threads == 1:
            self.worker(0)
            return
        threads = [threading.Thread(target=self._guarded_worker, args=(tid,),
                                    name=f"rgdic-{tid}")
                   for tid in range(self.n_threads)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        if self.failure is not None:
            raise self.failure

    # -------------------------------------------------------------- phases

    def seed_phase(self, seed_rc: tuple[int, int]) -> None:
        sr, sc = seed_rc
        init = ShapeParams.translation(
            self.shape, float(self.init.u[sr, sc]), float(self.init.v[sr, sc]))
        self.try_claim(sr, sc)
        if not self.optimize_point(sr, sc, init):
            raise SeedFailed(
                f"seed subset at grid ({sr}, {sc}) did not converge above "
                f"the acceptance threshold")
        seed_params = ShapeParams(self.shape, self.point_params[sr, sc])
        converged_pts = [(sr, sc)]
        n_nb = 0
        n_nb_ok = 0
        for rr, cc in self.neighbors(sr, sc):
            if not self.try_claim(rr, cc):
                continue
            n_nb += 1
            if self.optimize_point(rr, cc, seed_params):
                n_nb_ok += 1
                converged_pts.append((rr, cc))
        if n_nb > 0 and n_nb_ok == 0:
            raise SeedFailed(
                "none of the seed's neighbors converged; the seed region "
                "cannot support propagation")
        for r, c in converged_pts:
            self.spawn_from(r, c, 0)

    def completion_sweep(self) -> None:
        """Reseed ROI islands the propagation could not reach."""
        while True:
            left = np.argwhere((self.claim == _UNCLAIMED) & self.grid.present)
            if left.size == 0:
                return
            r, c = int(left[0][0]), int(left[0][1])
            if not self.try_claim(r, c):  # pragma: no cover - single thread
                continue
            init = ShapeParams.translation(
                self.shape, float(self.init.u[r, c]), float(self.init.v[r, c]))
            if self.optimize_point(r, c, init):
                self.spawn_from(r, c, 0)
                self.run_workers()

    def result(self, label: str) -> DicResult:
        return DicResult(grid=self.grid, image_label=label,
                         shape_kind=self.shape, u=self.u, v=self.v,
                         zncc=self.zncc, iterations=self.iterations,
                         status=self.status, point_params=self.point_params)


def _multiwindow_result(grid: SubsetGrid, init: InitField, params: DicParams,
                        label: str) -> DicResult:
    """Package the FFT rigid estimates directly, without optimization."""
    rows, cols = grid.rows, grid.cols
    u = np.where(grid.present, init.u, np.nan)
    v = np.where(grid.present, init.v, np.nan)
    zn = np.where(grid.present, init.peak_quality, np.nan)
    ok = (grid.present & init.valid
          & (init.peak_quality >= params.zncc_accept_threshold))
    status = np.full((rows, cols), int(PointStatus.ABSENT), dtype=np.uint8)
    status[grid.present] = int(PointStatus.DIVERGED)
    status[ok] = int(PointStatus.CONVERGED)
    pvec = np.full((rows, cols, ShapeKind.RIGID.n_params), np.nan)
    pvec[grid.present, 0] = u[grid.present]
    pvec[grid.present, 1] = v[grid.present]
    return DicResult(grid=grid, image_label=label,
                     shape_kind=ShapeKind.RIGID, u=u, v=v, zncc=zn,
                     iterations=np.zeros((rows, cols), dtype=np.int32),
                     status=status, point_params=pvec)


def correlate_2d(ref: GrayImage, deformed_list, roi: RoiMask,
                 seed: tuple[float, float], params: DicParams,
                 _order_log=None, _queue_trace=None,
                 _counters=None) -> list[DicResult]:
    """Correlate a reference image against one or more deformed images.

    Each deformed image is processed in turn with full thread parallelism:
    an FFT multi-window pass produces rigid displacement estimates on the
    subset grid, and (for the MULTIWINDOW_RG method) the reliability-guided
    optimizer refines every present grid point starting from the grid point
    nearest to ``seed``.  One DicResult is returned per deformed image, in
    input order.

    Raises SeedFailed when the seed subset (or its whole neighborhood)
    cannot be matched, and EmptyGrid when no subset fits inside the ROI.
    The underscore-prefixed keywords are instrumentation hooks for tests:
    ``_order_log`` collects (row, col) in completion order, ``_queue_trace``
    records queue push/pop events, ``_counters`` tallies work done.
    """
    params.validate()
    if isinstance(deformed_list, GrayImage):
        raise TypeError("deformed_list must be a sequence of images")
    grid = build_subset_grid(roi, params.subset_size, params.subset_step)
    if grid.n_present == 0:
        raise EmptyGrid("no subset fits inside the ROI")
    sx, sy = int(round(seed[0])), int(round(seed[1]))
    if not (0 <= sx < roi.width and 0 <= sy < roi.height
            and roi.mask[sy, sx]):
        raise SeedFailed(f"seed ({seed[0]}, {seed[1]}) is outside the ROI")
    seed_rc = grid.nearest_present(seed[0], seed[1])
    n_threads = params.resolve_threads()

    results = []
    for i, img in enumerate(deformed_list):
        label = img.label or f"deformed[{i}]"
        init = multiwindow_displacement(ref, img, grid, params)
        if params.method is MethodKind.MULTIWINDOW:
            out = _multiwindow_result(grid, init, params, label)
        else:
            spline = prefilter(img)
            runner = _Runner(ref, spline, grid, init, params, n_threads,
                             order_log=_order_log, queue_trace=_queue_trace,
                             counters=_counters)
            runner.seed_phase(seed_rc)
            runner.run_workers()
            runner.completion_sweep()
            out = runner.result(label)
        out.cost = params.cost
        out.image_shape = (ref.height, ref.width)
        if params.nan_unconverged:
            out = flag_unconverged(out, True)
        results.append(out)
    return results
