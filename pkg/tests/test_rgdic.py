"""Reliability-guided correlation: propagation, scheduling, and outputs.

Ground truth comes from synthetically warped speckle.  Scheduler behavior
is checked through the instrumentation hooks: completion order for the
seed-neighborhood contract, a push/pop trace replayed against a reference
heap for the priority discipline, and work counters for exactly-once.
"""

import functools
import heapq

import numpy as np
import pytest

from subsetdic.errors import EmptyGrid, SeedFailed
from subsetdic.params import DicParams, MethodKind, PointStatus
from subsetdic.rgdic import correlate_2d, flag_unconverged
from subsetdic.roi import RoiMask, roi_exclude_border
from subsetdic.synth import DeformationFieldSpec, FieldKind, deform_image, gen_speckle

W = H = 200
SEED_PX = (100, 100)


@functools.lru_cache(maxsize=None)
def _ref():
    return gen_speckle(W, H, seed=31)


@functools.lru_cache(maxsize=None)
def _shifted(shift):
    spec = DeformationFieldSpec(kind=FieldKind.TRANSLATION, shift=shift)
    return deform_image(_ref(), spec)


def _params(**kw):
    kw.setdefault("subset_size", 21)
    kw.setdefault("subset_step", 10)
    kw.setdefault("max_displacement", 10)
    kw.setdefault("threads", 1)
    return DicParams(**kw)


def _border_roi(border=20):
    return roi_exclude_border(W, H, border)


def test_identity_all_points_converge_to_zero():
    res = correlate_2d(_ref(), [_ref()], _border_roi(), SEED_PX, _params())[0]
    present = res.grid.present
    assert np.all(res.status[present] == int(PointStatus.CONVERGED))
    assert np.abs(res.u[present]).max() < 1e-6
    assert np.abs(res.v[present]).max() < 1e-6
    assert res.zncc[present].min() >= 0.999


def test_rigid_shift_recovered_everywhere():
    res = correlate_2d(_ref(), [_shifted((7.0, -3.0))], _border_roi(),
                       SEED_PX, _params())[0]
    present = res.grid.present
    assert np.all(res.status[present] == int(PointStatus.CONVERGED))
    assert np.abs(res.u[present] - 7.0).max() <= 0.01
    assert np.abs(res.v[present] + 3.0).max() <= 0.01


def test_absent_points_are_nan_and_flagged():
    mask = _border_roi().mask.copy()
    mask[80:120, 80:120] = False  # hole in the middle
    roi = RoiMask(W, H, mask)
    res = correlate_2d(_ref(), [_ref()], roi, (40, 40), _params())[0]
    absent = ~res.grid.present
    assert absent.any()
    assert np.all(res.status[absent] == int(PointStatus.ABSENT))
    assert np.all(np.isnan(res.u[absent]))
    assert np.all(np.isnan(res.point_params[absent]))


def test_result_displacement_mirrors_params():
    res = correlate_2d(_ref(), [_shifted((7.0, -3.0))], _border_roi(),
                       SEED_PX, _params())[0]
    present = res.grid.present
    assert np.array_equal(res.u[present], res.point_params[present, 0])
    assert np.array_equal(res.v[present], res.point_params[present, 1])


def test_seed_and_four_neighbors_optimized_first():
    order = []
    res = correlate_2d(_ref(), [_ref()], _border_roi(), SEED_PX, _params(),
                       _order_log=order)[0]
    sr, sc = res.grid.nearest_present(*SEED_PX)
    assert order[0] == (sr, sc)
    assert set(order[1:5]) == {(sr - 1, sc), (sr + 1, sc),
                               (sr, sc - 1), (sr, sc + 1)}


def test_every_present_point_optimized_exactly_once():
    order = []
    counters = {}
    res = correlate_2d(_ref(), [_ref()], _border_roi(), SEED_PX, _params(),
                       _order_log=order, _counters=counters)[0]
    n = res.grid.n_present
    assert counters["processed"] == n
    assert len(order) == n
    assert len(set(order)) == n


def test_exactly_once_holds_multithreaded():
    counters = {}
    res = correlate_2d(_ref(), [_shifted((7.0, -3.0))], _border_roi(),
                       SEED_PX, _params(threads=4), _counters=counters)[0]
    assert counters["processed"] == res.grid.n_present


def test_priority_queue_pops_highest_spawner_zncc():
    trace = []
    correlate_2d(_ref(), [_shifted((7.0, -3.0))], _border_roi(), SEED_PX,
                 _params(), _queue_trace=trace)
    assert trace, "single-threaded run must exercise the queue"
    heap = []
    pops = 0
    for event, pri, r, c in trace:
        if event == "push":
            heapq.heappush(heap, -pri)
        else:
            assert heap, "pop from an empty queue"
            best = -heapq.heappop(heap)
            assert pri == pytest.approx(best, abs=0.0)
            pops += 1
    assert pops > 0 and not heap


def test_thread_count_invariance():
    fields = {}
    for threads in (1, 2, 8):
        res = correlate_2d(_ref(), [_shifted((2.5, 1.0))], _border_roi(),
                           SEED_PX, _params(threads=threads))[0]
        fields[threads] = res
    base = fields[1]
    tol = 2 * _params().update_precision
    for threads in (2, 8):
        other = fields[threads]
        both = base.converged & other.converged
        assert np.abs(base.u[both] - other.u[both]).max() <= tol
        assert np.abs(base.v[both] - other.v[both]).max() <= tol
        diff = (base.converged != other.converged).sum()
        assert diff < 0.005 * base.grid.n_present + 1


def test_donut_roi_terminates_and_covers_ring():
    mask = np.zeros((H, W), dtype=bool)
    mask[20:180, 20:180] = True
    mask[70:130, 70:130] = False
    roi = RoiMask(W, H, mask)
    counters = {}
    res = correlate_2d(_ref(), [_ref()], roi, (40, 100), _params(threads=2),
                       _counters=counters)[0]
    assert counters["processed"] == res.grid.n_present
    present = res.grid.present
    assert np.all(res.status[present] == int(PointStatus.CONVERGED))


def test_disconnected_roi_reached_by_sweep():
    mask = np.zeros((H, W), dtype=bool)
    mask[20:180, 20:90] = True    # seed island
    mask[20:180, 120:180] = True  # island the propagation cannot touch
    roi = RoiMask(W, H, mask)
    counters = {}
    res = correlate_2d(_ref(), [_shifted((1.5, 0.5))], roi, (50, 100),
                       _params(), _counters=counters)[0]
    assert counters["processed"] == res.grid.n_present
    rights = res.grid.xs >= 120
    assert res.grid.present[:, rights].any()
    right_status = res.status[:, rights][res.grid.present[:, rights]]
    assert np.all(right_status == int(PointStatus.CONVERGED))


def test_seed_on_flat_patch_fails():
    px = _ref().pixels.copy()
    px[80:120, 80:120] = 97.0
    from subsetdic.image import gray_image_from_array
    flat_ref = gray_image_from_array(px)
    with pytest.raises(SeedFailed):
        correlate_2d(flat_ref, [flat_ref], _border_roi(), (100, 100),
                     _params())


def test_seed_outside_roi_fails():
    with pytest.raises(SeedFailed):
        correlate_2d(_ref(), [_ref()], _border_roi(), (5, 5), _params())


def test_empty_grid_raises():
    roi = roi_exclude_border(W, H, 95)  # 10x10 interior, subset 21 cannot fit
    with pytest.raises(EmptyGrid):
        correlate_2d(_ref(), [_ref()], roi, SEED_PX, _params())


def test_unconverged_points_keep_fft_estimate():
    deformed = _shifted((7.0, -3.0))
    px = deformed.pixels.copy()
    rng = np.random.default_rng(5)
    px[130:200, 130:200] = np.rint(rng.uniform(0, 255, (70, 70)))
    from subsetdic.image import gray_image_from_array
    wrecked = gray_image_from_array(px)
    res = correlate_2d(_ref(), [wrecked], _border_roi(), (60, 60),
                       _params())[0]
    present = res.grid.present
    bad = present & ~res.converged
    assert bad.any(), "the noise patch must break some points"
    assert np.all(np.isfinite(res.u[bad]))
    assert np.all(np.isfinite(res.v[bad]))
    # converged points whose subsets never touch the wrecked patch stay exact
    clear = np.zeros_like(present)
    clear[np.ix_(res.grid.ys < 115, res.grid.xs < 115)] = True
    good = res.converged & clear
    assert good.any()
    assert np.abs(res.u[good] - 7.0).max() <= 0.02


def test_nan_unconverged_param():
    deformed = _shifted((7.0, -3.0))
    px = deformed.pixels.copy()
    rng = np.random.default_rng(5)
    px[130:200, 130:200] = np.rint(rng.uniform(0, 255, (70, 70)))
    from subsetdic.image import gray_image_from_array
    wrecked = gray_image_from_array(px)
    res = correlate_2d(_ref(), [wrecked], _border_roi(), (60, 60),
                       _params(nan_unconverged=True))[0]
    bad = res.grid.present & ~res.converged
    assert bad.any()
    assert np.all(np.isnan(res.u[bad]))
    assert np.all(np.isnan(res.v[bad]))


def test_flag_unconverged_marks_exactly_the_failed_points():
    res = correlate_2d(_ref(), [_ref()], _border_roi(), SEED_PX, _params())[0]
    sr, sc = res.grid.nearest_present(120, 120)
    res.status[sr, sc] = int(PointStatus.MAX_ITER)
    flagged = flag_unconverged(res, True)
    assert np.isnan(flagged.u[sr, sc]) and np.isnan(flagged.v[sr, sc])
    assert flagged.status[sr, sc] == int(PointStatus.MAX_ITER)
    others = res.grid.present.copy()
    others[sr, sc] = False
    assert np.array_equal(flagged.u[others], res.u[others])

    same = flag_unconverged(res, False)
    assert np.array_equal(same.u, res.u, equal_nan=True)
    assert np.array_equal(same.v, res.v, equal_nan=True)
    assert np.array_equal(same.status, res.status)
    assert same.u is not res.u  # a copy, not a view


def test_multiwindow_method_reports_rigid_estimates():
    res = correlate_2d(_ref(), [_shifted((7.0, -3.0))], _border_roi(),
                       SEED_PX, _params(method=MethodKind.MULTIWINDOW))[0]
    from subsetdic.params import ShapeKind
    assert res.shape_kind is ShapeKind.RIGID
    present = res.grid.present
    assert np.all(res.iterations[present] == 0)
    good = res.converged
    assert good.sum() > 0.9 * res.grid.n_present
    assert np.abs(res.u[good] - 7.0).max() <= 0.2
    assert np.abs(res.v[good] + 3.0).max() <= 0.2
    assert res.point_params.shape[2] == 2


def test_multiple_deformed_images_processed_in_order():
    imgs = [_shifted((7.0, -3.0)), _shifted((2.5, 1.0))]
    out = correlate_2d(_ref(), imgs, _border_roi(), SEED_PX, _params())
    assert len(out) == 2
    assert out[0].image_label == imgs[0].label
    assert out[1].image_label == imgs[1].label
    g0 = out[0].converged
    g1 = out[1].converged
    assert np.abs(out[0].u[g0] - 7.0).max() <= 0.01
    assert np.abs(out[1].u[g1] - 2.5).max() <= 0.02


def test_quadratic_shape_through_rgdic():
    from subsetdic.params import ShapeKind
    res = correlate_2d(_ref(), [_shifted((2.5, 1.0))], _border_roi(),
                       SEED_PX, _params(shape=ShapeKind.QUADRATIC))[0]
    present = res.grid.present
    assert res.point_params.shape[2] == 12
    good = res.converged
    assert good.sum() == present.sum()
    # twelve free parameters wiggle more than an affine fit on the same
    # data, so the translation tolerance is looser here
    assert np.abs(res.u[good] - 2.5).max() <= 0.05
