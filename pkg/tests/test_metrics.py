import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from boundseg.metrics import (
    ConfusionAccumulator,
    MetricsError,
    MetricsReport,
    accumulate,
    boundary_f1,
    boundary_scores,
    evaluate_predictions,
    fps_bench,
    label_boundary,
    majority_baseline,
    report,
)
from oracles import (
    boundary_f1_brute,
    boundary_pixels,
    counts_by_enumeration,
    metrics_by_enumeration,
)

label_maps = arrays(np.int64, (6, 6), elements=st.integers(0, 3))


def acc_of(pred, gt, c=4):
    return accumulate(pred, gt, ConfusionAccumulator(c))


class TestAccumulate:
    def test_perfect(self, rng):
        gt = rng.integers(0, 4, size=(5, 5))
        acc = acc_of(gt, gt)
        assert not acc.fp.any() and not acc.fn.any()
        assert report(acc)["miou"] == report(acc)["mdice"] == report(acc)["mrecall"] == 1.0

    def test_two_by_two_enumeration(self):
        pred = np.array([[0, 0], [1, 1]])
        gt = np.array([[0, 1], [0, 1]])
        acc = acc_of(pred, gt, 2)
        tp, fp, fn = counts_by_enumeration(pred, gt, 2)
        assert acc.tp.tolist() == tp and acc.fp.tolist() == fp and acc.fn.tolist() == fn
        assert tp == fp == fn == [1, 1]

    def test_additivity(self, rng):
        a, b = rng.integers(0, 4, size=(2, 4, 5))
        pa, pb = rng.integers(0, 4, size=(2, 4, 5))
        two = acc_of(pb, b, 4).merge(acc_of(pa, a, 4))
        cat = acc_of(np.concatenate([pa, pb]), np.concatenate([a, b]))
        for name in ("tp", "fp", "fn"):
            np.testing.assert_array_equal(getattr(two, name), getattr(cat, name))

    def test_gt_pixel_count(self, rng):
        gt = rng.integers(0, 4, size=(7, 3))
        acc = acc_of(rng.integers(0, 4, size=(7, 3)), gt)
        assert int(acc.tp.sum() + acc.fn.sum()) == gt.size
        assert acc.tp.dtype == np.int64

    def test_shape_mismatch(self):
        with pytest.raises(MetricsError):
            acc_of(np.zeros((2, 2), int), np.zeros((2, 3), int))

    def test_out_of_range(self):
        with pytest.raises(MetricsError):
            acc_of(np.full((2, 2), 4), np.zeros((2, 2), int))


class TestReport:
    def test_hand_derived(self):
        r = report(acc_of(np.array([[0, 0], [1, 1]]), np.array([[0, 1], [0, 1]])))
        assert abs(r["miou"] - 1 / 3) <= 1e-12
        assert abs(r["mdice"] - 1 / 2) <= 1e-12
        assert abs(r["mrecall"] - 1 / 2) <= 1e-12

    def test_disjoint(self):
        r = report(acc_of(np.full((3, 3), 2), np.full((3, 3), 1)))
        assert r["miou"] == 0.0
        assert r["per_class"]["0"]["iou"] is None

    def test_empty(self):
        with pytest.raises(MetricsError):
            report(ConfusionAccumulator(3))

    @pytest.mark.parametrize("seed", range(50))
    def test_enumeration_oracle(self, seed):
        r = np.random.default_rng(seed)
        pred, gt = r.integers(0, 4, size=(2, 8, 8))
        got = report(acc_of(pred, gt))
        want = metrics_by_enumeration(pred, gt, 4)
        for key, w in zip(("miou", "mdice", "mrecall"), want):
            assert abs(got[key] - w) <= 1e-12

    @given(label_maps, label_maps)
    @settings(max_examples=60, deadline=None)
    def test_dice_dominates_iou(self, pred, gt):
        for c in report(acc_of(pred, gt))["per_class"].values():
            if c["iou"] is not None:
                assert c["dice"] >= c["iou"]
                assert 0.0 <= c["iou"] <= 1.0


def vertical_split(shift=0, n=8):
    lab = np.zeros((n, n), dtype=int)
    lab[:, n // 2 + shift :] = 1
    return lab


class TestBoundary:
    def test_label_boundary_matches_oracle(self, rng):
        lab = rng.integers(0, 3, size=(7, 9))
        got = {tuple(p) for p in np.argwhere(label_boundary(lab)).tolist()}
        assert got == boundary_pixels(lab)

    def test_identical(self):
        assert boundary_f1(vertical_split(), vertical_split()) == 1.0

    def test_uniform_prediction(self):
        assert boundary_f1(np.zeros((8, 8), int), vertical_split()) == 0.0

    def test_both_empty(self):
        assert boundary_f1(np.zeros((4, 4), int), np.ones((4, 4), int)) == 1.0

    def test_shift_within_tolerance(self):
        assert boundary_f1(vertical_split(1), vertical_split()) == 1.0
        assert boundary_f1_brute(vertical_split(1), vertical_split()) == 1.0

    def test_shift_beyond_tolerance(self):
        assert boundary_f1(vertical_split(3), vertical_split(), tolerance=1) == 0.0

    @given(label_maps, label_maps, st.integers(0, 2))
    @settings(max_examples=60, deadline=None)
    def test_brute_force_and_symmetry(self, pred, gt, tol):
        f = boundary_f1(pred, gt, tol)
        assert abs(f - boundary_f1_brute(pred, gt, tol)) <= 1e-12
        p, r, _ = boundary_scores(pred, gt, tol)
        p2, r2, f2 = boundary_scores(gt, pred, tol)
        assert (p, r) == (r2, p2) and abs(f - f2) <= 1e-15
        assert 0.0 <= f <= 1.0


class TestReports:
    def test_json_field_names(self):
        gt = [vertical_split()]
        rep = evaluate_predictions(gt, gt, 2)
        rep.fps = 12.5
        d = json.loads(rep.to_json())
        assert list(d) == ["miou", "mdice", "mrecall", "boundary_f1", "fps", "per_class"]
        assert d["miou"] == 1.0 and d["fps"] == 12.5

    def test_boundary_f1_is_per_image_mean(self):
        gts = [vertical_split(), vertical_split()]
        preds = [vertical_split(), np.zeros((8, 8), int)]
        assert evaluate_predictions(preds, gts, 2).boundary_f1 == 0.5

    def test_majority_baseline(self):
        gts = [vertical_split(1), vertical_split(1)]
        rep = majority_baseline(gts, 2)
        assert isinstance(rep, MetricsReport)
        assert rep.miou == pytest.approx((40 / 64) / 2, abs=1e-12)


class TestBench:
    def test_invocation_count(self):
        calls = []
        out = fps_bench(lambda: calls.append(1), warmup=5, timed=50, input_size=(64, 64))
        assert len(calls) == 55
        assert out["fps"] > 0
        assert out["element_type"] == "float64" and out["input_size"] == [64, 64]
        assert out["batch_size"] == 1
