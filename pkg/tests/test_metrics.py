import math
from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from a3n.errors import PairingError
from a3n.evalcli.metrics import UNDEFINED, box_iou, compute_metrics, grasp_rmse, match_detections, pool
from a3n.grasp import GraspPose


def det(box, score=0.9, mask=None):
    return SimpleNamespace(box=np.asarray(box, float), score=score, mask=mask)


def truth(box, mask=None):
    return SimpleNamespace(box=np.asarray(box, float), mask=mask)


def pose(centre, pitch=0.0, yaw=0.0):
    return GraspPose(np.asarray(centre, float), pitch, yaw, np.full(3, 0.08))


def test_perfect_predictions():
    boxes = [[0, 0, 10, 10], [20, 20, 30, 35]]
    m = match_detections([det(b) for b in boxes], [truth(b) for b in boxes])
    r = compute_metrics(m)
    assert (r.precision, r.recall, r.f1) == (1.0, 1.0, 1.0)
    assert r.iou_det == 1.0


def test_missed_truth():
    r = compute_metrics(match_detections([], [truth([0, 0, 10, 10])]))
    assert (r.tp, r.fp, r.fn) == (0, 0, 1)
    assert r.f1 == 0.0
    assert r.iou_det is UNDEFINED and r.iou_seg is UNDEFINED


def test_low_overlap_is_fp_and_fn():
    # 10x10 boxes overlapping 40/60 in x: IoU = 4/7 > .5; shift further for IoU .4
    t = truth([0, 0, 10, 10])
    p = det([0, 0, 10, 4])     # area 40 inside area 100 -> IoU 0.4
    assert box_iou(p.box, t.box) == pytest.approx(0.4)
    m = match_detections([p], [t])
    assert (len(m.tp), len(m.fp), len(m.fn)) == (0, 1, 1)


def test_half_shift_iou_is_one_third():
    assert box_iou([0, 0, 10, 10], [5, 0, 15, 10]) == pytest.approx(1 / 3)


def test_f1_from_counts():
    # 8 hits, 2 spurious, 2 misses
    truths = [truth([30 * i, 0, 30 * i + 10, 10]) for i in range(10)]
    preds = [det(truths[i].box) for i in range(8)] + [det([500, 500, 510, 510]), det([600, 600, 610, 610])]
    r = compute_metrics(match_detections(preds, truths))
    assert (r.tp, r.fp, r.fn) == (8, 2, 2)
    assert r.f1 == pytest.approx(0.8)


def test_score_threshold_drops_predictions():
    m = match_detections([det([0, 0, 10, 10], score=0.5)], [truth([0, 0, 10, 10])])
    assert m.tp == [] and m.fp == [] and m.fn == [0]


def test_higher_score_wins_contested_truth():
    t = [truth([0, 0, 10, 10])]
    preds = [det([0, 0, 10, 9], score=0.6), det([0, 0, 9, 10], score=0.95)]
    m = match_detections(preds, t)
    assert m.tp == [(1, 0)] and m.fp == [0]


def test_mask_iou_tracked():
    a = np.zeros((8, 8)); a[:4] = 1
    b = np.zeros((8, 8)); b[:2] = 1
    m = match_detections([det([0, 0, 8, 4], mask=a)], [truth([0, 0, 8, 4], mask=b)])
    assert compute_metrics(m).iou_seg == pytest.approx(0.5)


boxes_st = st.lists(
    st.tuples(st.integers(0, 40), st.integers(0, 40), st.integers(2, 20), st.integers(2, 20),
              st.floats(0.0, 1.0)),
    min_size=0, max_size=8)


@settings(max_examples=60, deadline=None)
@given(boxes_st, boxes_st, st.randoms(use_true_random=False))
def test_metrics_invariant_to_prediction_order(pred_spec, truth_spec, rnd):
    preds = [det([x, y, x + w, y + h], score=s) for x, y, w, h, s in pred_spec]
    truths = [truth([x, y, x + w, y + h]) for x, y, w, h, _ in truth_spec]
    shuffled = list(preds)
    rnd.shuffle(shuffled)
    assert compute_metrics(match_detections(preds, truths)) == compute_metrics(match_detections(shuffled, truths))


def test_rmse_zero_when_exact():
    g = {1: pose([0.1, 0.2, 0.3], 0.2, -0.1)}
    m = grasp_rmse(g, dict(g))
    assert m.rmse_centre == 0.0 and m.rmse_angular == 0.0


def test_rmse_3_4_5_millimetres():
    m = grasp_rmse({0: pose([0.003, 0.004, 0.0])}, {0: pose([0, 0, 0])})
    assert m.rmse_centre == pytest.approx(0.5)


def test_right_angle_approaches():
    # yaw pi/4 each way: approach vectors 90 degrees apart
    m = grasp_rmse({0: pose([0, 0, 0], 0.0, math.pi / 4)}, {0: pose([0, 0, 0], 0.0, -math.pi / 4)})
    assert m.rmse_angular == pytest.approx(90.0)


def test_id_mismatch_raises():
    with pytest.raises(PairingError):
        grasp_rmse({0: pose([0, 0, 0])}, {1: pose([0, 0, 0])})


def test_rmse_matches_brute_force_oracle():
    rng = np.random.default_rng(5)
    for _ in range(100):
        n = int(rng.integers(1, 12))
        preds, truths = {}, {}
        for i in range(n):
            preds[i] = pose(rng.normal(0, 0.05, 3), *rng.uniform(-0.7, 0.7, 2))
            truths[i] = pose(rng.normal(0, 0.05, 3), *rng.uniform(-0.7, 0.7, 2))
        m = grasp_rmse(preds, truths)
        sq_c = sq_a = 0.0
        for i in range(n):
            d = preds[i].centre - truths[i].centre
            sq_c += (100 * math.sqrt(d[0] ** 2 + d[1] ** 2 + d[2] ** 2)) ** 2
            a, b = preds[i].approach, truths[i].approach
            dot = max(-1.0, min(1.0, a[0] * b[0] + a[1] * b[1] + a[2] * b[2]))
            sq_a += math.degrees(math.acos(dot)) ** 2
        assert m.rmse_centre == pytest.approx(math.sqrt(sq_c / n), abs=1e-9)
        assert m.rmse_angular == pytest.approx(math.sqrt(sq_a / n), abs=1e-9)


def test_pool_concatenates_residuals():
    a = grasp_rmse({0: pose([0.01, 0, 0])}, {0: pose([0, 0, 0])})
    b = grasp_rmse({0: pose([0.03, 0, 0])}, {0: pose([0, 0, 0])})
    assert pool([a, b]).rmse_centre == pytest.approx(math.sqrt((1 + 9) / 2))
    assert pool([a, b]).n == 2
