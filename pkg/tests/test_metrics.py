"""Metric closed forms, symmetry contracts and aggregation."""

import json

import numpy as np
import pytest

from thresholdyn.metrics import EvalReport, evaluate, jaccard, relative_mse, ssim

C1 = 1e-4
EPS = 1e-8


def test_ssim_identical():
    rng = np.random.default_rng(0)
    x = rng.random((12, 12))
    assert ssim(x, x) == pytest.approx(1.0, abs=1e-12)


def test_ssim_constant_frames():
    x = np.full((8, 8), 0.37)
    assert ssim(x, x.copy()) == pytest.approx(1.0, abs=1e-12)


def test_ssim_zero_vs_one_closed_form():
    x = np.zeros((10, 10))
    y = np.ones((10, 10))
    assert ssim(x, y) == pytest.approx(C1 / (1.0 + C1), abs=1e-12)


def test_ssim_symmetric():
    rng = np.random.default_rng(1)
    x, y = rng.random((9, 9)), rng.random((9, 9))
    assert ssim(x, y) == pytest.approx(ssim(y, x), abs=1e-15)


def test_ssim_rejects_shape_mismatch():
    with pytest.raises(ValueError):
        ssim(np.zeros((3, 3)), np.zeros((4, 4)))


def test_jaccard_identical_nonempty():
    x = np.zeros((6, 6))
    x[2:4, 2:4] = 1.0
    assert jaccard(x, x) == 1.0


def test_jaccard_disjoint():
    x = np.zeros((6, 6))
    y = np.zeros((6, 6))
    x[0, 0] = 1.0
    y[5, 5] = 1.0
    assert jaccard(x, y) == 0.0


def test_jaccard_shifted_block():
    x = np.zeros((6, 6))
    x[2:4, 2:4] = 1.0
    y = np.roll(x, 1, axis=1)  # overlap 2, union 6
    assert jaccard(x, y) == pytest.approx(1.0 / 3.0, abs=1e-15)


def test_jaccard_empty_conventions():
    empty = np.zeros((5, 5))
    filled = np.zeros((5, 5))
    filled[1, 1] = 1.0
    assert jaccard(empty, empty.copy()) == 1.0
    assert jaccard(empty, filled) == 0.0


def test_jaccard_symmetric_and_rejects_gray():
    rng = np.random.default_rng(2)
    x = (rng.random((8, 8)) > 0.5).astype(float)
    y = (rng.random((8, 8)) > 0.5).astype(float)
    assert jaccard(x, y) == jaccard(y, x)
    with pytest.raises(ValueError):
        jaccard(x * 0.5, y)


def test_relative_mse_zero_on_identity():
    rng = np.random.default_rng(3)
    v = rng.random((4, 8, 8))
    assert relative_mse(v, v) == 0.0


def test_relative_mse_single_flip_closed_form():
    truth = np.zeros((1, 4, 4))
    truth[0, 0, :4] = 1.0  # 4 ones
    pred = truth.copy()
    pred[0, 0, 0] = 0.0
    assert relative_mse(pred, truth) == pytest.approx(1.0 / (4.0 + EPS), rel=1e-12)


def test_relative_mse_empty_truth_blows_up():
    # documents the sparse-truth caveat: one stray pixel per frame against an
    # all-zero truth is epsilon-dominated
    n_frames, pixels = 3, 16
    truth = np.zeros((n_frames, 4, 4))
    pred = truth.copy()
    pred[:, 0, 0] = 1.0
    assert relative_mse(pred, truth) == pytest.approx(n_frames / EPS, rel=1e-9)


def test_relative_mse_not_symmetric():
    truth = np.ones((1, 4, 4))
    pred = np.zeros((1, 4, 4))
    assert relative_mse(pred, truth) != relative_mse(truth, pred)


def test_evaluate_identity_lists():
    rng = np.random.default_rng(4)
    videos = [(rng.random((7, 8, 8)) > 0.5).astype(float) for _ in range(3)]
    report = evaluate(videos, [v.copy() for v in videos])
    assert report.relative_mse == 0.0
    assert report.ssim == pytest.approx(1.0, abs=1e-12)
    assert report.jaccard == 1.0


def test_evaluate_mean_of_video_jaccards():
    a = np.zeros((1, 4, 4))
    a[0, 1:3, 1:3] = 1.0
    half = a.copy()
    half[0, 1, :] = 0.0  # half the block: jaccard 0.5
    report = evaluate([a, half], [a, a])
    assert report.jaccard == pytest.approx(0.75, abs=1e-12)


def test_evaluate_frame_range_slices():
    rng = np.random.default_rng(5)
    truth = (rng.random((7, 6, 6)) > 0.5).astype(float)
    pred = truth.copy()
    pred[:4] = 0.0  # corrupt frames 1-4 only
    report = evaluate([pred], [truth], frame_range=(5, 7))
    assert report.jaccard == 1.0 and report.relative_mse == 0.0
    full = evaluate([pred], [truth], frame_range=(2, 7))
    assert full.jaccard < 1.0


def test_evaluate_rejects_misalignment():
    v = np.zeros((3, 4, 4))
    with pytest.raises(ValueError):
        evaluate([v], [v, v])
    with pytest.raises(ValueError, match="video 0"):
        evaluate([v], [np.zeros((3, 5, 5))])
    with pytest.raises(ValueError):
        evaluate([v], [v], frame_range=(1, 9))


def test_report_serialization_roundtrip():
    rng = np.random.default_rng(6)
    videos = [(rng.random((4, 5, 5)) > 0.4).astype(float) for _ in range(2)]
    report = evaluate(videos, videos, frame_range=(2, 4))
    data = json.loads(report.to_json())
    assert data["jaccard"] == 1.0
    assert data["frame_range"] == [2, 4]
    table = report.to_table()
    assert "Relative MSE" in table and "100.000%" in table and "0.000%" in table
