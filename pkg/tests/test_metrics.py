import csv
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from alphagan.imgcore import ImageError, Trimap, save_alpha, save_trimap
from alphagan.metrics import (
    CSV_HEADER,
    connectivity_error,
    connectivity_error_flagged,
    evaluate_dirs,
    gaussian_derivative_kernels,
    gradient_error,
    largest_component,
    mse,
    sad,
    threshold_levels,
)
from helpers import random_pair


@pytest.mark.parametrize("seed", range(6))
def test_sad_mse_match_oracles(seed):
    pred, gt, unknown = random_pair(seed, 8, 8)
    assert sad(pred, gt, unknown) == oracles.sad(pred.tolist(), gt.tolist(), unknown.tolist())
    assert mse(pred, gt, unknown) == oracles.mse(pred.tolist(), gt.tolist(), unknown.tolist())


def test_sad_thousand_unit_errors():
    pred, gt = np.ones((25, 40)), np.zeros((25, 40))
    unknown = np.ones((25, 40), bool)
    assert sad(pred, gt, unknown) == 1000.0
    assert sad(pred, gt, unknown) / 1000 == 1.0


def test_mse_constant_error():
    gt = np.full((4, 4), 0.5)
    assert math.isclose(mse(gt + 0.2, gt, np.ones((4, 4), bool)), 0.04, rel_tol=1e-12)
    with pytest.raises(ValueError, match="empty"):
        mse(gt, gt, np.zeros((4, 4), bool))


def test_kernels_are_normalized_derivatives():
    kx, ky = gaussian_derivative_kernels(1.4)
    assert kx.shape == (11, 11)
    assert math.isclose(float(np.sum(kx * kx)), 1.0, rel_tol=1e-12)
    np.testing.assert_allclose(kx.sum(axis=1), 0.0, atol=1e-15)  # odd along x
    np.testing.assert_array_equal(ky, kx.T)
    expected, radius = oracles.gaussian_derivative_x(1.4)
    assert radius == 5
    np.testing.assert_allclose(kx, expected, rtol=1e-13)


def test_gradient_step_edge_matches_convolution_oracle():
    pred = np.zeros((16, 16))
    pred[:, 8:] = 1.0
    gt = np.zeros((16, 16))
    for x in range(16):
        gt[:, x] = 1 / (1 + math.exp(-(x - 7.5) / 1.5))
    unknown = np.zeros((16, 16), bool)
    unknown[:, 4:12] = True
    value = gradient_error(pred, gt, unknown)
    assert value > 0
    assert abs(value - oracles.gradient_error(pred.tolist(), gt.tolist(), unknown.tolist())) <= 1e-9


@pytest.mark.parametrize("c1,c2", [(0.0, 1.0), (0.3, 0.3), (0.7, 0.1)])
def test_gradient_constants_give_zero(c1, c2):
    unknown = np.ones((12, 9), bool)
    assert gradient_error(np.full((12, 9), c1), np.full((12, 9), c2), unknown) == 0.0


def test_gradient_ignores_pixels_beyond_support():
    pred, gt, _ = random_pair(1, 24, 24)
    unknown = np.zeros((24, 24), bool)
    unknown[2:8, 3:9] = True
    moved = pred.copy()
    moved[14:, 15:] = 1 - moved[14:, 15:]  # farther than 5 px from the unknown block
    assert gradient_error(pred, gt, unknown) == gradient_error(moved, gt, unknown)


def test_threshold_levels():
    assert threshold_levels(0.1) == [j * 0.1 for j in range(11)]
    assert len(threshold_levels(0.25)) == 5


def test_largest_component_tie_break():
    mask = np.zeros((5, 5), bool)
    mask[0, 3:5] = True
    mask[3, 0:2] = True
    out = largest_component(mask)
    assert out.sum() == 2 and out[0, 3] and out[0, 4]
    assert not largest_component(np.zeros((3, 3), bool)).any()


def test_connectivity_two_blob_fixture():
    gt = np.zeros((8, 8))
    gt[1:4, 1:4] = 1.0
    gt[5:7, 5:7] = 0.9
    gt[3, 4:6] = 0.6
    gt[4, 5] = 0.6
    pred = gt.copy()
    pred[4, 5] = 0.0  # second blob disconnected in the prediction only
    unknown = np.ones((8, 8), bool)
    value = connectivity_error(pred, gt, unknown)
    expected = oracles.connectivity_error(pred.tolist(), gt.tolist(), unknown.tolist())
    assert value == expected
    assert value > 0


def test_connectivity_small_deviation_is_free():
    gt = np.zeros((6, 6))
    gt[:3] = 1.0
    pred = gt.copy()
    pred[3:] = 0.05  # below theta from the level it connects at
    assert connectivity_error(pred, gt, np.ones((6, 6), bool)) == 0.0


def test_connectivity_without_common_opaque_pixel(caplog):
    pred = np.full((4, 4), 0.5)
    value, degenerate = connectivity_error_flagged(pred, pred, np.ones((4, 4), bool))
    assert (value, degenerate) == (0.0, True)
    assert connectivity_error(pred, np.zeros((4, 4)), np.ones((4, 4), bool)) == 0.0
    assert "undefined" in caplog.text


def test_shape_mismatch():
    with pytest.raises(ImageError):
        sad(np.zeros((3, 3)), np.zeros((3, 4)), np.ones((3, 3), bool))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10**6), st.integers(8, 20), st.integers(8, 20))
def test_all_metrics_match_oracles(seed, h, w):
    pred, gt, unknown = random_pair(seed, h, w)
    p, g, u = pred.tolist(), gt.tolist(), unknown.tolist()
    if unknown.any():
        assert mse(pred, gt, unknown) == oracles.mse(p, g, u)
    assert sad(pred, gt, unknown) == oracles.sad(p, g, u)
    assert connectivity_error(pred, gt, unknown) == oracles.connectivity_error(p, g, u)
    assert abs(gradient_error(pred, gt, unknown) - oracles.gradient_error(p, g, u)) <= 1e-9


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10**6))
def test_identical_pairs_score_zero_and_metrics_nonnegative(seed):
    pred, gt, unknown = random_pair(seed, 12, 10)
    unknown[0, 0] = True
    for metric in (sad, mse, gradient_error, connectivity_error):
        assert metric(gt, gt, unknown) == 0.0
        assert metric(pred, gt, unknown) >= 0.0


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10**6), st.floats(1.0, 3.0))
def test_sad_mse_monotone_in_error(seed, factor):
    r = np.random.default_rng(seed)
    gt = r.random((6, 6)) * 0.2 + 0.4
    pred = gt + r.normal(0, 0.05, (6, 6))
    bigger = gt + (pred - gt) * factor
    unknown = np.ones((6, 6), bool)
    assert sad(bigger, gt, unknown) >= sad(pred, gt, unknown)
    assert mse(bigger, gt, unknown) >= mse(pred, gt, unknown)


def test_known_pixels_do_not_count_for_sad_mse():
    pred, gt, unknown = random_pair(4, 16, 16)
    moved = np.where(unknown, pred, 1 - pred)
    for metric in (sad, mse):
        assert metric(pred, gt, unknown) == metric(moved, gt, unknown)


def _write_set(root, names, seed):
    r = np.random.default_rng(seed)
    for name in names:
        gt = np.clip(r.random((20, 24)) * 1.4 - 0.2, 0, 1)
        save_alpha(gt, root / "gt" / f"{name}.png")
        save_alpha(np.clip(gt + r.normal(0, 0.1, gt.shape), 0, 1), root / "pred" / f"{name}.png")
        save_trimap(Trimap(r.integers(0, 3, gt.shape)), root / "trimap" / f"{name}.png")


def test_evaluate_dirs_reports(tmp_path):
    _write_set(tmp_path, ["a", "b", "c"], seed=0)
    (tmp_path / "pred" / "b.png").unlink()
    report = evaluate_dirs(tmp_path / "pred", tmp_path / "gt", tmp_path / "trimap")
    assert [r.name for r in report.records] == ["a", "c"]
    assert len(report.warnings) == 1 and "b" in report.warnings[0]
    for key in ("sad", "mse", "grad", "conn"):
        assert report.aggregates[key] == pytest.approx(np.mean([getattr(r, key) for r in report.records]), rel=1e-12)
    json_path, csv_path = report.write(tmp_path / "out")
    rows = list(csv.reader(open(csv_path)))
    assert tuple(rows[0]) == CSV_HEADER and len(rows) == 3
    data = json.loads(json_path.read_text())
    assert data["count"] == 2 and data["params"]["sigma"] == 1.4 and data["scale"] == "raw"


def test_evaluate_dirs_self_comparison_is_zero(tmp_path):
    _write_set(tmp_path, ["a", "b"], seed=1)
    report = evaluate_dirs(tmp_path / "gt", tmp_path / "gt", tmp_path / "trimap", workers=2)
    assert all(v == 0.0 for v in report.aggregates.values())


def test_thousand_reporting_scale(tmp_path):
    _write_set(tmp_path, ["a"], seed=2)
    raw = evaluate_dirs(tmp_path / "pred", tmp_path / "gt", tmp_path / "trimap")
    thousand = raw.scaled("paper")
    assert thousand.records[0].sad == pytest.approx(raw.records[0].sad / 1000, rel=1e-12)
    assert thousand.records[0].grad == pytest.approx(raw.records[0].grad / 1000, rel=1e-12)
    assert thousand.records[0].mse == raw.records[0].mse and thousand.records[0].conn == raw.records[0].conn
    assert thousand.scaled("raw").records[0].sad == pytest.approx(raw.records[0].sad, rel=1e-12)
    with pytest.raises(ValueError):
        raw.scaled("percent")


def test_evaluate_dirs_missing_directory(tmp_path):
    with pytest.raises(FileNotFoundError):
        evaluate_dirs(tmp_path / "nope", tmp_path, tmp_path)
