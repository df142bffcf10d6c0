"""Best-layer maps, spatial/temporal scores, T_max and training half times."""
import logging

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from src.domain import ROI, ROITable, ScoreTrajectory, VoxelGeometry
from src.errors import DataError, DegenerateInputError, UndefinedCorrelationError
from src.metrics import (
    NORM_LAYER,
    ROI_LEVEL,
    best_layer_map,
    half_time,
    layer_time_curves,
    log_fit,
    normalize_scores,
    roi_best_depths,
    roi_layer_curves,
    roi_property_correlation,
    spatial_score,
    t_max,
    temporal_profile,
    temporal_score,
    window_best_layers,
)

DEPTHS3 = [0.0, 0.5, 1.0]


def _line_geometry(distances):
    """Targets on the x axis at the given distance from a V1 point at the origin."""
    coords = np.column_stack([distances, np.zeros(len(distances)), np.zeros(len(distances))])
    return VoxelGeometry(coords, v1_reference=[0.0, 0.0, 0.0])


# ============= normalization and best layer =============

def test_normalize_scores_examples():
    np.testing.assert_allclose(normalize_scores([0.1, 0.2, 0.4]), [0.25, 0.5, 1.0])
    np.testing.assert_allclose(normalize_scores([1.0]), [1.0])
    with pytest.raises(DegenerateInputError):
        normalize_scores([-0.1, 0.0])


def test_normalize_along_an_axis_peaks_each_row():
    out = normalize_scores([[0.1, 0.2], [0.3, 0.6]], axis=1)
    np.testing.assert_allclose(out.max(axis=1), 1.0)


def test_best_layer_is_the_argmax_depth():
    res = best_layer_map(np.array([[0.1], [0.3], [0.2]]), DEPTHS3)
    assert res.k_star.tolist() == [0.5]
    res = best_layer_map(np.array([[0.4], [0.0], [-0.1]]), DEPTHS3)
    assert res.k_star.tolist() == [0.0]


def test_best_layer_ties_go_to_the_shallower_layer():
    res = best_layer_map(np.array([[0.3], [0.3], [0.1]]), DEPTHS3)
    assert res.layer_index.tolist() == [0]


def test_masked_targets_are_excluded_and_masked_cells_skipped():
    scores = np.array([[0.1, np.nan, 0.2], [0.5, np.nan, 0.1], [0.2, np.nan, 0.3]])
    keep = np.ones_like(scores, dtype=bool)
    keep[1, 0] = False
    res = best_layer_map(scores, DEPTHS3, significance_mask=keep)
    assert res.excluded.tolist() == [1]
    assert res.layer_index.tolist() == [2, -1, 2]
    assert np.isnan(res.k_star[1])


def test_best_layer_needs_two_layers_and_matching_depths():
    with pytest.raises(DegenerateInputError):
        best_layer_map(np.array([[0.1, 0.2]]), [1.0])
    with pytest.raises(DataError):
        best_layer_map(np.ones((3, 2)), [0.0, 1.0])


@settings(max_examples=100, derandomize=True, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.2, 5.0))
def test_best_layer_invariant_to_monotone_rescaling(seed, gain):
    scores = np.random.default_rng(seed).uniform(-0.5, 0.9, size=(5, 7))
    depths = np.linspace(0, 1, 5)
    a = best_layer_map(scores, depths)
    b = best_layer_map(np.exp(gain * scores), depths)
    np.testing.assert_array_equal(a.k_star, b.k_star)


# ============= ROI curves =============

def _rois():
    return ROITable((
        ROI("A", (0, 1), [0.0, 0.0, 0.0]),
        ROI("B", (2,), [10.0, 0.0, 0.0]),
        ROI("C", (3,), [20.0, 0.0, 0.0]),
        ROI("D", (4,), [30.0, 0.0, 0.0]),
    ))


def test_roi_curves_average_members_then_normalize():
    scores = np.array([
        [0.2, 0.4, 0.1, 0.0, 0.1],
        [0.1, 0.1, 0.4, 0.2, 0.2],
        [0.0, 0.0, 0.2, 0.4, 0.8],
    ])
    raw = roi_layer_curves(scores, _rois(), normalize=None)
    np.testing.assert_allclose(raw[0], [0.3, 0.1, 0.0])
    by_roi = roi_layer_curves(scores, _rois())
    np.testing.assert_allclose(by_roi.max(axis=1), 1.0)
    by_layer = roi_layer_curves(scores, _rois(), normalize=NORM_LAYER)
    np.testing.assert_allclose(by_layer.max(axis=0), 1.0)
    np.testing.assert_allclose(roi_best_depths(scores, _rois(), DEPTHS3), [0.0, 0.5, 1.0, 1.0])


def test_roi_curves_leave_empty_layers_and_rois_unnormalized(caplog):
    scores = np.array([
        [0.2, 0.4, 0.1, 0.0, np.nan],
        [np.nan] * 5,
        [0.0, 0.0, 0.2, 0.4, np.nan],
    ])
    with caplog.at_level(logging.WARNING):
        by_layer = roi_layer_curves(scores, _rois(), normalize=NORM_LAYER)
    assert np.all(np.isnan(by_layer[:, 1]))
    np.testing.assert_allclose(np.nanmax(by_layer[:, [0, 2]], axis=0), 1.0)
    assert any("layer curve(s)" in r.getMessage() for r in caplog.records)

    by_roi = roi_layer_curves(scores, _rois())
    assert np.all(np.isnan(by_roi[3]))
    np.testing.assert_allclose(by_roi[:3, [0, 2]].max(axis=1), 1.0)


def test_roi_without_scores_gets_nan_depth():
    scores = np.array([[0.2, 0.4, 0.1, 0.0, np.nan], [0.1, 0.1, 0.4, 0.2, np.nan]])
    k = roi_best_depths(scores, _rois(), [0.0, 1.0])
    assert np.isnan(k[3])
    assert k[:3].tolist() == [0.0, 1.0, 1.0]


# ============= spatial score =============

def test_spatial_score_of_proportional_depths_is_one():
    d = np.array([5.0, 10.0, 20.0, 40.0])
    res = spatial_score(d / 40.0, _line_geometry(d))
    assert res.r == pytest.approx(1.0)
    assert res.n == 4


@settings(max_examples=100, derandomize=True, deadline=None)
@given(st.integers(0, 10_000))
def test_spatial_score_flips_sign_when_depth_order_is_reversed(seed):
    rng = np.random.default_rng(seed)
    d = rng.uniform(5, 80, 30)
    k = np.clip(d / 80 + rng.normal(0, 0.2, 30), 0, 1)
    geom = _line_geometry(d)
    assert spatial_score(1 - k, geom).r == pytest.approx(-spatial_score(k, geom).r, abs=1e-12)


def test_spatial_score_ignores_excluded_targets_and_needs_variance():
    d = np.array([5.0, 10.0, 20.0, 40.0, 50.0])
    res = spatial_score([0.0, 0.25, 0.5, 1.0, np.nan], _line_geometry(d))
    assert res.n == 4
    with pytest.raises(UndefinedCorrelationError):
        spatial_score(np.full(5, 0.5), _line_geometry(d))
    with pytest.raises(DegenerateInputError):
        spatial_score([0.0, 1.0, np.nan, np.nan, np.nan], _line_geometry(d))


def test_roi_level_spatial_score_uses_centroids():
    scores = np.array([
        [0.9, 0.9, 0.2, 0.1, 0.0],
        [0.3, 0.3, 0.8, 0.3, 0.2],
        [0.1, 0.1, 0.3, 0.9, 0.9],
    ])
    geom = _line_geometry(np.arange(5.0))
    res = spatial_score(None, geom, ROI_LEVEL, rois=_rois(), layer_scores=scores, depths=DEPTHS3)
    assert res.n == 4
    assert res.r > 0.9
    with pytest.raises(DataError):
        spatial_score(None, geom, ROI_LEVEL)


# ============= temporal =============

def test_t_max_examples():
    times = np.array([0.0, 0.05, 0.1, 0.15, 0.2, 0.25])
    assert t_max([0.1, 0.2, 0.9, 0.3, 0.2, 0.1], times) == pytest.approx(0.1)
    plateau = [0.1, 0.2, 1.0, 1.0, 1.0, 0.3]
    assert t_max(plateau, times) == pytest.approx(0.15)
    assert t_max(np.array(plateau) * 7.5, times) == pytest.approx(0.15)
    with pytest.raises(DegenerateInputError):
        t_max([], [])


def _peaked_curves(peaks, times):
    return np.array([np.exp(-((times - p) ** 2) / 0.002) for p in peaks])


def test_temporal_score_is_plus_or_minus_one_for_ordered_peaks():
    times = np.arange(-0.1, 0.6, 0.01)
    depths = np.linspace(0, 1, 4)
    early_to_late = temporal_profile(_peaked_curves([0.1, 0.2, 0.3, 0.4], times), times, depths)
    np.testing.assert_allclose(early_to_late.t_max, [0.1, 0.2, 0.3, 0.4], atol=0.011)
    assert temporal_score(early_to_late).r > 0.99
    late_to_early = temporal_profile(_peaked_curves([0.4, 0.3, 0.2, 0.1], times), times, depths)
    assert temporal_score(late_to_early).r < -0.99


@settings(max_examples=100, derandomize=True, deadline=None)
@given(st.integers(0, 10_000))
def test_temporal_score_flips_sign_when_depths_are_reversed(seed):
    rng = np.random.default_rng(seed)
    times = np.arange(-0.1, 0.6, 0.01)
    curves = _peaked_curves(rng.uniform(0.0, 0.5, 5), times)
    depths = np.linspace(0, 1, 5)
    forward = temporal_score(temporal_profile(curves, times, depths)).r
    reversed_ = temporal_score(temporal_profile(curves, times, 1 - depths)).r
    assert reversed_ == pytest.approx(-forward, abs=1e-12)


def test_temporal_score_needs_three_layers_and_varying_t_max():
    times = np.arange(0.0, 0.5, 0.01)
    flat = temporal_profile(_peaked_curves([0.2, 0.2, 0.2], times), times, DEPTHS3)
    with pytest.raises(UndefinedCorrelationError):
        temporal_score(flat)
    two = temporal_profile(_peaked_curves([0.1, 0.3], times), times, [0.0, 1.0])
    with pytest.raises(DegenerateInputError):
        temporal_score(two)


def test_layer_time_curves_average_channels():
    # 2 layers, 2 channels x 3 times, channel-major
    scores = np.array([
        [0.1, 0.2, 0.3, 0.3, 0.4, np.nan],
        [0.5, 0.5, 0.5, 0.1, 0.1, 0.1],
    ])
    curves = layer_time_curves(scores, n_channels=2, n_times=3)
    np.testing.assert_allclose(curves, [[0.2, 0.3, 0.3], [0.3, 0.3, 0.3]])
    with pytest.raises(DataError):
        layer_time_curves(scores, n_channels=3, n_times=3)


def test_window_best_layers():
    times = np.arange(0.0, 0.6, 0.025)
    curves = _peaked_curves([0.1, 0.5], times)
    assert window_best_layers(curves, times, [(0.08, 0.13), (0.5, 0.55)], [0.0, 1.0]) == [0.0, 1.0]


# ============= half time =============

def test_half_time_examples():
    assert half_time(ScoreTrajectory([0.0, 1.0], [0.0, 1.0])) == pytest.approx(0.5)
    traj = ScoreTrajectory([0.0, 1 / 3, 2 / 3, 1.0], [0.0, 0.2, 0.8, 1.0])
    assert half_time(traj) == pytest.approx(0.5)


def test_half_time_is_the_first_step_when_already_past_half():
    assert half_time(ScoreTrajectory([0.25, 0.5, 1.0], [0.6, 0.9, 1.0])) == 0.25


@settings(max_examples=100, derandomize=True, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.01, 100.0))
def test_half_time_invariant_to_positive_scaling(seed, factor):
    rng = np.random.default_rng(seed)
    steps = np.linspace(0.0, 1.0, int(rng.integers(2, 13)))
    traj = ScoreTrajectory(steps, np.cumsum(rng.uniform(0.01, 1.0, steps.size)))
    assert half_time(traj.scaled(factor)) == pytest.approx(half_time(traj), abs=1e-12)


def test_half_time_undefined_for_non_positive_final_value(caplog):
    warnings = []
    with caplog.at_level(logging.WARNING):
        assert half_time(ScoreTrajectory([0.0, 0.5, 1.0], [0.1, 0.0, -0.2], "spatial"), warnings) is None
    assert len(warnings) == 1
    assert "spatial" in caplog.text


def test_half_time_warns_when_trajectory_dips_back(caplog):
    warnings = []
    traj = ScoreTrajectory([0.0, 0.25, 0.5, 0.75, 1.0], [0.0, 0.8, 0.3, 0.9, 1.0], "V4")
    with caplog.at_level(logging.WARNING):
        step = half_time(traj, warnings)
    assert step == pytest.approx(0.25 * 0.5 / 0.8)
    assert warnings and "drops below half" in warnings[0]


def test_half_time_needs_two_checkpoints():
    with pytest.raises(DegenerateInputError):
        half_time(ScoreTrajectory([1.0], [0.5]))


def test_log_fit_recovers_logarithmic_growth():
    steps = np.array([0.0, 0.01, 0.1, 0.5, 1.0])
    values = 0.9 + 0.2 * np.log10(np.where(steps > 0, steps, 1.0))
    fit = log_fit(ScoreTrajectory(steps, values))
    assert fit.slope == pytest.approx(0.2)
    assert fit.intercept == pytest.approx(0.9)
    assert fit.r2 == pytest.approx(1.0)
    with pytest.raises(DegenerateInputError):
        log_fit(ScoreTrajectory([0.0, 0.5, 1.0], [0.0, 0.5, 1.0]))


# ============= ROI properties =============

def test_property_identical_to_half_time_correlates_perfectly():
    h = {"V1": 0.1, "V2": 0.2, "V4": 0.35, "IT": 0.5}
    res = roi_property_correlation(h, dict(h))
    assert res.result.r == pytest.approx(1.0)
    assert res.names == ("V1", "V2", "V4", "IT")


def test_property_correlation_drops_missing_rois():
    h = {"V1": 0.1, "V2": None, "V4": 0.35, "IT": 0.5, "MT": 0.4}
    p = {"V1": 3.0, "V2": 2.0, "V4": 1.5, "IT": 1.0, "MT": float("nan"), "FEF": 9.0}
    res = roi_property_correlation(h, p)
    assert res.dropped == ("V2", "MT")
    assert res.n_dropped == 2
    assert res.result.n == 3
    assert res.result.r < 0
    with pytest.raises(DegenerateInputError):
        roi_property_correlation({"V1": 0.1, "V4": 0.2}, {"V1": 1.0, "V4": 2.0})
