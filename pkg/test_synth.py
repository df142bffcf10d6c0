"""Synthetic plants: determinism and recovery of the planted hierarchy."""
import json
from dataclasses import replace

import numpy as np
import pytest

from plant_bounds import run_bounds, summarize
from src.data import load_dataset, validate_manifest, zscore_meg
from src.errors import ConfigError
from src.metrics import best_layer_map, layer_time_curves, spatial_score, temporal_profile, temporal_score
from src.ridge import FoldPlan, encode
from src.synth import (
    PlantSpec,
    gen_hierarchical,
    gen_temporal,
    gen_trajectory,
    learning_fraction,
    planted_half_time,
    planted_peaks,
    plant_properties,
    write_dataset,
)

SMALL = PlantSpec(n_stimuli=80, n_layers=4, features_per_layer=8, targets_per_layer=4, n_channels=2)


def _tree(root):
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_same_spec_writes_identical_bytes(tmp_path):
    write_dataset(SMALL, tmp_path / "a")
    write_dataset(SMALL, tmp_path / "b")
    a, b = _tree(tmp_path / "a"), _tree(tmp_path / "b")
    assert a.keys() == b.keys()
    assert all(a[k] == b[k] for k in a)
    assert "truth.json" in a and "fmri/rois.csv" in a


def test_different_seeds_differ():
    a = gen_hierarchical(SMALL)
    b = gen_hierarchical(replace(SMALL, seed=1))
    assert not np.array_equal(a.responses.matrix, b.responses.matrix)


def test_written_manifests_validate(tmp_path):
    paths = write_dataset(SMALL, tmp_path)
    assert validate_manifest(paths["fmri"])[0] == "schema 1 ok"
    assert validate_manifest(paths["meg"])[0] == "schema 1 ok"
    ds = load_dataset(paths["fmri"])
    assert len(ds.checkpoints) == 12
    assert ds.rois.names == ["R00", "R01", "R02", "R03"]
    assert set(ds.rois.property_columns()) == {"expansion", "thickness", "timescale", "myelin"}
    truth = json.loads(paths["truth"].read_text())
    assert set(truth) == {"spec", "hierarchical", "temporal", "trajectory", "planted_property_r"}


@pytest.mark.parametrize(
    "override,field",
    [
        ({"n_layers": 0}, "n_layers"),
        ({"n_stimuli": 5}, "n_stimuli"),
        ({"noise_sd": -1.0}, "noise_sd"),
        ({"rates": [1.0, 2.0]}, "rates"),
        ({"checkpoints": [0.5, 0.9]}, "checkpoints"),
        ({"colour": "red"}, "colour"),
    ],
)
def test_invalid_plant_specs(override, field):
    with pytest.raises(ConfigError) as info:
        PlantSpec.from_dict(override)
    assert info.value.field == field


def test_plant_spec_from_json(tmp_path):
    path = tmp_path / "spec.json"
    path.write_text(json.dumps({"n_stimuli": 50, "seed": 3}))
    spec = PlantSpec.from_json(path)
    assert spec.n_stimuli == 50 and spec.seed == 3
    with pytest.raises(ConfigError):
        PlantSpec.from_json(tmp_path / "missing.json")


def test_noiseless_hierarchy_is_recovered_exactly():
    plant = gen_hierarchical(SMALL)
    plan = FoldPlan.make(SMALL.n_stimuli, 5, seed=0)
    results = [encode(X, plant.responses.matrix, plan) for X in plant.activations.matrices]
    for layer, res in enumerate(results):
        own = np.array(plant.truth["target_layer"]) == layer
        assert np.all(res.per_target_R[own] >= 0.99)
    k_map = best_layer_map(results, plant.activations.depths)
    np.testing.assert_array_equal(k_map.k_star, plant.truth["target_depth"])
    assert spatial_score(k_map.k_star, plant.geometry).r == pytest.approx(1.0, abs=1e-9)


def test_roi_centroid_distance_is_linear_in_depth():
    plant = gen_hierarchical(SMALL)
    ref = plant.geometry.v1_reference
    dist = [np.linalg.norm(r.centroid - ref) for r in plant.rois]
    assert np.corrcoef(dist, SMALL.depths)[0, 1] == pytest.approx(1.0, abs=1e-9)
    assert dist[0] < dist[-1]


def _temporal_score(spec):
    plant = gen_temporal(spec)
    meg = zscore_meg(plant.meg)
    plan = FoldPlan.make(spec.n_stimuli, 5, seed=0)
    results = [encode(X, meg.targets(), plan) for X in plant.activations.matrices]
    curves = layer_time_curves(results, meg.n_channels, meg.n_times)
    profile = temporal_profile(curves, meg.times, plant.activations.depths)
    return profile, temporal_score(profile), plant


def test_planted_peaks_sit_on_the_grid():
    peaks = planted_peaks(PlantSpec())
    np.testing.assert_allclose(peaks, [0.1, 0.3, 0.5, 0.7, 0.9], atol=1e-12)


def test_temporal_plant_gives_t_max_at_the_planted_peaks():
    profile, corr, plant = _temporal_score(PlantSpec())
    np.testing.assert_allclose(profile.t_max, plant.truth["peak_times"], atol=PlantSpec().t_step)
    assert corr.r == pytest.approx(1.0, abs=1e-6)


def test_reversed_temporal_plant_scores_minus_one():
    spec = PlantSpec(temporal_peaks=-0.8, peak_offset=0.9)
    _, corr, _ = _temporal_score(spec)
    assert corr.r == pytest.approx(-1.0, abs=1e-6)


def test_learning_fraction_endpoints():
    for rate in (0.0, 1.0, 5.0):
        assert learning_fraction(0.0, rate) == 0.0
        assert learning_fraction(1.0, rate) == pytest.approx(1.0)
    assert learning_fraction(0.5, 0.0) == 0.5
    assert learning_fraction(0.01, np.inf) == 1.0
    assert learning_fraction(0.2, 5.0) > learning_fraction(0.2, 1.0)


def test_planted_half_times_are_ordered_by_rate():
    spec = PlantSpec()
    halves = [planted_half_time(r) for r in spec.layer_rates]
    assert all(a < b for a, b in zip(halves, halves[1:]))
    assert halves[0] > spec.checkpoints[0]
    assert planted_half_time(0.0) == pytest.approx(1 / (1 + np.sqrt(3)))
    assert planted_half_time(np.inf) == 0.0


def test_trajectory_ends_at_the_final_features():
    spec = PlantSpec(n_stimuli=40, n_layers=3, features_per_layer=6, checkpoints=(0.25, 0.5, 1.0))
    traj = gen_trajectory(spec)
    final = gen_hierarchical(spec).activations
    assert [a.checkpoint_step for a in traj.checkpoints] == [0.25, 0.5, 1.0]
    for a, b in zip(traj.checkpoints[-1].matrices, final.matrices):
        np.testing.assert_allclose(a, b, atol=1e-12)


def test_noiseless_properties_correlate_perfectly():
    spec = PlantSpec()
    values, planted_r = plant_properties(spec, gen_trajectory(spec).half_times)
    assert planted_r["expansion"] == pytest.approx(1.0)
    assert planted_r["myelin"] == pytest.approx(-1.0)
    assert sorted(values) == ["R00", "R01", "R02", "R03", "R04"]


# ============= recovery under noise =============

@pytest.fixture(scope="module")
def bounds():
    return run_bounds(range(5), fmri_noise=1.0, meg_noise=1.0 / 3.0)


def test_hierarchy_at_unit_snr_recovers_most_planted_layers(bounds):
    rows = bounds[bounds["plant"] == "hierarchical"]
    assert len(rows) == 5
    assert rows["snr"].between(0.7, 1.4).all()
    assert (rows["recovered"] >= 0.8).all()
    assert (rows["r"] > 0.8).all()


def test_temporal_plant_at_snr_three_keeps_t_max_and_score(bounds):
    rows = bounds[bounds["plant"] == "temporal"]
    assert (rows["t_max_error"] <= PlantSpec().t_step + 1e-9).all()
    assert (rows["r"] >= 0.95).all()
    reversed_rows = bounds[bounds["plant"] == "temporal_reversed"]
    assert len(reversed_rows) == 5
    assert (reversed_rows["r"] <= -0.95).all()


def test_summary_reports_the_worst_seed(bounds):
    summary = summarize(bounds)
    assert summary.loc["hierarchical", "seeds"] == 5
    assert summary.loc["temporal", "min_r"] == bounds[bounds["plant"] == "temporal"]["r"].min()


@pytest.mark.parametrize("checkpoints,expected", [((0.25, 0.5, 1.0), 0.25), ((0.0, 0.5, 1.0), 0.5)])
def test_instantly_learned_layer_records_its_first_visible_checkpoint(checkpoints, expected):
    spec = PlantSpec(n_stimuli=40, n_layers=3, features_per_layer=6, rates=(np.inf, 2.0, 0.0), checkpoints=checkpoints)
    traj = gen_trajectory(spec)
    assert traj.half_times["R00"] == expected
    assert traj.truth["half_times"]["R00"] == expected
    assert traj.half_times["R02"] == pytest.approx(planted_half_time(0.0))
    first = traj.checkpoints[checkpoints.index(expected)].matrices[0]
    np.testing.assert_allclose(first, traj.checkpoints[-1].matrices[0], atol=1e-12)
