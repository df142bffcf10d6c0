"""End-to-end runs of the command line on synthetic datasets."""
import json
import logging

import numpy as np
import pandas as pd
import pytest
from scipy import stats as sps

from cli import main
from config import RunConfig, resolve_config
from src.errors import ConfigError
from src.report import read_report


def _synth(root, **spec):
    spec_path = root / "spec.json"
    spec_path.write_text(json.dumps(spec))
    assert main(["synth", "--out", str(root / "data"), "--spec", str(spec_path)]) == 0
    return root / "data"


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    return _synth(tmp_path_factory.mktemp("synth"))


def _report(out):
    return read_report(out / "report.json")


# ============= synth / validate =============

def test_synth_then_validate(dataset, capsys):
    code = main(["validate", "--manifest", str(dataset / "fmri" / "manifest.json"), "--manifest", str(dataset / "meg" / "manifest.json")])
    assert code == 0
    out = capsys.readouterr().out
    assert out.count("schema 1 ok") == 2


# ============= encode =============

def test_encode_noiseless_plant(dataset, tmp_path):
    out = tmp_path / "enc"
    assert main(["encode", "--manifest", str(dataset / "fmri" / "manifest.json"), "--out", str(out)]) == 0
    report = _report(out)
    assert report["command"] == "encode"
    assert report["results"]["mean_R"] >= 0.99
    assert "out" not in report["config"]
    assert len(report["config"]["lambda_values"]) == 10
    frame = pd.read_csv(out / "per_target_scores.csv")
    assert list(frame.columns) == ["depth", "target", "R", "masked"]
    assert len(frame) == 5 * 30
    assert (out / "timing.json").exists()


def test_encode_report_is_reproducible_across_runs_and_threads(dataset, tmp_path):
    manifest = str(dataset / "fmri" / "manifest.json")
    assert main(["encode", "--manifest", manifest, "--out", str(tmp_path / "a")]) == 0
    assert main(["encode", "--manifest", manifest, "--out", str(tmp_path / "b"), "--threads", "3"]) == 0
    assert (tmp_path / "a" / "report.json").read_bytes() == (tmp_path / "b" / "report.json").read_bytes()
    assert (tmp_path / "a" / "per_target_scores.csv").read_bytes() == (tmp_path / "b" / "per_target_scores.csv").read_bytes()


@pytest.mark.parametrize(
    "extra",
    [
        ["--folds", "1"],
        ["--lambda-grid", "10,1"],
        ["--tmax-frac", "1.5"],
    ],
)
def test_bad_settings_exit_2(dataset, tmp_path, extra, capsys):
    argv = ["encode", "--manifest", str(dataset / "fmri" / "manifest.json"), "--out", str(tmp_path)] + extra
    assert main(argv) == 2
    assert capsys.readouterr().err.startswith("error: ")


def test_missing_manifest_exits_2(tmp_path):
    assert main(["encode", "--manifest", str(tmp_path / "absent.json"), "--out", str(tmp_path)]) == 2
    assert main(["encode", "--out", str(tmp_path)]) == 2


def test_unknown_command_is_an_argparse_error():
    with pytest.raises(SystemExit) as info:
        main(["align"])
    assert info.value.code == 2


# ============= scores =============

def test_spatial_score_of_the_plant_is_one(dataset, tmp_path):
    out = tmp_path / "scores"
    assert main(["scores", "--manifest", str(dataset / "fmri" / "manifest.json"), "--out", str(out)]) == 0
    spatial = _report(out)["results"]["spatial"]
    assert spatial["r"] == pytest.approx(1.0, abs=1e-9)
    assert spatial["n_excluded"] == 0
    truth = json.loads((dataset / "truth.json").read_text())
    assert spatial["v1_reference"] == truth["hierarchical"]["v1_reference"]
    frame = pd.read_csv(out / "best_layers_voxel.csv")
    np.testing.assert_allclose(frame["k_star"], truth["hierarchical"]["target_depth"])

    again = tmp_path / "again"
    assert main(["scores", "--manifest", str(dataset / "fmri" / "manifest.json"), "--out", str(again)]) == 0
    assert (out / "spatial_scatter.svg").read_bytes() == (again / "spatial_scatter.svg").read_bytes()


def test_roi_level_spatial_score(dataset, tmp_path):
    out = tmp_path / "roi"
    argv = ["scores", "--manifest", str(dataset / "fmri" / "manifest.json"), "--out", str(out), "--level", "roi"]
    assert main(argv) == 0
    spatial = _report(out)["results"]["spatial"]
    assert spatial["r"] == pytest.approx(1.0, abs=1e-9)
    assert spatial["roi_selection"]["included"] == ["R00", "R01", "R02", "R03", "R04"]
    assert spatial["norm_axis"] == "roi"


def test_temporal_score_of_the_plant_is_one(dataset, tmp_path):
    out = tmp_path / "meg"
    assert main(["scores", "--manifest", str(dataset / "meg" / "manifest.json"), "--out", str(out)]) == 0
    temporal = _report(out)["results"]["temporal"]
    assert temporal["r"] == pytest.approx(1.0, abs=1e-6)
    np.testing.assert_allclose(temporal["t_max"], [0.1, 0.3, 0.5, 0.7, 0.9], atol=0.025)
    assert temporal["window_best_depth"][0] == 0.0
    for name in ("tmax.csv", "temporal_scatter.svg", "temporal_curves.svg"):
        assert (out / name).exists()


def test_too_few_targets_is_a_numerical_error(tmp_path):
    data = _synth(tmp_path, n_layers=2, targets_per_layer=1, checkpoints=[1.0])
    assert main(["scores", "--manifest", str(data / "fmri" / "manifest.json"), "--out", str(tmp_path / "o")]) == 3


# ============= halftime / property-corr =============

@pytest.fixture(scope="module")
def halftime_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("train")
    data = _synth(root, n_stimuli=240)
    out = root / "ht"
    assert main(["halftime", "--manifest", str(data / "fmri" / "manifest.json"), "--out", str(out)]) == 0
    return data, out


def test_half_times_track_the_planted_ones(halftime_run):
    data, out = halftime_run
    truth = json.loads((data / "truth.json").read_text())["trajectory"]["half_times"]
    frame = pd.read_csv(out / "halftimes.csv")
    assert list(frame.columns) == ["roi", "best_depth", "half_time", "distance_mm", "window_center_s", "log_slope", "log_r2"]
    measured = dict(zip(frame["roi"], frame["half_time"]))
    for roi, expected in truth.items():
        assert abs(measured[roi] - expected) <= 1 / 12
    names = sorted(truth)
    rho = sps.spearmanr([measured[n] for n in names], [truth[n] for n in names]).statistic
    assert rho == pytest.approx(1.0)
    results = _report(out)["results"]
    assert len(results["checkpoints"]) == 12
    assert results["distance_correlation"]["r"] > 0.9
    assert (out / "trajectories.csv").exists() and (out / "halftime.svg").exists()


def test_property_correlations_match_the_plant(halftime_run, tmp_path):
    data, out = halftime_run
    rois_csv = data / "fmri" / "rois.csv"
    lines = rois_csv.read_text().splitlines()
    rois_csv.write_text("\n".join([lines[0] + ",blank"] + [line + "," for line in lines[1:]]) + "\n")
    planted = json.loads((data / "truth.json").read_text())["planted_property_r"]

    result_dir = tmp_path / "props"
    argv = [
        "property-corr", "--manifest", str(data / "fmri" / "manifest.json"),
        "--halftimes", str(out / "halftimes.csv"), "--out", str(result_dir),
    ]
    assert main(argv) == 0
    report = _report(result_dir)
    for column, r in planted.items():
        assert report["results"][column]["r"] == pytest.approx(r, abs=0.1)
    assert "blank" not in report["results"]
    assert any("blank" in w for w in report["warnings"])
    assert len(pd.read_csv(result_dir / "property_correlations.csv")) == 4


def test_property_corr_needs_halftimes(dataset, tmp_path):
    assert main(["property-corr", "--manifest", str(dataset / "fmri" / "manifest.json"), "--out", str(tmp_path)]) == 2


def test_meg_half_times_use_time_windows(dataset, tmp_path):
    fmri = json.loads((dataset / "fmri" / "manifest.json").read_text())
    meg = json.loads((dataset / "meg" / "manifest.json").read_text())
    meg["activations"] = fmri["activations"]
    manifest = dataset / "meg" / "manifest_train.json"
    manifest.write_text(json.dumps(meg))

    out = tmp_path / "meg_ht"
    assert main(["halftime", "--manifest", str(manifest), "--out", str(out)]) == 0
    frame = pd.read_csv(out / "halftimes.csv")
    assert list(frame["roi"]) == ["0.080-0.130s", "0.130-0.180s", "0.500-0.550s"]
    np.testing.assert_allclose(frame["window_center_s"], [0.105, 0.155, 0.525])
    assert frame["distance_mm"].isna().all()
    assert "temporal" in _report(out)["results"]["half_times"]


def test_single_checkpoint_halftime_exits_2(tmp_path):
    data = _synth(tmp_path, checkpoints=[1.0])
    assert main(["halftime", "--manifest", str(data / "fmri" / "manifest.json"), "--out", str(tmp_path / "o")]) == 2



def _output_bytes(root):
    return {
        p.relative_to(root).as_posix(): p.read_bytes()
        for p in sorted(root.rglob("*"))
        if p.is_file() and p.name != "timing.json"
    }


def test_every_command_writes_the_same_bytes_for_any_thread_count(dataset, halftime_run, tmp_path):
    data, ht = halftime_run
    runs = [
        ("scores-fmri", ["scores", "--manifest", str(dataset / "fmri" / "manifest.json")]),
        ("scores-meg", ["scores", "--manifest", str(dataset / "meg" / "manifest.json")]),
        ("halftime", ["halftime", "--manifest", str(data / "fmri" / "manifest.json")]),
        ("props", [
            "property-corr", "--manifest", str(data / "fmri" / "manifest.json"),
            "--halftimes", str(ht / "halftimes.csv"),
        ]),
    ]
    for name, argv in runs:
        one, eight = tmp_path / name / "t1", tmp_path / name / "t8"
        assert main(argv + ["--out", str(one), "--threads", "1"]) == 0
        assert main(argv + ["--out", str(eight), "--threads", "8"]) == 0
        first = _output_bytes(one)
        assert "report.json" in first
        assert any(key.endswith(".svg") for key in first)
        assert first == _output_bytes(eight), name

    spec_path = tmp_path / "plant.json"
    spec_path.write_text(json.dumps({"n_stimuli": 60, "seed": 3}))
    for threads in ("1", "8"):
        assert main(["synth", "--out", str(tmp_path / f"synth{threads}"), "--spec", str(spec_path), "--threads", threads]) == 0
    assert _output_bytes(tmp_path / "synth1") == _output_bytes(tmp_path / "synth8")

# ============= compare =============

def test_compare_writes_fdr_corrected_table(tmp_path):
    rows = [
        {"subject": f"s{i}", "model": m, "metric": "spatial", "value": i + (1.0 if m == "trained" else 0.0)}
        for i in range(6)
        for m in ("trained", "untrained")
    ]
    pd.DataFrame(rows).to_csv(tmp_path / "subjects.csv", index=False)
    out = tmp_path / "cmp"
    assert main(["compare", "--input", str(tmp_path / "subjects.csv"), "--family", "metric", "--out", str(out)]) == 0
    table = pd.read_csv(out / "comparisons.csv")
    assert table.loc[0, "p"] == pytest.approx(2 / 2**6)
    assert _report(out)["results"]["family"] == "metric"


def test_compare_requires_family(tmp_path):
    assert main(["compare", "--input", str(tmp_path / "x.csv"), "--out", str(tmp_path)]) == 2



def test_log_messages_arrive_preformatted(dataset, tmp_path, caplog):
    with caplog.at_level(logging.DEBUG):
        assert main(["scores", "--manifest", str(dataset / "meg" / "manifest.json"), "--out", str(tmp_path)]) == 0
    ours = [r for r in caplog.records if r.name.startswith(("src.", "config", "cli"))]
    assert ours
    assert all(not r.args for r in ours)

# ============= configuration =============

def test_flags_override_file_override_environment(tmp_path):
    cfg_path = tmp_path / "run.json"
    cfg_path.write_text(json.dumps({"folds": 6, "seed": 9, "threads": 2}))
    environ = {"BRAINALIGN_FOLDS": "3", "BRAINALIGN_SEED": "4", "BRAINALIGN_LAMBDA_MODE": "kfold"}
    cfg = resolve_config("encode", {"folds": 7, "config": str(cfg_path)}, environ)
    assert (cfg.folds, cfg.seed, cfg.threads, cfg.lambda_mode) == (7, 9, 2, "kfold")
    cfg = resolve_config("encode", {}, environ)
    assert (cfg.folds, cfg.seed) == (3, 4)
    assert resolve_config("encode", {}, {}).folds == RunConfig().folds


def test_config_errors_name_the_field(tmp_path):
    with pytest.raises(ConfigError) as info:
        resolve_config("encode", {}, {"BRAINALIGN_FOLDS": "many"})
    assert info.value.field == "folds"
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"fold": 3}))
    with pytest.raises(ConfigError) as info:
        resolve_config("encode", {"config": str(bad)}, {})
    assert info.value.field == "fold"


def test_echo_leaves_out_runtime_settings():
    echo = RunConfig(command="encode", out="x", threads=4).echo()
    assert not {"out", "threads", "log_level", "config"} & set(echo)
    assert echo["lambda_values"][0] == pytest.approx(1.0)
