"""
Command logic behind the CLI: load data, run the metrics, write reports,
CSV tables and figures into the output directory.
"""
import contextlib
import logging
import time
from pathlib import Path

import numpy as np
import pandas as pd

from src import svg
from src.data import (
    Dataset,
    distance_from_v1,
    load_dataset,
    roi_distances,
    select_rois,
    select_time_windows,
    subsample_layers,
    v1_centroid,
    validate_manifest,
    zscore_meg,
)
from src.domain import LayerActivations, ROITable, ScoreTrajectory
from src.errors import ConfigError, DataError, NumericalError
from src.metrics import (
    best_layer_map,
    half_time,
    layer_time_curves,
    log_fit,
    roi_layer_curves,
    roi_best_depths,
    roi_property_correlation,
    spatial_score,
    temporal_profile,
    temporal_score,
    window_best_layers,
)
from src.report import write_csv, write_report
from src.ridge import EncodingResult, FoldPlan, encode
from src.stats import compare_conditions, correlation_test, fdr_bh, t_test_columns
from src.synth import PlantSpec, write_dataset

logger = logging.getLogger(__name__)

HALFTIME_COLUMNS = ["roi", "best_depth", "half_time", "distance_mm", "window_center_s", "log_slope", "log_r2"]


class _WarningCollector(logging.Handler):
    def __init__(self):
        super().__init__(level=logging.WARNING)
        self.messages: list[str] = []

    def emit(self, record: logging.LogRecord) -> None:
        self.messages.append(record.getMessage())


@contextlib.contextmanager
def collect_warnings():
    handler = _WarningCollector()
    root = logging.getLogger()
    root.addHandler(handler)
    try:
        yield handler.messages
    finally:
        root.removeHandler(handler)


# ============= Shared steps =============

def _dataset(cfg, index: int = 0) -> Dataset:
    if len(cfg.manifests) <= index:
        raise ConfigError("manifest", "a --manifest path is required")
    return load_dataset(cfg.manifests[index], n_jobs=cfg.threads)


def _targets(ds: Dataset) -> np.ndarray:
    if ds.fmri is not None:
        return ds.fmri.matrix
    return zscore_meg(ds.meg).targets()


def encode_layers(cfg, acts: LayerActivations, Y: np.ndarray, plan: FoldPlan) -> list[EncodingResult]:
    results = []
    for depth, X in zip(acts.depths, acts.matrices):
        logger.info(f"Encoding layer depth={depth:.3f} (checkpoint {acts.checkpoint_step:.4g})")
        results.append(encode(
            X, Y, plan,
            grid=cfg.grid,
            inner=cfg.lambda_mode,
            inner_folds=cfg.inner_folds,
            per_target=cfg.per_target_lambda,
            n_jobs=cfg.threads,
        ))
    return results


def significance_mask(results: list[EncodingResult], q: float) -> np.ndarray:
    """Layer x target cells whose fold scores are FDR-significantly above zero."""
    per_fold = np.stack([r.per_fold_R for r in results])  # layers x folds x targets
    _, p, _ = t_test_columns(per_fold.transpose(1, 0, 2).reshape(per_fold.shape[1], -1))
    keep = fdr_bh(p, q).rejected_at[q].reshape(per_fold.shape[0], -1)
    return keep & (np.nanmean(per_fold, axis=1) > 0)


def _layer_scores(results, mask=None) -> np.ndarray:
    scores = np.vstack([np.where(r.mask, np.nan, r.per_target_R) for r in results])
    if mask is not None:
        scores = np.where(mask, scores, np.nan)
    return scores


def _best_per_fold(results: list[EncodingResult]) -> np.ndarray:
    """Fold x target scores of each target's best layer."""
    scores = _layer_scores(results)
    scores = np.where(np.isnan(scores), -np.inf, scores)
    best = np.argmax(scores, axis=0)
    stacked = np.stack([r.per_fold_R for r in results])
    return stacked[best, :, np.arange(best.size)].T


def _geometry(cfg, ds: Dataset):
    if ds.fmri is None or ds.fmri.geometry is None:
        raise DataError("spatial scoring needs fMRI coordinates in the response metadata", ds.manifest.path)
    geom = ds.fmri.geometry
    if cfg.v1 is not None:
        return geom.with_reference(cfg.v1)
    if geom.v1_reference is None:
        return geom.with_reference(v1_centroid(geom))
    return geom


def _selected_rois(cfg, ds: Dataset, results) -> tuple[ROITable, dict]:
    if ds.rois is None:
        raise DataError("ROI-level analysis needs a roi_table in the manifest", ds.manifest.path)
    selection = select_rois(_best_per_fold(results), ds.rois, cfg.roi_alpha, cfg.roi_order)
    kept = ROITable(tuple(r for r in ds.rois if r.name in selection.included))
    info = {"order": selection.order, "alpha": selection.alpha, "included": list(selection.included), "p": selection.p_values}
    return kept, info


# ============= encode =============

def cmd_encode(cfg) -> dict:
    ds = _dataset(cfg)
    acts = subsample_layers(ds.final, cfg.n_layers)
    Y = _targets(ds)
    plan = FoldPlan.make(ds.final.n_stimuli, cfg.folds, cfg.seed)
    results = encode_layers(cfg, acts, Y, plan)

    rows = []
    for depth, res in zip(acts.depths, results):
        for j, (r, masked) in enumerate(zip(res.per_target_R, res.mask)):
            rows.append({"depth": depth, "target": j, "R": r, "masked": bool(masked)})
    write_csv(Path(cfg.out) / "per_target_scores.csv", pd.DataFrame(rows, columns=["depth", "target", "R", "masked"]))

    scores = _layer_scores(results)
    usable = ~np.all(np.isnan(scores), axis=0)
    best = np.nanmax(scores[:, usable], axis=0) if usable.any() else np.zeros(0)
    out = {
        "modality": ds.modality,
        "n_stimuli": ds.final.n_stimuli,
        "n_targets": int(Y.shape[1]),
        "fold_seed": plan.seed,
        "mean_R": float(best.mean()) if best.size else float("nan"),
        "layers": [
            {
                "depth": depth,
                "mean_R": res.mean_score(),
                "n_masked": int(res.mask.sum()),
                "lambda_per_fold": res.lambda_per_fold,
            }
            for depth, res in zip(acts.depths, results)
        ],
    }
    if ds.rois is not None:
        _, out["roi_selection"] = _selected_rois(cfg, ds, results)
    if ds.meg is not None:
        curves = layer_time_curves(results, ds.meg.n_channels, ds.meg.n_times)
        out["window_best_depth"] = {
            f"{a:.3f}-{b:.3f}": d
            for (a, b), d in zip(cfg.windows, window_best_layers(curves, ds.meg.times, cfg.windows, acts.depths))
        }
    logger.info(f"Encoding done: best-layer mean R={out['mean_R']:.4f}")
    return out


# ============= scores =============

def spatial_results(cfg, ds: Dataset, acts: LayerActivations, results) -> dict:
    geom = _geometry(cfg, ds)
    mask = significance_mask(results, cfg.fdr_q)
    k_map = best_layer_map(results, acts.depths, mask)
    out = {"level": cfg.level, "v1_reference": geom.v1_reference, "n_excluded": int(k_map.excluded.size)}
    if cfg.level == "voxel":
        corr = spatial_score(k_map.k_star, geom)
        keep = ~np.isnan(k_map.k_star)
        x, y = distance_from_v1(geom)[keep], k_map.k_star[keep]
    else:
        rois, out["roi_selection"] = _selected_rois(cfg, ds, results)
        layer_scores = _layer_scores(results, mask)
        corr = spatial_score(None, geom, "roi", rois=rois, layer_scores=layer_scores, depths=acts.depths)
        curves = roi_layer_curves(layer_scores, rois, normalize=cfg.norm_axis)
        out["norm_axis"] = cfg.norm_axis
        out["roi_curves"] = {name: row for name, row in zip(rois.names, curves)}
        best = roi_best_depths(layer_scores, rois, acts.depths)
        dist = roi_distances(rois, geom.v1_reference)
        x, y = np.array([dist[n] for n in rois.names]), best
        out["roi_best_depth"] = dict(zip(rois.names, best))
    out.update(corr.as_dict())
    frame = pd.DataFrame({"distance_mm": x, "k_star": y})
    write_csv(Path(cfg.out) / f"best_layers_{cfg.level}.csv", frame)
    svg.write_svg(
        Path(cfg.out) / "spatial_scatter.svg",
        svg.scatter(x, y, "Spatial score", "distance from V1 (mm)", "best layer k*", note=f"r={corr.r:.3f}"),
    )
    return out


def temporal_results(cfg, ds: Dataset, acts: LayerActivations, results) -> dict:
    curves = layer_time_curves(results, ds.meg.n_channels, ds.meg.n_times)
    profile = temporal_profile(curves, ds.meg.times, acts.depths, cfg.tmax_frac)
    corr = temporal_score(profile)
    out = corr.as_dict()
    out["t_max"] = profile.t_max
    out["threshold"] = profile.threshold
    out["window_best_depth"] = window_best_layers(curves, ds.meg.times, cfg.windows, acts.depths)
    out["windows"] = cfg.windows
    write_csv(Path(cfg.out) / "tmax.csv", pd.DataFrame({"depth": acts.depths, "t_max": profile.t_max}))
    svg.write_svg(
        Path(cfg.out) / "temporal_scatter.svg",
        svg.scatter(acts.depths, profile.t_max, "Temporal score", "layer depth k", "T_max (s)", note=f"r={corr.r:.3f}"),
    )
    normalized = curves / np.nanmax(curves, axis=1, keepdims=True)
    series = {f"k={d:.2f}": (ds.meg.times, row) for d, row in zip(acts.depths, normalized)}
    markers = {f"k={d:.2f}": t for d, t in zip(acts.depths, profile.t_max)}
    svg.write_svg(Path(cfg.out) / "temporal_curves.svg", svg.line_plot(series, "Dynamic encoding", "time (s)", "R / max R", markers))
    return out


def cmd_scores(cfg) -> dict:
    out = {}
    for index in range(max(1, len(cfg.manifests))):
        ds = _dataset(cfg, index)
        acts = subsample_layers(ds.final, cfg.n_layers)
        plan = FoldPlan.make(acts.n_stimuli, cfg.folds, cfg.seed)
        results = encode_layers(cfg, acts, _targets(ds), plan)
        if ds.modality == "fmri":
            out["spatial"] = spatial_results(cfg, ds, acts, results)
        else:
            out["temporal"] = temporal_results(cfg, ds, acts, results)
    return out


# ============= halftime =============

def _unit_curves(cfg, ds: Dataset, results) -> tuple[list[str], np.ndarray]:
    """Unit x layer mean R: ROIs for fMRI, time windows for MEG."""
    if ds.meg is not None:
        curves = layer_time_curves(results, ds.meg.n_channels, ds.meg.n_times)
        windows = select_time_windows(ds.meg, cfg.windows)
        return [w.label for w in windows], np.vstack([curves[:, w.time_indices].mean(axis=1) for w in windows])
    return ds.rois.names, roi_layer_curves(results, ds.rois, normalize=None)


def _metric_score(cfg, ds: Dataset, geom, acts: LayerActivations, results) -> float:
    """Spatial (fMRI) or temporal (MEG) score at one checkpoint; NaN where undefined."""
    try:
        if ds.meg is not None:
            curves = layer_time_curves(results, ds.meg.n_channels, ds.meg.n_times)
            return temporal_score(temporal_profile(curves, ds.meg.times, acts.depths, cfg.tmax_frac)).r
        return spatial_score(best_layer_map(results, acts.depths).k_star, geom).r
    except NumericalError as e:
        logger.warning(f"score undefined at checkpoint {acts.checkpoint_step:.4g}: {e}")
        return float("nan")


def cmd_halftime(cfg) -> dict:
    ds = _dataset(cfg)
    steps = sorted(ds.checkpoints)
    if len(steps) < 2:
        raise DataError(f"half times need at least 2 checkpoints, manifest has {len(steps)}", ds.manifest.path)
    if ds.meg is None and ds.rois is None:
        raise DataError("fMRI half times need a roi_table in the manifest", ds.manifest.path)
    Y = _targets(ds)
    plan = FoldPlan.make(ds.final.n_stimuli, cfg.folds, cfg.seed)
    geom = _geometry(cfg, ds) if ds.fmri is not None and ds.fmri.geometry is not None else None

    per_step = {}
    for step in steps:
        acts = subsample_layers(ds.checkpoints[step], cfg.n_layers)
        per_step[step] = (acts, encode_layers(cfg, acts, Y, plan))
    unit_curves = [_unit_curves(cfg, ds, results) for _, results in per_step.values()]
    names = unit_curves[-1][0]
    final_acts = per_step[steps[-1]][0]

    best_layer = {}
    for name, row in zip(names, unit_curves[-1][1]):
        if np.all(np.isnan(row)):
            logger.warning(f"{name}: no usable targets at the final checkpoint, skipped")
            continue
        best_layer[name] = int(np.nanargmax(row))

    trajectories, rows = {}, []
    index = {name: i for i, name in enumerate(names)}
    for name, layer in best_layer.items():
        values = [curves[index[name], layer] for _, curves in unit_curves]
        trajectories[name] = ScoreTrajectory(steps, values, label=name)
        rows.extend({"roi": name, "step": s, "R": v} for s, v in zip(steps, values))
    metric = "temporal" if ds.meg is not None else "spatial" if geom is not None else None
    if metric:
        scores = [_metric_score(cfg, ds, geom, acts, results) for acts, results in per_step.values()]
        trajectories[metric] = ScoreTrajectory(steps, scores, label=metric)
        rows.extend({"roi": metric, "step": s, "R": v} for s, v in zip(steps, scores))

    half = {name: half_time(traj) for name, traj in trajectories.items()}
    dist = roi_distances(ds.rois, geom.v1_reference) if geom is not None and ds.rois is not None else {}
    centers = {w.label: w.center for w in select_time_windows(ds.meg, cfg.windows)} if ds.meg is not None else {}
    table = []
    for name in best_layer:
        fit = None
        with contextlib.suppress(NumericalError):
            fit = log_fit(trajectories[name])
        table.append({
            "roi": name,
            "best_depth": final_acts.depths[best_layer[name]],
            "half_time": half[name],
            "distance_mm": dist.get(name, float("nan")),
            "window_center_s": centers.get(name, float("nan")),
            "log_slope": fit.slope if fit else float("nan"),
            "log_r2": fit.r2 if fit else float("nan"),
        })
    frame = pd.DataFrame(table, columns=HALFTIME_COLUMNS)
    write_csv(Path(cfg.out) / "halftimes.csv", frame)
    write_csv(Path(cfg.out) / "trajectories.csv", pd.DataFrame(rows, columns=["roi", "step", "R"]))
    series = {name: (traj.steps, traj.values) for name, traj in trajectories.items()}
    svg.write_svg(Path(cfg.out) / "halftime.svg", svg.line_plot(series, "Scores across training", "relative training step", "score", half))

    out = {"checkpoints": steps, "half_times": half, "best_depth": {n: final_acts.depths[l] for n, l in best_layer.items()}}
    for column, key in (("distance_mm", "distance_correlation"), ("window_center_s", "window_center_correlation")):
        defined = frame.dropna(subset=["half_time", column])
        if len(defined) >= 3:
            with contextlib.suppress(NumericalError):
                out[key] = correlation_test(defined[column], defined["half_time"]).as_dict()
    return out


# ============= property-corr =============

def cmd_property_corr(cfg) -> dict:
    if not cfg.halftimes:
        raise ConfigError("halftimes", "property correlation needs --halftimes (halftimes.csv)")
    path = Path(cfg.halftimes)
    if not path.exists():
        raise DataError("half-time table not found", path)
    frame = pd.read_csv(path, dtype={"roi": str})
    if not {"roi", "half_time"} <= set(frame.columns):
        raise DataError("half-time table needs roi and half_time columns", path)
    half = dict(zip(frame["roi"], frame["half_time"].astype(float)))

    ds = _dataset(cfg)
    if ds.rois is None:
        raise DataError("property correlation needs a roi_table in the manifest", ds.manifest.path)
    out, rows = {}, []
    for column in ds.rois.property_columns():
        values = ds.rois.property_values(column)
        if all(not np.isfinite(v) for v in values.values()):
            logger.warning(f"property {column}: no values, skipped")
            continue
        joined = roi_property_correlation(half, values)
        out[column] = {**joined.result.as_dict(), "n_dropped": joined.n_dropped, "dropped": list(joined.dropped)}
        rows.append({"property": column, "r": joined.result.r, "p": joined.result.p, "n": joined.result.n, "n_dropped": joined.n_dropped})
        names = list(joined.names)
        svg.write_svg(
            Path(cfg.out) / f"property_{column}.svg",
            svg.scatter([half[n] for n in names], [values[n] for n in names], f"{column} vs half time", "half time", column, note=f"r={joined.result.r:.3f}"),
        )
    write_csv(Path(cfg.out) / "property_correlations.csv", pd.DataFrame(rows, columns=["property", "r", "p", "n", "n_dropped"]))
    return out


# ============= compare / synth / validate =============

def cmd_compare(cfg) -> dict:
    if cfg.family is None:
        raise ConfigError("family", "--family (metric or all) is required for compare")
    if not cfg.input:
        raise ConfigError("input", "compare needs --input (CSV with subject,model,metric,value)")
    path = Path(cfg.input)
    if not path.exists():
        raise DataError("comparison table not found", path)
    table = pd.read_csv(path, dtype={"subject": str, "model": str, "metric": str})
    result = compare_conditions(table, cfg.family, cfg.fdr_q)
    write_csv(Path(cfg.out) / "comparisons.csv", result)
    return {"family": cfg.family, "comparisons": result.to_dict(orient="records")}


def cmd_synth(cfg) -> dict:
    spec = PlantSpec.from_json(cfg.spec) if cfg.spec else PlantSpec(seed=cfg.seed)
    paths = write_dataset(spec, cfg.out)
    return {k: v.as_posix() for k, v in paths.items()}


def cmd_validate(cfg) -> dict:
    if not cfg.manifests:
        raise ConfigError("manifest", "a --manifest path is required")
    return {m: validate_manifest(m) for m in cfg.manifests}


COMMANDS = {
    "encode": cmd_encode,
    "scores": cmd_scores,
    "halftime": cmd_halftime,
    "property-corr": cmd_property_corr,
    "compare": cmd_compare,
    "synth": cmd_synth,
    "validate": cmd_validate,
}
NO_REPORT = ("synth", "validate")


def run(cfg) -> dict:
    """Run one command; analysis commands also write report.json and timing.json."""
    start = time.perf_counter()
    with collect_warnings() as warnings:
        results = COMMANDS[cfg.command](cfg)
    if cfg.command not in NO_REPORT:
        write_report(cfg.out, cfg.command, cfg.echo(), results, sorted(set(warnings)), time.perf_counter() - start)
    return results
