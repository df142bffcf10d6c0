"""
Brain-model similarity metrics: encoding curves, best layer per target,
spatial and temporal scores, T_max and training half times.
"""
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import stats as sps

from src.data import distance_from_v1, roi_distances, window_indices
from src.domain import ROITable, ScoreTrajectory, TemporalProfile, VoxelGeometry
from src.errors import DataError, DegenerateInputError
from src.ridge import EncodingResult
from src.stats import CorrelationResult, correlation_test

logger = logging.getLogger(__name__)

VOXEL = "voxel"
ROI_LEVEL = "roi"
NORM_ROI = "roi"
NORM_LAYER = "layer"
T_MAX_THRESHOLD = 0.95


@dataclass(frozen=True, eq=False)
class BestLayerMap:
    k_star: np.ndarray  # depth per target, NaN where excluded
    layer_index: np.ndarray  # -1 where excluded
    excluded: np.ndarray  # target indices with no usable layer


@dataclass(frozen=True)
class LogFit:
    intercept: float
    slope: float
    r2: float


@dataclass(frozen=True, eq=False)
class JoinedCorrelation:
    result: CorrelationResult
    names: tuple[str, ...]
    n_dropped: int = 0
    dropped: tuple[str, ...] = field(default=())


def normalize_scores(R, axis=None) -> np.ndarray:
    """Divide by the maximum (along `axis`, or overall) so the peak is exactly 1."""
    a = np.asarray(R, dtype=np.float64)
    peak = np.nanmax(a, axis=axis, keepdims=axis is not None)
    if np.any(~(peak > 0)):
        raise DegenerateInputError(f"normalization needs a positive maximum (axis={axis})")
    return a / peak


def _layer_matrix(layer_scores) -> tuple[np.ndarray, np.ndarray]:
    """Stack per-layer scores into layers x targets plus a masked matrix."""
    if len(layer_scores) and isinstance(layer_scores[0], EncodingResult):
        scores = np.vstack([r.per_target_R for r in layer_scores])
        masked = np.vstack([r.mask for r in layer_scores]) | np.isnan(scores)
    else:
        scores = np.asarray(layer_scores, dtype=np.float64)
        if scores.ndim == 1:
            scores = scores[:, None]
        masked = np.isnan(scores)
    return scores, masked


def best_layer_map(layer_scores, depths, significance_mask=None) -> BestLayerMap:
    """Depth of the best-predicting layer per target.

    `layer_scores` is a list of EncodingResult (one per layer) or a
    layers x targets array. `significance_mask` (same shape, True = keep)
    removes non-significant layer/target cells. Ties go to the shallower
    layer. Targets with no usable layer are excluded.
    """
    depths = np.asarray(depths, dtype=np.float64)
    scores, masked = _layer_matrix(layer_scores)
    if scores.shape[0] != depths.size:
        raise DataError(f"{scores.shape[0]} layer score rows for {depths.size} depths")
    if scores.shape[0] < 2:
        raise DegenerateInputError("best-layer mapping needs at least 2 layers")
    if significance_mask is not None:
        keep = np.asarray(significance_mask, dtype=bool)
        if keep.shape != scores.shape:
            raise DataError(f"significance mask {keep.shape} does not match scores {scores.shape}")
        masked = masked | ~keep

    usable = np.where(masked, -np.inf, scores)
    excluded = np.flatnonzero(masked.all(axis=0))
    idx = np.argmax(usable, axis=0)
    idx[excluded] = -1
    k_star = np.where(idx >= 0, depths[np.clip(idx, 0, None)], np.nan)
    if excluded.size:
        logger.info(f"{excluded.size} target(s) masked in every layer, excluded from k*")
    return BestLayerMap(k_star, idx, excluded)


def roi_layer_curves(layer_scores, rois: ROITable, normalize: str | None = NORM_ROI) -> np.ndarray:
    """ROI x layer matrix of mean R over each ROI's targets.

    normalize="roi" scales each ROI curve to peak 1 (argmax preserved);
    normalize="layer" scales each layer by its best ROI.
    """
    scores, masked = _layer_matrix(layer_scores)
    scores = np.where(masked, np.nan, scores)
    curves = np.empty((len(rois), scores.shape[0]))
    for i, roi in enumerate(rois):
        block = scores[:, list(roi.members)]
        if block.size == 0 or np.all(np.isnan(block)):
            curves[i] = np.nan
            continue
        curves[i] = np.nanmean(block, axis=1)
    if normalize is None:
        return curves
    if normalize not in (NORM_ROI, NORM_LAYER):
        raise DataError(f"unknown normalization axis {normalize!r}")
    axis = 1 if normalize == NORM_ROI else 0
    peak = np.max(np.where(np.isnan(curves), -np.inf, curves), axis=axis, keepdims=True)
    usable = np.isfinite(peak) & (peak > 0)
    if not usable.all():
        logger.warning(f"{int((~usable).sum())} {normalize} curve(s) without a positive peak left unnormalized (NaN)")
    return np.where(usable, curves / np.where(usable, peak, 1.0), np.nan)


def roi_best_depths(layer_scores, rois: ROITable, depths) -> np.ndarray:
    """Depth of the peak of each ROI's mean layer curve; NaN for ROIs without scores."""
    curves = roi_layer_curves(layer_scores, rois, normalize=None)
    keep = ~np.all(np.isnan(curves), axis=1)
    k = np.full(len(rois), np.nan)
    k[keep] = np.asarray(depths, dtype=np.float64)[np.nanargmax(curves[keep], axis=1)]
    return k


def spatial_score(
    k_star,
    geom: VoxelGeometry,
    level: str = VOXEL,
    *,
    rois: ROITable | None = None,
    layer_scores=None,
    depths=None,
) -> CorrelationResult:
    """Correlation between distance from V1 (mm) and best-layer depth.

    At ROI level each ROI's mean layer curve is argmaxed and the ROI
    centroid's distance is used.
    """
    if level == VOXEL:
        k = np.asarray(k_star, dtype=np.float64)
        d = distance_from_v1(geom)
        if k.size != d.size:
            raise DataError(f"{k.size} k* values for {d.size} targets")
        keep = ~np.isnan(k)
    elif level == ROI_LEVEL:
        if rois is None or layer_scores is None or depths is None:
            raise DataError("ROI-level spatial score needs rois, layer_scores and depths")
        if geom.v1_reference is None:
            raise DataError("v1_reference is not set")
        k = roi_best_depths(layer_scores, rois, depths)
        keep = ~np.isnan(k)
        dist = roi_distances(rois, geom.v1_reference)
        d = np.array([dist[name] for name in rois.names])
    else:
        raise DataError(f"unknown level {level!r}")
    if keep.sum() < 3:
        raise DegenerateInputError(f"spatial score needs at least 3 {level} entries, got {int(keep.sum())}")
    return correlation_test(d[keep], k[keep])


def t_max(curve, times, threshold: float = T_MAX_THRESHOLD) -> float:
    """Mean time of every sample whose normalized score reaches `threshold`."""
    c = np.asarray(curve, dtype=np.float64)
    t = np.asarray(times, dtype=np.float64)
    if c.size == 0:
        raise DegenerateInputError("T_max of an empty curve")
    if c.shape != t.shape:
        raise DataError(f"curve has {c.size} samples, time axis {t.size}")
    normalized = normalize_scores(c)
    return float(t[normalized >= threshold].mean())


def temporal_profile(curves, times, depths, threshold: float = T_MAX_THRESHOLD) -> TemporalProfile:
    curves = np.asarray(curves, dtype=np.float64)
    times = np.asarray(times, dtype=np.float64)
    tm = np.array([t_max(row, times, threshold) for row in curves])
    return TemporalProfile(times, np.asarray(depths, dtype=np.float64), curves, tm, threshold)


def temporal_score(profile: TemporalProfile) -> CorrelationResult:
    """Correlation between layer depth and the layer's T_max."""
    if profile.depths.size < 3:
        raise DegenerateInputError(f"temporal score needs at least 3 layers, got {profile.depths.size}")
    return correlation_test(profile.depths, profile.t_max)


def layer_time_curves(layer_scores, n_channels: int, n_times: int) -> np.ndarray:
    """Layer x time matrix of R averaged over channels (masked targets ignored)."""
    scores, masked = _layer_matrix(layer_scores)
    if scores.shape[1] != n_channels * n_times:
        raise DataError(f"{scores.shape[1]} targets for {n_channels} channels x {n_times} times")
    cube = np.where(masked, np.nan, scores).reshape(scores.shape[0], n_channels, n_times)
    if np.any(np.all(np.isnan(cube), axis=1)):
        raise DegenerateInputError("a time sample has no usable channel")
    return np.nanmean(cube, axis=1)


def window_best_layers(curves, times, windows, depths) -> list[float]:
    """Best depth per time window: mean score over the window, then argmax."""
    curves = np.asarray(curves, dtype=np.float64)
    depths = np.asarray(depths, dtype=np.float64)
    out = []
    for start, end in windows:
        idx = window_indices(times, start, end)
        out.append(float(depths[np.argmax(curves[:, idx].mean(axis=1))]))
    return out


def half_time(traj: ScoreTrajectory, warnings: list | None = None) -> float | None:
    """Relative training step where the metric first reaches half its final value.

    Linear interpolation between checkpoints. Returns the first step when the
    first checkpoint already reaches half. None (and a warning) when the
    final value is not positive.
    """
    if traj.steps.size < 2:
        raise DegenerateInputError(f"half time needs at least 2 checkpoints, got {traj.steps.size}")
    final = traj.values[-1]
    if not final > 0:
        msg = f"half time undefined for {traj.label or 'trajectory'}: final value {final:.6g} is not positive"
        logger.warning(msg)
        if warnings is not None:
            warnings.append(msg)
        return None
    half = final / 2.0
    i = int(np.argmax(traj.values >= half))
    if i == 0:
        step = float(traj.steps[0])
    else:
        s0, s1 = traj.steps[i - 1], traj.steps[i]
        v0, v1 = traj.values[i - 1], traj.values[i]
        step = float(s0 + (half - v0) / (v1 - v0) * (s1 - s0))
    if np.any(traj.values[i + 1 :] < half):
        msg = f"{traj.label or 'trajectory'} drops below half its final value after step {step:.4g}"
        logger.warning(msg)
        if warnings is not None:
            warnings.append(msg)
    return step


def log_fit(traj: ScoreTrajectory) -> LogFit:
    """Least-squares fit of value against log10(step) over steps > 0."""
    keep = traj.steps > 0
    if keep.sum() < 3:
        raise DegenerateInputError("log fit needs at least 3 checkpoints after step 0")
    res = sps.linregress(np.log10(traj.steps[keep]), traj.values[keep])
    return LogFit(float(res.intercept), float(res.slope), float(res.rvalue**2))


def roi_property_correlation(half_times: dict, properties: dict) -> JoinedCorrelation:
    """Pearson between per-ROI half times and a per-ROI property, joined on name."""
    names = [n for n in half_times if n in properties]
    pairs, dropped = [], []
    for name in names:
        h, p = half_times[name], properties[name]
        if h is None or p is None or not np.isfinite(h) or not np.isfinite(p):
            dropped.append(name)
            continue
        pairs.append((name, float(h), float(p)))
    if dropped:
        logger.info(f"dropped {len(dropped)} ROI(s) with missing values: {dropped}")
    if len(pairs) < 3:
        raise DegenerateInputError(f"property correlation needs at least 3 joined ROIs, got {len(pairs)}")
    x = np.array([h for _, h, _ in pairs])
    y = np.array([p for _, _, p in pairs])
    return JoinedCorrelation(correlation_test(x, y), tuple(n for n, _, _ in pairs), len(dropped), tuple(dropped))
