"""
Ground-truth synthetic datasets with a planted layer hierarchy.

Every generator is a pure function of its PlantSpec: one SeedSequence per
spec, split into independent streams, so identical specs write identical
bytes.
"""
import json
import logging
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from src.data import write_manifest, write_matrix, write_roi_table
from src.domain import (
    PROPERTY_COLUMNS,
    ROI,
    BrainResponses,
    LayerActivations,
    MegResponse,
    ROITable,
    VoxelGeometry,
)
from src.errors import ConfigError
from src.numeric import ZSCORE, center_standardize, pearson

logger = logging.getLogger(__name__)

V1_POINT = (-8.0, -96.0, 2.0)
STREAMS = ("layers", "readout", "geometry", "noise", "temporal", "trajectory", "properties")

# intercept, slope against planted half time
PROPERTY_PLANTS = {
    "expansion": (1.0, 4.0),
    "thickness": (2.0, 1.5),
    "timescale": (0.05, 0.6),
    "myelin": (1.6, -2.0),
}


def _default_checkpoints() -> tuple[float, ...]:
    return tuple(i / 12 for i in range(1, 13))


@dataclass(frozen=True)
class PlantSpec:
    n_stimuli: int = 120
    n_layers: int = 5
    features_per_layer: int = 16
    targets_per_layer: int = 6
    noise_sd: float = 0.0
    fresh_fraction: float = 0.5
    # geometry (mm)
    hierarchy_slope: float = 40.0
    v1_offset_mm: float = 5.0
    distance_jitter_mm: float = 0.0
    cap_spread: float = 0.15
    # MEG
    n_channels: int = 4
    temporal_peaks: float = 0.8
    peak_offset: float = 0.1
    t_start: float = -0.2
    t_step: float = 0.025
    n_times: int = 48
    temporal_width: float = 0.0375
    background_sd: float = 0.3
    # training
    rates: tuple[float, ...] | None = None
    checkpoints: tuple[float, ...] = field(default_factory=_default_checkpoints)
    property_noise_sd: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.rates is not None:
            object.__setattr__(self, "rates", tuple(float(r) for r in self.rates))
        object.__setattr__(self, "checkpoints", tuple(float(s) for s in self.checkpoints))
        self.validate()

    def validate(self) -> None:
        for name in ("n_stimuli", "n_layers", "features_per_layer", "targets_per_layer", "n_channels", "n_times"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(name, f"must be >= 1, got {getattr(self, name)}")
        for name in ("noise_sd", "distance_jitter_mm", "background_sd", "property_noise_sd"):
            if getattr(self, name) < 0:
                raise ConfigError(name, f"must be >= 0, got {getattr(self, name)}")
        if self.n_stimuli < 10:
            raise ConfigError("n_stimuli", "need at least 10 stimuli for cross-validation")
        if not 0.0 <= self.fresh_fraction <= 1.0:
            raise ConfigError("fresh_fraction", "must lie in [0, 1]")
        if self.t_step <= 0 or self.temporal_width <= 0:
            raise ConfigError("t_step", "time step and temporal width must be positive")
        if self.rates is not None and (len(self.rates) != self.n_layers or min(self.rates) < 0):
            raise ConfigError("rates", f"need {self.n_layers} non-negative rates")
        steps = np.asarray(self.checkpoints)
        if steps.size < 1 or np.any(np.diff(steps) <= 0) or steps[0] < 0 or steps[-1] != 1.0:
            raise ConfigError("checkpoints", "must be strictly increasing in [0, 1] and end at 1")

    @classmethod
    def from_dict(cls, doc: dict) -> "PlantSpec":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(doc) - known)
        if unknown:
            raise ConfigError(unknown[0], "unknown plant field")
        try:
            return cls(**doc)
        except (TypeError, ValueError) as e:
            raise ConfigError("spec", str(e)) from e

    @classmethod
    def from_json(cls, path) -> "PlantSpec":
        path = Path(path)
        if not path.exists():
            raise ConfigError("spec", f"plant spec not found: {path}")
        try:
            doc = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as e:
            raise ConfigError("spec", f"invalid JSON: {e}") from e
        return cls.from_dict(doc)

    def as_dict(self) -> dict:
        out = asdict(self)
        out["rates"] = list(self.layer_rates)
        out["checkpoints"] = list(self.checkpoints)
        return out

    @property
    def depths(self) -> tuple[float, ...]:
        if self.n_layers == 1:
            return (0.0,)
        return tuple(i / (self.n_layers - 1) for i in range(self.n_layers))

    @property
    def layer_rates(self) -> tuple[float, ...]:
        """Per-layer learning rates; deeper layers learn slower by default."""
        if self.rates is not None:
            return self.rates
        return tuple(float(r) for r in np.linspace(5.0, 0.0, self.n_layers))

    @property
    def times(self) -> np.ndarray:
        return self.t_start + self.t_step * np.arange(self.n_times)

    def roi_name(self, layer: int) -> str:
        return f"R{layer:02d}"


def _streams(spec: PlantSpec) -> dict[str, np.random.Generator]:
    children = np.random.SeedSequence(spec.seed).spawn(len(STREAMS))
    return {name: np.random.default_rng(child) for name, child in zip(STREAMS, children)}


def _zscore(m: np.ndarray) -> np.ndarray:
    return center_standardize(m, ZSCORE).matrix


def planted_layers(spec: PlantSpec) -> list[np.ndarray]:
    """Layer l+1 = rectified random rotation of layer l mixed with fresh components."""
    rng = _streams(spec)["layers"]
    n, d = spec.n_stimuli, spec.features_per_layer
    feats = [_zscore(rng.standard_normal((n, d)))]
    for _ in range(1, spec.n_layers):
        q, _ = np.linalg.qr(rng.standard_normal((d, d)))
        inherited = _zscore(np.maximum(feats[-1] @ q, 0.0))
        fresh = rng.standard_normal((n, d))
        mixed = np.sqrt(1.0 - spec.fresh_fraction) * inherited + np.sqrt(spec.fresh_fraction) * fresh
        feats.append(_zscore(mixed))
    return feats


def _activations(spec: PlantSpec, matrices, step: float = 1.0) -> LayerActivations:
    return LayerActivations(spec.depths, tuple(matrices), stimulus_ids(spec), "synth", step)


def stimulus_ids(spec: PlantSpec) -> tuple[str, ...]:
    return tuple(f"s{i:04d}" for i in range(spec.n_stimuli))


# ============= fMRI-like hierarchy =============

@dataclass(frozen=True, eq=False)
class HierarchicalPlant:
    activations: LayerActivations
    responses: BrainResponses
    geometry: VoxelGeometry
    rois: ROITable
    truth: dict


def _ring_directions(base: np.ndarray, m: int, spread: float) -> np.ndarray:
    """m unit vectors on a symmetric ring around `base`; their mean is parallel to base."""
    basis, _ = np.linalg.qr(np.column_stack([base, np.eye(3)[:, :2]]))
    p, q = basis[:, 1], basis[:, 2]
    angles = 2.0 * np.pi * np.arange(m) / m
    dirs = base[None, :] + spread * (np.cos(angles)[:, None] * p + np.sin(angles)[:, None] * q)
    return dirs / np.linalg.norm(dirs, axis=1, keepdims=True)


def gen_hierarchical(spec: PlantSpec) -> HierarchicalPlant:
    streams = _streams(spec)
    feats = planted_layers(spec)
    n, d, m = spec.n_stimuli, spec.features_per_layer, spec.targets_per_layer
    v1 = np.array(V1_POINT)

    columns, layer_of, coords, labels, rois = [], [], [], [], []
    signal_sd = []
    for layer, (depth, F) in enumerate(zip(spec.depths, feats)):
        w = streams["readout"].standard_normal((d, m)) / np.sqrt(d)
        signal = F @ w
        signal_sd.extend(signal.std(axis=0, ddof=1))
        columns.append(signal + spec.noise_sd * streams["noise"].standard_normal((n, m)))
        base = streams["geometry"].standard_normal(3)
        base /= np.linalg.norm(base)
        radius = spec.v1_offset_mm + spec.hierarchy_slope * depth
        radius = radius + spec.distance_jitter_mm * streams["geometry"].standard_normal(m)
        xyz = v1 + np.asarray(radius).reshape(-1, 1) * _ring_directions(base, m, spec.cap_spread)
        members = tuple(range(layer * m, (layer + 1) * m))
        rois.append(ROI(spec.roi_name(layer), members, xyz.mean(axis=0)))
        coords.append(xyz)
        layer_of.extend([layer] * m)
        labels.extend([spec.roi_name(layer)] * m)

    geometry = VoxelGeometry(np.vstack(coords), tuple(labels), v1)
    responses = BrainResponses(np.hstack(columns), "fmri", stimulus_ids(spec), geometry)
    snr = float(np.mean(signal_sd) / spec.noise_sd) if spec.noise_sd > 0 else None
    truth = {
        "depths": list(spec.depths),
        "target_layer": layer_of,
        "target_depth": [spec.depths[l] for l in layer_of],
        "roi_depth": {spec.roi_name(l): spec.depths[l] for l in range(spec.n_layers)},
        "v1_reference": v1.tolist(),
        "snr": snr,
    }
    logger.info(f"Planted {responses.n_targets} fMRI targets over {spec.n_layers} layers (snr={snr})")
    return HierarchicalPlant(_activations(spec, feats), responses, geometry, ROITable(tuple(rois)), truth)


# ============= MEG-like temporal plant =============

@dataclass(frozen=True, eq=False)
class TemporalPlant:
    activations: LayerActivations
    meg: MegResponse
    truth: dict


def planted_peaks(spec: PlantSpec) -> np.ndarray:
    """Peak time per layer, snapped onto the sampling grid."""
    times = spec.times
    wanted = spec.peak_offset + spec.temporal_peaks * np.asarray(spec.depths)
    idx = np.clip(np.rint((wanted - spec.t_start) / spec.t_step).astype(int), 0, spec.n_times - 1)
    return times[idx]


def gen_temporal(spec: PlantSpec) -> TemporalPlant:
    """Each (channel, time) target reads the layer whose peak is nearest in time,
    with a Gaussian gain around that peak over a channel-wide background."""
    streams = _streams(spec)
    feats = planted_layers(spec)
    n, d, c = spec.n_stimuli, spec.features_per_layer, spec.n_channels
    times = spec.times
    peaks = planted_peaks(spec)
    nearest = np.argmin(np.abs(times[:, None] - peaks[None, :]), axis=1)
    gain = np.exp(-((times - peaks[nearest]) ** 2) / (2.0 * spec.temporal_width**2))

    weights = streams["temporal"].standard_normal((spec.n_layers, d, c)) / np.sqrt(d)
    readouts = np.stack([feats[l] @ weights[l] for l in range(spec.n_layers)])  # layers x n x c
    background = streams["temporal"].standard_normal((n, c))
    data = np.empty((n, c, spec.n_times))
    for t in range(spec.n_times):
        data[:, :, t] = gain[t] * readouts[nearest[t]] + spec.background_sd * background
    data += spec.noise_sd * streams["noise"].standard_normal(data.shape)

    truth = {
        "depths": list(spec.depths),
        "peak_times": peaks.tolist(),
        "time_layer": nearest.tolist(),
        "t_step": spec.t_step,
    }
    return TemporalPlant(_activations(spec, feats), MegResponse(data, times, stimulus_ids(spec)), truth)


# ============= Training trajectory =============

@dataclass(frozen=True, eq=False)
class TrajectoryPlant:
    checkpoints: list[LayerActivations]
    half_times: dict[str, float]
    truth: dict


def learning_fraction(step: float, rate: float) -> float:
    """Saturating progress in [0, 1]: (1 - e^-rs) / (1 - e^-r); linear when r = 0."""
    if step <= 0:
        return 0.0
    if np.isinf(rate):
        return 1.0
    if rate == 0:
        return float(step)
    return float(-np.expm1(-rate * step) / -np.expm1(-rate))


def planted_half_time(rate: float) -> float:
    """Step where a readout of the mixed features reaches half its final correlation.

    Mixing (1-a) noise with a features gives r(a) = a / sqrt(a^2 + (1-a)^2),
    which equals 1/2 at a = 1 / (1 + sqrt(3)).
    """
    a = 1.0 / (1.0 + np.sqrt(3.0))
    if np.isinf(rate):
        return 0.0
    if rate == 0:
        return a
    return float(-np.log1p(-a * -np.expm1(-rate)) / rate)


def _recorded_half_time(rate: float, steps) -> float:
    """Planted half time; a layer learned instantly is first seen at the first checkpoint past 0."""
    if np.isinf(rate):
        return next(s for s in steps if s > 0)
    return planted_half_time(rate)


def gen_trajectory(spec: PlantSpec, checkpoints=None) -> TrajectoryPlant:
    steps = tuple(float(s) for s in (checkpoints or spec.checkpoints))
    rng = _streams(spec)["trajectory"]
    feats = planted_layers(spec)
    start = [_zscore(rng.standard_normal(F.shape)) for F in feats]
    out = []
    for s in steps:
        mats = []
        for F, R, rate in zip(feats, start, spec.layer_rates):
            a = learning_fraction(s, rate)
            mats.append((1.0 - a) * R + a * F)
        out.append(_activations(spec, mats, s))
    half = {spec.roi_name(l): _recorded_half_time(r, steps) for l, r in enumerate(spec.layer_rates)}
    truth = {"checkpoints": list(steps), "rates": list(spec.layer_rates), "half_times": half}
    return TrajectoryPlant(out, half, truth)


# ============= Cortical property maps =============

def plant_properties(spec: PlantSpec, half_times: dict[str, float]) -> tuple[dict[str, dict[str, float]], dict[str, float]]:
    """Per-ROI property values linear in the planted half time plus noise.

    Returns (values per ROI, planted Pearson r per property).
    """
    rng = _streams(spec)["properties"]
    names = sorted(half_times)
    h = np.array([half_times[n] for n in names])
    values = {n: {} for n in names}
    planted_r = {}
    for col in PROPERTY_COLUMNS:
        intercept, slope = PROPERTY_PLANTS[col]
        v = intercept + slope * h + spec.property_noise_sd * rng.standard_normal(h.size)
        for name, value in zip(names, v):
            values[name][col] = float(value)
        planted_r[col] = pearson(h, v) if h.size >= 3 and np.ptp(h) > 0 else None
    return values, planted_r


# ============= On-disk dataset =============

def _rel(path: Path, root: Path) -> str:
    return path.relative_to(root).as_posix()


def write_dataset(spec: PlantSpec, out_dir) -> dict:
    """Write fMRI and MEG manifests plus matrix files and truth.json under out_dir."""
    root = Path(out_dir)
    root.mkdir(parents=True, exist_ok=True)
    hier = gen_hierarchical(spec)
    temporal = gen_temporal(spec)
    traj = gen_trajectory(spec)
    props, planted_r = plant_properties(spec, traj.half_times)
    ids = stimulus_ids(spec)
    (root / "stimuli.json").write_text(json.dumps(list(ids)) + "\n", encoding="utf-8")

    act_entries = []
    for ci, acts in enumerate(traj.checkpoints):
        for li, (depth, mat) in enumerate(zip(acts.depths, acts.matrices)):
            path = root / "acts" / f"c{ci:02d}_l{li:02d}.nmb"
            write_matrix(path, mat)
            act_entries.append({"depth": depth, "checkpoint": acts.checkpoint_step, "path": "../" + _rel(path, root)})

    # responses are stored in a shuffled stimulus order with their own id list
    order = _streams(spec)["noise"].permutation(spec.n_stimuli)
    fmri_dir = root / "fmri"
    write_matrix(fmri_dir / "responses.nmb", hier.responses.matrix[order])
    geometry = {
        "coordinates": hier.geometry.coordinates.tolist(),
        "roi_labels": list(hier.geometry.roi_labels),
        "v1_reference": hier.geometry.v1_reference.tolist(),
    }
    (fmri_dir / "geometry.json").write_text(json.dumps(geometry, sort_keys=True) + "\n", encoding="utf-8")
    rois = ROITable(tuple(ROI(r.name, r.members, r.centroid, props.get(r.name, {})) for r in hier.rois))
    write_roi_table(fmri_dir / "rois.csv", rois)
    write_manifest(fmri_dir / "manifest.json", {
        "schema": 1,
        "model_tag": "synth",
        "stimulus_ids": "../stimuli.json",
        "activations": act_entries,
        "responses": {
            "modality": "fmri",
            "path": "responses.nmb",
            "metadata": "geometry.json",
            "stimulus_ids": [ids[i] for i in order],
        },
        "roi_table": "rois.csv",
    })

    meg_dir = root / "meg"
    meg_entries = []
    for li, mat in enumerate(temporal.activations.matrices):
        path = meg_dir / f"layer_{li:02d}.nmb"
        write_matrix(path, mat)
        meg_entries.append({"depth": temporal.activations.depths[li], "checkpoint": 1.0, "path": _rel(path, meg_dir)})
    write_matrix(meg_dir / "responses.nmb", temporal.meg.data)
    (meg_dir / "times.json").write_text(json.dumps({"times": temporal.meg.times.tolist()}) + "\n", encoding="utf-8")
    write_manifest(meg_dir / "manifest.json", {
        "schema": 1,
        "model_tag": "synth",
        "stimulus_ids": "../stimuli.json",
        "activations": meg_entries,
        "responses": {"modality": "meg", "path": "responses.nmb", "metadata": "times.json"},
    })

    truth = {
        "spec": spec.as_dict(),
        "hierarchical": hier.truth,
        "temporal": temporal.truth,
        "trajectory": traj.truth,
        "planted_property_r": planted_r,
    }
    (root / "truth.json").write_text(json.dumps(truth, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    logger.info(f"Wrote synthetic dataset to {root}")
    return {"fmri": fmri_dir / "manifest.json", "meg": meg_dir / "manifest.json", "truth": root / "truth.json"}
