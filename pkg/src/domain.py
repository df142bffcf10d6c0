"""Shared data types: activations, brain responses, geometry, ROIs, trajectories."""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from src.errors import DataError, DegenerateInputError

PROPERTY_COLUMNS = ("expansion", "thickness", "timescale", "myelin")


def _as_ids(ids) -> tuple[str, ...] | None:
    if ids is None:
        return None
    return tuple(str(s) for s in ids)


@dataclass(frozen=True, eq=False)
class LayerActivations:
    """Per-layer stimulus x feature matrices of one model checkpoint.

    Depths are normalized positions in the network: 0 is the first layer and
    1 the last. All layers share the same stimulus rows.
    """

    depths: tuple[float, ...]
    matrices: tuple[np.ndarray, ...]
    stimulus_ids: tuple[str, ...] | None = None
    model_tag: str = ""
    checkpoint_step: float = 1.0

    def __post_init__(self):
        depths = tuple(float(d) for d in self.depths)
        matrices = tuple(np.asarray(m, dtype=np.float64) for m in self.matrices)
        object.__setattr__(self, "depths", depths)
        object.__setattr__(self, "matrices", matrices)
        object.__setattr__(self, "stimulus_ids", _as_ids(self.stimulus_ids))

        if not depths or len(depths) != len(matrices):
            raise DataError(f"need one matrix per depth, got {len(depths)} depths and {len(matrices)} matrices")
        if any(b <= a for a, b in zip(depths, depths[1:])):
            raise DataError(f"layer depths must be strictly increasing: {depths}")
        if len(depths) > 1 and (depths[0] != 0.0 or depths[-1] != 1.0):
            raise DataError(f"first layer must have depth 0 and last depth 1, got {depths[0]} and {depths[-1]}")
        if len(depths) == 1 and not 0.0 <= depths[0] <= 1.0:
            raise DataError(f"layer depth {depths[0]} outside [0, 1]")
        rows = {m.shape[0] for m in matrices}
        if any(m.ndim != 2 for m in matrices) or len(rows) != 1:
            raise DataError("all layers must be 2-D matrices sharing the stimulus count")
        if self.stimulus_ids is not None and len(self.stimulus_ids) != self.n_stimuli:
            raise DataError(f"{len(self.stimulus_ids)} stimulus ids for {self.n_stimuli} rows")

    @property
    def n_layers(self) -> int:
        return len(self.depths)

    @property
    def n_stimuli(self) -> int:
        return self.matrices[0].shape[0]

    def subsample(self, n_layers: int) -> LayerActivations:
        """Keep `n_layers` evenly spaced layers, always including the first and last."""
        if n_layers >= self.n_layers:
            return self
        if n_layers < 2:
            raise DataError("layer subsampling keeps at least the first and last layer")
        idx = np.unique(np.round(np.linspace(0, self.n_layers - 1, n_layers)).astype(int))
        return replace(
            self,
            depths=tuple(self.depths[i] for i in idx),
            matrices=tuple(self.matrices[i] for i in idx),
        )


@dataclass(frozen=True, eq=False)
class VoxelGeometry:
    """Per-target MNI coordinates (mm) with an optional V1 reference point."""

    coordinates: np.ndarray
    roi_labels: tuple[str, ...] | None = None
    v1_reference: np.ndarray | None = None

    def __post_init__(self):
        coords = np.asarray(self.coordinates, dtype=np.float64)
        if coords.ndim != 2 or coords.shape[1] != 3:
            raise DataError(f"coordinates must be (targets, 3), got {coords.shape}")
        object.__setattr__(self, "coordinates", coords)
        if self.roi_labels is not None:
            labels = tuple(str(s) for s in self.roi_labels)
            if len(labels) != coords.shape[0]:
                raise DataError(f"{len(labels)} ROI labels for {coords.shape[0]} targets")
            object.__setattr__(self, "roi_labels", labels)
        if self.v1_reference is not None:
            ref = np.asarray(self.v1_reference, dtype=np.float64).reshape(3)
            object.__setattr__(self, "v1_reference", ref)

    @property
    def n_targets(self) -> int:
        return self.coordinates.shape[0]

    def with_reference(self, reference) -> VoxelGeometry:
        return replace(self, v1_reference=np.asarray(reference, dtype=np.float64))


@dataclass(frozen=True, eq=False)
class BrainResponses:
    """Stimulus x target matrix. fMRI targets are voxels."""

    matrix: np.ndarray
    modality: str = "fmri"
    stimulus_ids: tuple[str, ...] | None = None
    geometry: VoxelGeometry | None = None

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=np.float64)
        if m.ndim != 2:
            raise DataError(f"responses must be 2-D, got shape {m.shape}")
        object.__setattr__(self, "matrix", m)
        object.__setattr__(self, "stimulus_ids", _as_ids(self.stimulus_ids))
        if self.stimulus_ids is not None and len(self.stimulus_ids) != m.shape[0]:
            raise DataError(f"{len(self.stimulus_ids)} stimulus ids for {m.shape[0]} rows")
        if self.geometry is not None and self.geometry.n_targets != m.shape[1]:
            raise DataError(f"geometry has {self.geometry.n_targets} targets, responses {m.shape[1]}")

    @property
    def n_targets(self) -> int:
        return self.matrix.shape[1]


@dataclass(frozen=True, eq=False)
class MegResponse:
    """Epoched stimuli x channels x times tensor; times in seconds from onset."""

    data: np.ndarray
    times: np.ndarray
    stimulus_ids: tuple[str, ...] | None = None
    constant_cells: np.ndarray | None = None

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        times = np.asarray(self.times, dtype=np.float64)
        if data.ndim != 3:
            raise DataError(f"MEG data must be (stimuli, channels, times), got {data.shape}")
        if times.shape != (data.shape[2],):
            raise DataError(f"{times.size} time samples for a time axis of {data.shape[2]}")
        if times.size > 1:
            step = np.diff(times)
            if np.any(step <= 0) or not np.allclose(step, step[0], rtol=1e-6, atol=1e-9):
                raise DataError("MEG time axis must be ascending with a uniform step")
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "stimulus_ids", _as_ids(self.stimulus_ids))
        if self.stimulus_ids is not None and len(self.stimulus_ids) != data.shape[0]:
            raise DataError(f"{len(self.stimulus_ids)} stimulus ids for {data.shape[0]} epochs")

    @property
    def n_channels(self) -> int:
        return self.data.shape[1]

    @property
    def n_times(self) -> int:
        return self.data.shape[2]

    def targets(self) -> np.ndarray:
        """Flatten to stimuli x (channel, time) targets, channel-major."""
        return self.data.reshape(self.data.shape[0], -1)


@dataclass(frozen=True, eq=False)
class ROI:
    name: str
    members: tuple[int, ...]
    centroid: np.ndarray
    properties: dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "members", tuple(int(i) for i in self.members))
        object.__setattr__(self, "centroid", np.asarray(self.centroid, dtype=np.float64).reshape(3))


@dataclass(frozen=True, eq=False)
class ROITable:
    """Named, disjoint groups of targets."""

    rois: tuple[ROI, ...]

    def __post_init__(self):
        names = [r.name for r in self.rois]
        if len(set(names)) != len(names):
            raise DataError(f"duplicate ROI names: {sorted(n for n in set(names) if names.count(n) > 1)}")
        seen: dict[int, str] = {}
        for roi in self.rois:
            for i in roi.members:
                if i in seen:
                    raise DataError(f"target {i} belongs to both {seen[i]} and {roi.name}")
                seen[i] = roi.name

    @property
    def names(self) -> list[str]:
        return [r.name for r in self.rois]

    def __len__(self) -> int:
        return len(self.rois)

    def __iter__(self):
        return iter(self.rois)

    def property_values(self, column: str) -> dict[str, float]:
        return {r.name: r.properties.get(column, float("nan")) for r in self.rois}

    def property_columns(self) -> list[str]:
        cols = []
        for roi in self.rois:
            for key in roi.properties:
                if key not in cols:
                    cols.append(key)
        return cols


@dataclass(frozen=True, eq=False)
class TemporalProfile:
    """Per-layer score curves over time and the derived T_max per layer."""

    times: np.ndarray
    depths: np.ndarray
    curves: np.ndarray
    t_max: np.ndarray
    threshold: float = 0.95


@dataclass(frozen=True, eq=False)
class ScoreTrajectory:
    """Metric values over relative training steps."""

    steps: np.ndarray
    values: np.ndarray
    label: str = ""

    def __post_init__(self):
        steps = np.asarray(self.steps, dtype=np.float64)
        values = np.asarray(self.values, dtype=np.float64)
        if steps.shape != values.shape or steps.ndim != 1:
            raise DegenerateInputError("trajectory steps and values must be 1-D and equally long")
        if np.any(np.diff(steps) <= 0):
            raise DegenerateInputError(f"trajectory steps must be strictly increasing: {steps.tolist()}")
        if steps.size and (steps[0] < 0 or steps[-1] > 1):
            raise DegenerateInputError("trajectory steps must be relative training fractions in [0, 1]")
        object.__setattr__(self, "steps", steps)
        object.__setattr__(self, "values", values)

    def scaled(self, factor: float) -> ScoreTrajectory:
        return replace(self, values=self.values * factor)
