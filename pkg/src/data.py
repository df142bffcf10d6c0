"""
Dataset manifests, matrix files, stimulus alignment, ROI tables and the
in-scope preprocessing (MEG z-scoring, time windows, distance from V1).

Matrix file layout (little-endian):
    b"NMB1" | uint8 ndim | ndim x uint64 dims | float32 payload, row-major
Values are widened to float64 on read.
"""
import json
import logging
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import jsonschema
import numpy as np
import pandas as pd
from joblib import Parallel, delayed

from src.domain import (
    PROPERTY_COLUMNS,
    ROI,
    BrainResponses,
    LayerActivations,
    MegResponse,
    ROITable,
    VoxelGeometry,
)
from src.errors import (
    BadMagicError,
    DataError,
    DegenerateInputError,
    DimOverflowError,
    ManifestError,
    SizeMismatchError,
    StimulusAlignmentError,
    TruncatedMatrixError,
)
from src.numeric import ZSCORE, center_standardize
from src.stats import fdr_bh, t_test_columns

logger = logging.getLogger(__name__)

MAGIC = b"NMB1"
MAX_NDIM = 8
MAX_ELEMENTS = 2**40
SCHEMA_VERSION = 1
SCHEMA_PATH = Path(__file__).resolve().parent.parent / "docs" / "manifest.schema.json"
ROI_BASE_COLUMNS = ["roi", "target_indices", "centroid_x", "centroid_y", "centroid_z"]
DEFAULT_TIME_WINDOWS = ((0.08, 0.13), (0.13, 0.18), (0.50, 0.55))
TEST_THEN_AVERAGE = "test_then_average"
AVERAGE_THEN_TEST = "average_then_test"
_EPS = 1e-9


# ============= Matrix files =============

def write_matrix(path, array) -> None:
    arr = np.asarray(array)
    if arr.ndim == 0 or arr.ndim > MAX_NDIM:
        raise DimOverflowError(f"cannot store a {arr.ndim}-D array", path)
    header = MAGIC + struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}Q", *arr.shape)
    payload = np.ascontiguousarray(arr, dtype="<f4").tobytes(order="C")
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_bytes(header + payload)


def read_matrix(path) -> np.ndarray:
    """Read a matrix/tensor file; every malformed case has its own error code."""
    raw = Path(path).read_bytes()
    if raw[: len(MAGIC)] != MAGIC[: min(len(raw), len(MAGIC))]:
        raise BadMagicError(f"bad magic {raw[:4]!r}", path)
    if len(raw) < len(MAGIC) + 1:
        raise TruncatedMatrixError("file ends inside the header", path)
    ndim = raw[len(MAGIC)]
    if ndim == 0:
        raise SizeMismatchError("header declares zero dimensions", path)
    if ndim > MAX_NDIM:
        raise DimOverflowError(f"header declares {ndim} dimensions (max {MAX_NDIM})", path)
    header_len = len(MAGIC) + 1 + 8 * ndim
    if len(raw) < header_len:
        raise TruncatedMatrixError("file ends inside the header", path)
    dims = struct.unpack(f"<{ndim}Q", raw[len(MAGIC) + 1 : header_len])
    count = 1
    for d in dims:
        count *= d
    if count > MAX_ELEMENTS:
        raise DimOverflowError(f"dims {dims} exceed {MAX_ELEMENTS} elements", path)
    payload = len(raw) - header_len
    if payload % 4:
        raise TruncatedMatrixError(f"payload of {payload} bytes ends inside a float", path)
    if payload // 4 != count:
        raise SizeMismatchError(f"header dims {dims} need {count} floats, file has {payload // 4}", path)
    arr = np.frombuffer(raw, dtype="<f4", count=count, offset=header_len)
    return arr.astype(np.float64).reshape(dims)


# ============= Manifest =============

@dataclass(frozen=True)
class ActivationEntry:
    depth: float
    checkpoint: float
    path: Path
    stimulus_ids: tuple[str, ...] | None = None


@dataclass(frozen=True)
class ResponseEntry:
    modality: str
    path: Path
    metadata: Path | None
    stimulus_ids: tuple[str, ...] | None = None


@dataclass(frozen=True)
class Manifest:
    path: Path
    stimulus_ids: tuple[str, ...]
    activations: tuple[ActivationEntry, ...]
    responses: ResponseEntry
    roi_table: Path | None = None
    property_maps: tuple[Path, ...] = ()
    model_tag: str = ""

    @property
    def checkpoints(self) -> list[float]:
        return sorted({e.checkpoint for e in self.activations})


def _load_schema() -> dict:
    with SCHEMA_PATH.open("r", encoding="utf-8") as f:
        return json.load(f)


def _resolve_ids(value, root: Path, label: str) -> tuple[str, ...] | None:
    if value is None:
        return None
    if isinstance(value, str):
        path = root / value
        if not path.exists():
            raise ManifestError(f"{label}: stimulus id file not found: {path}")
        with path.open("r", encoding="utf-8") as f:
            value = json.load(f)
    ids = tuple(str(v) for v in value)
    dupes = sorted({i for i in ids if ids.count(i) > 1}) if len(set(ids)) != len(ids) else []
    if dupes:
        raise StimulusAlignmentError(f"{label}: duplicate stimulus ids {dupes[:10]}")
    return ids


def load_manifest(path) -> Manifest:
    """Parse and schema-check a manifest; paths resolve relative to its directory."""
    path = Path(path)
    if not path.exists():
        raise ManifestError(f"manifest not found: {path}")
    try:
        with path.open("r", encoding="utf-8") as f:
            doc = json.load(f)
    except json.JSONDecodeError as e:
        raise ManifestError(f"invalid JSON: {e}", path) from e
    try:
        jsonschema.validate(instance=doc, schema=_load_schema())
    except jsonschema.ValidationError as e:
        where = "/".join(str(p) for p in e.absolute_path) or "(root)"
        raise ManifestError(f"{where}: {e.message}", path) from e

    root = path.parent
    stimulus_ids = _resolve_ids(doc["stimulus_ids"], root, "stimulus_ids")
    entries = []
    seen = set()
    for i, raw in enumerate(doc["activations"]):
        key = (float(raw["depth"]), float(raw.get("checkpoint", 1.0)))
        if key in seen:
            raise ManifestError(f"activations/{i}: duplicate (depth, checkpoint) {key}", path)
        seen.add(key)
        entries.append(ActivationEntry(key[0], key[1], root / raw["path"], _resolve_ids(raw.get("stimulus_ids"), root, f"activations/{i}")))
    resp = doc["responses"]
    responses = ResponseEntry(
        resp["modality"],
        root / resp["path"],
        root / resp["metadata"] if resp.get("metadata") else None,
        _resolve_ids(resp.get("stimulus_ids"), root, "responses"),
    )
    return Manifest(
        path=path,
        stimulus_ids=stimulus_ids,
        activations=tuple(entries),
        responses=responses,
        roi_table=root / doc["roi_table"] if doc.get("roi_table") else None,
        property_maps=tuple(root / p for p in doc.get("property_maps", [])),
        model_tag=doc.get("model_tag", ""),
    )


def write_manifest(path, doc: dict) -> None:
    jsonschema.validate(instance=doc, schema=_load_schema())
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


# ============= Alignment =============

def align_rows(array: np.ndarray, row_ids, target_ids, label: str = "matrix") -> np.ndarray:
    """Reorder rows (axis 0) from `row_ids` order into `target_ids` order."""
    target_ids = tuple(target_ids)
    if row_ids is None:
        if array.shape[0] != len(target_ids):
            raise StimulusAlignmentError(f"{label}: {array.shape[0]} rows for {len(target_ids)} stimuli and no id list")
        return array
    row_ids = tuple(row_ids)
    if len(set(row_ids)) != len(row_ids):
        raise StimulusAlignmentError(f"{label}: duplicate stimulus ids")
    if len(row_ids) != array.shape[0]:
        raise StimulusAlignmentError(f"{label}: {len(row_ids)} ids for {array.shape[0]} rows")
    pos = {s: i for i, s in enumerate(row_ids)}
    missing = [s for s in target_ids if s not in pos]
    if missing and len(missing) == len(target_ids):
        raise StimulusAlignmentError(
            f"{label}: stimulus sets are disjoint; manifest ids {list(target_ids)[:10]}, file ids {list(row_ids)[:10]}"
        )
    if missing:
        raise StimulusAlignmentError(f"{label}: missing stimuli {missing[:20]}")
    if len(row_ids) != len(target_ids):
        extra = sorted(set(row_ids) - set(target_ids))
        raise StimulusAlignmentError(f"{label}: count mismatch, unexpected stimuli {extra[:20]}")
    return array[[pos[s] for s in target_ids]]


@dataclass(frozen=True, eq=False)
class Dataset:
    manifest: Manifest
    stimulus_ids: tuple[str, ...]
    checkpoints: dict[float, LayerActivations]
    fmri: BrainResponses | None = None
    meg: MegResponse | None = None
    rois: ROITable | None = None
    warnings: list[str] = field(default_factory=list)

    @property
    def modality(self) -> str:
        return self.manifest.responses.modality

    @property
    def final(self) -> LayerActivations:
        return self.checkpoints[max(self.checkpoints)]


def _read_json(path: Path) -> dict:
    with path.open("r", encoding="utf-8") as f:
        return json.load(f)


def align_stimuli(manifest: Manifest, n_jobs: int = 1) -> Dataset:
    """Load every referenced file and reorder all rows to the manifest's stimulus order."""
    ids = manifest.stimulus_ids
    missing_files = [str(e.path) for e in manifest.activations if not e.path.exists()]
    if not manifest.responses.path.exists():
        missing_files.append(str(manifest.responses.path))
    if missing_files:
        raise ManifestError(f"referenced files not found: {missing_files}", manifest.path)

    def load(entry: ActivationEntry) -> np.ndarray:
        m = read_matrix(entry.path)
        if m.ndim != 2:
            raise DataError(f"activation matrix must be 2-D, got {m.shape}", entry.path)
        return align_rows(m, entry.stimulus_ids, ids, str(entry.path))

    matrices = Parallel(n_jobs=n_jobs, backend="threading")(delayed(load)(e) for e in manifest.activations)

    checkpoints: dict[float, LayerActivations] = {}
    for step in manifest.checkpoints:
        pairs = sorted((e.depth, m) for e, m in zip(manifest.activations, matrices) if e.checkpoint == step)
        checkpoints[step] = LayerActivations(
            depths=tuple(d for d, _ in pairs),
            matrices=tuple(m for _, m in pairs),
            stimulus_ids=ids,
            model_tag=manifest.model_tag,
            checkpoint_step=step,
        )

    resp = manifest.responses
    raw = align_rows(read_matrix(resp.path), resp.stimulus_ids, ids, str(resp.path))
    meta = _read_json(resp.metadata) if resp.metadata else {}
    fmri = meg = None
    if resp.modality == "fmri":
        geometry = None
        if "coordinates" in meta:
            geometry = VoxelGeometry(meta["coordinates"], meta.get("roi_labels"), meta.get("v1_reference"))
        fmri = BrainResponses(raw, "fmri", ids, geometry)
    else:
        if raw.ndim != 3:
            raise DataError(f"MEG responses must be (stimuli, channels, times), got {raw.shape}", resp.path)
        if "times" not in meta:
            raise ManifestError("MEG metadata needs a 'times' list", resp.metadata)
        meg = MegResponse(raw, meta["times"], ids)

    rois = None
    if manifest.roi_table is not None:
        rois = read_roi_table(manifest.roi_table, fmri.geometry if fmri is not None else None)
        for prop_path in manifest.property_maps:
            rois = merge_property_map(rois, prop_path)
    logger.info(f"Loaded {len(manifest.activations)} activation files over {len(checkpoints)} checkpoint(s), {len(ids)} stimuli")
    return Dataset(manifest, ids, checkpoints, fmri, meg, rois)


def load_dataset(path, n_jobs: int = 1) -> Dataset:
    return align_stimuli(load_manifest(path), n_jobs=n_jobs)


def validate_manifest(path) -> list[str]:
    """Schema + file + alignment check. Returns a list of human-readable notes."""
    dataset = load_dataset(path)
    notes = [
        f"schema {SCHEMA_VERSION} ok",
        f"{len(dataset.stimulus_ids)} stimuli, {len(dataset.checkpoints)} checkpoint(s), "
        f"{dataset.final.n_layers} layer(s), modality {dataset.modality}",
    ]
    if dataset.rois is not None:
        notes.append(f"{len(dataset.rois)} ROI(s)")
    return notes


# ============= MEG preprocessing =============

def zscore_meg(resp: MegResponse) -> MegResponse:
    """z-score across stimuli for every (channel, time) cell independently."""
    if resp.data.shape[0] < 2:
        raise DegenerateInputError(f"z-scoring needs at least 2 stimuli, got {resp.data.shape[0]}")
    std = center_standardize(resp.targets(), ZSCORE)
    constant = std.constant.reshape(resp.n_channels, resp.n_times)
    if constant.any():
        logger.warning(f"{int(constant.sum())} constant MEG cell(s) left centered")
    return replace(resp, data=std.matrix.reshape(resp.data.shape), constant_cells=constant)


@dataclass(frozen=True, eq=False)
class TimeWindow:
    start: float
    end: float
    time_indices: np.ndarray
    target_indices: np.ndarray

    @property
    def label(self) -> str:
        return f"{self.start:.3f}-{self.end:.3f}s"

    @property
    def center(self) -> float:
        return 0.5 * (self.start + self.end)


def window_indices(times, start: float, end: float) -> np.ndarray:
    """Indices of the samples of a uniform time axis inside [start, end)."""
    times = np.asarray(times, dtype=np.float64)
    step = float(times[1] - times[0]) if times.size > 1 else 0.0
    start, end = float(start), float(end)
    if end <= start:
        raise DataError(f"time window [{start}, {end}) is empty")
    if start < times[0] - _EPS or end > times[-1] + step + _EPS:
        raise DataError(f"time window [{start}, {end}) outside the axis [{times[0]}, {times[-1] + step})")
    idx = np.flatnonzero((times >= start - _EPS) & (times < end - _EPS))
    if idx.size == 0:
        raise DataError(f"time window [{start}, {end}) contains no samples")
    return idx


def select_time_windows(resp: MegResponse, windows) -> list[TimeWindow]:
    """Targets (channel-major flattened) whose sample times fall in [start, end)."""
    out = []
    for start, end in windows:
        idx = window_indices(resp.times, start, end)
        targets = (np.arange(resp.n_channels)[:, None] * resp.n_times + idx[None, :]).ravel()
        out.append(TimeWindow(float(start), float(end), idx, np.sort(targets)))
    return out


# ============= Geometry =============

def v1_centroid(geom: VoxelGeometry, label: str = "V1") -> np.ndarray:
    if geom.roi_labels is None:
        raise DataError("geometry has no ROI labels to locate V1")
    members = [i for i, name in enumerate(geom.roi_labels) if name == label]
    if not members:
        raise DataError(f"no targets labelled {label!r}")
    return geom.coordinates[members].mean(axis=0)


def distance_from_v1(geom: VoxelGeometry) -> np.ndarray:
    """Euclidean distance (mm) of every target from the V1 reference point."""
    if geom.v1_reference is None:
        raise DataError("v1_reference is not set")
    if not np.all(np.isfinite(geom.coordinates)):
        bad = np.flatnonzero(~np.all(np.isfinite(geom.coordinates), axis=1))
        raise DataError(f"missing coordinates for targets {bad[:20].tolist()}")
    return np.linalg.norm(geom.coordinates - geom.v1_reference, axis=1)


def roi_distances(rois: ROITable, reference) -> dict[str, float]:
    ref = np.asarray(reference, dtype=np.float64)
    return {r.name: float(np.linalg.norm(r.centroid - ref)) for r in rois}


# ============= ROI tables =============

def _parse_members(text) -> tuple[int, ...]:
    if pd.isna(text):
        return ()
    if isinstance(text, (int, np.integer)):
        return (int(text),)
    return tuple(int(v) for v in str(text).split(";") if v.strip())


def read_roi_table(path, geometry: VoxelGeometry | None = None) -> ROITable:
    path = Path(path)
    if not path.exists():
        raise DataError("ROI table not found", path)
    frame = pd.read_csv(path, dtype={"roi": str, "target_indices": str})
    missing = [c for c in ROI_BASE_COLUMNS if c not in frame.columns]
    if missing:
        raise DataError(f"ROI table lacks columns {missing}", path)
    extra = [c for c in frame.columns if c not in ROI_BASE_COLUMNS]
    for c in extra:
        frame[c] = pd.to_numeric(frame[c], errors="coerce")
    rois = []
    for rec in frame.to_dict("records"):
        members = _parse_members(rec["target_indices"])
        centroid = np.array([rec["centroid_x"], rec["centroid_y"], rec["centroid_z"]], dtype=np.float64)
        if geometry is not None and members:
            if max(members) >= geometry.n_targets:
                raise DataError(f"ROI {rec['roi']} references target {max(members)} beyond {geometry.n_targets}", path)
            expected = geometry.coordinates[list(members)].mean(axis=0)
            if not np.allclose(centroid, expected, atol=1e-4):
                raise DataError(f"ROI {rec['roi']} centroid {centroid.tolist()} != member mean {expected.tolist()}", path)
        props = {c: float(rec[c]) for c in extra}
        rois.append(ROI(rec["roi"], members, centroid, props))
    return ROITable(tuple(rois))


def write_roi_table(path, rois: ROITable) -> None:
    columns = [c for c in PROPERTY_COLUMNS if c in rois.property_columns()]
    columns += [c for c in rois.property_columns() if c not in columns]
    records = []
    for roi in rois:
        rec = {
            "roi": roi.name,
            "target_indices": ";".join(str(i) for i in roi.members),
            "centroid_x": roi.centroid[0],
            "centroid_y": roi.centroid[1],
            "centroid_z": roi.centroid[2],
        }
        rec.update({c: roi.properties.get(c, np.nan) for c in columns})
        records.append(rec)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    pd.DataFrame(records, columns=ROI_BASE_COLUMNS + columns).to_csv(path, index=False, lineterminator="\n")


def merge_property_map(rois: ROITable, path) -> ROITable:
    """Attach property columns from a `roi,<property>...` CSV (joined on ROI name)."""
    path = Path(path)
    if not path.exists():
        raise DataError("property map not found", path)
    frame = pd.read_csv(path, dtype={"roi": str})
    if "roi" not in frame.columns:
        raise DataError("property map lacks a 'roi' column", path)
    values = frame.set_index("roi")
    merged = []
    for roi in rois:
        props = dict(roi.properties)
        if roi.name in values.index:
            for col in values.columns:
                v = values.at[roi.name, col]
                if pd.notna(v):
                    props[col] = float(v)
        merged.append(replace(roi, properties=props))
    return ROITable(tuple(merged))


# ============= ROI selection =============

@dataclass(frozen=True, eq=False)
class RoiSelection:
    included: tuple[str, ...]
    p_values: dict[str, float]
    order: str
    alpha: float


def select_rois(per_fold_R, rois: ROITable, alpha: float = 0.01, order: str = TEST_THEN_AVERAGE) -> RoiSelection:
    """Keep ROIs reliably encoded above zero.

    test_then_average: t-test every target across folds (or subjects),
    FDR-correct over targets, keep ROIs whose mean adjusted p < alpha.
    average_then_test: average R over each ROI's targets first, then
    t-test and FDR-correct over ROIs.
    Both require a positive mean score.
    """
    samples = np.asarray(per_fold_R, dtype=np.float64)
    if order == TEST_THEN_AVERAGE:
        _, p, _ = t_test_columns(samples)
        adjusted = fdr_bh(p, alpha).adjusted
        mean = np.nanmean(samples, axis=0)
        p_roi = {r.name: float(np.mean(adjusted[list(r.members)])) for r in rois}
        positive = {r.name: bool(np.nanmean(mean[list(r.members)]) > 0) for r in rois}
    elif order == AVERAGE_THEN_TEST:
        roi_scores = np.column_stack([np.nanmean(samples[:, list(r.members)], axis=1) for r in rois])
        _, p, _ = t_test_columns(roi_scores)
        adjusted = fdr_bh(p, alpha).adjusted
        p_roi = {r.name: float(a) for r, a in zip(rois, adjusted)}
        positive = {r.name: bool(m > 0) for r, m in zip(rois, roi_scores.mean(axis=0))}
    else:
        raise DataError(f"unknown ROI selection order {order!r}")
    included = tuple(name for name in rois.names if p_roi[name] < alpha and positive[name])
    return RoiSelection(included, p_roi, order, alpha)


def subsample_layers(acts: LayerActivations, n_layers: int | None) -> LayerActivations:
    if n_layers is None:
        return acts
    out = acts.subsample(n_layers)
    if out is not acts:
        logger.info(f"Subsampled {acts.n_layers} layers to {out.n_layers}")
    return out
