"""Report writing: report.json (reproducible), timing.json (wall clock) and CSV tables."""
import json
import logging
import math
from pathlib import Path

import numpy as np
import pandas as pd

logger = logging.getLogger(__name__)

REPORT_SCHEMA = 1
FLOAT_FORMAT = "%.10g"


def to_jsonable(obj):
    """numpy scalars/arrays to plain Python; NaN and inf become null."""
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        value = float(obj)
        return value if math.isfinite(value) else None
    if isinstance(obj, Path):
        return obj.as_posix()
    return obj


def dumps(doc: dict) -> str:
    return json.dumps(to_jsonable(doc), indent=2, sort_keys=True, allow_nan=False) + "\n"


def write_report(out_dir, command: str, config: dict, results: dict, warnings: list, elapsed: float) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    doc = {
        "schema": REPORT_SCHEMA,
        "command": command,
        "config": config,
        "results": results,
        "warnings": list(warnings),
    }
    path = out / "report.json"
    path.write_text(dumps(doc), encoding="utf-8")
    (out / "timing.json").write_text(json.dumps({"wall_clock_s": round(elapsed, 3)}) + "\n", encoding="utf-8")
    logger.info(f"Wrote {path}")
    return path


def write_csv(path, frame: pd.DataFrame) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    return path


def read_report(path) -> dict:
    with Path(path).open("r", encoding="utf-8") as f:
        return json.load(f)
