"""Run configuration: CLI flags > JSON config file > BRAINALIGN_* environment (.env) > defaults."""
import json
import logging
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from dotenv import load_dotenv

from src.data import AVERAGE_THEN_TEST, DEFAULT_TIME_WINDOWS, TEST_THEN_AVERAGE
from src.errors import ConfigError
from src.ridge import GCV, KFOLD, LambdaGrid

load_dotenv()

logger = logging.getLogger(__name__)

ENV_PREFIX = "BRAINALIGN_"
ENV_FIELDS = {
    "SEED": "seed",
    "FOLDS": "folds",
    "THREADS": "threads",
    "OUT": "out",
    "LOG_LEVEL": "log_level",
    "LAMBDA_MODE": "lambda_mode",
}
# runtime-only settings that must not change results
NOT_ECHOED = ("out", "threads", "log_level", "config")
LOG_LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR")


@dataclass
class RunConfig:
    command: str = ""
    manifests: list[str] = field(default_factory=list)
    out: str = "out"
    lambda_grid: str = "logspace:0:8:10"
    folds: int = 5
    inner_folds: int = 5
    seed: int = 0
    lambda_mode: str = GCV
    per_target_lambda: bool = False
    level: str = "voxel"
    norm_axis: str = "roi"
    tmax_frac: float = 0.95
    fdr_q: float = 0.05
    roi_alpha: float = 0.01
    roi_order: str = TEST_THEN_AVERAGE
    windows: list[list[float]] = field(default_factory=lambda: [list(w) for w in DEFAULT_TIME_WINDOWS])
    n_layers: int | None = None
    v1: list[float] | None = None
    halftimes: str | None = None
    family: str | None = None
    input: str | None = None
    spec: str | None = None
    threads: int = 1
    log_level: str = "INFO"
    config: str | None = None

    @property
    def grid(self) -> LambdaGrid:
        return LambdaGrid.parse(self.lambda_grid)

    def validate(self) -> "RunConfig":
        if self.folds < 2:
            raise ConfigError("folds", f"need at least 2 folds, got {self.folds}")
        if self.inner_folds < 2:
            raise ConfigError("inner_folds", f"need at least 2 inner folds, got {self.inner_folds}")
        if self.threads < 1:
            raise ConfigError("threads", f"must be >= 1, got {self.threads}")
        if self.lambda_mode not in (GCV, KFOLD):
            raise ConfigError("lambda_mode", f"must be gcv or kfold, got {self.lambda_mode!r}")
        if self.level not in ("voxel", "roi"):
            raise ConfigError("level", f"must be voxel or roi, got {self.level!r}")
        if self.norm_axis not in ("roi", "layer"):
            raise ConfigError("norm_axis", f"must be roi or layer, got {self.norm_axis!r}")
        if self.roi_order not in (TEST_THEN_AVERAGE, AVERAGE_THEN_TEST):
            raise ConfigError("roi_order", f"unknown order {self.roi_order!r}")
        if not 0 < self.tmax_frac <= 1:
            raise ConfigError("tmax_frac", f"must lie in (0, 1], got {self.tmax_frac}")
        for name in ("fdr_q", "roi_alpha"):
            if not 0 < getattr(self, name) < 1:
                raise ConfigError(name, f"must lie in (0, 1), got {getattr(self, name)}")
        if self.log_level.upper() not in LOG_LEVELS:
            raise ConfigError("log_level", f"must be one of {LOG_LEVELS}")
        if self.family is not None and self.family not in ("metric", "all"):
            raise ConfigError("family", f"must be metric or all, got {self.family!r}")
        for w in self.windows:
            if len(w) != 2 or not w[0] < w[1]:
                raise ConfigError("windows", f"each window needs start < end, got {w}")
        if self.v1 is not None and len(self.v1) != 3:
            raise ConfigError("v1", "needs three MNI coordinates")
        LambdaGrid.parse(self.lambda_grid)
        return self

    def echo(self) -> dict:
        """Settings that determine results, for embedding in reports."""
        out = asdict(self)
        for key in NOT_ECHOED:
            out.pop(key, None)
        out["lambda_values"] = self.grid.as_array().tolist()
        return out


def _coerce(name: str, value, kind):
    try:
        if kind is int:
            return int(value)
        if kind is float:
            return float(value)
        if kind is bool:
            return value if isinstance(value, bool) else str(value).lower() in ("1", "true", "yes")
    except (TypeError, ValueError) as e:
        raise ConfigError(name, f"cannot read {value!r}: {e}") from e
    return value


_KINDS = {"folds": int, "inner_folds": int, "seed": int, "threads": int, "n_layers": int,
          "tmax_frac": float, "fdr_q": float, "roi_alpha": float, "per_target_lambda": bool}


def from_env(environ=None) -> dict:
    environ = os.environ if environ is None else environ
    values = {}
    for suffix, name in ENV_FIELDS.items():
        raw = environ.get(ENV_PREFIX + suffix)
        if raw not in (None, ""):
            values[name] = _coerce(name, raw, _KINDS.get(name))
    return values


def from_file(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise ConfigError("config", f"config file not found: {path}")
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ConfigError("config", f"invalid JSON in {path}: {e}") from e
    if not isinstance(doc, dict):
        raise ConfigError("config", "config file must hold a JSON object")
    known = {f.name for f in fields(RunConfig)} - {"command", "config"}
    unknown = sorted(set(doc) - known)
    if unknown:
        raise ConfigError(unknown[0], "unknown config key")
    return {k: _coerce(k, v, _KINDS.get(k)) for k, v in doc.items()}


def resolve_config(command: str, flags: dict, environ=None) -> RunConfig:
    """Merge the layers; `flags` holds only options given on the command line."""
    values = from_env(environ)
    config_path = flags.get("config")
    if config_path:
        values.update(from_file(config_path))
    values.update({k: v for k, v in flags.items() if v is not None})
    values["command"] = command
    cfg = RunConfig(**values)
    cfg.log_level = cfg.log_level.upper()
    logger.debug(f"resolved config: {cfg}")
    return cfg.validate()
