"""brainalign command line: encode, scores, halftime, property-corr, compare, synth, validate."""
import argparse
import json
import logging
import sys

from config import resolve_config
from src.errors import BrainAlignError
from src.pipeline import COMMANDS, run

logger = logging.getLogger(__name__)


def _window(text: str) -> list[float]:
    try:
        start, end = (float(v) for v in text.split(":"))
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"window must be START:END in seconds, got {text!r}") from e
    return [start, end]


def _point(text: str) -> list[float]:
    try:
        values = [float(v) for v in text.split(",")]
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"expected X,Y,Z in mm, got {text!r}") from e
    if len(values) != 3:
        raise argparse.ArgumentTypeError(f"expected X,Y,Z in mm, got {text!r}")
    return values


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="brainalign", description="Layer-wise brain/model alignment scores.")
    parser.add_argument("command", choices=sorted(COMMANDS), help="What to run")
    parser.add_argument("--manifest", dest="manifests", action="append", default=None, help="Dataset manifest (repeatable)")
    parser.add_argument("--out", default=None, help="Output directory (default: out)")
    parser.add_argument("--config", default=None, help="JSON config file; flags override it")
    parser.add_argument("--log-level", dest="log_level", default=None, help="DEBUG, INFO, WARNING or ERROR")
    parser.add_argument("--threads", type=int, default=None, help="Parallel folds/files (results do not depend on it)")
    parser.add_argument("--lambda-grid", dest="lambda_grid", default=None, help="logspace:START:STOP:NUM or comma list")
    parser.add_argument("--lambda-mode", dest="lambda_mode", choices=["gcv", "kfold"], default=None, help="Inner lambda selection")
    parser.add_argument("--per-target-lambda", dest="per_target_lambda", action="store_true", default=None, help="One lambda per target")
    parser.add_argument("--folds", type=int, default=None, help="Outer cross-validation folds (default 5)")
    parser.add_argument("--inner-folds", dest="inner_folds", type=int, default=None, help="Inner folds for --lambda-mode kfold")
    parser.add_argument("--seed", type=int, default=None, help="Fold shuffle seed (default 0)")
    parser.add_argument("--level", choices=["voxel", "roi"], default=None, help="Spatial score level")
    parser.add_argument("--norm-axis", dest="norm_axis", choices=["roi", "layer"], default=None, help="ROI curve normalization")
    parser.add_argument("--tmax-frac", dest="tmax_frac", type=float, default=None, help="T_max threshold fraction (default 0.95)")
    parser.add_argument("--fdr-q", dest="fdr_q", type=float, default=None, help="FDR level (default 0.05)")
    parser.add_argument("--roi-alpha", dest="roi_alpha", type=float, default=None, help="ROI inclusion level (default 0.01)")
    parser.add_argument("--roi-order", dest="roi_order", choices=["test_then_average", "average_then_test"], default=None)
    parser.add_argument("--windows", type=_window, nargs="+", default=None, help="Time ROIs as START:END seconds")
    parser.add_argument("--layers", dest="n_layers", type=int, default=None, help="Subsample to N evenly spaced layers")
    parser.add_argument("--v1", type=_point, default=None, help="Explicit V1 reference X,Y,Z (mm)")
    parser.add_argument("--halftimes", default=None, help="halftimes.csv for property-corr")
    parser.add_argument("--family", choices=["metric", "all"], default=None, help="FDR family for compare")
    parser.add_argument("--input", default=None, help="Long-format CSV for compare")
    parser.add_argument("--spec", default=None, help="Plant spec JSON for synth")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    flags = {k: v for k, v in vars(args).items() if k != "command"}
    try:
        cfg = resolve_config(args.command, flags)
        logging.basicConfig(level=cfg.log_level, format="%(levelname)s: %(message)s")
        logging.getLogger().setLevel(cfg.log_level)
        results = run(cfg)
    except BrainAlignError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code
    if cfg.command == "validate":
        for manifest, notes in results.items():
            print(f"{manifest}: " + "; ".join(notes))
    elif cfg.command == "synth":
        print(json.dumps(results, indent=2, sort_keys=True))
    else:
        print(f"Wrote {cfg.out}/report.json")
    return 0


if __name__ == "__main__":
    sys.exit(main())
