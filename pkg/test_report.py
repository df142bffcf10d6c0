"""report.json / CSV / SVG writers."""
import json
import math

import numpy as np
import pandas as pd

from src import svg
from src.report import dumps, read_report, to_jsonable, write_csv, write_report


def test_to_jsonable_converts_numpy_and_non_finite():
    doc = to_jsonable({"a": np.float64(0.5), "b": np.arange(3), "c": np.nan, "d": (np.bool_(True), math.inf), 2: "x"})
    assert doc == {"a": 0.5, "b": [0, 1, 2], "c": None, "d": [True, None], "2": "x"}


def test_dumps_sorts_keys():
    text = dumps({"b": 1, "a": {"z": 1, "y": 2}})
    assert text.index('"a"') < text.index('"b"')
    assert text.index('"y"') < text.index('"z"')
    assert text.endswith("\n")


def test_report_and_timing_are_separate(tmp_path):
    write_report(tmp_path, "encode", {"seed": 0}, {"mean_R": np.float64(0.25)}, ["w1"], 1.23456)
    report = read_report(tmp_path / "report.json")
    assert report == {"schema": 1, "command": "encode", "config": {"seed": 0}, "results": {"mean_R": 0.25}, "warnings": ["w1"]}
    assert json.loads((tmp_path / "timing.json").read_text()) == {"wall_clock_s": 1.235}


def test_csv_float_format_and_line_endings(tmp_path):
    path = write_csv(tmp_path / "t.csv", pd.DataFrame({"x": [1 / 3, np.nan], "name": ["a", "b"]}))
    assert path.read_bytes() == b"x,name\n0.3333333333,a\n,b\n"


def test_svg_is_deterministic_and_skips_non_finite():
    x, y = [0.0, 1.0, 2.0, np.nan], [0.0, 0.5, 1.0, 3.0]
    a = svg.scatter(x, y, "t", "x", "y", note="r=1.000")
    assert a == svg.scatter(x, y, "t", "x", "y", note="r=1.000")
    assert a.startswith('<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 480 360"')
    assert a.count("<circle") == 3
    assert "<line" in a
    plot = svg.line_plot({"k=0": ([0, 1], [1, 2]), "k=1": ([0, 1], [2, 1])}, "c", "t", "R", {"k=0": 0.5, "k=1": float("nan")})
    assert plot.count("<polyline") == 2
    assert plot.count("stroke-dasharray") == 1


def test_svg_escapes_labels():
    assert "a &lt; b" in svg.scatter([0, 1], [0, 1], "a < b", "x", "y")
