import numpy as np
import pytest

from src.paths import Estimate, FunctionalCurve
from src.plotting import downsample_indices, render_svg, write_svg


def _curve(label, offset, n=5):
    times = np.linspace(0.0, 1.0, n)
    estimates = [Estimate(float(offset + t), 0.01, 100, (offset + t - 0.02, offset + t + 0.02)) for t in times]
    return FunctionalCurve("terminal_call_square", label, times, estimates)


def test_downsample_keeps_ends():
    idx = downsample_indices(10_000, 100)
    assert idx[0] == 0 and idx[-1] == 9_999
    assert len(idx) <= 100
    assert downsample_indices(5).tolist() == [0, 1, 2, 3, 4]


def test_render_svg_has_band_and_line_per_curve():
    svg = render_svg([_curve("down", 0.0), _curve("up <mid>", 1.0)], "bounds")
    assert svg.startswith("<?xml")
    assert svg.count("<polygon") == 2
    assert svg.count("<polyline") == 2
    assert "up &lt;mid&gt;" in svg


def test_render_svg_needs_curves():
    with pytest.raises(ValueError):
        render_svg([], "empty")


def test_write_svg(tmp_path):
    path = write_svg(tmp_path / "plots" / "p.svg", [_curve("only", 0.0, n=2)], "one")
    assert path.exists()
    assert "</svg>" in path.read_text()
