import xml.etree.ElementTree as ET

import pytest

from mvmtwin.svg import line_chart, write_line_chart


def test_line_chart_is_valid_svg(tmp_path):
    svg = line_chart({"a": ([0, 1, 2], [1.0, 3.0, 2.0]), "b": ([0, 1, 2], [0.0, float("nan"), 1.0])},
                     title="t <1>", xlabel="K", ylabel="v")
    root = ET.fromstring(svg)
    ns = "{http://www.w3.org/2000/svg}"
    lines = root.findall(f"{ns}polyline")
    assert len(lines) == 2
    assert len(lines[1].get("points").split()) == 2  # NaN point dropped
    texts = [t.text for t in root.iter(f"{ns}text")]
    assert "t <1>" in texts and "a" in texts and "b" in texts
    p = write_line_chart(tmp_path / "c.svg", {"a": ([0, 1], [2, 2])})
    ET.parse(p)


def test_empty_chart_rejected():
    with pytest.raises(ValueError):
        line_chart({"a": ([], [])})
