import xml.etree.ElementTree as ET
from pathlib import Path

import matplotlib
import pytest

from maskweave.errors import UsageError
from maskweave.experiment import ResultRecord
from maskweave.report import (
    ACCURACY_AXES,
    OVERLAP_AXES,
    AxesConfig,
    CurveSeries,
    build_accuracy_curves,
    build_overlap_curves,
    emit_svg,
    overlap_axes,
    render_svg,
)

GOLDEN = Path(__file__).parent / "golden" / "two_series.svg"
SVG_NS = "{http://www.w3.org/2000/svg}"


def _two_series():
    return [CurveSeries("measured", [(0.1, 0.9), (0.5, 0.7), (0.9, 0.95)]),
            CurveSeries("chance", [(0.1, 0.1), (0.5, 0.5), (0.9, 0.9)], "dashed")]


def _row(k, t, s, ratio):
    return {"k": k, "t": t, "per_sibling_sparsity": s, "overlap_ratio": ratio}


def test_overlap_curves_group_by_k_and_t():
    rows = [_row(2, 0, 0.5, 0.8), _row(2, 0, 0.2, 0.6), _row(2, 127, 0.5, 0.9),
            _row(4, 127, 0.5, 0.7)]
    series = build_overlap_curves(rows)
    labels = [s.label for s in series]
    assert labels == ["k=2, t=0", "k=2, t=127", "k=4, t=127", "chance, k=2", "chance, k=4"]
    assert series[0].points == [(0.2, 0.6), (0.5, 0.8)]
    assert series[3].style == "dashed" and series[3].points == [(0.2, 0.2), (0.5, 0.5)]
    assert series[4].points == [(0.5, 0.125)]


def test_duplicate_x_values_are_averaged_and_labelled():
    rows = [_row(2, 0, 0.5, 0.90), _row(2, 0, 0.5, 0.92), _row(2, 0, 0.3, 0.5)]
    s = build_overlap_curves(rows)[0]
    assert s.points[1] == (0.5, pytest.approx(0.91))
    assert s.counts == [1, 2]
    assert "2 rows averaged" in s.label


def test_accuracy_curves_one_per_strategy():
    recs = [ResultRecord(st, 2, 127, s, cs, acc, 1)
            for st, s, cs, acc in [("union", 0.5, 0.3, 0.97), ("union", 0.3, 0.1, 0.98),
                                   ("oneshot_baseline", 0.5, 0.5, 0.96)]]
    series = build_accuracy_curves(recs)
    assert [s.label for s in series] == ["oneshot_baseline", "union"]
    assert series[1].points == [(0.1, 0.98), (0.3, 0.97)]
    mixed = recs + [ResultRecord("union", 4, 127, 0.5, 0.2, 0.99, 1)]
    assert "union (k=4, t=127)" in [s.label for s in build_accuracy_curves(mixed)]


def test_empty_inputs_rejected():
    with pytest.raises(UsageError):
        build_overlap_curves([])
    with pytest.raises(UsageError):
        build_accuracy_curves([])
    with pytest.raises(UsageError):
        render_svg([], ACCURACY_AXES)
    with pytest.raises(UsageError):
        CurveSeries("bad", [(0.5, 1.0), (0.5, 2.0)])
    with pytest.raises(UsageError):
        CurveSeries("bad", [(0.5, 1.0)], style="dotted")


def test_overlap_axes_switch_to_log():
    low = [CurveSeries("c", [(0.1, 1e-9), (0.9, 0.9)])]
    assert overlap_axes(low) == OVERLAP_AXES
    assert overlap_axes(_two_series()).yscale == "linear"


def test_svg_is_deterministic_and_well_formed(tmp_path):
    a = render_svg(_two_series(), ACCURACY_AXES)
    assert a == render_svg(_two_series(), ACCURACY_AXES)
    root = ET.fromstring(a)
    assert root.tag == SVG_NS + "svg"
    texts = "".join(t.text or "" for t in root.iter(SVG_NS + "text"))
    assert "measured" in texts and "chance" in texts
    assert b"<dc:date>" not in a
    p = emit_svg(_two_series(), ACCURACY_AXES, tmp_path / "f.svg")
    mtime = p.stat().st_mtime_ns
    emit_svg(_two_series(), ACCURACY_AXES, p)
    assert p.stat().st_mtime_ns == mtime and p.read_bytes() == a


def test_golden_two_series():
    axes = AxesConfig("x", "y", "two series", xlim=(0, 1), ylim=(0, 1))
    got = render_svg(_two_series(), axes)
    assert got == GOLDEN.read_bytes(), f"SVG drift under matplotlib {matplotlib.__version__}"
