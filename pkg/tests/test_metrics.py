import json
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, strategies as st

from collab_handshake.errors import ConfigError, DimensionError, FormatError, UndefinedMetricError
from collab_handshake.metrics import (BisInputs, MetricsRecord, attach_bis, bis_rows_csv, bis_table, compute_bis,
                                      emit_report, format_bis_layout, overall_accuracy, read_report,
                                      selection_accuracy)

TABLE = Path(__file__).parent / "data" / "table1.csv"


def bis(acc, lo, hi, kbpf):
    return compute_bis(BisInputs.from_kbpf(acc, lo, hi, kbpf))


def test_overall_accuracy_examples():
    g = np.array([[0, 1], [1, 0]])
    assert overall_accuracy(g, g) == 1.0
    assert overall_accuracy(1 - g, g) == 0.0
    assert overall_accuracy(np.array([[0, 1], [1, 1]]), g) == 0.75
    with pytest.raises(DimensionError):
        overall_accuracy(g, g[:1])


def test_overall_accuracy_averages_episodes_and_ignores_order(rng):
    pred = rng.integers(0, 3, size=(5, 4, 4))
    gt = rng.integers(0, 3, size=(5, 4, 4))
    per = [(pred[i] == gt[i]).mean() for i in range(5)]
    assert abs(overall_accuracy(pred, gt) - np.mean(per)) < 1e-15
    p = rng.permutation(5)
    assert abs(overall_accuracy(pred[p], gt[p]) - overall_accuracy(pred, gt)) < 1e-15


def test_selection_accuracy_examples(rng):
    best = list(rng.integers(0, 4, size=50))
    assert selection_accuracy([[b] for b in best], best) == 1.0
    assert selection_accuracy([[0, 1]] * 2, [1, 3]) == 0.5
    picks = rng.integers(0, 4, size=20000)
    truth = rng.integers(0, 4, size=20000)
    assert abs(selection_accuracy([[p] for p in picks], list(truth)) - 0.25) < 0.01
    with pytest.raises(UndefinedMetricError):
        selection_accuracy([], [])
    with pytest.raises(DimensionError):
        selection_accuracy([[0]], [0, 1])


def test_bis_examples():
    assert abs(bis(84.57, 68.79, 88.14, 1028.03) - 0.812) <= 0.001
    assert abs(bis(72.58, 68.79, 88.14, 4096) - 0.049) <= 0.001
    assert abs(bis(65.31, 68.79, 88.14, 1024.03) - (-0.179)) <= 0.001
    assert bis(68.79, 68.79, 88.14, 1024) == 0.0
    # binary conversion is what makes the first example land on 0.812
    decimal = (84.57 - 68.79) / ((88.14 - 68.79) * 1.02803)
    assert abs(decimal - 0.812) > 0.01


def test_bis_undefined():
    with pytest.raises(UndefinedMetricError):
        bis(80, 70, 90, 0)
    with pytest.raises(UndefinedMetricError):
        bis(80, 90, 90, 1024)
    with pytest.raises(UndefinedMetricError):
        bis(80, 90, 70, 1024)


@given(acc=st.floats(0, 1), w1=st.floats(1, 5000), w2=st.floats(1, 5000))
def test_bis_monotone_in_bandwidth(acc, w1, w2):
    lo, hi = 0.3, 0.9
    if w1 < w2 and acc != lo:
        a, b = bis(acc, lo, hi, w1), bis(acc, lo, hi, w2)
        assert (a > b) if acc > lo else (a < b)


@given(a1=st.floats(0, 1), a2=st.floats(0, 1), w=st.floats(1, 5000))
def test_bis_increasing_in_accuracy(a1, a2, w):
    if a1 < a2:
        assert bis(a1, 0.3, 0.9, w) < bis(a2, 0.3, 0.9, w)


def test_metrics_record_invariants():
    with pytest.raises(ValueError):
        MetricsRecord("x", 1.5)
    with pytest.raises(ValueError):
        MetricsRecord("x", 0.5, kbpf=-1)


def _records():
    return attach_bis([
        MetricsRecord("Single Normal", 0.9, episodes=10),
        MetricsRecord("Single Degraded", 0.6, episodes=10),
        MetricsRecord("Ours w/ msg", 0.8, kbpf=1168 / 1024, selection_acc=0.95, episodes=10),
        MetricsRecord("CatAll", 0.85, kbpf=4.0, episodes=10),
    ])


def test_attach_bis_matches_recomputation():
    recs = _records()
    assert recs[0].bis is None and recs[1].bis is None
    assert recs[2].bis == bis(0.8, 0.6, 0.9, 1168 / 1024)
    assert recs[3].bis == bis(0.85, 0.6, 0.9, 4.0)


@pytest.mark.parametrize("fmt", ["csv", "json"])
def test_report_round_trip(tmp_path, fmt):
    recs = _records()
    path = str(tmp_path / f"report.{fmt}")
    emit_report(recs, path, fmt)
    rows = read_report(path)
    assert list(rows[0]) == ["method", "overall_acc", "kbpf", "BIS", "selection_acc", "episodes"]
    for r, row in zip(recs, rows):
        assert abs(float(row["overall_acc"]) - 100 * r.overall_acc) < 1e-4
        if r.bis is None:
            assert row["BIS"] in ("", None)
        else:
            assert abs(float(row["BIS"]) - r.bis) < 1e-6
            assert abs(float(row["kbpf"]) - r.kbpf) < 1e-6
    if fmt == "json":
        assert json.loads(Path(path).read_text()) == rows


def test_report_errors(tmp_path):
    with pytest.raises(ConfigError):
        emit_report([], str(tmp_path / "r.csv"))
    with pytest.raises(ConfigError):
        emit_report(_records(), str(tmp_path / "r.xml"), "xml")


def test_bis_table_anchors():
    rows = {(r.method, r.setting): r for r in bis_table(TABLE.read_text())}
    anchors = {"Ours w/ msg": 0.812, "CatAll": 0.049, "Compression": 0.085, "Random Selection": 0.019,
               "Ours w/o msg": -0.179, "Attention": 0.004}
    for method, value in anchors.items():
        assert abs(rows[method, "hidden target"].bis - value) <= 0.0015
    assert rows["Single Normal", "hidden target"].bis is None
    layout = format_bis_layout(list(rows.values()))
    assert "Ours w/ msg" in layout and "0.812" in layout
    assert bis_rows_csv(list(rows.values())).startswith("method,setting,accuracy,kbpf,BIS\n")


def test_bis_table_errors():
    with pytest.raises(FormatError):
        bis_table("method,setting,accuracy\nA,s,1\n")
    with pytest.raises(FormatError):
        bis_table("method,setting,accuracy,kbpf\nA,s,80,1024\nSingle Normal,s,90,-\n")
    rows = bis_table("method,setting,accuracy,kbpf\nA,s,80,0\nSingle Normal,s,90,-\nSingle Degraded,s,70,-\n")
    assert rows[0].bis is None and "bandwidth" in rows[0].error
    assert "undefined" in bis_rows_csv(rows)
