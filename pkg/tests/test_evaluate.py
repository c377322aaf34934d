import itertools

import pytest

from pmbrnn.evaluate import (
    PLOT_HEADER,
    classify_metrics,
    compare,
    export_plot_data,
    first_sustained_crossing,
    plot_csv_text,
    read_plot_data,
)
from pmbrnn.predict import EngineForecast, align_to_warning_window, summarize


def forecast(unit, p50s, entry, start=50, label_from=None):
    """Forecast whose percentiles all equal the given medians."""
    cycles = range(start, start + len(p50s))
    cut = entry if label_from is None else label_from
    labels = [int(cut is not None and c >= cut) for c in cycles]
    return EngineForecast(unit, [summarize([p], c) for p, c in zip(p50s, cycles)], labels, entry)


def test_perfect_forecast():
    fc = forecast(1, [0.0] * 5 + [1.0] * 5, entry=55)
    m = classify_metrics([fc])
    assert m.accuracy == 1.0 and m.false_alarm_rate == 0.0 and m.recall == 1.0 and m.precision == 1.0
    assert m.lead_time == {1: 0}


def test_constant_zero_has_no_recall():
    m = classify_metrics([forecast(1, [0.0] * 10, entry=55)])
    assert m.recall == 0.0 and m.tp == 0
    assert m.lead_time == {1: None}


def test_six_cycle_enumeration():
    p50 = [0.1, 0.7, 0.2, 0.9, 0.3, 0.8]
    labels = [0, 0, 0, 1, 1, 1]
    fc = EngineForecast(1, [summarize([p], 50 + k) for k, p in enumerate(p50)], labels, 53)
    # brute force over the six cycles
    counts = {"tp": 0, "fp": 0, "tn": 0, "fn": 0}
    for p, y in zip(p50, labels):
        key = ("t" if (p >= 0.5) == bool(y) else "f") + ("p" if p >= 0.5 else "n")
        counts[key] += 1
    assert counts == {"tp": 2, "fp": 1, "tn": 2, "fn": 1}
    m = classify_metrics([fc])
    assert (m.tp, m.fp, m.tn, m.fn) == (2, 1, 2, 1)
    assert m.tp + m.fp + m.tn + m.fn == 6
    assert m.accuracy == pytest.approx(4 / 6)
    assert m.false_alarm_rate == pytest.approx(1 / 3)
    assert m.precision == pytest.approx(2 / 3) and m.recall == pytest.approx(2 / 3)
    assert m.f1 == pytest.approx(2 / 3)


def test_requires_labels():
    fc = forecast(1, [0.2] * 3, entry=None)
    fc.labels = None
    with pytest.raises(ValueError):
        classify_metrics([fc])


def test_sustained_crossing():
    cyc = list(range(10))
    assert first_sustained_crossing(cyc, [0, 1, 0, 1, 1, 1, 0, 0, 0, 0]) == 3
    assert first_sustained_crossing(cyc, [0, 1, 1, 0, 0, 0, 0, 0, 1, 1]) == 8
    assert first_sustained_crossing(cyc, [0] * 10) is None
    assert first_sustained_crossing(cyc, [0, 1, 0, 0, 0, 0, 0, 0, 0, 0], sustain=1) == 1


def test_lead_time_sign():
    early = forecast(1, [0.0] * 5 + [1.0] * 15, entry=60)
    late = forecast(2, [0.0] * 15 + [1.0] * 5, entry=60)
    m = classify_metrics([early, late])
    assert m.lead_time == {1: 5, 2: -5}


def test_compare_identical_inputs():
    fs = [forecast(u, [0.0] * 10 + [1.0] * 10, entry=60) for u in (1, 2)]
    r = compare(fs, fs, 30)
    assert r.brnn == r.baseline
    assert r.brnn_early_count == r.baseline_early_count == 0


def test_compare_early_crossing_count():
    # window entry at cycle 80; baseline crosses 10 cycles early on engines 1..3
    brnn, base = [], []
    for u in range(1, 6):
        brnn.append(forecast(u, [0.1] * 30 + [0.9] * 20, entry=80))
        lead = 10 if u <= 3 else 0
        base.append(forecast(u, [0.1] * (30 - lead) + [0.9] * (20 + lead), entry=80))
    r = compare(brnn, base, 30)
    assert r.baseline_early_count == 3
    assert r.brnn_early_count == 0
    assert r.baseline_crossing[1] == 70 and r.brnn_crossing[1] == 80
    assert r.baseline.fp == 30 and r.brnn.fp == 0


def test_compare_mismatch():
    a = [forecast(1, [0.1] * 3, entry=None)]
    b = [forecast(2, [0.1] * 3, entry=None)]
    with pytest.raises(ValueError, match="engine sets differ"):
        compare(a, b)
    with pytest.raises(ValueError, match="cycles differ"):
        compare(a, [forecast(1, [0.1] * 4, entry=None)])


def test_export_rows_and_determinism(tmp_path):
    fc = forecast(4, [0.2, 0.4, 0.6], entry=51)
    p = export_plot_data([fc], tmp_path / "a.csv")
    lines = p.read_text().splitlines()
    assert lines[0] == ",".join(PLOT_HEADER)
    assert len(lines) == 4
    assert lines[1].split(",")[:2] == ["4", "50"] and lines[1].endswith(",0")
    q = export_plot_data([fc], tmp_path / "b.csv")
    assert p.read_bytes() == q.read_bytes()


def test_export_aligned_has_tau_zero(tmp_path):
    fs = [forecast(u, [0.1 * k for k in range(10)], entry=50 + u) for u in (1, 2, 3)]
    aligned = align_to_warning_window(fs)
    rows = read_plot_data(export_plot_data(aligned, tmp_path / "al.csv"))
    for u in aligned.included:
        assert any(r["unit"] == str(u) and r["cycle_or_tau"] == "0" for r in rows)


def test_export_errors(tmp_path):
    with pytest.raises(ValueError):
        plot_csv_text([])
    with pytest.raises(OSError, match="cannot write"):
        export_plot_data([forecast(1, [0.5], entry=None)], tmp_path / "missing" / "x.csv")


def test_metrics_match_recount_over_csv(tmp_path):
    fs = []
    for u, (n, entry) in enumerate([(20, 60), (15, 58), (12, None)], start=1):
        vals = [((k * 37 + u * 11) % 100) / 100 for k in range(n)]
        fs.append(forecast(u, vals, entry))
    m = classify_metrics(fs)
    rows = read_plot_data(export_plot_data(fs, tmp_path / "f.csv"))
    recount = dict.fromkeys(("tp", "fp", "tn", "fn"), 0)
    for r in rows:
        pred, y = float(r["p50"]) >= 0.5, r["label"] == "1"
        recount[{(1, 1): "tp", (1, 0): "fp", (0, 0): "tn", (0, 1): "fn"}[(int(pred), int(y))]] += 1
    assert recount == {"tp": m.tp, "fp": m.fp, "tn": m.tn, "fn": m.fn}
    assert sum(recount.values()) == len(rows) == sum(len(f.distributions) for f in fs)


def test_rates_in_unit_interval():
    for p50s in itertools.product([0.0, 1.0], repeat=4):
        m = classify_metrics([forecast(1, list(p50s), entry=52)])
        for v in (m.accuracy, m.precision, m.recall, m.f1, m.false_alarm_rate):
            assert 0.0 <= v <= 1.0
