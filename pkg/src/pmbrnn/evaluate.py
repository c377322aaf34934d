"""Classification metrics, BRNN-vs-baseline comparison and plot-data CSV export."""

from __future__ import annotations

import csv
import io
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

from .predict import AlignedSeries, EngineForecast

PLOT_HEADER = ["unit", "cycle_or_tau", "p10", "p25", "p50", "p75", "p90", "label"]
SUSTAIN = 3


@dataclass
class Metrics:
    accuracy: float
    precision: float
    recall: float
    f1: float
    tp: int
    fp: int
    tn: int
    fn: int
    false_alarm_rate: float
    lead_time: dict = field(default_factory=dict)  # unit -> cycles, None if never crossed

    def to_dict(self) -> dict:
        d = asdict(self)
        d["lead_time"] = {str(k): v for k, v in sorted(self.lead_time.items())}
        return d


def first_sustained_crossing(cycles: Sequence[int], values: Sequence[float], threshold: float = 0.5,
                             sustain: int = SUSTAIN) -> Optional[int]:
    """First cycle that starts a run of ``sustain`` consecutive values >= threshold.

    A run cut short by the end of the record counts if it reaches the end.
    """
    n = len(values)
    for k in range(n):
        run = values[k:k + sustain]
        if all(v >= threshold for v in run) and (len(run) == sustain or k + len(run) == n):
            return int(cycles[k])
    return None


def _ratio(a, b):
    return a / b if b else 0.0


def classify_metrics(forecasts: Sequence[EngineForecast], threshold: float = 0.5, sustain: int = SUSTAIN) -> Metrics:
    tp = fp = tn = fn = 0
    lead = {}
    for fc in forecasts:
        if fc.labels is None:
            raise ValueError(f"unit {fc.unit_id}: forecast has no true labels")
        p50 = [d.p50 for d in fc.distributions]
        for v, y in zip(p50, fc.labels):
            pred = v >= threshold
            if pred and y:
                tp += 1
            elif pred:
                fp += 1
            elif y:
                fn += 1
            else:
                tn += 1
        if fc.window_entry_cycle is not None:
            cross = first_sustained_crossing(fc.cycles, p50, threshold, sustain)
            lead[fc.unit_id] = None if cross is None else fc.window_entry_cycle - cross
    total = tp + fp + tn + fn
    precision = _ratio(tp, tp + fp)
    recall = _ratio(tp, tp + fn)
    return Metrics(
        accuracy=_ratio(tp + tn, total),
        precision=precision,
        recall=recall,
        f1=_ratio(2 * precision * recall, precision + recall),
        tp=tp, fp=fp, tn=tn, fn=fn,
        false_alarm_rate=_ratio(fp, fp + tn),
        lead_time=lead,
    )


@dataclass
class ComparisonReport:
    brnn: Metrics
    baseline: Metrics
    brnn_crossing: dict
    baseline_crossing: dict
    brnn_early_count: int
    baseline_early_count: int

    def to_dict(self) -> dict:
        return {
            "brnn": self.brnn.to_dict(),
            "baseline": self.baseline.to_dict(),
            "brnn_crossing": {str(k): v for k, v in sorted(self.brnn_crossing.items())},
            "baseline_crossing": {str(k): v for k, v in sorted(self.baseline_crossing.items())},
            "brnn_early_count": self.brnn_early_count,
            "baseline_early_count": self.baseline_early_count,
        }


def _crossings(forecasts, threshold, sustain):
    out = {}
    early = 0
    for fc in sorted(forecasts, key=lambda f: f.unit_id):
        c = first_sustained_crossing(fc.cycles, [d.p50 for d in fc.distributions], threshold, sustain)
        out[fc.unit_id] = c
        if c is not None and fc.window_entry_cycle is not None and c < fc.window_entry_cycle:
            early += 1
    return out, early


def compare(brnn_forecasts: Sequence[EngineForecast], baseline_forecasts: Sequence[EngineForecast],
            horizon: int = 30, threshold: float = 0.5, sustain: int = SUSTAIN) -> ComparisonReport:
    """Side-by-side metrics and early-crossing counts (crossing before window entry).

    ``horizon`` is the warning window the forecasts' labels and entry cycles were built with.
    """
    a = {f.unit_id: f for f in brnn_forecasts}
    b = {f.unit_id: f for f in baseline_forecasts}
    if set(a) != set(b):
        raise ValueError(f"engine sets differ: {sorted(set(a) ^ set(b))}")
    for u in a:
        if a[u].cycles != b[u].cycles:
            raise ValueError(f"unit {u}: forecast cycles differ between models")
    bc, be = _crossings(brnn_forecasts, threshold, sustain)
    dc, de = _crossings(baseline_forecasts, threshold, sustain)
    return ComparisonReport(
        brnn=classify_metrics(brnn_forecasts, threshold, sustain),
        baseline=classify_metrics(baseline_forecasts, threshold, sustain),
        brnn_crossing=bc, baseline_crossing=dc,
        brnn_early_count=be, baseline_early_count=de,
    )


def _fmt(v):
    return "" if v is None else repr(float(v))


def plot_csv_text(data) -> str:
    """CSV text for forecasts (list of EngineForecast) or an AlignedSeries."""
    rows = []
    if isinstance(data, AlignedSeries):
        for r in data.rows:
            rows.append([r.unit, r.tau, *map(_fmt, (r.p10, r.p25, r.p50, r.p75, r.p90)),
                         "" if r.label is None else r.label])
    else:
        for fc in sorted(data, key=lambda f: f.unit_id):
            for k, d in enumerate(fc.distributions):
                label = "" if fc.labels is None else fc.labels[k]
                rows.append([fc.unit_id, d.cycle, *map(_fmt, d.bands), label])
    if not rows:
        raise ValueError("nothing to export")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(PLOT_HEADER)
    w.writerows(rows)
    return buf.getvalue()


def export_plot_data(data, path) -> Path:
    text = plot_csv_text(data)
    path = Path(path)
    try:
        path.write_text(text)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror}") from None
    return path


def read_plot_data(path) -> list[dict]:
    with Path(path).open(newline="") as fh:
        return list(csv.DictReader(fh))
