"""Monte Carlo dropout inference, the deterministic baseline, alignment and streaming."""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Optional, Sequence

import numpy as np

from . import brnn
from .brnn import DropoutSpec, NetworkParams
from .cmapss import DataFormatError, EngineTrajectory, NormStats, normalize_rows, parse_line
from .ndmath import Rng, quantiles

PERCENTILES = (0.10, 0.25, 0.50, 0.75, 0.90)
DEFAULT_SAMPLES = 100


@dataclass
class PredictiveDistribution:
    cycle: int
    samples: np.ndarray
    p10: float
    p25: float
    p50: float
    p75: float
    p90: float

    @property
    def bands(self) -> tuple:
        return (self.p10, self.p25, self.p50, self.p75, self.p90)


@dataclass
class EngineForecast:
    unit_id: int
    distributions: list
    labels: Optional[list] = None
    window_entry_cycle: Optional[int] = None

    @property
    def cycles(self) -> list[int]:
        return [d.cycle for d in self.distributions]

    @property
    def p50(self) -> np.ndarray:
        return np.array([d.p50 for d in self.distributions])


def cycle_rng(seed: int, unit: int, cycle: int) -> Rng:
    """Per-window substream; the sample index is the position within it."""
    return Rng(seed).derive(unit, cycle)


def mc_predict(params: NetworkParams, spec: DropoutSpec, window: np.ndarray, S: int, rng: Rng) -> np.ndarray:
    """S failure probabilities, one forward pass per independent mask draw."""
    if S < 1:
        raise ValueError("sample count must be >= 1")
    masks = brnn.sample_masks(rng, spec, params.dims, n=S)
    x = np.broadcast_to(np.asarray(window, dtype=np.float64), (S,) + np.shape(window))
    p, _ = brnn.forward(params, x, masks)
    return p


def summarize(samples, cycle: int = 0) -> PredictiveDistribution:
    s = np.asarray(samples, dtype=np.float64)
    if s.size == 0:
        raise ValueError("cannot summarize an empty sample set")
    return PredictiveDistribution(cycle, s, *quantiles(s, PERCENTILES))


def deterministic_predict(params: NetworkParams, window: np.ndarray) -> float:
    p, _ = brnn.forward(params, np.asarray(window, dtype=np.float64)[None])
    return float(p[0])


def _entry_cycle(traj: EngineTrajectory, horizon: int) -> Optional[int]:
    if traj.rul is None:
        return None
    inside = np.nonzero(traj.rul <= horizon)[0]
    return int(traj.cycles[inside[0]]) if inside.size else None


def forecast_engine(
    params: NetworkParams,
    spec: DropoutSpec,
    traj: EngineTrajectory,
    S: int = DEFAULT_SAMPLES,
    seed: int = 0,
    window_length: int = 50,
    horizon: int = 30,
) -> EngineForecast:
    """MC forecast for every cycle from ``window_length`` to the end of ``traj``.

    ``traj`` must already be normalized.  Masks for the window ending at cycle
    ``e`` come from :func:`cycle_rng` ``(seed, unit, e)``.
    """
    n = len(traj)
    if n < window_length:
        raise ValueError(f"unit {traj.unit_id}: {n} cycles is shorter than the window length {window_length}")
    x = traj.features
    dists = []
    for end in range(window_length, n + 1):
        cycle = int(traj.cycles[end - 1])
        samples = mc_predict(params, spec, x[end - window_length:end], S, cycle_rng(seed, traj.unit_id, cycle))
        dists.append(summarize(samples, cycle))
    labels = None
    if traj.rul is not None:
        labels = [int(r <= horizon) for r in traj.rul[window_length - 1:]]
    return EngineForecast(traj.unit_id, dists, labels, _entry_cycle(traj, horizon))


def baseline_forecast(params: NetworkParams, traj: EngineTrajectory, window_length: int = 50, horizon: int = 30) -> EngineForecast:
    """Deterministic single-pass forecast; every percentile equals the one output."""
    n = len(traj)
    if n < window_length:
        raise ValueError(f"unit {traj.unit_id}: {n} cycles is shorter than the window length {window_length}")
    x = traj.features
    windows = np.stack([x[e - window_length:e] for e in range(window_length, n + 1)])
    p, _ = brnn.forward(params, windows)
    dists = [summarize(p[k:k + 1], int(traj.cycles[window_length - 1 + k])) for k in range(len(p))]
    labels = None
    if traj.rul is not None:
        labels = [int(r <= horizon) for r in traj.rul[window_length - 1:]]
    return EngineForecast(traj.unit_id, dists, labels, _entry_cycle(traj, horizon))


@dataclass
class AlignedRow:
    unit: int
    tau: int
    p10: float
    p25: float
    p50: float
    p75: float
    p90: float
    label: Optional[int] = None


@dataclass
class AlignedSeries:
    rows: list = field(default_factory=list)
    included: list = field(default_factory=list)
    excluded: dict = field(default_factory=dict)  # unit -> reason

    def fleet_median(self, tau: int) -> Optional[float]:
        """Mean over engines of the median probability at relative time ``tau``."""
        vals = [r.p50 for r in self.rows if r.tau == tau]
        return float(np.mean(vals)) if vals else None


def align_to_warning_window(forecasts: Sequence[EngineForecast], horizon: int = 30) -> AlignedSeries:
    """Re-index each engine to tau = cycle - window_entry_cycle.

    Engines that never reach RUL <= horizon, or whose entry precedes their first
    forecast cycle, are excluded and listed in ``excluded``.
    """
    out = AlignedSeries()
    for fc in sorted(forecasts, key=lambda f: f.unit_id):
        entry = fc.window_entry_cycle
        if entry is None:
            out.excluded[fc.unit_id] = f"never reaches RUL <= {horizon} in record"
            continue
        if not fc.distributions or entry < fc.distributions[0].cycle:
            out.excluded[fc.unit_id] = f"window entry at cycle {entry} precedes first forecast cycle"
            continue
        out.included.append(fc.unit_id)
        for k, d in enumerate(fc.distributions):
            label = fc.labels[k] if fc.labels is not None else None
            out.rows.append(AlignedRow(fc.unit_id, d.cycle - entry, *d.bands, label))
    return out


@dataclass
class StreamState:
    window_length: int
    buffer: deque = field(init=False)
    last_cycle: int = 0

    def __post_init__(self):
        self.buffer = deque(maxlen=self.window_length)


def stream_predict(
    params: NetworkParams,
    spec: DropoutSpec,
    stats: NormStats,
    lines: Iterable[str],
    S: int = DEFAULT_SAMPLES,
    seed: int = 0,
    window_length: int = 50,
) -> Iterator[dict]:
    """Consume 26-column telemetry lines, yield one record per line.

    Records are ``{unit, cycle, p10..p90}`` once a unit has ``window_length``
    cycles buffered, ``{unit, cycle, status: "warmup"}`` before that, and
    ``{line, error}`` (plus unit/cycle when known) for rejected lines.
    """
    if S < 1:
        raise ValueError("sample count must be >= 1")
    states: dict[int, StreamState] = {}
    for lineno, line in enumerate(lines, start=1):
        try:
            row = parse_line(line, lineno)
        except DataFormatError as exc:
            yield {"line": lineno, "error": str(exc)}
            continue
        if row is None:
            continue
        unit, cycle, feats = row
        st = states.setdefault(unit, StreamState(window_length))
        if cycle <= st.last_cycle:
            yield {"unit": unit, "cycle": cycle, "line": lineno,
                   "error": f"out-of-order cycle {cycle} (last seen {st.last_cycle})"}
            continue
        try:
            z = normalize_rows(np.asarray(feats, dtype=np.float64)[None], stats)[0]
        except KeyError as exc:
            yield {"unit": unit, "cycle": cycle, "line": lineno, "error": str(exc.args[0])}
            continue
        st.buffer.append(z)
        st.last_cycle = cycle
        if len(st.buffer) < window_length:
            yield {"unit": unit, "cycle": cycle, "status": "warmup"}
            continue
        window = np.stack(st.buffer)
        samples = mc_predict(params, spec, window, S, cycle_rng(seed, unit, cycle))
        d = summarize(samples, cycle)
        yield {"unit": unit, "cycle": cycle, "p10": d.p10, "p25": d.p25, "p50": d.p50, "p75": d.p75, "p90": d.p90}


def format_record(rec: dict) -> str:
    return json.dumps(rec, sort_keys=False)

