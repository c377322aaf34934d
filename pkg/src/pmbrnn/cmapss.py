"""C-MAPSS telemetry files: parsing, RUL attachment, normalization and windowing."""

from __future__ import annotations

import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

N_SETTINGS = 3
N_SENSORS = 21
N_FEATURES = N_SETTINGS + N_SENSORS
N_COLUMNS = 2 + N_FEATURES
SUBSETS = ("FD001", "FD002", "FD003", "FD004")


class DataFormatError(ValueError):
    pass


@dataclass
class EngineTrajectory:
    unit_id: int
    cycles: np.ndarray  # int64, 1..n
    settings: np.ndarray  # (n, 3)
    sensors: np.ndarray  # (n, 21)
    rul: Optional[np.ndarray] = None  # int64, set by attach_rul

    def __len__(self):
        return len(self.cycles)

    @property
    def features(self) -> np.ndarray:
        """(n, 24) array: settings followed by sensors."""
        return np.hstack([self.settings, self.sensors])

    @property
    def last_cycle(self) -> int:
        return int(self.cycles[-1])


@dataclass
class LabelScheme:
    mode: str = "binary"
    horizon: int = 30
    boundaries: tuple = ()

    def __post_init__(self):
        if self.mode not in ("binary", "multiclass"):
            raise ValueError(f"unknown label mode {self.mode!r}")
        if self.mode == "binary" and self.horizon <= 0:
            raise ValueError("horizon must be positive")
        if self.mode == "multiclass":
            b = list(self.boundaries)
            if not b:
                raise ValueError("multiclass scheme needs at least one boundary")
            if any(x < 0 for x in b) or any(b2 <= b1 for b1, b2 in zip(b, b[1:])):
                raise ValueError(f"boundaries must be non-negative and strictly increasing: {b}")

    @property
    def n_classes(self) -> int:
        return 2 if self.mode == "binary" else len(self.boundaries) + 1


@dataclass
class NormStats:
    mean: np.ndarray
    std: np.ndarray
    regimes: dict = field(default_factory=dict)  # settings key -> (mean, std)

    @property
    def regime_mode(self) -> bool:
        return bool(self.regimes)

    def to_dict(self) -> dict:
        return {
            "mean": self.mean.tolist(),
            "std": self.std.tolist(),
            "regimes": [
                {"key": list(k), "mean": m.tolist(), "std": s.tolist()}
                for k, (m, s) in sorted(self.regimes.items())
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NormStats":
        regimes = {
            tuple(r["key"]): (np.asarray(r["mean"], dtype=np.float64), np.asarray(r["std"], dtype=np.float64))
            for r in d.get("regimes", [])
        }
        return cls(
            mean=np.asarray(d["mean"], dtype=np.float64),
            std=np.asarray(d["std"], dtype=np.float64),
            regimes=regimes,
        )


@dataclass
class WindowSample:
    unit_id: int
    end_cycle: int
    features: np.ndarray  # (length, 24), time-major
    label: int
    rul_at_end: int


def parse_trajectories(text) -> list[EngineTrajectory]:
    """Parse 26-column telemetry text (a string or an iterable of lines)."""
    lines = text.splitlines() if isinstance(text, str) else text
    rows: dict[int, list] = {}
    for lineno, line in enumerate(lines, start=1):
        row = parse_line(line, lineno)
        if row is None:
            continue
        unit, cycle, feats = row
        seen = rows.setdefault(unit, [])
        expected = len(seen) + 1
        if cycle != expected:
            raise DataFormatError(
                f"line {lineno}: unit {unit} cycle {cycle} is not contiguous (expected {expected})"
            )
        seen.append(feats)
    out = []
    for unit in sorted(rows):
        feats = np.array(rows[unit], dtype=np.float64)
        out.append(
            EngineTrajectory(
                unit_id=unit,
                cycles=np.arange(1, len(feats) + 1, dtype=np.int64),
                settings=feats[:, :N_SETTINGS].copy(),
                sensors=feats[:, N_SETTINGS:].copy(),
            )
        )
    return out


def parse_line(line: str, lineno: int = 0):
    """One telemetry line -> (unit, cycle, 24 features), or None for a blank line."""
    fields = line.split()
    if not fields:
        return None
    if len(fields) != N_COLUMNS:
        raise DataFormatError(f"line {lineno}: expected {N_COLUMNS} fields, got {len(fields)}")
    try:
        values = [float(f) for f in fields]
    except ValueError as exc:
        raise DataFormatError(f"line {lineno}: non-numeric field ({exc})") from None
    if not all(np.isfinite(values)):
        raise DataFormatError(f"line {lineno}: non-finite field")
    unit, cycle = values[0], values[1]
    if unit != int(unit) or cycle != int(cycle) or unit < 1 or cycle < 1:
        raise DataFormatError(f"line {lineno}: unit and cycle must be positive integers")
    return int(unit), int(cycle), values[2:]


def format_trajectories(fleet: Sequence[EngineTrajectory]) -> str:
    """Inverse of :func:`parse_trajectories` (``repr`` floats keep the round trip exact)."""
    out = []
    for traj in fleet:
        for t in range(len(traj)):
            vals = [repr(float(v)) for v in traj.settings[t]] + [repr(float(v)) for v in traj.sensors[t]]
            out.append(f"{traj.unit_id} {int(traj.cycles[t])} " + " ".join(vals))
    return "\n".join(out) + ("\n" if out else "")


def parse_rul_file(text) -> list[int]:
    lines = text.splitlines() if isinstance(text, str) else text
    out = []
    for lineno, line in enumerate(lines, start=1):
        s = line.strip()
        if not s:
            continue
        try:
            v = int(s)
        except ValueError:
            raise DataFormatError(f"line {lineno}: RUL value {s!r} is not an integer") from None
        if v < 0:
            raise DataFormatError(f"line {lineno}: negative RUL {v}")
        out.append(v)
    return out


def attach_rul(traj: EngineTrajectory, final_rul: int = 0) -> EngineTrajectory:
    if final_rul < 0:
        raise ValueError("final_rul must be non-negative")
    rul = final_rul + (traj.last_cycle - traj.cycles)
    return replace(traj, rul=rul.astype(np.int64))


def regime_key(settings_row) -> tuple:
    # + 0.0 folds -0.0 into 0.0
    return tuple(float(round(float(s), 1)) + 0.0 for s in settings_row)


def fit_normalization(fleet: Sequence[EngineTrajectory], regime_mode: bool = False) -> NormStats:
    if not fleet:
        raise ValueError("cannot fit normalization on an empty fleet")
    x = np.vstack([t.features for t in fleet])
    stats = NormStats(mean=x.mean(axis=0), std=x.std(axis=0))
    if regime_mode:
        keys = [regime_key(r) for r in x[:, :N_SETTINGS]]
        groups: dict[tuple, list[int]] = {}
        for i, k in enumerate(keys):
            groups.setdefault(k, []).append(i)
        for k in sorted(groups):
            xs = x[groups[k]]
            stats.regimes[k] = (xs.mean(axis=0), xs.std(axis=0))
    return stats


def normalize_rows(x: np.ndarray, stats: NormStats) -> np.ndarray:
    """z-score an (n, 24) feature array; zero-variance features map to 0."""
    x = np.asarray(x, dtype=np.float64)
    if not stats.regime_mode:
        return _zscore(x, stats.mean, stats.std)
    out = np.empty_like(x)
    for i, row in enumerate(x):
        key = regime_key(row[:N_SETTINGS])
        if key not in stats.regimes:
            raise KeyError(f"operating regime {key} not seen when fitting normalization")
        m, s = stats.regimes[key]
        out[i] = _zscore(row, m, s)
    return out


def _zscore(x, mean, std):
    safe = np.where(std > 0, std, 1.0)
    return np.where(std > 0, (x - mean) / safe, 0.0)


def apply_normalization(fleet: Sequence[EngineTrajectory], stats: NormStats) -> list[EngineTrajectory]:
    out = []
    for t in fleet:
        z = normalize_rows(t.features, stats)
        out.append(replace(t, settings=z[:, :N_SETTINGS], sensors=z[:, N_SETTINGS:]))
    return out


def make_label(rul: int, scheme: LabelScheme) -> int:
    if rul < 0:
        raise ValueError("rul must be non-negative")
    if scheme.mode == "binary":
        return int(rul <= scheme.horizon)
    for k, w in enumerate(scheme.boundaries):
        if rul <= w:
            return k
    return len(scheme.boundaries)


def make_windows(
    traj: EngineTrajectory, length: int = 50, stride: int = 1, scheme: Optional[LabelScheme] = None
) -> list[WindowSample]:
    if traj.rul is None:
        raise ValueError(f"unit {traj.unit_id}: attach RUL before windowing")
    scheme = scheme or LabelScheme()
    x = traj.features
    out = []
    for end in range(length, len(traj) + 1, stride):
        rul = int(traj.rul[end - 1])
        out.append(
            WindowSample(
                unit_id=traj.unit_id,
                end_cycle=int(traj.cycles[end - 1]),
                features=x[end - length:end],
                label=make_label(rul, scheme),
                rul_at_end=rul,
            )
        )
    return out


def stack_windows(samples: Sequence[WindowSample]):
    """(X, y, units) arrays for training."""
    if not samples:
        return np.zeros((0, 0, N_FEATURES)), np.zeros(0), np.zeros(0, dtype=np.int64)
    x = np.stack([s.features for s in samples])
    y = np.array([s.label for s in samples], dtype=np.float64)
    units = np.array([s.unit_id for s in samples], dtype=np.int64)
    return x, y, units


@dataclass
class Dataset:
    subset: str
    train: list[EngineTrajectory]
    test: list[EngineTrajectory]
    test_rul: list[int]


def resolve_data_dir(data_dir=None) -> Path:
    d = data_dir or os.environ.get("RUL_DATA_DIR")
    if not d:
        raise FileNotFoundError("no data directory given (use --data-dir or set RUL_DATA_DIR)")
    return Path(d)


def load_subset(data_dir, subset: str = "FD001") -> Dataset:
    """Read train/test/RUL files of one subset and attach RUL to every trajectory."""
    if subset not in SUBSETS:
        raise ValueError(f"unknown subset {subset!r}; expected one of {SUBSETS}")
    d = resolve_data_dir(data_dir)
    paths = {k: d / f"{k}_{subset}.txt" for k in ("train", "test", "RUL")}
    for p in paths.values():
        if not p.is_file():
            raise FileNotFoundError(f"missing data file: {p}")
    train = [attach_rul(t, 0) for t in parse_trajectories(paths["train"].read_text())]
    test = parse_trajectories(paths["test"].read_text())
    rul = parse_rul_file(paths["RUL"].read_text())
    if len(rul) != len(test):
        raise DataFormatError(f"{paths['RUL']}: {len(rul)} RUL values for {len(test)} test units")
    test = [attach_rul(t, r) for t, r in zip(test, rul)]
    return Dataset(subset=subset, train=train, test=test, test_rul=rul)


def windows_for_fleet(fleet: Iterable[EngineTrajectory], length: int, scheme: LabelScheme) -> list[WindowSample]:
    out = []
    for t in sorted(fleet, key=lambda t: t.unit_id):
        out.extend(make_windows(t, length, 1, scheme))
    return out
