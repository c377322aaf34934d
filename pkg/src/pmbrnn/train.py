"""Mini-batch Adam training with a unit-level validation split, early stopping and model files."""

from __future__ import annotations

import base64
import csv
import io
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import brnn
from .brnn import Dims, DropoutSpec, NetworkParams
from .cmapss import NormStats, WindowSample
from .ndmath import Rng

log = logging.getLogger(__name__)

FORMAT_VERSION = 1


class TrainingError(RuntimeError):
    pass


class ModelFormatError(ValueError):
    pass


@dataclass
class TrainConfig:
    window_length: int = 50
    horizon: int = 30
    hidden1: int = 100
    hidden2: int = 50
    input_dim: int = 24
    dropout: DropoutSpec = field(default_factory=DropoutSpec)
    validation_fraction: float = 0.10
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 64
    max_epochs: int = 200
    patience: int = 10
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.dropout, dict):
            self.dropout = DropoutSpec(**self.dropout)
        if not 0.0 < self.validation_fraction < 1.0:
            raise ValueError("validation_fraction must be in (0, 1)")
        if self.batch_size < 1 or self.max_epochs < 0 or self.patience < 1:
            raise ValueError("batch_size and patience must be >= 1, max_epochs >= 0")
        if self.window_length < 1 or self.horizon < 1:
            raise ValueError("window_length and horizon must be positive")

    @property
    def dims(self) -> Dims:
        return Dims(self.input_dim, self.hidden1, self.hidden2)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class AdamState:
    m: list
    v: list
    t: int = 0

    @classmethod
    def fresh(cls, params: NetworkParams) -> "AdamState":
        return cls([np.zeros_like(a) for a in params.arrays()], [np.zeros_like(a) for a in params.arrays()], 0)


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    val_accuracy: float


@dataclass
class TrainReport:
    epochs: list = field(default_factory=list)
    best_epoch: int = 0
    stop_reason: str = ""

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["epoch", "train_loss", "val_loss"])
        for e in self.epochs:
            w.writerow([e.epoch, repr(e.train_loss), repr(e.val_loss)])
        return buf.getvalue()


def split_validation(samples: Sequence[WindowSample], fraction: float, rng: Rng):
    """Partition samples by engine unit; about ``fraction`` of the units go to validation."""
    if not 0.0 < fraction < 1.0:
        raise ValueError("fraction must be in (0, 1)")
    units = sorted({s.unit_id for s in samples})
    if len(samples) < 2 or len(units) < 2:
        raise ValueError(f"need at least 2 units to split, got {len(units)}")
    n_val = min(max(1, int(round(fraction * len(units)))), len(units) - 1)
    order = rng.permutation(len(units))
    val_units = {units[i] for i in order[:n_val]}
    train = [s for s in samples if s.unit_id not in val_units]
    val = [s for s in samples if s.unit_id in val_units]
    return train, val


def adam_step(params: NetworkParams, grads: NetworkParams, state: AdamState, config: TrainConfig):
    """One Adam update, in place.  Returns ``(params, state)``."""
    garrs = grads.arrays()
    for name, g in zip(NetworkParams.NAMES, garrs):
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient in {name} at step {state.t + 1}")
    state.t += 1
    b1, b2 = config.beta1, config.beta2
    bc1 = 1.0 - b1 ** state.t
    bc2 = 1.0 - b2 ** state.t
    for p, g, m, v in zip(params.arrays(), garrs, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= config.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + config.eps)
    return params, state


def evaluate_loss(params: NetworkParams, x: np.ndarray, y: np.ndarray, chunk: int = 512):
    """Mean BCE and accuracy with dropout off."""
    if len(x) == 0:
        return float("nan"), float("nan")
    total = 0.0
    correct = 0
    for s in range(0, len(x), chunk):
        p, _ = brnn.forward(params, x[s:s + chunk])
        total += float(np.sum(brnn.bce_loss(p, y[s:s + chunk])))
        correct += int(np.sum((p >= 0.5) == (y[s:s + chunk] >= 0.5)))
    return total / len(x), correct / len(x)


def _arrays(samples):
    x = np.stack([s.features for s in samples]).astype(np.float64)
    y = np.array([s.label for s in samples], dtype=np.float64)
    return x, y


def train(config: TrainConfig, samples: Sequence[WindowSample], rng: Optional[Rng] = None):
    """Train a network; returns ``(params, report)`` with the best-validation weights."""
    if not samples:
        raise ValueError("no training samples")
    if any(s.label not in (0, 1) for s in samples):
        raise ValueError("the network has a single sigmoid output; labels must be binary")
    rng = rng or Rng(config.seed)
    dims = config.dims
    train_set, val_set = split_validation(samples, config.validation_fraction, rng.derive(1))
    params = brnn.init_params(rng.derive(2), dims)
    report = TrainReport()
    if config.max_epochs == 0:
        report.stop_reason = "max_epochs"
        return params, report

    x, y = _arrays(train_set)
    xv, yv = _arrays(val_set)
    if x.shape[1:] != (config.window_length, dims.input_dim):
        raise ValueError(f"window shape {x.shape[1:]} does not match config")
    state = AdamState.fresh(params)
    best = params.copy()
    best_loss = math.inf
    stale = 0
    n = len(x)
    for epoch in range(1, config.max_epochs + 1):
        order = rng.derive(3, epoch).permutation(n)
        mask_rng = rng.derive(4, epoch)
        total = 0.0
        for bi, s in enumerate(range(0, n, config.batch_size)):
            idx = order[s:s + config.batch_size]
            masks = brnn.sample_masks(mask_rng, config.dropout, dims, n=len(idx))
            p, cache = brnn.forward(params, x[idx], masks)
            batch_loss = float(np.sum(brnn.bce_loss(p, y[idx])))
            if not math.isfinite(batch_loss):
                raise TrainingError(f"non-finite loss at epoch {epoch}, batch {bi}")
            total += batch_loss
            grads = brnn.backward(params, cache, y[idx])
            for g in grads.arrays():
                g /= len(idx)
            try:
                adam_step(params, grads, state, config)
            except TrainingError as exc:
                raise TrainingError(f"epoch {epoch}, batch {bi}: {exc}") from None
        val_loss, val_acc = evaluate_loss(params, xv, yv)
        if not math.isfinite(val_loss):
            raise TrainingError(f"non-finite validation loss at epoch {epoch}")
        report.epochs.append(EpochRecord(epoch, total / n, val_loss, val_acc))
        log.info("epoch %d train_loss=%.5f val_loss=%.5f val_acc=%.4f", epoch, total / n, val_loss, val_acc)
        if val_loss < best_loss:
            best_loss = val_loss
            best = params.copy()
            report.best_epoch = epoch
            stale = 0
        else:
            stale += 1
            if stale >= config.patience:
                report.stop_reason = "early_stopping"
                break
    else:
        report.stop_reason = "max_epochs"
    return best, report


def _encode(a: np.ndarray) -> str:
    return base64.b64encode(np.ascontiguousarray(a, dtype="<f8").tobytes()).decode("ascii")


def save_model(params: NetworkParams, config: TrainConfig, path, stats: Optional[NormStats] = None) -> None:
    params.check()
    dims = params.dims
    doc = {
        "format_version": FORMAT_VERSION,
        "dims": {"input_dim": dims.input_dim, "hidden1": dims.hidden1, "hidden2": dims.hidden2},
        "dropout_spec": asdict(config.dropout),
        "config": config.to_dict(),
        "normalization": stats.to_dict() if stats is not None else None,
        "weights": {
            name: {"shape": list(a.shape), "data": _encode(a)}
            for name, a in zip(NetworkParams.NAMES, params.arrays())
        },
    }
    Path(path).write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")


def load_model(path):
    """Returns ``(params, config, stats)``; ``stats`` is None if the file has none."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"model file not found: {path}")
    try:
        doc = json.loads(path.read_text())
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise ModelFormatError(f"{path}: corrupt model file ({exc})") from None
    try:
        version = doc["format_version"]
        if version != FORMAT_VERSION:
            raise ModelFormatError(f"{path}: unsupported format_version {version} (expected {FORMAT_VERSION})")
        dims = Dims(**doc["dims"])
        config = TrainConfig(**doc["config"])
        if config.dims != dims:
            raise ModelFormatError(f"{path}: config dims {config.dims} disagree with header dims {dims}")
        h1, h2, d = dims.hidden1, dims.hidden2, dims.input_dim
        expected = {
            "layer1.W": (4 * h1, d), "layer1.U": (4 * h1, h1), "layer1.b": (4 * h1,),
            "layer2.W": (4 * h2, h1), "layer2.U": (4 * h2, h2), "layer2.b": (4 * h2,),
            "dense.w": (1, h2), "dense.b": (1,),
        }
        arrays = []
        for name in NetworkParams.NAMES:
            entry = doc["weights"][name]
            shape = tuple(entry["shape"])
            if shape != expected[name]:
                raise ModelFormatError(f"{path}: {name} has shape {shape}, expected {expected[name]}")
            raw = base64.b64decode(entry["data"], validate=True)
            if len(raw) != 8 * int(np.prod(shape)):
                raise ModelFormatError(f"{path}: {name} holds {len(raw)} bytes for shape {shape}")
            arrays.append(np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(shape))
        params = NetworkParams.from_arrays(arrays)
        stats = NormStats.from_dict(doc["normalization"]) if doc.get("normalization") else None
    except ModelFormatError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelFormatError(f"{path}: corrupt model file ({exc})") from None
    return params, config, stats
