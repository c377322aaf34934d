"""Command-line entry point: ingest, train, predict, evaluate, compare, stream."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import cmapss
from .brnn import DropoutSpec
from .cmapss import LabelScheme
from .evaluate import classify_metrics, compare, export_plot_data, plot_csv_text
from .ndmath import Rng
from .predict import (
    DEFAULT_SAMPLES,
    align_to_warning_window,
    baseline_forecast,
    forecast_engine,
    format_record,
    stream_predict,
)
from .train import ModelFormatError, TrainConfig, TrainingError, load_model, save_model, train

log = logging.getLogger("pmbrnn")


def positive_int(s: str) -> int:
    try:
        v = int(s)
    except ValueError:
        raise argparse.ArgumentTypeError(f"{s!r} is not an integer") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {v}")
    return v


def rate(s: str) -> float:
    v = float(s)
    if not 0.0 <= v < 1.0:
        raise argparse.ArgumentTypeError(f"dropout rate must be in [0, 1), got {v}")
    return v


def _add_data_args(p):
    p.add_argument("--data-dir", default=None, help="directory holding train_/test_/RUL_FD00x.txt (default: $RUL_DATA_DIR)")
    p.add_argument("--subset", default="FD001", choices=cmapss.SUBSETS)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pmbrnn", description="Bayesian LSTM failure-window forecasting on C-MAPSS data")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="parse and normalize a subset, print counts and stats")
    _add_data_args(p)
    p.add_argument("--regime-normalize", action="store_true")
    p.add_argument("--window", type=positive_int, default=50)

    p = sub.add_parser("train", help="train a model on a subset's training fleet")
    _add_data_args(p)
    p.add_argument("--out", required=True, help="model file to write")
    p.add_argument("--report", default=None, help="epoch report CSV (default: <out>.report.csv)")
    p.add_argument("--regime-normalize", action="store_true")
    p.add_argument("--horizon", type=positive_int, default=30)
    p.add_argument("--window", type=positive_int, default=50)
    p.add_argument("--hidden", type=positive_int, nargs=2, default=(100, 50), metavar=("H1", "H2"))
    p.add_argument("--dropout", type=rate, nargs=3, default=(0.10, 0.10, 0.20),
                   metavar=("LAYER2_IN", "RECURRENT", "DENSE_IN"))
    p.add_argument("--validation-fraction", type=float, default=0.10)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--batch-size", type=positive_int, default=64)
    p.add_argument("--epochs", type=int, default=200, help="maximum epochs")
    p.add_argument("--patience", type=positive_int, default=10)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("predict", help="MC-dropout forecast for one test engine (CSV)")
    _add_data_args(p)
    p.add_argument("--model", required=True)
    p.add_argument("--unit", type=positive_int, required=True)
    p.add_argument("--samples", type=positive_int, default=DEFAULT_SAMPLES)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None, help="CSV path (default: standard output)")

    p = sub.add_parser("evaluate", help="metrics of the MC median on the test fleet (JSON)")
    _add_data_args(p)
    p.add_argument("--model", required=True)
    p.add_argument("--samples", type=positive_int, default=DEFAULT_SAMPLES)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threshold", type=float, default=0.5)

    p = sub.add_parser("compare", help="BRNN vs deterministic baseline (JSON + plot CSVs)")
    _add_data_args(p)
    p.add_argument("--model", required=True)
    p.add_argument("--samples", type=positive_int, default=DEFAULT_SAMPLES)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--out-dir", default=".", help="directory for the plot CSVs")
    p.add_argument("--unit", type=positive_int, default=None, help="engine for the single-engine plot")

    p = sub.add_parser("stream", help="line-in/JSON-out streaming inference")
    p.add_argument("--model", required=True)
    p.add_argument("--samples", type=positive_int, default=DEFAULT_SAMPLES)
    p.add_argument("--seed", type=int, default=0)
    return parser


def _load(path):
    params, config, stats = load_model(path)
    if stats is None:
        raise ModelFormatError(f"{path}: model has no normalization stats")
    return params, config, stats


def _test_fleet(args, config, stats):
    data = cmapss.load_subset(args.data_dir, args.subset)
    test = cmapss.apply_normalization(data.test, stats)
    return [t for t in test if len(t) >= config.window_length], data


def _forecasts(args, params, config, stats):
    fleet, _ = _test_fleet(args, config, stats)
    out = []
    for t in fleet:
        log.info("forecasting unit %d", t.unit_id)
        out.append(forecast_engine(params, config.dropout, t, args.samples, args.seed, config.window_length, config.horizon))
    return out, fleet


def cmd_ingest(args) -> int:
    data = cmapss.load_subset(args.data_dir, args.subset)
    stats = cmapss.fit_normalization(data.train, args.regime_normalize)
    train = cmapss.apply_normalization(data.train, stats)
    scheme = LabelScheme(horizon=30)
    windows = sum(len(cmapss.make_windows(t, args.window, 1, scheme)) for t in train)
    out = {
        "subset": args.subset,
        "train_units": len(data.train),
        "test_units": len(data.test),
        "train_rows": sum(len(t) for t in data.train),
        "test_rows": sum(len(t) for t in data.test),
        "train_windows": windows,
        "regimes": len(stats.regimes),
        "mean": stats.mean.tolist(),
        "std": stats.std.tolist(),
    }
    print(json.dumps(out, indent=1))
    return 0


def cmd_train(args) -> int:
    config = TrainConfig(
        window_length=args.window, horizon=args.horizon,
        hidden1=args.hidden[0], hidden2=args.hidden[1],
        dropout=DropoutSpec(*args.dropout),
        validation_fraction=args.validation_fraction, learning_rate=args.lr,
        batch_size=args.batch_size, max_epochs=args.epochs, patience=args.patience, seed=args.seed,
    )
    data = cmapss.load_subset(args.data_dir, args.subset)
    stats = cmapss.fit_normalization(data.train, args.regime_normalize)
    fleet = cmapss.apply_normalization(data.train, stats)
    samples = cmapss.windows_for_fleet(fleet, config.window_length, LabelScheme(horizon=config.horizon))
    params, report = train(config, samples, Rng(config.seed))
    save_model(params, config, args.out, stats)
    report_path = Path(args.report) if args.report else Path(str(args.out) + ".report.csv")
    report_path.write_text(report.to_csv())
    print(json.dumps({"model": str(args.out), "report": str(report_path), "best_epoch": report.best_epoch,
                      "epochs_run": len(report.epochs), "stop_reason": report.stop_reason}))
    return 0


def cmd_predict(args) -> int:
    params, config, stats = _load(args.model)
    data = cmapss.load_subset(args.data_dir, args.subset)
    traj = next((t for t in data.test if t.unit_id == args.unit), None)
    if traj is None:
        raise ValueError(f"unit {args.unit} not in test_{args.subset}")
    traj = cmapss.apply_normalization([traj], stats)[0]
    fc = forecast_engine(params, config.dropout, traj, args.samples, args.seed, config.window_length, config.horizon)
    if args.out:
        export_plot_data([fc], args.out)
    else:
        sys.stdout.write(plot_csv_text([fc]))
    return 0


def cmd_evaluate(args) -> int:
    params, config, stats = _load(args.model)
    forecasts, _ = _forecasts(args, params, config, stats)
    print(json.dumps(classify_metrics(forecasts, args.threshold).to_dict(), indent=1))
    return 0


def cmd_compare(args) -> int:
    params, config, stats = _load(args.model)
    forecasts, fleet = _forecasts(args, params, config, stats)
    base = [baseline_forecast(params, t, config.window_length, config.horizon) for t in fleet]
    report = compare(forecasts, base, config.horizon, args.threshold)
    aligned = align_to_warning_window(forecasts, config.horizon)
    aligned_base = align_to_warning_window(base, config.horizon)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    unit = args.unit if args.unit is not None else (aligned.included[0] if aligned.included else forecasts[0].unit_id)
    single = [f for f in forecasts if f.unit_id == unit]
    if not single:
        raise ValueError(f"unit {unit} has no forecast")
    files = {
        "single_engine": str(export_plot_data(single, out / "single_engine.csv")),
    }
    if aligned.rows:
        files["aligned_fleet"] = str(export_plot_data(aligned, out / "aligned_fleet.csv"))
        files["baseline"] = str(export_plot_data(aligned_base, out / "baseline_aligned.csv"))
    doc = report.to_dict()
    doc["plot_files"] = files
    doc["aligned_excluded"] = {str(k): v for k, v in sorted(aligned.excluded.items())}
    print(json.dumps(doc, indent=1))
    return 0


def cmd_stream(args) -> int:
    params, config, stats = _load(args.model)
    for rec in stream_predict(params, config.dropout, stats, sys.stdin, args.samples, args.seed, config.window_length):
        sys.stdout.write(format_record(rec) + "\n")
        sys.stdout.flush()
    return 0


COMMANDS = {
    "ingest": cmd_ingest,
    "train": cmd_train,
    "predict": cmd_predict,
    "evaluate": cmd_evaluate,
    "compare": cmd_compare,
    "stream": cmd_stream,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s", stream=sys.stderr)
    try:
        return COMMANDS[args.command](args)
    except (OSError, ValueError, KeyError, TrainingError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"pmbrnn {args.command}: error: {msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
