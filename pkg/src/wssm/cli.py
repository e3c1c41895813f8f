"""Command-line entry point: ``wssm synth|train|eval|forecast``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import fields
from pathlib import Path

from . import data
from .data import (DEFAULT_SPLITS, HOUR, VARIABLES, NormStats, OrderingError, ParseError, build_windows,
                   chrono_split, fit_norm, format_timestamp, load_dataset, load_station, parse_timestamp)
from .embedding import ConfigurationError
from .metrics import EmptyReportError, ExtremeThresholds, fit_thresholds, report, report_csv, report_table
from .model import CheckpointError, WssmConfig, forward, load_checkpoint
from .training import TrainConfig, TrainingAborted, predict, train

log = logging.getLogger("wssm")

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2

DATA_KEYS = {
    "root": None,
    "train_years": list(DEFAULT_SPLITS["train"]),
    "val_years": list(DEFAULT_SPLITS["val"]),
    "test_years": list(DEFAULT_SPLITS["test"]),
    "eval_stride": 1,
}
OUTPUT_KEYS = {"dir": None}


class UsageError(Exception):
    """Bad flags, config or inputs; maps to exit code 2."""


# config file ----------------------------------------------------------------------


def _parse_value(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def parse_config_text(text: str, source: str = "<config>") -> dict:
    """Parse flat ``section.key = value`` lines into ``{section: {key: value}}``.

    Values are JSON literals where they parse as such, otherwise bare strings.
    """
    known = {
        "model": {f.name for f in fields(WssmConfig)},
        "train": {f.name for f in fields(TrainConfig)},
        "data": set(DATA_KEYS),
        "output": set(OUTPUT_KEYS),
    }
    out = {name: {} for name in known}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep or not value.strip():
            raise UsageError(f"{source}:{lineno}: expected 'section.key = value'")
        section, dot, name = key.partition(".")
        if not dot or section not in known or name not in known[section]:
            raise UsageError(f"{source}:{lineno}: unknown config key {key!r}")
        out[section][name] = _parse_value(value.strip())
    return out


def load_config(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise UsageError(f"config file not found: {path}")
    return parse_config_text(path.read_text(), str(path))


def _splits(data_cfg):
    return {name: tuple(int(y) for y in data_cfg[f"{name}_years"]) for name in ("train", "val", "test")}


def _load_data_root(root):
    if root is None:
        raise UsageError("no dataset given (use --data or data.root)")
    root = Path(root)
    if not root.is_dir():
        raise UsageError(f"dataset directory not found: {root}")
    try:
        return load_dataset(root)
    except FileNotFoundError as exc:
        raise UsageError(str(exc)) from exc


# commands -------------------------------------------------------------------------------


def cmd_synth(args):
    series, _ = data.gen_synthetic(args.stations, args.years, args.seed, args.start_year)
    data.write_dataset(args.out, series)
    print(f"wrote {len(series)} stations to {args.out}")


def cmd_train(args):
    cfg = load_config(args.config) if args.config else parse_config_text("")
    overrides = {
        ("data", "root"): args.data,
        ("output", "dir"): args.out,
        ("model", "lead"): args.lead,
        ("train", "max_iters"): args.iters,
        ("train", "batch_size"): args.batch_size,
        ("train", "base_lr"): args.lr,
        ("train", "seed"): args.seed,
    }
    for (section, key), value in overrides.items():
        if value is not None:
            cfg[section][key] = value
    data_cfg = {**DATA_KEYS, **cfg["data"]}
    out_dir = cfg["output"].get("dir")
    if out_dir is None:
        raise UsageError("no output directory given (use --out or output.dir)")
    try:
        model_cfg = WssmConfig.from_dict(cfg["model"])
        train_cfg = TrainConfig.from_dict(cfg["train"])
        model_cfg.validate()
        train_cfg.validate()
    except TypeError as exc:
        raise UsageError(f"bad config value: {exc}") from exc

    splits = chrono_split(_load_data_root(data_cfg["root"]), _splits(data_cfg))
    if not splits["train"]:
        raise UsageError("training split is empty")
    norm = fit_norm(splits["train"])
    thresholds = fit_thresholds(splits["train"])
    T, H = model_cfg.input_len, model_cfg.lead
    train_set = build_windows(splits["train"], T, H, norm, train_cfg.window_stride)
    val_set = build_windows(splits["val"], T, H, norm, int(data_cfg["eval_stride"]))
    if len(val_set) and not train_cfg.val_every:
        train_cfg.val_every = max(1, train_cfg.max_iters // 10)
    log.info("train windows %d, val windows %d", len(train_set), len(val_set))
    manifest = {
        "lead": H,
        "norm": norm.to_dict(),
        "thresholds": thresholds.to_dict(),
        "data": {k: v for k, v in data_cfg.items() if k != "root"},
    }

    def progress(it, lr, loss):
        if (it + 1) % max(1, train_cfg.max_iters // 20) == 0:
            log.info("iteration %d lr %.3g loss %.6f", it + 1, lr, loss)

    result = train(model_cfg, train_cfg, train_set, val_set, out_dir=out_dir, manifest=manifest,
                   callback=progress)
    final_loss = result.history[-1][2]
    print(f"final.ckpt iteration {train_cfg.max_iters} train_loss {final_loss:.6f}")
    if result.val_history:
        print(f"final.ckpt val_loss {result.val_history[-1][1]:.6f}")
        print(f"best.ckpt iteration {result.best_iteration} val_loss {result.best_val:.6f}")


def _checkpoint(path):
    path = Path(path)
    if not path.is_file():
        raise UsageError(f"checkpoint not found: {path}")
    try:
        ckpt = load_checkpoint(path)
    except ConfigurationError as exc:
        raise CheckpointError(f"{path}: {exc}") from exc
    for key in ("norm", "thresholds", "lead"):
        if key not in ckpt.extra:
            raise CheckpointError(f"{path}: manifest lacks {key!r}")
    if ckpt.extra["lead"] != ckpt.config.lead:
        raise CheckpointError(f"{path}: manifest lead {ckpt.extra['lead']} != model lead {ckpt.config.lead}")
    return ckpt


def cmd_eval(args):
    ckpt = _checkpoint(args.ckpt)
    cfg = ckpt.config
    norm = NormStats.from_dict(ckpt.extra["norm"])
    thresholds = ExtremeThresholds.from_dict(ckpt.extra["thresholds"])
    data_cfg = {**DATA_KEYS, **ckpt.extra.get("data", {})}
    stride = args.stride if args.stride is not None else int(data_cfg["eval_stride"])
    splits = chrono_split(_load_data_root(args.data), _splits(data_cfg))
    windows = build_windows(splits[args.split], cfg.input_len, cfg.lead, norm, stride)
    if not len(windows):
        raise UsageError(f"split {args.split!r} has no windows of length {cfg.input_len + cfg.lead}")
    pred = norm.denormalize(predict(ckpt.params, cfg, windows))
    true = norm.denormalize(windows.y)
    rows = report(pred, true, thresholds, cfg.lead)
    out = Path(args.report) if args.report else Path(args.ckpt).with_name(
        f"{Path(args.ckpt).stem}_{args.split}_report.csv")
    out.write_text(report_csv(rows))
    print(report_table(rows))
    print(f"report written to {out}")


def cmd_forecast(args):
    ckpt = _checkpoint(args.ckpt)
    cfg = ckpt.config
    norm = NormStats.from_dict(ckpt.extra["norm"])
    csv_path = Path(args.station[0])
    meta_path = Path(args.station[1]) if len(args.station) > 1 else csv_path.with_suffix(".json")
    for p in (csv_path, meta_path):
        if not p.is_file():
            raise UsageError(f"station file not found: {p}")
    try:
        end = parse_timestamp(args.start)
    except ValueError as exc:
        raise UsageError(f"bad --start: {exc}") from exc
    T, H = cfg.input_len, cfg.lead
    first = end - (T - 1) * HOUR
    segment = next((s for s in load_station(csv_path, meta_path) if s.start <= first and end <= s.end), None)
    if segment is None:
        raise UsageError(f"insufficient history: need T={T} contiguous hours ending at {args.start}")
    i = int((first - segment.start) // HOUR)
    x = norm.normalize(segment.values[:, i:i + T])
    past = segment.stamps(i, i + T)
    future = [end + (k + 1) * HOUR for k in range(H)]
    values = norm.denormalize(forward(ckpt.params, cfg, x, segment.meta, past, future))
    out = Path(args.out)
    lines = ["timestamp,variable,value"]
    for k, ts in enumerate(future):
        stamp = format_timestamp(ts)
        lines.extend(f"{stamp},{name},{values[m, k]:.6f}" for m, name in enumerate(VARIABLES))
    out.write_text("\n".join(lines) + "\n")
    print(f"wrote {len(future) * len(VARIABLES)} forecast rows to {out}")


# argument parsing ---------------------------------------------------------------------------


def _positive_int(text):
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {value}")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="wssm", description="Station weather forecasting with selective state spaces.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic station dataset")
    p.add_argument("--stations", type=_positive_int, required=True, help="number of stations (>= 1)")
    p.add_argument("--years", type=_positive_int, default=1, help="calendar years per station")
    p.add_argument("--seed", type=int, default=0, help="generator seed")
    p.add_argument("--start-year", type=int, default=2014, help="first calendar year")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a model and write checkpoints")
    p.add_argument("--config", help="flat 'section.key = value' config file")
    p.add_argument("--data", help="dataset directory (overrides data.root)")
    p.add_argument("--out", help="output directory (overrides output.dir)")
    p.add_argument("--lead", type=_positive_int, help="forecast horizon in hours (overrides model.lead)")
    p.add_argument("--iters", type=_positive_int, help="overrides train.max_iters")
    p.add_argument("--batch-size", type=_positive_int, help="overrides train.batch_size")
    p.add_argument("--lr", type=float, help="overrides train.base_lr")
    p.add_argument("--seed", type=int, help="overrides train.seed")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a checkpoint on a data split")
    p.add_argument("--ckpt", required=True, help="checkpoint file")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--split", choices=("val", "test", "train"), default="test", help="split to score")
    p.add_argument("--stride", type=_positive_int, help="window stride (default: from the checkpoint)")
    p.add_argument("--report", help="CSV report path (default: beside the checkpoint)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("forecast", help="forecast one station from its recent history")
    p.add_argument("--ckpt", required=True, help="checkpoint file")
    p.add_argument("--station", nargs="+", required=True, metavar="FILE",
                   help="station CSV, optionally followed by its metadata JSON")
    p.add_argument("--start", required=True, help="last observed hour, YYYY-MM-DDThh:00:00Z")
    p.add_argument("--out", default="forecast.csv", help="output CSV path")
    p.set_defaults(func=cmd_forecast)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        args.func(args)
    except (UsageError, ConfigurationError, CheckpointError, EmptyReportError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ParseError, OrderingError, TrainingAborted, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
