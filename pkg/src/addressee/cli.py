"""Command-line driver: gen, train, eval, crossval, stream.

Every command writes a manifest next to its outputs with the full
effective configuration, input/output hashes, and timing, so any result
can be reproduced from disk alone.

Exit codes are a stable contract: 0 success, 2 config or validation
error, 3 IO error, 4 training failure, 5 pipeline failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .charts import render_bar_chart, render_grouped_bar_chart
from .core import (
    AddresseeClass,
    ConfigError,
    FormatError,
    InvalidInputError,
    NumericError,
    ProtocolError,
    TrainingError,
)
from .dataio import read_dataset, resolve_dataset_path, write_dataset
from .evaluate import (
    AGGREGATION_METHODS,
    GRANULARITIES,
    cross_validate,
    evaluate,
    kfold_split,
)
from .nn.model import Model, ModelConfig
from .nn.train import TrainConfig, train
from .nn.weights_io import load_weights, save_weights
from .pipeline import PipelineConfig, equivalence_check, run_replay
from .synthgen import ScenarioConfig, generate

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_TRAINING = 4
EXIT_PIPELINE = 5

_CLASS_NAMES = [cls.name for cls in AddresseeClass]


def _load_json(path: str | Path) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from exc


def _write_json(path: Path, obj):
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            digest.update(block)
    return digest.hexdigest()


def _file_entry(path: Path) -> dict:
    return {"path": str(path), "sha256": _sha256(path)}


def _write_manifest(path: Path, command: str, argv: list[str], config: dict,
                    inputs: dict[str, Path], outputs: list[Path], t_start: float):
    manifest = {
        "command": command,
        "argv": argv,
        "tool_version": __version__,
        "created_utc": datetime.now(timezone.utc).isoformat(),
        "duration_s": round(time.perf_counter() - t_start, 3),
        "config": config,
        "inputs": {name: _file_entry(p) for name, p in inputs.items()},
        "outputs": {p.name: _file_entry(p) for p in outputs},
    }
    _write_json(path, manifest)


def _model_config(args) -> ModelConfig:
    """Resolution order: explicit flag, then the weights' sidecar manifest,
    then defaults. A wrong guess is caught by the weights config hash."""
    if getattr(args, "model_config", None):
        return ModelConfig.from_dict(_load_json(args.model_config))
    weights = getattr(args, "weights", None)
    if weights:
        sidecar = Path(str(weights) + ".manifest.json")
        if sidecar.is_file():
            stored = _load_json(sidecar).get("config", {}).get("model_config")
            if stored:
                return ModelConfig.from_dict(stored)
    return ModelConfig()


def _confusion_csv(path: Path, matrix):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["true\\predicted"] + _CLASS_NAMES)
        for cls in AddresseeClass:
            writer.writerow([cls.name] + [int(v) for v in matrix[cls.value]])


# -- commands -------------------------------------------------------------


def cmd_gen(args) -> int:
    t0 = time.perf_counter()
    config = ScenarioConfig.from_dict(_load_json(args.config))
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    utterances = generate(config)
    dataset = out_dir / "dataset.jsonl"
    write_dataset(utterances, dataset)
    _write_manifest(out_dir / "manifest.json", "gen", list(args.argv),
                    {"scenario": config.to_dict()}, {}, [dataset], t0)
    n_frames = sum(len(u.frames) for u in utterances)
    print(f"wrote {len(utterances)} utterances ({n_frames} frames) to {dataset}")
    return EXIT_OK


def _split_train_val(utterances, val_fraction: float, seed: int):
    if not 0.0 <= val_fraction < 1.0:
        raise ConfigError("val fraction must be in [0, 1)")
    rng = np.random.Generator(np.random.PCG64([seed, 1]))
    order = rng.permutation(len(utterances))
    n_val = int(round(val_fraction * len(utterances)))
    val = [utterances[i] for i in order[:n_val]]
    tra = [utterances[i] for i in order[n_val:]]
    return tra, val


def cmd_train(args) -> int:
    t0 = time.perf_counter()
    data_path = resolve_dataset_path(args.data)
    utterances = read_dataset(data_path)
    model_cfg = (ModelConfig.from_dict(_load_json(args.model_config))
                 if args.model_config else ModelConfig())
    train_cfg = (TrainConfig.from_dict(_load_json(args.train_config))
                 if args.train_config else TrainConfig())
    train_utts, val_utts = _split_train_val(utterances, args.val_fraction, train_cfg.seed)

    def show(row):
        msg = f"epoch {row['epoch']:3d}  train loss {row['train_loss']:.4f}"
        if row["val_loss"] is not None:
            msg += f"  val loss {row['val_loss']:.4f}  val acc {row['val_accuracy']:.3f}"
        print(msg)

    model, history = train(train_utts, val_utts, model_cfg, train_cfg, progress=show)
    out_path = Path(args.out)
    if out_path.parent and not out_path.parent.exists():
        out_path.parent.mkdir(parents=True, exist_ok=True)
    save_weights(model, out_path)
    history_path = out_path.with_name(out_path.name + ".history.csv")
    with open(history_path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "train_loss", "val_loss", "val_accuracy"])
        for row in history:
            writer.writerow([row["epoch"], repr(row["train_loss"]),
                             "" if row["val_loss"] is None else repr(row["val_loss"]),
                             "" if row["val_accuracy"] is None else repr(row["val_accuracy"])])
    _write_manifest(out_path.with_name(out_path.name + ".manifest.json"), "train",
                    list(args.argv),
                    {"model_config": model_cfg.to_dict(),
                     "train_config": train_cfg.to_dict(),
                     "val_fraction": args.val_fraction},
                    {"dataset": data_path}, [out_path, history_path], t0)
    print(f"wrote weights to {out_path} ({len(history)} epochs)")
    return EXIT_OK


def _granularity_charts(out_dir: Path, reports: dict, sds: dict | None = None):
    """The two standard displays: weighted F1 by granularity, and per-class
    F1 grouped by class with one bar per granularity."""
    values = [reports[g].weighted_f1 for g in GRANULARITIES]
    errs = [sds[g]["weighted_f1"] for g in GRANULARITIES] if sds else None
    (out_dir / "f1_granularities.svg").write_text(
        render_bar_chart("Weighted F1 by granularity", list(GRANULARITIES), values,
                         errors=errs), encoding="utf-8")
    per_class = [[reports[g].per_class_f1[cls.value] for g in GRANULARITIES]
                 for cls in AddresseeClass]
    pc_errs = ([[sds[g][f"f1_{cls.name}"] for g in GRANULARITIES] for cls in AddresseeClass]
               if sds else None)
    (out_dir / "f1_per_class.svg").write_text(
        render_grouped_bar_chart("Per-class F1", _CLASS_NAMES, list(GRANULARITIES),
                                 per_class, errors=pc_errs), encoding="utf-8")


def cmd_eval(args) -> int:
    t0 = time.perf_counter()
    data_path = resolve_dataset_path(args.data)
    utterances = read_dataset(data_path)
    model_cfg = _model_config(args)
    model = load_weights(args.weights, model_cfg)
    reports = evaluate(model, utterances, method=args.method)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    report_path = out_dir / "report.json"
    _write_json(report_path, {
        "n_utterances": len(utterances),
        "aggregation_method": args.method,
        "granularity_reports": {g: reports[g].to_dict() for g in GRANULARITIES},
    })
    outputs = [report_path]
    for g in GRANULARITIES:
        p = out_dir / f"confusion_{g}.csv"
        _confusion_csv(p, reports[g].confusion)
        outputs.append(p)
    _granularity_charts(out_dir, reports)
    outputs += [out_dir / "f1_granularities.svg", out_dir / "f1_per_class.svg"]
    _write_manifest(out_dir / "manifest.json", "eval", list(args.argv),
                    {"model_config": model_cfg.to_dict(), "method": args.method},
                    {"dataset": data_path, "weights": Path(args.weights)}, outputs, t0)
    for g in GRANULARITIES:
        print(f"{g:15s} weighted F1 {reports[g].weighted_f1:.4f}  "
              f"macro F1 {reports[g].macro_f1:.4f}  n {reports[g].n_items}")
    return EXIT_OK


def cmd_crossval(args) -> int:
    t0 = time.perf_counter()
    data_path = resolve_dataset_path(args.data)
    utterances = read_dataset(data_path)
    model_cfg = (ModelConfig.from_dict(_load_json(args.model_config))
                 if args.model_config else ModelConfig())
    train_cfg = (TrainConfig.from_dict(_load_json(args.train_config))
                 if args.train_config else TrainConfig())

    def show(fold, reports):
        print(f"fold {fold + 1}/{args.k}: utterance weighted F1 "
              f"{reports['utterance'].weighted_f1:.4f}")

    result = cross_validate(utterances, model_cfg, train_cfg, k=args.k,
                            seed=args.seed, val_fraction=args.val_fraction,
                            method=args.method, progress=show)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    cv_path = out_dir / "crossval.json"
    _write_json(cv_path, {
        "k": args.k, "seed": args.seed, "n_utterances": len(utterances),
        "aggregation_method": args.method,
        "summary": result.summary,
        "folds": [{"fold": i, "reports": {g: reports[g].to_dict() for g in GRANULARITIES}}
                  for i, reports in enumerate(result.fold_reports)],
    })
    split = kfold_split(utterances, k=args.k, seed=args.seed)
    assign_path = out_dir / "fold_assignments.json"
    _write_json(assign_path, {"k": args.k, "seed": args.seed, "fold_of": split.fold_of})

    folds_csv = out_dir / "folds.csv"
    metrics = ["weighted_f1", "macro_f1"] + [f"f1_{c}" for c in _CLASS_NAMES]
    with open(folds_csv, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["fold", "granularity"] + metrics)
        for i, reports in enumerate(result.fold_reports):
            for g in GRANULARITIES:
                rep = reports[g]
                row = [i, g, repr(rep.weighted_f1), repr(rep.macro_f1)]
                row += [repr(rep.per_class_f1[c.value]) for c in AddresseeClass]
                writer.writerow(row)

    means = [result.summary[g]["weighted_f1"]["mean"] for g in GRANULARITIES]
    sds = [result.summary[g]["weighted_f1"]["sd"] for g in GRANULARITIES]
    (out_dir / "f1_granularities.svg").write_text(
        render_bar_chart(f"Weighted F1 by granularity ({args.k}-fold, mean | SD)",
                         list(GRANULARITIES), means, errors=sds), encoding="utf-8")
    pc_vals = [[result.summary[g][f"f1_{cls.name}"]["mean"] for g in GRANULARITIES]
               for cls in AddresseeClass]
    pc_errs = [[result.summary[g][f"f1_{cls.name}"]["sd"] for g in GRANULARITIES]
               for cls in AddresseeClass]
    (out_dir / "f1_per_class.svg").write_text(
        render_grouped_bar_chart(f"Per-class F1 ({args.k}-fold, mean | SD)",
                                 _CLASS_NAMES, list(GRANULARITIES), pc_vals,
                                 errors=pc_errs), encoding="utf-8")

    outputs = [cv_path, assign_path, folds_csv,
               out_dir / "f1_granularities.svg", out_dir / "f1_per_class.svg"]
    _write_manifest(out_dir / "manifest.json", "crossval", list(args.argv),
                    {"model_config": model_cfg.to_dict(),
                     "train_config": train_cfg.to_dict(),
                     "k": args.k, "seed": args.seed,
                     "val_fraction": args.val_fraction, "method": args.method},
                    {"dataset": data_path}, outputs, t0)
    for g in GRANULARITIES:
        s = result.summary[g]["weighted_f1"]
        print(f"{g:15s} weighted F1 {s['mean']:.4f} +/- {s['sd']:.4f}")
    return EXIT_OK


def cmd_stream(args) -> int:
    t0 = time.perf_counter()
    data_path = resolve_dataset_path(args.data)
    utterances = read_dataset(data_path)
    model_cfg = _model_config(args)
    model = load_weights(args.weights, model_cfg)
    config = PipelineConfig(mode="realtime" if args.realtime else "afap",
                            queue_capacity=args.queue_capacity)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    result = run_replay(model, utterances, config, method=args.method)
    events_path = out_dir / "events.jsonl"
    with open(events_path, "w", encoding="utf-8") as fh:
        for event in result.events:
            fh.write(json.dumps(event, sort_keys=True) + "\n")
    summary = dict(result.summary)
    if config.mode == "afap":
        # wall time would break byte-reproducibility of deterministic runs
        summary.pop("wall_time_s", None)
    summary_path = out_dir / "summary.json"
    _write_json(summary_path, summary)
    outputs = [events_path, summary_path]

    check_failed = False
    if args.check:
        report = equivalence_check(model, utterances, method=args.method)
        eq_path = out_dir / "equivalence.json"
        _write_json(eq_path, report.to_dict())
        outputs.append(eq_path)
        print(f"equivalence: {report.n_sequences} sequences, "
              f"{report.n_utterances} utterances, {len(report.diffs)} diffs")
        check_failed = not report.matched

    _write_manifest(out_dir / "manifest.json", "stream", list(args.argv),
                    {"model_config": model_cfg.to_dict(),
                     "pipeline": {"mode": config.mode,
                                  "queue_capacity": config.queue_capacity,
                                  "drop_policy": config.drop_policy},
                     "method": args.method, "check": bool(args.check)},
                    {"dataset": data_path, "weights": Path(args.weights)}, outputs, t0)
    lat = result.summary.get("first_estimate_latency_ms", {})
    print(f"{result.summary['mode']}: {result.summary['utterances']} utterances, "
          f"{result.summary['estimates']} estimates, "
          f"{result.summary['frames_dropped']} dropped frames"
          + (f", first-estimate p50 {lat.get('p50', 0):.0f} ms" if lat.get("count") else ""))
    if check_failed:
        print("batch/stream equivalence FAILED", file=sys.stderr)
        return EXIT_PIPELINE
    return EXIT_OK


# -- parser ---------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="addressee",
        description="Addressee estimation: synthetic data, training, evaluation, streaming.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic dataset")
    p.add_argument("--config", required=True, help="ScenarioConfig JSON file")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train", help="train a model")
    p.add_argument("--data", required=True, help="dataset directory or file")
    p.add_argument("--model-config", help="ModelConfig JSON file (defaults used if omitted)")
    p.add_argument("--train-config", help="TrainConfig JSON file (defaults used if omitted)")
    p.add_argument("--val-fraction", type=float, default=0.1,
                   help="fraction of utterances held out for validation")
    p.add_argument("--out", required=True, help="output weights file")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate weights on a dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--weights", required=True)
    p.add_argument("--model-config", help="ModelConfig JSON (else weights sidecar, else defaults)")
    p.add_argument("--method", choices=AGGREGATION_METHODS, default="mean")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("crossval", help="k-fold cross-validation")
    p.add_argument("--data", required=True)
    p.add_argument("--model-config")
    p.add_argument("--train-config")
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--seed", type=int, default=0, help="fold split seed")
    p.add_argument("--val-fraction", type=float, default=0.1)
    p.add_argument("--method", choices=AGGREGATION_METHODS, default="mean")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_crossval)

    p = sub.add_parser("stream", help="run the staged streaming pipeline")
    p.add_argument("--data", required=True)
    p.add_argument("--weights", required=True)
    p.add_argument("--model-config")
    p.add_argument("--realtime", action="store_true",
                   help="pace frames at 80 ms wall clock (default: as fast as possible)")
    p.add_argument("--check", action="store_true",
                   help="verify batch/stream equivalence; nonzero exit on any diff")
    p.add_argument("--queue-capacity", type=int, default=32)
    p.add_argument("--method", choices=AGGREGATION_METHODS, default="mean")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_stream)

    return parser


def main(argv=None) -> int:
    if argv is None:
        argv = sys.argv[1:]
    parser = build_parser()
    args = parser.parse_args(argv)
    args.argv = list(argv)
    try:
        return args.func(args)
    except (ConfigError, InvalidInputError, FormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except TrainingError as exc:
        print(f"training error: {exc}", file=sys.stderr)
        return EXIT_TRAINING
    except (ProtocolError, NumericError) as exc:
        print(f"pipeline error: {exc}", file=sys.stderr)
        return EXIT_PIPELINE
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
