"""Command line entry point.

    msrc <preprocess|train|eval|cv|sweep|report> -c CONFIG [--section.key VALUE ...]

Any config key can be overridden with a flag named after its dotted path,
e.g. ``--window.sw 256`` or ``--run.seed=3``.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from . import pipeline, plots
from .config import ConfigError, ExperimentConfig, parse_config
from .ingest import DatasetError

log = logging.getLogger("msrc")

COMMANDS = {
    "preprocess": "clean, encode and normalise the dataset files and write feature CSVs",
    "train": "train SAEs, residual groups and classifier on the training file; save model.ckpt",
    "eval": "score the test file with a saved model.ckpt and export metrics and ROC",
    "cv": "ten-fold cross-validation: per-fold and average accuracy and AUC",
    "sweep": "accuracy over the window-size x decomposition-level grid",
    "report": "redraw figures from result CSVs in the output directory",
}


def parse_overrides(tokens: list[str]) -> dict[str, str]:
    out = {}
    i = 0
    while i < len(tokens):
        tok = tokens[i]
        if not tok.startswith("--") or "." not in tok:
            raise ConfigError(f"unrecognised argument {tok!r}; overrides look like --section.key VALUE")
        key = tok[2:]
        if "=" in key:
            key, value = key.split("=", 1)
            i += 1
        else:
            if i + 1 >= len(tokens):
                raise ConfigError(f"override {tok} is missing a value")
            value = tokens[i + 1]
            i += 2
        out[key] = value
    return out


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="msrc", description="multi-scale residual classifier experiments")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in COMMANDS.items():
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.add_argument("-c", "--config", required=True, help="experiment config file")
    return parser


def _out(config: ExperimentConfig) -> Path:
    out = Path(config.run.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_preprocess(config: ExperimentConfig) -> int:
    prepared = pipeline.load_data(config)
    out = _out(config)
    with pipeline.stage("export"):
        cols = prepared.train.columns + ["label"]
        for tag, fm in (("train", prepared.train), ("test", prepared.test)):
            if fm is None:
                continue
            rows = [dict(zip(cols, [*map(float, r), int(y)])) for r, y in zip(fm.rows, fm.labels)]
            pipeline.write_csv(out / f"{tag}_features.csv", cols, rows)
        counts = [{"split": tag, "normal": int((fm.labels == 0).sum()), "anomaly": int(fm.labels.sum()),
                   "total": len(fm), "width": fm.width}
                  for tag, fm in (("train", prepared.train), ("test", prepared.test)) if fm is not None]
        pipeline.write_csv(out / "class_counts.csv", ["split", "normal", "anomaly", "total", "width"], counts)
        pipeline.write_manifest(out, config, {"counts": prepared.counts})
    for row in counts:
        print(f"{row['split']}: {row['total']} records ({row['normal']} normal, {row['anomaly']} anomaly), d={row['width']}")
    return 0


def cmd_train(config: ExperimentConfig) -> int:
    prepared = pipeline.load_data(config)
    data = pipeline.window_data(prepared.train, config)
    model, history = pipeline.train_model(data, config)
    out = _out(config)
    with pipeline.stage("export"):
        path = pipeline.save_model(model, out / "model.ckpt", config)
        loss = [{"epoch": i + 1, "loss": v} for i, v in enumerate(history["supervised"])]
        pipeline.write_csv(out / "train_loss.csv", ["epoch", "loss"], loss)
        pipeline.write_manifest(out, config, {"counts": dict(prepared.counts, windowed=len(data), dropped=data.dropped)})
    print(f"saved {path}")
    return 0


def cmd_eval(config: ExperimentConfig) -> int:
    out = _out(config)
    ckpt = out / "model.ckpt"
    with pipeline.stage("eval"):
        if not ckpt.exists():
            raise FileNotFoundError(f"{ckpt} not found; run `msrc train` first")
        model = pipeline.load_model(ckpt)
    prepared = pipeline.load_data(config)
    if prepared.test is None:
        raise pipeline.PipelineError("[eval] data.test_path is required")
    report = pipeline.evaluate_model(model, pipeline.window_data(prepared.test, config))
    with pipeline.stage("export"):
        pipeline.export_results({"test": report}, out)
        pipeline.write_manifest(out, config)
    print(" ".join(f"{k}={v:.4f}" for k, v in report.row().items()))
    return 0


def cmd_cv(config: ExperimentConfig) -> int:
    result, paths = pipeline.run_experiment1(config)
    print(",".join(pipeline.CV_COLUMNS))
    for row in result.rows:
        print(",".join([row["fold"]] + [f"{row[c]:.4f}" for c in pipeline.CV_COLUMNS[1:]]))
    return 0


def cmd_sweep(config: ExperimentConfig) -> int:
    result = pipeline.run_sweep(config)
    pipeline.export_sweep(result, _out(config), config)
    for row in result.rows:
        acc = "skipped" if row["status"] != "ok" else f"{row['mean_accuracy']:.4f}"
        print(f"sw={row['sw']:>5} k={row['k']:>2} {acc}")
    print(f"spearman(k, accuracy) = {result.spearman_k:.4f}")
    return 0


def _read_csv(path: Path) -> list[dict]:
    with path.open(newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def cmd_report(config: ExperimentConfig) -> int:
    out = Path(config.run.out_dir)
    made = []
    for roc in sorted(out.glob("roc_*.csv")) if out.exists() else []:
        rows = _read_csv(roc)
        pts = np.array([[float(r["fpr"]), float(r["tpr"])] for r in rows])
        made.append(plots.roc_svg(pts, roc.with_suffix(".svg"), f"ROC ({roc.stem[4:]})"))
    sweep = out / "sweep.csv"
    if sweep.exists():
        rows = _read_csv(sweep)
        sws = sorted({int(r["sw"]) for r in rows})
        ks = sorted({int(r["k"]) for r in rows})
        acc = np.full((len(sws), len(ks)), np.nan)
        for r in rows:
            acc[sws.index(int(r["sw"])), ks.index(int(r["k"]))] = float(r["mean_accuracy"])
        made.append(plots.sweep_heatmap(sws, ks, acc, out / "sweep_heatmap.svg"))
    table = out / "cv_table.csv"
    if table.exists():
        for r in _read_csv(table):
            print(", ".join(f"{k}={v}" for k, v in r.items()))
    if not made and not table.exists():
        print(f"nothing to report in {out}")
        return 0
    pipeline.write_manifest(out, config)
    for p in made:
        print(f"wrote {p}")
    return 0


HANDLERS = {
    "preprocess": cmd_preprocess, "train": cmd_train, "eval": cmd_eval,
    "cv": cmd_cv, "sweep": cmd_sweep, "report": cmd_report,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args, rest = parser.parse_known_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        overrides = parse_overrides(rest)
        config = parse_config(args.config, overrides, require_data=args.command != "report")
        return HANDLERS[args.command](config)
    except ConfigError as exc:
        print(f"msrc {args.command}: [config] {exc}", file=sys.stderr)
        return 2
    except pipeline.PipelineError as exc:
        print(f"msrc {args.command}: {exc}", file=sys.stderr)
        return 1
    except (DatasetError, OSError) as exc:
        print(f"msrc {args.command}: [io] {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
