"""End-to-end MSRC runs: preprocessing, windowing, SAE and classifier training,
evaluation, ten-fold cross-validation, window/level sweeps and result export.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
import warnings
from contextlib import contextmanager
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.stats import spearmanr

from . import plots
from .config import ExperimentConfig, SweepGrid, config_hash, serialize
from .evaluation import MetricsReport, evaluate, kfold_split
from .ingest import FeatureMatrix, PreparedData, parse_columns, prepare, preset_schema
from .numeric_core import assign_arrays, load_checkpoint, save_checkpoint
from .residual_net import MSRC, ResidualConfig, SupervisedConfig, train_supervised
from .sae import StackedAutoencoder, TrainConfig, scaled_dims, train_sae
from .wavelet import window_multiscale

log = logging.getLogger(__name__)

# averages of the reference ten-fold run on NSL-KDD (train-file CV / test file)
REFERENCE_AVERAGES = {"train_accuracy": 0.8814, "train_auc": 0.8999, "test_accuracy": 0.8336, "test_auc": 0.8900}
REFERENCE_BAND = {"accuracy": 0.80, "auc": 0.85}
CV_COLUMNS = ["fold", "train_accuracy", "train_auc", "test_accuracy", "test_auc"]


class PipelineError(RuntimeError):
    pass


@contextmanager
def stage(name: str):
    try:
        yield
    except PipelineError:
        raise
    except Exception as exc:
        raise PipelineError(f"[{name}] {exc}") from exc


# -- data ----------------------------------------------------------------------

def _count_fields(path) -> int:
    with open(path, encoding="utf-8") as fh:
        return len(next(csv.reader(fh)))


def dataset_schema(config: ExperimentConfig):
    d = config.data
    if d.columns:
        return parse_columns(d.columns, d.normal_label)
    if d.schema.lower() == "synthetic":
        schema = preset_schema("synthetic", _count_fields(d.train_path) - 1)
    else:
        schema = preset_schema(d.schema)
    if d.normal_label != "normal":
        schema = replace(schema, normal_label=d.normal_label)
    return schema


def load_data(config: ExperimentConfig) -> PreparedData:
    d = config.data
    with stage("ingest"):
        return prepare(
            d.train_path,
            dataset_schema(config),
            d.test_path or None,
            max_train=d.max_train or None,
            max_test=d.max_test or None,
            anonymize_seed=d.anonymize_seed if d.anonymize else None,
        )


@dataclass
class Windowed:
    """Record-level samples cut from whole windows, stacked per reconstruction level."""

    levels: np.ndarray  # (k, M, d): row m of R_j
    labels: np.ndarray  # (M,)
    window: np.ndarray  # (M,) window index of each sample
    record: np.ndarray  # (M,) source record index
    n_records: int
    dropped: int

    def __len__(self) -> int:
        return len(self.labels)

    def select(self, windows) -> "Windowed":
        mask = np.isin(self.window, windows)
        return Windowed(self.levels[:, mask], self.labels[mask], self.window[mask], self.record[mask],
                        self.n_records, self.dropped)

    def window_ids(self) -> np.ndarray:
        """Window index per record (``-1`` for dropped records); non-overlapping windows only."""
        ids = np.full(self.n_records, -1, dtype=int)
        ids[self.record] = self.window
        return ids


def window_data(fm: FeatureMatrix, config: ExperimentConfig) -> Windowed:
    w = config.window
    with stage("wavelet"):
        wins = window_multiscale(fm, w.sw, config.stride, w.k, w.filter)
    levels = np.concatenate([win.reconstructions for win in wins], axis=1)
    labels = np.concatenate([win.labels for win in wins])
    window = np.repeat(np.arange(len(wins)), w.sw)
    record = np.concatenate([win.indices for win in wins])
    covered = len(np.unique(record))
    dropped = len(fm) - covered
    log.info("wavelet: %d records -> %d windows x %d (k=%d), %d trailing records dropped",
             len(fm), len(wins), w.sw, w.k, dropped)
    return Windowed(levels, labels, window, record, len(fm), dropped)


# -- model -------------------------------------------------------------------------

def sae_dims(config: ExperimentConfig, width: int) -> list[int]:
    dims = list(config.sae.dims) if config.sae.dims else scaled_dims(width)
    if dims[0] != width:
        raise PipelineError(f"[sae] sae.dims[0]={dims[0]} does not match feature width d={width}")
    return dims


def train_model(data: Windowed, config: ExperimentConfig, seed: int | None = None):
    """Train one SAE per level on normal samples, then the residual groups and head."""
    seed = config.run.seed if seed is None else seed
    s, r = config.sae, config.residual
    width = data.levels.shape[2]
    dims = sae_dims(config, width)
    normal = data.labels == 0
    if not normal.any():
        raise PipelineError("[sae] training portion contains no normal records")
    saes, sae_hist = [], []
    with stage("sae"):
        for j in range(data.levels.shape[0]):
            pre = TrainConfig(s.pretrain_epochs, s.lr, s.batch_size, seed * 1000 + 10 * j, s.momentum)
            fine = TrainConfig(s.finetune_epochs, s.lr, s.batch_size, seed * 1000 + 10 * j + 5, s.momentum,
                               s.finetune_loss)
            sae, hist = train_sae(data.levels[j][normal], dims, pre, fine, seed=seed * 1000 + j)
            saes.append(sae)
            sae_hist.append(hist)
        log.info("sae: trained %d SAEs %s on %d normal samples", len(saes), dims, int(normal.sum()))
    rcfg = ResidualConfig(r.n_blocks, r.channels, r.kernel_width, r.group_width, r.threshold)
    model = MSRC(saes, width, rcfg, seed=seed * 1000 + 999)
    with stage("residual"):
        errors = model.error_features(data.levels)
        sup = SupervisedConfig(r.epochs, r.lr, r.batch_size, r.momentum, seed)
        loss = train_supervised(model, None, data.labels, sup, errors=errors)
        log.info("residual: trained on %d samples, final loss %.4g", len(data), loss[-1] if loss else float("nan"))
    return model, {"sae": sae_hist, "supervised": loss}


def evaluate_model(model: MSRC, data: Windowed) -> MetricsReport:
    with stage("eval"):
        scores, _ = model.predict(data.levels)
        return evaluate(scores, data.labels, model.cfg.threshold)


def save_model(model: MSRC, path, config: ExperimentConfig | None = None) -> Path:
    sections = {}
    for j, sae in enumerate(model.saes):
        sections[f"sae/{j}"] = sae
    for j, group in enumerate(model.groups):
        sections[f"group/{j}"] = group
    sections["head"] = model.head
    meta = {
        "width": model.width, "k": model.k, "seed": model.seed, "dims": model.saes[0].dims,
        "residual": vars(model.cfg), "config": serialize(config) if config else "",
    }
    return save_checkpoint(path, sections, meta)


def load_model(path) -> MSRC:
    manifest, arrays = load_checkpoint(path)
    meta = manifest["meta"]
    saes = [StackedAutoencoder(meta["dims"]) for _ in range(meta["k"])]
    model = MSRC(saes, meta["width"], ResidualConfig(**meta["residual"]), seed=meta["seed"])
    for j, sae in enumerate(saes):
        assign_arrays(f"sae/{j}", sae, arrays)
    for j, group in enumerate(model.groups):
        assign_arrays(f"group/{j}", group, arrays)
    assign_arrays("head", model.head, arrays)
    return model


# -- single run -------------------------------------------------------------------

@dataclass
class PipelineResult:
    model: MSRC
    report: MetricsReport
    history: dict
    counts: dict
    artifacts: list[Path] = field(default_factory=list)


def run_pipeline(config: ExperimentConfig, export: bool = True, prepared: PreparedData | None = None) -> PipelineResult:
    """Train on the training file and evaluate on the test file."""
    prepared = prepared or load_data(config)
    if prepared.test is None:
        raise PipelineError("[ingest] data.test_path is required to evaluate a pipeline run")
    train = window_data(prepared.train, config)
    test = window_data(prepared.test, config)
    model, history = train_model(train, config)
    report = evaluate_model(model, test)
    counts = dict(prepared.counts, train_windowed=len(train), train_dropped=train.dropped,
                  test_windowed=len(test), test_dropped=test.dropped, width=prepared.train.width)
    log.info("eval: accuracy %.4f auc %.4f on %d test samples", report.accuracy, report.auc, len(test))
    result = PipelineResult(model, report, history, counts)
    if export:
        out = Path(config.run.out_dir)
        with stage("export"):
            out.mkdir(parents=True, exist_ok=True)
            result.artifacts.append(save_model(model, out / "model.ckpt", config))
            result.artifacts += export_results({"test": report}, out)
            write_manifest(out, config, {"counts": counts})
    return result


# -- cross-validation -------------------------------------------------------------

@dataclass
class CVResult:
    train_reports: list[MetricsReport]  # held-out fold of the training file
    test_reports: list[MetricsReport]  # fixed hold-out test file
    rows: list[dict]  # per fold, then "Average"
    counts: dict

    @property
    def average(self) -> dict:
        return self.rows[-1]


def run_cv(config: ExperimentConfig, prepared: PreparedData | None = None, k: int | None = None) -> CVResult:
    """Stratified k-fold over windows of the training file.

    Each fold trains a fresh model (seed = base seed + fold index) on the
    other folds, is scored on its held-out windows and on the whole test file.
    """
    k = k or config.run.folds
    prepared = prepared or load_data(config)
    data = window_data(prepared.train, config)
    test = window_data(prepared.test, config) if prepared.test is not None else None
    with stage("cv"):
        folds = kfold_split(data.n_records, data.window_ids(), k, config.run.seed, prepared.train.labels)
    train_reports, test_reports, rows = [], [], []
    for fold in folds:
        seed = config.run.seed + fold.index
        log.info("cv: fold %d/%d, %d train / %d held-out windows", fold.index + 1, k,
                 len(fold.train_windows), len(fold.test_windows))
        model, _ = train_model(data.select(fold.train_windows), config, seed)
        rep = evaluate_model(model, data.select(fold.test_windows))
        train_reports.append(rep)
        row = {"fold": str(fold.index + 1), "train_accuracy": rep.accuracy, "train_auc": rep.auc,
               "test_accuracy": float("nan"), "test_auc": float("nan")}
        if test is not None:
            trep = evaluate_model(model, test)
            test_reports.append(trep)
            row.update(test_accuracy=trep.accuracy, test_auc=trep.auc)
        rows.append(row)
    # a single-class held-out fold has no AUC; average over the folds where it is defined
    avg = {"fold": "Average"}
    undefined = {}
    for col in CV_COLUMNS[1:]:
        vals = np.array([r[col] for r in rows], dtype=float)
        ok = ~np.isnan(vals)
        avg[col] = float(vals[ok].mean()) if ok.any() else float("nan")
        if not ok.all() and (col.startswith("train") or test is not None):
            undefined[col] = int((~ok).sum())
    rows.append(avg)
    counts = dict(prepared.counts, windows=len(np.unique(data.window)), dropped=data.dropped)
    if undefined:
        counts["undefined_folds"] = undefined
        log.warning("cv: metric undefined on some folds, averaged over the rest: %s", undefined)
    return CVResult(train_reports, test_reports, rows, counts)


def reference_comparison(avg: dict) -> dict:
    """How the averages sit against the published reference averages and the desk-scale band."""
    in_band = (avg["train_accuracy"] >= REFERENCE_BAND["accuracy"]) and (avg["train_auc"] >= REFERENCE_BAND["auc"])
    return {
        "reference": REFERENCE_AVERAGES,
        "band": REFERENCE_BAND,
        "measured": {k: avg[k] for k in CV_COLUMNS[1:]},
        "within_band": bool(in_band),
        "note": "within target band" if in_band else "target band missed: desk-scale subset and unreported hyperparameters",
    }


def run_experiment1(config: ExperimentConfig, prepared: PreparedData | None = None) -> tuple[CVResult, list[Path]]:
    result = run_cv(config, prepared)
    out = Path(config.run.out_dir)
    with stage("export"):
        paths = [write_csv(out / "cv_table.csv", CV_COLUMNS, result.rows)]
        detail_cols = ["fold", "split", "accuracy", "precision", "recall", "f1", "fpr", "auc"]
        detail = []
        for i, rep in enumerate(result.train_reports):
            detail.append({"fold": i + 1, "split": "train_cv", **rep.row()})
        for i, rep in enumerate(result.test_reports):
            detail.append({"fold": i + 1, "split": "test", **rep.row()})
        paths.append(write_csv(out / "cv_details.csv", detail_cols, detail))
        extra = {"counts": result.counts}
        if config.data.schema.lower() == "nsl-kdd" and not config.data.columns:
            extra["reference_comparison"] = reference_comparison(result.average)
        write_manifest(out, config, extra)
    return result, paths


# -- sweep --------------------------------------------------------------------------

@dataclass
class SweepResult:
    rows: list[dict]
    spearman_k: float
    spearman_sw: float
    warnings: list[str]


def _spearman(x, y) -> float:
    x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    if len(x) < 2 or np.ptp(x) == 0 or np.ptp(y) == 0:
        return 0.0  # no variation, no trend
    return float(spearmanr(x, y)[0])


def run_sweep(config: ExperimentConfig, grid: SweepGrid | None = None,
              prepared: PreparedData | None = None) -> SweepResult:
    """Mean test accuracy for every valid ``(sw, k)`` cell; invalid cells are skipped."""
    grid = grid or config.sweep
    prepared = prepared or load_data(config)
    n_train = len(prepared.train)
    n_test = len(prepared.test) if prepared.test is not None else 0
    rows, notes = [], []
    for sw, k, valid in grid.cells():
        if valid and (sw > n_train or sw > n_test):
            valid, reason = False, f"sw={sw} exceeds available records ({n_train} train / {n_test} test)"
        elif not valid:
            reason = f"k={k} exceeds floor(log2({sw}))={int(math.log2(sw))}"
        if not valid:
            msg = f"skipped cell sw={sw}, k={k}: {reason}"
            warnings.warn(msg, stacklevel=2)
            log.warning(msg)
            notes.append(msg)
            rows.append({"sw": sw, "k": k, "status": "skipped", "mean_accuracy": float("nan"),
                         "std_accuracy": float("nan"), "repeats": 0, "note": reason})
            continue
        accs = []
        for rep in range(grid.repeats):
            cell_cfg = replace(config, window=replace(config.window, sw=sw, k=k, stride=0),
                               run=replace(config.run, seed=config.run.seed + 7919 * rep + 31 * sw + k))
            accs.append(run_pipeline(cell_cfg, export=False, prepared=prepared).report.accuracy)
        rows.append({"sw": sw, "k": k, "status": "ok", "mean_accuracy": float(np.mean(accs)),
                     "std_accuracy": float(np.std(accs)), "repeats": grid.repeats, "note": ""})
        log.info("sweep: sw=%d k=%d mean accuracy %.4f", sw, k, rows[-1]["mean_accuracy"])
    ok = [r for r in rows if r["status"] == "ok"]
    return SweepResult(
        rows,
        _spearman([r["k"] for r in ok], [r["mean_accuracy"] for r in ok]),
        _spearman([r["sw"] for r in ok], [r["mean_accuracy"] for r in ok]),
        notes,
    )


SWEEP_COLUMNS = ["sw", "k", "status", "mean_accuracy", "std_accuracy", "repeats", "note"]


def export_sweep(result: SweepResult, out_dir, config: ExperimentConfig | None = None,
                 grid: SweepGrid | None = None) -> list[Path]:
    out = Path(out_dir)
    grid = grid or (config.sweep if config else None)
    paths = [write_csv(out / "sweep.csv", SWEEP_COLUMNS, result.rows)]
    summary = [
        {"metric": "spearman_k_vs_accuracy", "value": result.spearman_k},
        {"metric": "spearman_sw_vs_accuracy", "value": result.spearman_sw},
        {"metric": "valid_cells", "value": sum(r["status"] == "ok" for r in result.rows)},
        {"metric": "skipped_cells", "value": sum(r["status"] != "ok" for r in result.rows)},
    ]
    paths.append(write_csv(out / "sweep_summary.csv", ["metric", "value"], summary))
    sws = list(grid.sw) if grid else sorted({r["sw"] for r in result.rows})
    ks = list(grid.k) if grid else sorted({r["k"] for r in result.rows})
    acc = np.full((len(sws), len(ks)), np.nan)
    for r in result.rows:
        acc[sws.index(r["sw"]), ks.index(r["k"])] = r["mean_accuracy"]
    paths.append(plots.sweep_heatmap(sws, ks, acc, out / "sweep_heatmap.svg"))
    if config is not None:
        write_manifest(out, config, {"sweep": {"spearman_k": result.spearman_k, "warnings": result.warnings}})
    return paths


# -- export -------------------------------------------------------------------------

def _cell(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_csv(path, columns, rows) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_cell(row[c]) for c in columns])
    return path


METRIC_COLUMNS = ["report", "n", "tp", "fn", "fp", "tn", "accuracy", "precision", "recall", "f1", "fpr", "auc", "flags"]


def export_results(reports: dict[str, MetricsReport], out_dir) -> list[Path]:
    """Metrics CSV plus per-report ROC CSV and ROC SVG; nothing is written for no reports."""
    if not reports:
        log.info("export: no reports to write")
        return []
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    paths = []
    for name, rep in reports.items():
        cm = rep.confusion
        rows.append({"report": name, "n": rep.n, "tp": cm.tp, "fn": cm.fn, "fp": cm.fp, "tn": cm.tn,
                     **rep.row(), "flags": ";".join(rep.flags)})
        roc_rows = [{"fpr": float(f), "tpr": float(t), "threshold": float(th)} for f, t, th in rep.roc_points]
        paths.append(write_csv(out / f"roc_{name}.csv", ["fpr", "tpr", "threshold"], roc_rows))
        paths.append(plots.roc_svg(rep.roc_points, out / f"roc_{name}.svg", f"ROC ({name}), AUC={rep.auc:.4f}"))
    paths.insert(0, write_csv(out / "metrics.csv", METRIC_COLUMNS, rows))
    return paths


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_manifest(out_dir, config: ExperimentConfig, extra: dict | None = None) -> Path:
    """List every artifact under ``out_dir`` with its hash, plus the config hash."""
    out = Path(out_dir)
    path = out / "manifest.json"
    previous = json.loads(path.read_text()) if path.exists() else {}
    notes = previous.get("notes", {})
    notes.update(extra or {})
    artifacts = {
        str(p.relative_to(out)): _sha256(p)
        for p in sorted(out.rglob("*")) if p.is_file() and p.name != "manifest.json"
    }
    manifest = {"config_hash": config_hash(config), "config": serialize(config),
                "artifacts": artifacts, "notes": notes}
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True, default=_json_default) + "\n")
    return path


def _json_default(v):
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (np.floating,)):
        return float(v)
    raise TypeError(type(v))
