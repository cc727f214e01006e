"""Cross-validation, ROC/AUC, parameter sweeps and timing reports."""

from __future__ import annotations

import csv
import hashlib
import logging
import math
import os
import time
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .classifier import KernelConfig, svm_decision, svm_train
from .codebook import Codebook, kmedians, sample_training_pool
from .config import RunConfig, dump_config
from .descriptors import DescriptorConfig, DescriptorSet, extract_frame
from .encoding import BossaParams, encode
from .exceptions import ConfigurationError, ProtocolError
from .imaging import load_image
from .prng import derive_seed
from .video import aggregate_array, global_pool, majority_vote, read_manifest

log = logging.getLogger(__name__)

ROC_GRID = np.linspace(0.0, 1.0, 101)
SWEEP_AXES = ("aggregation", "codebook_size", "encoder", "descriptor_bits")


def _split(scores, labels):
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels)
    if s.shape != y.shape:
        raise ValueError("scores and labels differ in length")
    pos, neg = int(np.sum(y > 0)), int(np.sum(y <= 0))
    if pos == 0 or neg == 0:
        raise ValueError("ROC/AUC need both positive and negative labels")
    return s, y, pos, neg


def roc_curve(scores, labels) -> list[tuple[float, float]]:
    """ROC points sweeping the threshold downward; tied scores form one step."""
    s, y, pos, neg = _split(scores, labels)
    order = np.argsort(-s, kind="stable")
    s, y = s[order], y[order]
    points = [(0.0, 0.0)]
    tp = fp = 0
    i = 0
    while i < len(s):
        j = i
        while j < len(s) and s[j] == s[i]:
            j += 1
        tp += int(np.sum(y[i:j] > 0))
        fp += int(np.sum(y[i:j] <= 0))
        points.append((fp / neg, tp / pos))
        i = j
    return points


def auc(scores, labels) -> float:
    """Trapezoidal area under :func:`roc_curve`."""
    pts = roc_curve(scores, labels)
    area = 0.0
    for (x0, y0), (x1, y1) in zip(pts, pts[1:]):
        area += (x1 - x0) * (y0 + y1) / 2.0
    return area


def _tpr_at(fpr: np.ndarray, tpr: np.ndarray, x: float) -> float:
    """TPR of a piecewise-linear ROC curve at false-positive rate ``x``.

    A vertical segment at ``x`` resolves to its top; between two FPR
    values the curve runs from the top of the left one to the bottom of
    the right one.
    """
    hit = fpr == x
    if hit.any():
        return float(tpr[hit].max())
    a = int(np.flatnonzero(fpr < x)[-1])
    b = a + 1
    return float(tpr[a] + (tpr[b] - tpr[a]) * (x - fpr[a]) / (fpr[b] - fpr[a]))


def mean_roc(curves) -> np.ndarray:
    """Vertical average of ROC curves on a 101-point FPR grid, shape ``(101, 2)``."""
    tprs = []
    for pts in curves:
        arr = np.asarray(pts, dtype=np.float64)
        t = np.array([_tpr_at(arr[:, 0], arr[:, 1], x) for x in ROC_GRID])
        t[0] = 0.0
        tprs.append(t)
    return np.column_stack([ROC_GRID, np.mean(tprs, axis=0)])


def confusion(y_true, y_pred) -> tuple[int, int, int, int]:
    """``(TP, FN, FP, TN)`` with +1 as the positive class."""
    t = np.asarray(y_true) > 0
    p = np.asarray(y_pred) > 0
    return (int(np.sum(t & p)), int(np.sum(t & ~p)), int(np.sum(~t & p)), int(np.sum(~t & ~p)))


class Timer:
    """Accumulates wall-clock time per pipeline stage."""

    def __init__(self):
        self.totals = defaultdict(float)
        self.counts = defaultdict(int)
        self.units = {}

    def add(self, stage: str, seconds: float, count: int = 1, unit: str = "call"):
        self.totals[stage] += seconds
        self.counts[stage] += count
        self.units[stage] = unit

    def merge(self, other: "Timer"):
        for st in other.totals:
            self.add(st, other.totals[st], other.counts[st], other.units[st])


def _sig4(v: float) -> str:
    """At least four significant digits, never in exponent form."""
    if v == 0:
        return "0.000"
    places = max(3 - math.floor(math.log10(abs(v))), 0)
    return f"{v:.{places}f}"


def timing_report(timer: Timer) -> list[dict]:
    """Mean milliseconds per unit for each stage that ran."""
    rows = []
    for stage in sorted(timer.totals):
        n = timer.counts[stage]
        if n == 0:
            continue
        rows.append({"stage": stage, "unit": timer.units[stage], "count": n,
                     "mean_ms": _sig4(1000.0 * timer.totals[stage] / n)})
    return rows


@dataclass
class FoldReport:
    fold: int
    accuracy: float
    confusion: tuple[int, int, int, int]
    roc: list
    auc: float
    predictions: list = field(default_factory=list)
    train_ids: tuple = ()
    stage_hashes: dict = field(default_factory=dict)


@dataclass
class CvReport:
    folds: list
    mean_accuracy: float
    std_accuracy: float
    mean_roc: np.ndarray
    mean_auc: float
    config: dict
    timer: Timer = field(default_factory=Timer, repr=False)


def _hash(*parts) -> str:
    h = hashlib.sha256()
    for p in parts:
        if isinstance(p, np.ndarray):
            h.update(str(p.dtype).encode() + str(p.shape).encode())
            h.update(np.ascontiguousarray(p).tobytes())
        else:
            h.update(repr(p).encode())
        h.update(b"\x00")
    return h.hexdigest()


def resolve_keyframe(manifest_path, keyframe: str) -> str:
    if os.path.isabs(keyframe):
        return keyframe
    return os.path.join(os.path.dirname(os.path.abspath(manifest_path)), keyframe)


def descriptor_config(cfg: RunConfig) -> DescriptorConfig:
    return DescriptorConfig(cfg.bits, cfg.patch, cfg.step, derive_seed(cfg.seed, "extract"), cfg.smooth_radius)


def bossa_params(cfg: RunConfig) -> BossaParams:
    return BossaParams(cfg.B, cfg.lambda_min, cfg.lambda_max, cfg.s, cfg.knn, cfg.raw_counts)


class CvContext:
    """Caches descriptors, codebooks and frame encodings across CV runs.

    Reusing one context for several configurations (a sweep, or comparing
    methods) avoids recomputing stages whose parameters did not change.
    """

    def __init__(self, manifest_path, threads: int = 1):
        self.manifest_path = manifest_path
        self.entries = read_manifest(manifest_path)
        self.threads = max(1, int(threads))
        self._descriptors = {}
        self._codebooks = {}
        self._encodings = {}
        self.timer = Timer()

    def _map(self, fn, items):
        if self.threads == 1:
            return [fn(x) for x in items]
        with ThreadPoolExecutor(self.threads) as ex:
            return list(ex.map(fn, items))

    def descriptors(self, cfg: RunConfig, entry) -> list[DescriptorSet]:
        dcfg = descriptor_config(cfg)
        paths = [resolve_keyframe(self.manifest_path, k) for k in entry.keyframes]
        missing = [p for p in paths if (p, dcfg) not in self._descriptors]

        def work(p):
            img = load_image(p)
            t0 = time.perf_counter()
            ds = extract_frame(img, dcfg, source_id=p)
            return p, ds, time.perf_counter() - t0

        for p, ds, dt in self._map(work, missing):
            self._descriptors[(p, dcfg)] = ds
            self.timer.add("extract", dt, 1, "frame")
        return [self._descriptors[(p, dcfg)] for p in paths]

    def codebook(self, cfg: RunConfig, train_entries, key) -> tuple[Codebook, str]:
        ids = tuple(sorted(e.video_id for e in train_entries))
        ck = (descriptor_config(cfg), cfg.M, cfg.max_iter, cfg.sample, cfg.seed, key, ids)
        if ck not in self._codebooks:
            sets = [ds for e in train_entries for ds in self.descriptors(cfg, e)]
            pool = sample_training_pool(sets, cfg.sample, derive_seed(cfg.seed, "sample", key))
            t0 = time.perf_counter()
            cb = kmedians(pool, cfg.M, cfg.max_iter, derive_seed(cfg.seed, "codebook", key), D=cfg.bits)
            self.timer.add("codebook", time.perf_counter() - t0, 1, "codebook")
            self._codebooks[ck] = (cb, _hash("codebook", ids, pool))
        return self._codebooks[ck]

    def frame_vectors(self, cfg: RunConfig, cb: Codebook, entry) -> np.ndarray:
        enc_key = (id(cb), cfg.encoder, bossa_params(cfg), cfg.normalization)
        sets = self.descriptors(cfg, entry)
        out = []
        for ds in sets:
            k = (enc_key, ds.source_id)
            if k not in self._encodings:
                t0 = time.perf_counter()
                self._encodings[k] = encode(ds, cb, cfg.encoder, bossa_params(cfg), cfg.normalization).values
                self.timer.add("encode", time.perf_counter() - t0, 1, "frame")
            out.append(self._encodings[k])
        return np.vstack(out)

    def video_vector(self, cfg: RunConfig, cb: Codebook, entry) -> np.ndarray:
        frames = self.frame_vectors(cfg, cb, entry)
        B = 0 if cfg.encoder == "bow" else cfg.B
        t0 = time.perf_counter()
        v = aggregate_array(frames, cb.M, B, cfg.encoder, cfg.agg_z, cfg.agg_t)
        self.timer.add("aggregate", time.perf_counter() - t0, 1, "video")
        return v

    def global_vector(self, cfg: RunConfig, cb: Codebook, entry) -> np.ndarray:
        sets = self.descriptors(cfg, entry)
        return global_pool(sets, cb, cfg.encoder, bossa_params(cfg), cfg.normalization).values


def _run_fold(ctx: CvContext, cfg: RunConfig, fold: int) -> FoldReport:
    train = [e for e in ctx.entries if e.fold != fold]
    test = [e for e in ctx.entries if e.fold == fold]
    if len({e.label for e in train}) < 2:
        raise ProtocolError(f"fold {fold}: training set contains a single class")
    if not test:
        raise ProtocolError(f"fold {fold}: empty test set")
    train_ids = tuple(sorted(e.video_id for e in train))
    if cfg.shared_codebook:
        cb, cb_hash = ctx.codebook(cfg, ctx.entries, "shared")
    else:
        cb, cb_hash = ctx.codebook(cfg, train, fold)
    kcfg = KernelConfig(cfg.metric, cfg.gamma_value, cfg.C)
    svm_seed = derive_seed(cfg.seed, "svm", fold)

    if cfg.method == "vote":
        stacks = [ctx.frame_vectors(cfg, cb, e) for e in train]
        X = np.vstack(stacks)
        y = np.concatenate([np.full(len(s), e.label) for s, e in zip(stacks, train)])
        model = svm_train(X, y, kcfg, cfg.tol, cfg.max_passes, svm_seed)
        preds, scores = [], []
        for e in test:
            frame_scores = np.atleast_1d(svm_decision(model, ctx.frame_vectors(cfg, cb, e)))
            votes = np.where(frame_scores >= 0, 1, -1)
            preds.append(majority_vote(votes, cfg.tie_rule))
            scores.append(float(np.mean(votes > 0)) - 0.5)
    else:
        vec = ctx.global_vector if cfg.method == "global" else ctx.video_vector
        X = np.vstack([vec(cfg, cb, e) for e in train])
        y = np.array([e.label for e in train])
        model = svm_train(X, y, kcfg, cfg.tol, cfg.max_passes, svm_seed)
        scores = [float(s) for s in np.atleast_1d(svm_decision(model, np.vstack([vec(cfg, cb, e) for e in test])))]
        preds = [1 if s >= 0 else -1 for s in scores]

    labels = [e.label for e in test]
    conf = confusion(labels, preds)
    try:
        roc = roc_curve(scores, labels)
        fold_auc = auc(scores, labels)
    except ValueError:
        roc, fold_auc = [], float("nan")
    hashes = {"codebook": cb_hash if not cfg.shared_codebook else _hash("shared", cb_hash),
              "gamma": _hash("gamma", train_ids, X),
              "svm": _hash("svm", train_ids, X, y)}
    return FoldReport(
        fold=fold, accuracy=(conf[0] + conf[3]) / len(test), confusion=conf, roc=roc, auc=fold_auc,
        predictions=[(e.video_id, e.label, s, p) for e, s, p in zip(test, scores, preds)],
        train_ids=train_ids, stage_hashes=hashes)


def run_cv(manifest, cfg: RunConfig, context: CvContext | None = None) -> CvReport:
    """k-fold cross-validation using the folds listed in the manifest.

    For each fold the codebook, gamma and SVM see only videos of the other
    folds (unless ``shared_codebook`` is set, which trains one codebook on
    every video's descriptors).
    """
    ctx = context or CvContext(manifest, cfg.threads)
    folds = sorted({e.fold for e in ctx.entries})
    if len(folds) < 2:
        raise ProtocolError("cross-validation needs at least two folds")
    if cfg.threads > 1 and context is None:
        with ThreadPoolExecutor(cfg.threads) as ex:
            reports = list(ex.map(lambda f: _run_fold(ctx, cfg, f), folds))
    else:
        reports = [_run_fold(ctx, cfg, f) for f in folds]
    accs = np.array([r.accuracy for r in reports])
    curves = [r.roc for r in reports if r.roc]
    aucs = [r.auc for r in reports if not np.isnan(r.auc)]
    return CvReport(
        folds=reports, mean_accuracy=float(accs.mean()), std_accuracy=float(accs.std()),
        mean_roc=mean_roc(curves) if curves else np.zeros((0, 2)),
        mean_auc=float(np.mean(aucs)) if aucs else float("nan"),
        config=cfg.as_dict(), timer=ctx.timer)


def _axis_config(cfg: RunConfig, axis: str, value) -> RunConfig:
    if axis == "aggregation":
        return cfg.replace(agg_z=str(value), agg_t=str(value))
    if axis == "codebook_size":
        return cfg.replace(M=int(value))
    if axis == "encoder":
        return cfg.replace(encoder=str(value))
    if axis == "descriptor_bits":
        return cfg.replace(bits=int(value))
    raise ConfigurationError(f"unknown sweep axis {axis!r}; choose from {SWEEP_AXES}")


def sweep(manifest, cfg: RunConfig, axis: str, values, context: CvContext | None = None) -> list[dict]:
    """One cross-validation row per value of ``axis``."""
    if axis not in SWEEP_AXES:
        raise ConfigurationError(f"unknown sweep axis {axis!r}; choose from {SWEEP_AXES}")
    values = list(values)
    if not values:
        return []
    ctx = context or CvContext(manifest, cfg.threads)
    rows = []
    for v in values:
        run_cfg = _axis_config(cfg, axis, v)
        rep = run_cv(manifest, run_cfg, ctx)
        row = {"axis": axis, "value": v, "mean_accuracy": rep.mean_accuracy,
               "std_accuracy": rep.std_accuracy, "mean_auc": rep.mean_auc}
        row.update({f"cfg_{k}": val for k, val in run_cfg.as_dict().items()})
        rows.append(row)
    return rows


def write_csv(rows: list[dict], path, header=None) -> None:
    header = header or (list(rows[0]) if rows else [])
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=header, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow(r)


def _fmt(x: float) -> str:
    return repr(float(x))


def write_report(report: CvReport, out_dir, include_timing: bool = True) -> None:
    """Write ``cv_report.csv``, ``confusion.csv``, ``roc_fold<k>.csv``,
    ``roc_mean.csv``, ``predictions.csv``, ``config.toml`` and ``timing.csv``."""
    os.makedirs(out_dir, exist_ok=True)
    rows = [{"fold": r.fold, "accuracy": _fmt(r.accuracy), "auc": _fmt(r.auc)} for r in report.folds]
    rows.append({"fold": "mean", "accuracy": _fmt(report.mean_accuracy), "auc": _fmt(report.mean_auc)})
    rows.append({"fold": "std", "accuracy": _fmt(report.std_accuracy), "auc": ""})
    write_csv(rows, os.path.join(out_dir, "cv_report.csv"), ["fold", "accuracy", "auc"])

    conf_rows = [dict(zip(("fold", "tp", "fn", "fp", "tn"), (r.fold, *r.confusion))) for r in report.folds]
    total = np.sum([r.confusion for r in report.folds], axis=0)
    conf_rows.append(dict(zip(("fold", "tp", "fn", "fp", "tn"), ("total", *map(int, total)))))
    write_csv(conf_rows, os.path.join(out_dir, "confusion.csv"), ["fold", "tp", "fn", "fp", "tn"])

    for r in report.folds:
        write_csv([{"fpr": _fmt(a), "tpr": _fmt(b)} for a, b in r.roc],
                  os.path.join(out_dir, f"roc_fold{r.fold}.csv"), ["fpr", "tpr"])
    write_csv([{"fpr": _fmt(a), "tpr": _fmt(b)} for a, b in report.mean_roc],
              os.path.join(out_dir, "roc_mean.csv"), ["fpr", "tpr"])

    preds = [{"fold": r.fold, "video_id": v, "label": lab, "score": _fmt(s), "predicted": p}
             for r in report.folds for v, lab, s, p in r.predictions]
    write_csv(preds, os.path.join(out_dir, "predictions.csv"),
              ["fold", "video_id", "label", "score", "predicted"])

    with open(os.path.join(out_dir, "config.toml"), "w") as fh:
        fh.write(dump_config(RunConfig(**report.config)))
    if include_timing:
        write_csv(timing_report(report.timer), os.path.join(out_dir, "timing.csv"),
                  ["stage", "unit", "count", "mean_ms"])
