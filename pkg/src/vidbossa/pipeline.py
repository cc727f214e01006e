"""File-level pipeline stages and the content-hash cached ``run`` driver.

Directory conventions used by every stage:

* descriptors: ``<dir>/<video_id>/<frame:03d>.bdsc``
* frame features: ``<dir>/<video_id>/<frame:03d>.bfvc``
* video features: ``<dir>/<video_id>.bfvc``
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .classifier import KernelConfig, read_model, svm_decision, svm_train, write_model
from .codebook import kmedians, read_codebook, sample_training_pool, write_codebook
from .config import RunConfig, dump_config, load_config
from .descriptors import DescriptorConfig, extract_frame, read_descriptor_file, write_descriptor_file
from .encoding import BossaParams, encode, read_features, write_features
from .evaluation import bossa_params, descriptor_config, resolve_keyframe, run_cv, write_report
from .exceptions import ConfigurationError, VidBossaError
from .imaging import load_image
from .prng import derive_seed
from .synth import CorpusSpec, generate
from .video import aggregate, global_pool, majority_vote, read_manifest

log = logging.getLogger(__name__)


def _pmap(fn, items, threads: int):
    if threads <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(threads) as ex:
        return list(ex.map(fn, items))


def _frame_name(k: int, ext: str) -> str:
    return f"{k:03d}.{ext}"


def _sorted_files(directory, ext: str) -> list[str]:
    return sorted(f for f in os.listdir(directory) if f.endswith("." + ext))


# ---------------------------------------------------------------- stages

def extract_stage(input_path, out_dir, dcfg: DescriptorConfig, threads: int = 1) -> list[str]:
    """Extract descriptors for a manifest (``.jsonl``) or a single PGM image."""
    os.makedirs(out_dir, exist_ok=True)
    if input_path.endswith(".jsonl"):
        jobs = []
        for e in read_manifest(input_path):
            os.makedirs(os.path.join(out_dir, e.video_id), exist_ok=True)
            for k, kf in enumerate(e.keyframes):
                jobs.append((resolve_keyframe(input_path, kf),
                             os.path.join(out_dir, e.video_id, _frame_name(k, "bdsc"))))
    else:
        stem = os.path.splitext(os.path.basename(input_path))[0]
        jobs = [(input_path, os.path.join(out_dir, stem + ".bdsc"))]

    def work(job):
        src, dst = job
        write_descriptor_file(extract_frame(load_image(src), dcfg, source_id=src), dst)
        return dst

    return _pmap(work, jobs, threads)


def _video_descriptor_files(desc_dir, video_ids=None) -> list[str]:
    paths = []
    for vid in sorted(os.listdir(desc_dir)):
        sub = os.path.join(desc_dir, vid)
        if os.path.isdir(sub):
            if video_ids is None or vid in video_ids:
                paths.extend(os.path.join(sub, f) for f in _sorted_files(sub, "bdsc"))
        elif vid.endswith(".bdsc") and video_ids is None:
            paths.append(sub)
    return paths


def codebook_stage(desc_dir, out_path, M: int, seed: int, max_iter: int = 100, sample: int = 1_000_000,
                   train_ids=None):
    sets = [read_descriptor_file(p) for p in _video_descriptor_files(desc_dir, train_ids)]
    if not sets:
        raise ConfigurationError(f"no descriptor files found under {desc_dir}")
    pool = sample_training_pool(sets, sample, derive_seed(seed, "sample"))
    cb = kmedians(pool, M, max_iter, seed, D=sets[0].D)
    write_codebook(cb, out_path)
    return cb


def encode_stage(codebook_path, desc_dir, out_dir, encoder: str = "bossanova",
                 params: BossaParams = BossaParams(), normalization: str = "l2", threads: int = 1) -> list[str]:
    cb = read_codebook(codebook_path)
    jobs = []
    for src in _video_descriptor_files(desc_dir):
        rel = os.path.relpath(src, desc_dir)
        jobs.append((src, os.path.join(out_dir, os.path.splitext(rel)[0] + ".bfvc")))

    def work(job):
        src, dst = job
        os.makedirs(os.path.dirname(dst), exist_ok=True)
        write_features(encode(read_descriptor_file(src), cb, encoder, params, normalization), dst)
        return dst

    return _pmap(work, jobs, threads)


def aggregate_stage(features_dir, manifest, out_dir, agg_z="median", agg_t="median") -> list[str]:
    os.makedirs(out_dir, exist_ok=True)
    outs = []
    for e in read_manifest(manifest):
        sub = os.path.join(features_dir, e.video_id)
        frames = [read_features(os.path.join(sub, f)) for f in _sorted_files(sub, "bfvc")]
        vd = aggregate(frames, agg_z, agg_t)
        dst = os.path.join(out_dir, e.video_id + ".bfvc")
        write_features(vd.as_midlevel(), dst)
        outs.append(dst)
    return outs


def baseline_global_stage(desc_dir, codebook_path, manifest, out_dir, encoder="bossanova",
                          params: BossaParams = BossaParams(), normalization="l2") -> list[str]:
    cb = read_codebook(codebook_path)
    os.makedirs(out_dir, exist_ok=True)
    outs = []
    for e in read_manifest(manifest):
        sub = os.path.join(desc_dir, e.video_id)
        sets = [read_descriptor_file(os.path.join(sub, f)) for f in _sorted_files(sub, "bdsc")]
        dst = os.path.join(out_dir, e.video_id + ".bfvc")
        write_features(global_pool(sets, cb, encoder, params, normalization), dst)
        outs.append(dst)
    return outs


def _load_training(features_dir, entries, frame_level: bool):
    X, y = [], []
    for e in entries:
        if frame_level:
            sub = os.path.join(features_dir, e.video_id)
            for f in _sorted_files(sub, "bfvc"):
                X.append(read_features(os.path.join(sub, f)).values)
                y.append(e.label)
        else:
            X.append(read_features(os.path.join(features_dir, e.video_id + ".bfvc")).values)
            y.append(e.label)
    return np.vstack(X), np.asarray(y)


def train_stage(features_dir, manifest, out_path, fold_holdout: int | None = 0,
                kcfg: KernelConfig = KernelConfig(), tol=1e-3, max_passes=200, seed=0, frame_level=False):
    entries = [e for e in read_manifest(manifest) if fold_holdout is None or e.fold != fold_holdout]
    X, y = _load_training(features_dir, entries, frame_level)
    model = svm_train(X, y, kcfg, tol, max_passes, seed)
    write_model(model, out_path)
    return model


def _fmt(x):
    return repr(float(x))


def predict_stage(model_path, features_dir, out_csv, manifest=None, fold=None):
    """Score every ``<video_id>.bfvc`` in ``features_dir``."""
    model = read_model(model_path)
    labels = {}
    if manifest:
        entries = read_manifest(manifest)
        labels = {e.video_id: e.label for e in entries}
        ids = [e.video_id for e in entries if fold is None or e.fold == fold]
    else:
        ids = [os.path.splitext(f)[0] for f in _sorted_files(features_dir, "bfvc")]
    rows = []
    for vid in ids:
        s = svm_decision(model, read_features(os.path.join(features_dir, vid + ".bfvc")).values)
        rows.append({"video_id": vid, "label": labels.get(vid, ""), "score": _fmt(s),
                     "predicted": 1 if s >= 0 else -1})
    _write_rows(rows, out_csv, ["video_id", "label", "score", "predicted"])
    return rows


def vote_stage(model_path, features_dir, manifest, out_csv, fold=None, tie_rule="positive"):
    """Frame-level classification followed by per-video majority voting."""
    model = read_model(model_path)
    rows = []
    for e in read_manifest(manifest):
        if fold is not None and e.fold != fold:
            continue
        sub = os.path.join(features_dir, e.video_id)
        X = np.vstack([read_features(os.path.join(sub, f)).values for f in _sorted_files(sub, "bfvc")])
        votes = np.where(np.atleast_1d(svm_decision(model, X)) >= 0, 1, -1)
        rows.append({"video_id": e.video_id, "label": e.label,
                     "positive_frames": int(np.sum(votes > 0)), "frames": len(votes),
                     "predicted": majority_vote(votes, tie_rule)})
    _write_rows(rows, out_csv, ["video_id", "label", "positive_frames", "frames", "predicted"])
    return rows


def _write_rows(rows, path, header):
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=header, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)


# ---------------------------------------------------------------- run driver

def file_hash(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def tree_files(root, exclude=()) -> list[str]:
    out = []
    for d, _, files in os.walk(root):
        for f in files:
            p = os.path.join(d, f)
            if os.path.relpath(p, root) not in exclude:
                out.append(p)
    return sorted(out)


@dataclass
class Stage:
    name: str
    inputs: list          # files and directories whose content keys the stage
    params: dict
    outputs: list         # files and directories produced
    action: object


class StageRunner:
    """Runs stages, skipping those whose input hashes match the last run."""

    def __init__(self, work_dir, report=print):
        self.work_dir = work_dir
        self.stamp_dir = os.path.join(work_dir, ".stamps")
        self.report = report
        self.status = {}

    def _digest_paths(self, paths) -> dict:
        out = {}
        for p in paths:
            if os.path.isdir(p):
                for f in tree_files(p):
                    out[os.path.relpath(f, self.work_dir)] = file_hash(f)
            elif os.path.exists(p):
                out[os.path.relpath(p, self.work_dir)] = file_hash(p)
            else:
                out[os.path.relpath(p, self.work_dir)] = None
        return out

    def run(self, stage: Stage):
        os.makedirs(self.stamp_dir, exist_ok=True)
        key = hashlib.sha256(json.dumps(
            {"params": stage.params, "inputs": self._digest_paths(stage.inputs)},
            sort_keys=True).encode()).hexdigest()
        stamp_path = os.path.join(self.stamp_dir, stage.name + ".json")
        if os.path.exists(stamp_path):
            with open(stamp_path) as fh:
                stamp = json.load(fh)
            if stamp.get("key") == key and stamp.get("outputs") == self._digest_paths(stage.outputs):
                self.status[stage.name] = "cached"
                self.report(f"[{stage.name}] cached")
                return
        t0 = time.perf_counter()
        try:
            stage.action()
        except Exception as exc:
            raise StageFailed(stage.name, exc) from exc
        with open(stamp_path, "w") as fh:
            json.dump({"key": key, "outputs": self._digest_paths(stage.outputs)}, fh, sort_keys=True, indent=1)
            fh.write("\n")
        self.status[stage.name] = "ran"
        self.report(f"[{stage.name}] done in {time.perf_counter() - t0:.2f}s")


class StageFailed(VidBossaError):
    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause


# files excluded from run-to-run determinism checks: wall-clock measurements
NONDETERMINISTIC = ("report/timing.csv",)


def run_pipeline(cfg: RunConfig, report=print) -> StageRunner:
    """Execute synth -> extract -> codebook -> encode -> aggregate -> train ->
    predict -> evaluate under ``cfg.output``."""
    out = cfg.output
    os.makedirs(out, exist_ok=True)
    with open(os.path.join(out, "config.toml"), "w") as fh:
        fh.write(dump_config(cfg))
    runner = StageRunner(out, report)
    threads = cfg.threads
    params = cfg.as_dict()

    if cfg.synth:
        corpus = os.path.join(out, "corpus")
        spec = CorpusSpec(cfg.synth_seed, cfg.synth_videos_per_class,
                          (cfg.synth_frames_min, cfg.synth_frames_max), cfg.synth_size,
                          cfg.synth_folds, cfg.synth_gap)
        runner.run(Stage("synth", [], {k: v for k, v in params.items() if k.startswith("synth")},
                         [corpus], lambda: generate(spec, corpus)))
        manifest = os.path.join(corpus, "manifest.jsonl")
    else:
        if not cfg.manifest:
            raise ConfigurationError("config needs 'manifest' or 'synth = true'")
        manifest = cfg.manifest
    entries = read_manifest(manifest)
    keyframes = [resolve_keyframe(manifest, k) for e in entries for k in e.keyframes]
    train_ids = {e.video_id for e in entries if e.fold != cfg.fold_holdout}

    dcfg = descriptor_config(cfg)
    bp = bossa_params(cfg)
    desc_dir = os.path.join(out, "descriptors")
    feat_dir = os.path.join(out, "features")
    video_dir = os.path.join(out, "videos")
    cb_path = os.path.join(out, "codebook.bcbk")
    model_path = os.path.join(out, "model.bsvm")
    scores_path = os.path.join(out, "scores.csv")
    report_dir = os.path.join(out, "report")

    pick = lambda *keys: {k: params[k] for k in keys}  # noqa: E731
    p_extract = pick("seed", "bits", "patch", "step", "smooth_radius")
    p_codebook = {**p_extract, **pick("M", "max_iter", "sample", "fold_holdout")}
    p_encode = {**p_codebook, **pick("encoder", "B", "lambda_min", "lambda_max", "s", "knn",
                                     "raw_counts", "normalization")}
    p_video = {**p_encode, **pick("method", "agg_z", "agg_t")}
    p_train = {**p_video, **pick("metric", "C", "gamma", "tol", "max_passes", "tie_rule")}

    runner.run(Stage("extract", [manifest] + keyframes, p_extract, [desc_dir],
                     lambda: extract_stage(manifest, desc_dir, dcfg, threads)))
    runner.run(Stage("codebook", [manifest, desc_dir], p_codebook, [cb_path],
                     lambda: codebook_stage(desc_dir, cb_path, cfg.M, derive_seed(cfg.seed, "codebook"),
                                            cfg.max_iter, cfg.sample, train_ids)))
    runner.run(Stage("encode", [cb_path, desc_dir], p_encode, [feat_dir],
                     lambda: encode_stage(cb_path, desc_dir, feat_dir, cfg.encoder, bp,
                                          cfg.normalization, threads)))
    kcfg = KernelConfig(cfg.metric, cfg.gamma_value, cfg.C)
    svm_seed = derive_seed(cfg.seed, "svm")
    if cfg.method == "vote":
        runner.run(Stage("train", [manifest, feat_dir], p_train, [model_path],
                         lambda: train_stage(feat_dir, manifest, model_path, cfg.fold_holdout, kcfg,
                                             cfg.tol, cfg.max_passes, svm_seed, frame_level=True)))
        runner.run(Stage("predict", [manifest, model_path, feat_dir], p_train, [scores_path],
                         lambda: vote_stage(model_path, feat_dir, manifest, scores_path,
                                            cfg.fold_holdout, cfg.tie_rule)))
    else:
        if cfg.method == "global":
            runner.run(Stage("aggregate", [manifest, cb_path, desc_dir], p_video, [video_dir],
                             lambda: baseline_global_stage(desc_dir, cb_path, manifest, video_dir,
                                                           cfg.encoder, bp, cfg.normalization)))
        else:
            runner.run(Stage("aggregate", [manifest, feat_dir], p_video, [video_dir],
                             lambda: aggregate_stage(feat_dir, manifest, video_dir, cfg.agg_z, cfg.agg_t)))
        runner.run(Stage("train", [manifest, video_dir], p_train, [model_path],
                         lambda: train_stage(video_dir, manifest, model_path, cfg.fold_holdout, kcfg,
                                             cfg.tol, cfg.max_passes, svm_seed)))
        runner.run(Stage("predict", [manifest, model_path, video_dir], p_train, [scores_path],
                         lambda: predict_stage(model_path, video_dir, scores_path, manifest, cfg.fold_holdout)))

    def evaluate():
        write_report(run_cv(manifest, cfg), report_dir)

    eval_params = {k: v for k, v in params.items() if k not in ("output", "threads")}
    runner.run(Stage("evaluate", [manifest] + keyframes, eval_params,
                     [os.path.join(report_dir, f) for f in ("cv_report.csv", "confusion.csv", "config.toml")],
                     evaluate))
    return runner


def run_from_file(config_path, report=print) -> StageRunner:
    return run_pipeline(load_config(config_path), report)
