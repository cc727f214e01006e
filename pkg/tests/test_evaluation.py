import csv
import os

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import auc_pairs
from vidbossa.config import RunConfig
from vidbossa.evaluation import (
    CvContext, Timer, auc, confusion, mean_roc, roc_curve, run_cv, sweep, timing_report, write_report,
)

FAST = RunConfig(M=8, bits=128, B=4, knn=4, sample=5000, max_iter=20)


def test_auc_examples():
    assert auc([0.9, 0.8, 0.7, 0.1], [1, -1, 1, -1]) == pytest.approx(0.75, abs=1e-12)
    assert auc_pairs([0.9, 0.8, 0.7, 0.1], [1, -1, 1, -1]) == 0.75
    assert auc([3, 2, 1, 0], [1, 1, -1, -1]) == 1.0
    assert auc([5, 5, 5, 5], [1, -1, 1, -1]) == 0.5


def test_roc_shape():
    pts = roc_curve([0.9, 0.8, 0.7, 0.1], [1, -1, 1, -1])
    assert pts == [(0.0, 0.0), (0.0, 0.5), (0.5, 0.5), (0.5, 1.0), (1.0, 1.0)]
    with pytest.raises(ValueError):
        roc_curve([1, 2], [1, 1])


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(st.integers(-5, 5), st.booleans()), min_size=2, max_size=40))
def test_auc_equals_pair_counting(data):
    scores = [s / 4 for s, _ in data]
    labels = [1 if b else -1 for _, b in data]
    if len(set(labels)) < 2:
        return
    assert abs(auc(scores, labels) - auc_pairs(scores, labels)) <= 1e-12


def test_mean_roc_grid():
    m = mean_roc([[(0, 0), (0, 1), (1, 1)], [(0, 0), (1, 0), (1, 1)]])
    assert m.shape == (101, 2)
    assert m[0].tolist() == [0.0, 0.0] and m[-1].tolist() == [1.0, 1.0]
    # first curve is 1 for any FPR > 0, second stays 0 until FPR = 1
    assert m[50, 1] == pytest.approx(0.5)
    diag = mean_roc([[(0, 0), (0.5, 0.5), (1, 1)]])
    np.testing.assert_allclose(diag[:, 1], diag[:, 0])


def test_confusion_counts():
    assert confusion([1, 1, -1, -1, 1], [1, -1, 1, -1, 1]) == (2, 1, 1, 1)


def test_timing_report_lists_only_recorded_stages():
    t = Timer()
    t.add("extract", 0.5, 10, "frame")
    rows = timing_report(t)
    assert [r["stage"] for r in rows] == ["extract"]
    assert rows[0]["mean_ms"] == "50.00" and rows[0]["unit"] == "frame"


@pytest.fixture(scope="module")
def ctx(small_corpus):
    return CvContext(small_corpus)


@pytest.mark.parametrize("method", ["descriptor", "vote", "global"])
def test_cv_runs_every_method(small_corpus, ctx, method):
    rep = run_cv(small_corpus, FAST.replace(method=method), ctx)
    assert len(rep.folds) == 4
    assert 0.0 <= rep.mean_accuracy <= 1.0
    assert rep.mean_roc.shape == (101, 2)
    for f in rep.folds:
        # training set never contains the held-out fold's videos
        tested = {p[0] for p in f.predictions}
        assert tested.isdisjoint(f.train_ids)
        assert sum(f.confusion) == len(f.predictions)


def test_cv_is_deterministic(small_corpus):
    a = run_cv(small_corpus, FAST)
    b = run_cv(small_corpus, FAST.replace(threads=2))
    assert [f.predictions for f in a.folds] == [f.predictions for f in b.folds]
    assert [f.stage_hashes for f in a.folds] == [f.stage_hashes for f in b.folds]


def test_perfect_predictions_give_unit_accuracy(small_corpus, ctx):
    rep = run_cv(small_corpus, FAST.replace(M=16), ctx)
    if all(f.accuracy == 1.0 for f in rep.folds):
        assert rep.std_accuracy == 0.0 and rep.mean_accuracy == 1.0


def test_sweeps(small_corpus, ctx):
    rows = sweep(small_corpus, FAST, "aggregation", ["max", "min", "mean", "median"], ctx)
    assert len(rows) == 4 and rows[0]["cfg_agg_z"] == "max"
    assert sweep(small_corpus, FAST, "codebook_size", []) == []
    from vidbossa.exceptions import ConfigurationError
    with pytest.raises(ConfigurationError):
        sweep(small_corpus, FAST, "colour", [1])


def test_write_report_files(small_corpus, ctx, tmp_path):
    rep = run_cv(small_corpus, FAST, ctx)
    write_report(rep, tmp_path)
    names = set(os.listdir(tmp_path))
    assert {"cv_report.csv", "confusion.csv", "roc_mean.csv", "predictions.csv", "config.toml",
            "timing.csv"} <= names
    assert {f"roc_fold{k}.csv" for k in range(4)} <= names
    with open(tmp_path / "timing.csv") as fh:
        stages = {r["stage"] for r in csv.DictReader(fh)}
    assert {"extract", "encode"} <= stages
    from vidbossa.config import load_config
    assert load_config(tmp_path / "config.toml") == FAST


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.integers(-400, 400), st.booleans()), min_size=2, max_size=30))
def test_auc_invariant_under_monotone_maps(data):
    scores = np.array([s / 8 for s, _ in data])
    labels = [1 if b else -1 for _, b in data]
    if len(set(labels)) < 2:
        return
    base = auc(scores, labels)
    # strictly increasing, and ties stay ties on this grid of eighths
    for f in (lambda x: 3 * x + 1, np.arctan, lambda x: x ** 3 + x):
        assert auc(f(scores), labels) == pytest.approx(base, abs=1e-12)


def test_accuracy_agrees_with_confusion(small_corpus, ctx):
    rep = run_cv(small_corpus, FAST.replace(method="vote"), ctx)
    for f in rep.folds:
        tp, fn, fp, tn = f.confusion
        assert f.accuracy == (tp + tn) / (tp + fn + fp + tn)


def test_training_inputs_exclude_test_fold(small_corpus, ctx):
    from vidbossa.video import read_manifest
    fold_of = {e.video_id: e.fold for e in read_manifest(small_corpus)}
    rep = run_cv(small_corpus, FAST, ctx)
    for f in rep.folds:
        assert f.train_ids and all(fold_of[v] != f.fold for v in f.train_ids)
        assert set(f.stage_hashes) >= {"codebook", "gamma", "svm"}
    # distinct training sets give distinct codebook hashes
    assert len({f.stage_hashes["codebook"] for f in rep.folds}) == len(rep.folds)


def test_timing_has_three_significant_digits():
    t = Timer()
    t.add("extract", 0.0012345, 1, "frame")
    t.add("encode", 12.0, 1, "frame")
    ms = {r["stage"]: r["mean_ms"] for r in timing_report(t)}
    assert ms == {"encode": "12000", "extract": "1.234"}
