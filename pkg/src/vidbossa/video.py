"""Video descriptors (BNVD / BoW-VD) and the voting and global-pooling baselines."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .codebook import Codebook
from .descriptors import DescriptorSet
from .encoding import BOSSANOVA, BOW, MidLevelVector, encode
from .exceptions import ConfigurationError, ContractViolation, FormatError

AGGREGATORS = ("max", "min", "mean", "median")


def _reduce(stack: np.ndarray, name: str) -> np.ndarray:
    """Coordinate-wise reduction over axis 0 of a ``(n_frames, dim)`` stack."""
    if name == "max":
        return stack.max(axis=0)
    if name == "min":
        return stack.min(axis=0)
    if name == "mean":
        # summing sorted columns makes the result independent of frame order;
        # the clip undoes rounding that could push it past the extremes
        srt = np.sort(stack, axis=0)
        acc = np.zeros(stack.shape[1])
        for row in srt:
            acc = acc + row
        return np.clip(acc / stack.shape[0], srt[0], srt[-1])
    if name == "median":
        srt = np.sort(stack, axis=0)
        n = srt.shape[0]
        if n % 2:
            return srt[n // 2].copy()
        return (srt[n // 2 - 1] + srt[n // 2]) / 2.0
    raise ConfigurationError(f"unknown aggregation {name!r}; choose from {AGGREGATORS}")


@dataclass(eq=False)
class VideoDescriptor:
    layout: str
    M: int
    B: int
    values: np.ndarray
    agg_z: str
    agg_t: str
    n_frames: int

    def as_midlevel(self) -> MidLevelVector:
        return MidLevelVector(self.layout, self.M, self.B, self.values)


def aggregate_array(stack: np.ndarray, M: int, B: int, layout: str,
                    agg_z: str = "median", agg_t: str = "median") -> np.ndarray:
    """Array-level core of :func:`aggregate`."""
    stack = np.asarray(stack, dtype=np.float64)
    if stack.ndim != 2 or stack.shape[0] == 0:
        raise ContractViolation("need a non-empty (n_frames, dim) stack")
    if layout == BOW:
        return _reduce(stack, agg_z)
    split = M * B
    return np.concatenate([_reduce(stack[:, :split], agg_z), _reduce(stack[:, split:], agg_t)])


def aggregate(frames, agg_z: str = "median", agg_t: str = "median") -> VideoDescriptor:
    """Combine per-frame vectors coordinate-wise.

    BossaNova histogram coordinates use ``agg_z`` and the tail coordinates
    use ``agg_t``.  BoW vectors have no tail, so ``agg_z`` covers the whole
    vector.  The median of an even count is the mean of the middle pair.
    """
    frames = list(frames)
    if not frames:
        raise ContractViolation("cannot aggregate an empty frame sequence")
    first = frames[0]
    for f in frames[1:]:
        if (f.layout, f.M, f.B) != (first.layout, first.M, first.B):
            raise ContractViolation("frames have heterogeneous layouts or dimensions")
    for name in (agg_z, agg_t):
        if name not in AGGREGATORS:
            raise ConfigurationError(f"unknown aggregation {name!r}; choose from {AGGREGATORS}")
    stack = np.vstack([f.values for f in frames])
    values = aggregate_array(stack, first.M, first.B, first.layout, agg_z, agg_t)
    return VideoDescriptor(first.layout, first.M, first.B, values, agg_z, agg_t, len(frames))


def majority_vote(frame_labels, tie_rule: str = "positive") -> int:
    labels = list(frame_labels)
    if not labels:
        raise ContractViolation("majority vote over zero frames")
    if tie_rule not in ("positive", "negative"):
        raise ConfigurationError(f"tie_rule must be 'positive' or 'negative', got {tie_rule!r}")
    pos = sum(1 for lab in labels if lab > 0)
    neg = len(labels) - pos
    if pos != neg:
        return 1 if pos > neg else -1
    return 1 if tie_rule == "positive" else -1


def global_pool(frames, cb: Codebook, encoder: str = BOSSANOVA, params=None,
                normalization: str = "l2") -> MidLevelVector:
    """Encode the union of every frame's descriptors as one vector."""
    frames = list(frames)
    if not frames:
        raise ContractViolation("global pooling needs at least one frame")
    for ds in frames:
        if ds.D != cb.D:
            raise ContractViolation(f"descriptor D={ds.D} does not match codebook D={cb.D}")
    merged = DescriptorSet.concatenate(frames)
    kwargs = {} if params is None else {"params": params}
    return encode(merged, cb, encoder, normalization=normalization, **kwargs)


class VideoAggregator(TransformerMixin, BaseEstimator):
    """Stateless transformer from per-video frame stacks to video descriptors.

    ``X`` is a sequence of ``(n_frames_i, dim)`` arrays; ``dim`` must equal
    ``M`` for BoW and ``M * (B + 1)`` for BossaNova.
    """

    def __init__(self, M=256, B=10, layout=BOSSANOVA, agg_z="median", agg_t="median"):
        self.M = M
        self.B = B
        self.layout = layout
        self.agg_z = agg_z
        self.agg_t = agg_t

    def fit(self, X=None, y=None):
        return self

    def transform(self, X):
        B = 0 if self.layout == BOW else self.B
        dim = self.M if self.layout == BOW else self.M * (B + 1)
        out = []
        for stack in X:
            stack = np.atleast_2d(np.asarray(stack, dtype=np.float64))
            if stack.shape[1] != dim:
                raise ContractViolation(f"expected {dim} features per frame, got {stack.shape[1]}")
            out.append(aggregate_array(stack, self.M, B, self.layout, self.agg_z, self.agg_t))
        return np.vstack(out)

    def __sklearn_tags__(self):
        tags = super().__sklearn_tags__()
        tags.requires_fit = False
        return tags


@dataclass(frozen=True)
class VideoManifestEntry:
    video_id: str
    label: int
    fold: int
    keyframes: tuple[str, ...]

    def to_json(self) -> str:
        return json.dumps({"video_id": self.video_id, "label": self.label,
                           "fold": self.fold, "keyframes": list(self.keyframes)})


def read_manifest(path, n_folds: int | None = None) -> list[VideoManifestEntry]:
    """Parse a JSON-lines manifest.  Keyframe paths are kept as written."""
    entries = []
    seen = set()
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                entry = VideoManifestEntry(str(obj["video_id"]), int(obj["label"]), int(obj["fold"]),
                                           tuple(str(k) for k in obj["keyframes"]))
            except (KeyError, TypeError, ValueError) as exc:
                raise FormatError(f"manifest line {lineno}: {exc}") from None
            if entry.label not in (1, -1):
                raise FormatError(f"manifest line {lineno}: label must be 1 or -1")
            if not entry.keyframes:
                raise FormatError(f"manifest line {lineno}: keyframes must be non-empty")
            if entry.fold < 0 or (n_folds is not None and entry.fold >= n_folds):
                raise FormatError(f"manifest line {lineno}: fold {entry.fold} out of range")
            if entry.video_id in seen:
                raise FormatError(f"manifest line {lineno}: duplicate video_id {entry.video_id!r}")
            seen.add(entry.video_id)
            entries.append(entry)
    return entries


def write_manifest(entries, path) -> None:
    with open(path, "w") as fh:
        for e in entries:
            fh.write(e.to_json() + "\n")
