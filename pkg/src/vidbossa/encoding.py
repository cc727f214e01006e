"""Frame-level mid-level vectors: hard-assignment BoW and BossaNova.

BossaNova layout: ``M * B`` distance-histogram bins grouped by codeword,
followed by ``M`` tail entries ``s * t_m``.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .codebook import Codebook, hamming_matrix, kmedians, knn_indices, nearest, sample_training_pool
from .descriptors import DescriptorSet
from .exceptions import ConfigurationError, ContractViolation, FormatError, TruncatedFileError

BOW = "bow"
BOSSANOVA = "bossanova"
_LAYOUT_CODES = {BOW: 0, BOSSANOVA: 1}
_LAYOUT_NAMES = {v: k for k, v in _LAYOUT_CODES.items()}

BFVC_MAGIC = b"BFVC"
BFVC_VERSION = 1
_BFVC_HEADER = struct.Struct("<4sBBIII")


@dataclass(frozen=True)
class BossaParams:
    B: int = 10
    lambda_min: float = 0.0
    lambda_max: float = 3.0
    s: float = 1e-3
    knn: int = 10
    raw_counts: bool = False

    def __post_init__(self):
        if self.B < 1:
            raise ConfigurationError(f"B must be >= 1, got {self.B}")
        if not 0 <= self.lambda_min < self.lambda_max:
            raise ConfigurationError(
                f"need 0 <= lambda_min < lambda_max, got {self.lambda_min}, {self.lambda_max}")
        if self.s < 0:
            raise ConfigurationError("s must be nonnegative")
        if self.knn < 1:
            raise ConfigurationError("knn must be >= 1")


@dataclass(eq=False)
class MidLevelVector:
    layout: str
    M: int
    B: int
    values: np.ndarray

    def __post_init__(self):
        if self.layout not in _LAYOUT_CODES:
            raise ContractViolation(f"unknown layout {self.layout!r}")
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.layout == BOW and self.B != 0:
            raise ContractViolation("BoW vectors have B = 0")
        if self.values.shape != (expected_length(self.layout, self.M, self.B),):
            raise ContractViolation(
                f"{self.layout} vector with M={self.M}, B={self.B} must have length "
                f"{expected_length(self.layout, self.M, self.B)}, got {self.values.shape}")

    def __eq__(self, other):
        if not isinstance(other, MidLevelVector):
            return NotImplemented
        return (self.layout, self.M, self.B) == (other.layout, other.M, other.B) \
            and np.array_equal(self.values, other.values)

    @property
    def histograms(self) -> np.ndarray:
        """``(M, B)`` view of the BossaNova distance histograms."""
        return self.values[:self.M * self.B].reshape(self.M, self.B)

    @property
    def tail(self) -> np.ndarray:
        return self.values[self.M * self.B:]


def expected_length(layout: str, M: int, B: int) -> int:
    return M if layout == BOW else M * (B + 1)


def _check_dims(ds: DescriptorSet, cb: Codebook):
    if ds.D != cb.D:
        raise ContractViolation(f"descriptor D={ds.D} does not match codebook D={cb.D}")


def encode_bow(ds: DescriptorSet, cb: Codebook) -> MidLevelVector:
    """Hard assignment to the nearest codeword, then average pooling."""
    _check_dims(ds, cb)
    if ds.N == 0:
        return MidLevelVector(BOW, cb.M, 0, np.zeros(cb.M))
    labels = nearest(hamming_matrix(ds.bits, cb.centroids))
    return MidLevelVector(BOW, cb.M, 0, np.bincount(labels, minlength=cb.M) / ds.N)


def bin_edges(cb: Codebook, p: BossaParams) -> np.ndarray:
    """``(M, B + 1)`` histogram edges spanning ``[lambda_min, lambda_max] * sigma_m``."""
    lo = p.lambda_min * cb.sigmas
    hi = p.lambda_max * cb.sigmas
    frac = np.arange(p.B + 1, dtype=np.float64) / p.B
    return lo[:, None] + (hi - lo)[:, None] * frac[None, :]


def bin_thresholds(cb: Codebook, p: BossaParams) -> np.ndarray:
    """Smallest integer distance that reaches each edge of :func:`bin_edges`.

    Distances are integers, so comparing against these ``ceil`` values is
    equivalent to comparing against the real edges.  Edges that land within
    rounding error of an integer are re-derived with exact rationals.
    """
    edges = bin_edges(cb, p)
    thr = np.ceil(edges)
    near = np.abs(edges - np.rint(edges)) <= 1e-9 * np.maximum(1.0, np.abs(edges))
    if near.any():
        lo = p.lambda_min * cb.sigmas
        hi = p.lambda_max * cb.sigmas
        for m, b in zip(*np.nonzero(near)):
            exact = Fraction(lo[m]) + (Fraction(hi[m]) - Fraction(lo[m])) * b / p.B
            thr[m, b] = math.ceil(exact)
    return thr.astype(np.int64)


def bossanova_counts(ds: DescriptorSet, cb: Codebook, p: BossaParams) -> tuple[np.ndarray, np.ndarray]:
    """Raw integer histogram counts ``(M, B)`` and nearest-codeword counts ``(M,)``."""
    _check_dims(ds, cb)
    if p.knn > cb.M:
        raise ConfigurationError(f"knn={p.knn} exceeds codebook size M={cb.M}")
    M, B = cb.M, p.B
    hist = np.zeros((M, B), dtype=np.int64)
    if ds.N == 0:
        return hist, np.zeros(M, dtype=np.int64)
    dist = hamming_matrix(ds.bits, cb.centroids)
    t = np.bincount(nearest(dist), minlength=M)

    rows = np.repeat(np.arange(ds.N), p.knn)
    cols = knn_indices(dist, p.knn).ravel()
    alpha = dist[rows, cols].astype(np.int64)
    lo = p.lambda_min * cb.sigmas
    hi = p.lambda_max * cb.sigmas
    thr = bin_thresholds(cb, p)[cols]
    # a zero-width range (sigma_m = 0) yields no histogram mass
    keep = (hi > lo)[cols] & (alpha >= thr[:, 0]) & (alpha <= np.floor(hi)[cols])
    b = (thr[keep] <= alpha[keep, None]).sum(axis=1) - 1
    b = np.minimum(b, B - 1)
    np.add.at(hist, (cols[keep], b), 1)
    return hist, t


def encode_bossanova(ds: DescriptorSet, cb: Codebook, p: BossaParams = BossaParams()) -> MidLevelVector:
    """Histogram of descriptor-to-codeword distances plus a scaled count tail.

    Each descriptor contributes to the histograms of its ``knn`` nearest
    codewords when the distance falls in ``[lambda_min, lambda_max] * sigma_m``;
    bins are half-open except the last.  Counts are divided by the number of
    descriptors unless ``raw_counts`` is set.
    """
    hist, t = bossanova_counts(ds, cb, p)
    scale = 1.0 if (p.raw_counts or ds.N == 0) else 1.0 / ds.N
    values = np.concatenate([hist.ravel() * scale, p.s * (t * scale)])
    return MidLevelVector(BOSSANOVA, cb.M, p.B, values)


def normalize(v: MidLevelVector, mode: str = "l2") -> MidLevelVector:
    if mode == "none":
        return v
    if mode != "l2":
        raise ConfigurationError(f"unknown normalization {mode!r}")
    peak = np.abs(v.values).max(initial=0.0)
    if peak == 0:
        return v
    # rescale first so tiny (subnormal) inputs still normalize to unit length
    scaled = v.values / peak
    return MidLevelVector(v.layout, v.M, v.B, scaled / np.linalg.norm(scaled))


def encode(ds: DescriptorSet, cb: Codebook, encoder: str = BOSSANOVA,
           params: BossaParams = BossaParams(), normalization: str = "l2") -> MidLevelVector:
    if encoder == BOW:
        v = encode_bow(ds, cb)
    elif encoder == BOSSANOVA:
        v = encode_bossanova(ds, cb, params)
    else:
        raise ConfigurationError(f"unknown encoder {encoder!r}; use 'bow' or 'bossanova'")
    return normalize(v, normalization)


def feature_bytes(v: MidLevelVector) -> bytes:
    head = _BFVC_HEADER.pack(BFVC_MAGIC, BFVC_VERSION, _LAYOUT_CODES[v.layout], v.M, v.B, v.values.size)
    return head + v.values.astype("<f8").tobytes()


def parse_features(buf: bytes) -> MidLevelVector:
    if buf[:4] != BFVC_MAGIC:
        raise FormatError(f"magic: expected {BFVC_MAGIC!r}, got {bytes(buf[:4])!r}")
    if len(buf) < _BFVC_HEADER.size:
        raise TruncatedFileError("BFVC header truncated", len(buf))
    _, version, layout, M, B, length = _BFVC_HEADER.unpack_from(buf)
    if version != BFVC_VERSION:
        raise FormatError(f"version: unsupported BFVC version {version}")
    if layout not in _LAYOUT_NAMES:
        raise FormatError(f"layout: unknown code {layout}")
    name = _LAYOUT_NAMES[layout]
    if length != expected_length(name, M, B):
        raise FormatError(
            f"length: {name} with M={M}, B={B} needs {expected_length(name, M, B)} values, header says {length}")
    if len(buf) - _BFVC_HEADER.size < 8 * length:
        raise TruncatedFileError(f"BFVC payload truncated: expected {8 * length} bytes", len(buf))
    vals = np.frombuffer(buf, dtype="<f8", count=length, offset=_BFVC_HEADER.size)
    return MidLevelVector(name, M, B, vals.astype(np.float64))


def write_features(v: MidLevelVector, path) -> None:
    with open(path, "wb") as fh:
        fh.write(feature_bytes(v))


def read_features(path) -> MidLevelVector:
    with open(path, "rb") as fh:
        return parse_features(fh.read())


class _EncoderBase(TransformerMixin, BaseEstimator):
    """Learns a k-medians codebook in ``fit``; ``transform`` encodes frames.

    ``X`` is a sequence of :class:`DescriptorSet`; the output is an
    ``(n_frames, n_features)`` float array.
    """

    def fit(self, X, y=None):
        X = _check_sets(X)
        pool = sample_training_pool(X, self.sample, self.seed)
        self.codebook_ = kmedians(pool, self.n_codewords, self.max_iter, self.seed, D=X[0].D)
        return self

    def transform(self, X):
        check_is_fitted(self, "codebook_")
        X = _check_sets(X)
        return np.vstack([self._encode(ds).values for ds in X])


class BoWEncoder(_EncoderBase):
    def __init__(self, n_codewords=256, max_iter=100, sample=1_000_000, seed=42, normalization="l2"):
        self.n_codewords = n_codewords
        self.max_iter = max_iter
        self.sample = sample
        self.seed = seed
        self.normalization = normalization

    def _encode(self, ds):
        return normalize(encode_bow(ds, self.codebook_), self.normalization)


class BossaNovaEncoder(_EncoderBase):
    def __init__(self, n_codewords=256, B=10, lambda_min=0.0, lambda_max=3.0, s=1e-3, knn=10,
                 raw_counts=False, max_iter=100, sample=1_000_000, seed=42, normalization="l2"):
        self.n_codewords = n_codewords
        self.B = B
        self.lambda_min = lambda_min
        self.lambda_max = lambda_max
        self.s = s
        self.knn = knn
        self.raw_counts = raw_counts
        self.max_iter = max_iter
        self.sample = sample
        self.seed = seed
        self.normalization = normalization

    def _params(self):
        return BossaParams(self.B, self.lambda_min, self.lambda_max, self.s, self.knn, self.raw_counts)

    def _encode(self, ds):
        return normalize(encode_bossanova(ds, self.codebook_, self._params()), self.normalization)


def _check_sets(X) -> list[DescriptorSet]:
    X = list(X)
    if not X:
        raise ContractViolation("need at least one descriptor set")
    if not all(isinstance(ds, DescriptorSet) for ds in X):
        raise ContractViolation("inputs must be DescriptorSet instances")
    if len({ds.D for ds in X}) != 1:
        raise ContractViolation("descriptor sets have different D")
    return X
