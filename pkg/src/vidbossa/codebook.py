"""Hamming-space visual codebooks learned with k-medians."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, ClusterMixin, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .descriptors import DescriptorSet, pack_bits, unpack_bits
from .exceptions import ConfigurationError, ContractViolation, FormatError, TruncatedFileError
from .prng import XorShift64Star

BCBK_MAGIC = b"BCBK"
BCBK_VERSION = 1
_BCBK_HEADER = struct.Struct("<4sBII")

# rows of the query matrix processed per block in hamming_matrix
_BLOCK = 4096


def _words(packed: np.ndarray) -> np.ndarray:
    """View packed rows as uint64 words when the byte length allows it."""
    packed = np.ascontiguousarray(packed, dtype=np.uint8)
    if packed.shape[-1] % 8 == 0:
        return packed.view(np.uint64)
    return packed


def hamming(a: np.ndarray, b: np.ndarray) -> int:
    """Number of differing bits between two packed descriptors."""
    a = np.asarray(a, dtype=np.uint8)
    b = np.asarray(b, dtype=np.uint8)
    if a.shape != b.shape:
        raise ContractViolation(f"descriptor lengths differ: {a.shape} vs {b.shape}")
    return int(np.bitwise_count(np.bitwise_xor(_words(a), _words(b))).sum())


def hamming_matrix(X: np.ndarray, C: np.ndarray) -> np.ndarray:
    """All pairwise Hamming distances, shape ``(len(X), len(C))``, int32."""
    X = np.asarray(X, dtype=np.uint8)
    C = np.asarray(C, dtype=np.uint8)
    if X.ndim != 2 or C.ndim != 2 or X.shape[1] != C.shape[1]:
        raise ContractViolation(f"incompatible packed shapes {X.shape} and {C.shape}")
    Xw, Cw = _words(X), _words(C)
    out = np.empty((X.shape[0], C.shape[0]), dtype=np.int32)
    acc_type = np.uint16 if X.shape[1] * 8 < 65536 else np.int32
    for start in range(0, X.shape[0], _BLOCK):
        blk = Xw[start:start + _BLOCK]
        acc = np.zeros((blk.shape[0], C.shape[0]), dtype=acc_type)
        for w in range(Xw.shape[1]):
            acc += np.bitwise_count(blk[:, w, None] ^ Cw[None, :, w])
        out[start:start + _BLOCK] = acc
    return out


@dataclass(eq=False)
class Codebook:
    """``M`` binary centroids with per-cluster distance spreads."""

    D: int
    centroids: np.ndarray
    sigmas: np.ndarray
    seed: int = 0
    train_size: int = 0
    history: list = field(default_factory=list, repr=False)

    def __post_init__(self):
        self.centroids = np.ascontiguousarray(self.centroids, dtype=np.uint8)
        self.sigmas = np.asarray(self.sigmas, dtype=np.float64)
        if self.centroids.ndim != 2 or self.centroids.shape[1] * 8 != self.D:
            raise ContractViolation(f"centroids must have shape (M, {self.D // 8})")
        if self.centroids.shape[0] < 2:
            raise ConfigurationError("a codebook needs M >= 2 codewords")
        if self.sigmas.shape != (self.M,) or np.any(self.sigmas < 0):
            raise ContractViolation("sigmas must be M nonnegative values")

    @property
    def M(self) -> int:
        return self.centroids.shape[0]

    def __eq__(self, other):
        if not isinstance(other, Codebook):
            return NotImplemented
        return codebook_bytes(self) == codebook_bytes(other)


@dataclass(frozen=True)
class Assignment:
    """Nearest codewords of one descriptor, as ``(index, distance)`` pairs."""

    neighbors: tuple[tuple[int, int], ...]


def nearest(dist: np.ndarray) -> np.ndarray:
    """Row-wise argmin; ``np.argmin`` already returns the lowest index on ties."""
    return np.argmin(dist, axis=1)


def knn_indices(dist: np.ndarray, k: int) -> np.ndarray:
    """Indices of the ``k`` smallest distances per row, ties to the lower index."""
    return np.argsort(dist, axis=1, kind="stable")[:, :k]


def assign_knn(x: np.ndarray, cb: Codebook, k: int) -> Assignment:
    if not 1 <= k <= cb.M:
        raise ConfigurationError(f"k must be in [1, {cb.M}], got {k}")
    d = hamming_matrix(np.asarray(x, dtype=np.uint8)[None, :], cb.centroids)
    idx = knn_indices(d, k)[0]
    return Assignment(tuple((int(i), int(d[0, i])) for i in idx))


def _majority(bits: np.ndarray, labels: np.ndarray, prev: np.ndarray, M: int) -> tuple[np.ndarray, np.ndarray]:
    """Per-cluster bitwise majority; exact half keeps the previous bit."""
    D = bits.shape[1]
    ones = np.zeros((M, D), dtype=np.int64)
    order = np.argsort(labels, kind="stable")
    counts = np.bincount(labels, minlength=M)
    bounds = np.concatenate([[0], np.cumsum(counts)])
    grouped = bits[order]
    for m in np.flatnonzero(counts):
        ones[m] = grouped[bounds[m]:bounds[m + 1]].sum(axis=0, dtype=np.int64)
    twice = 2 * ones
    n = counts[:, None]
    prev_bits = unpack_bits(prev, D).astype(bool)
    new = np.where(twice > n, True, np.where(twice < n, False, prev_bits))
    # empty clusters keep their centroid until repaired
    new[counts == 0] = prev_bits[counts == 0]
    return pack_bits(new), counts


def _init_centroids(X: np.ndarray, M: int, rng: XorShift64Star) -> np.ndarray:
    """``M`` points drawn without replacement, skipping repeated values while possible."""
    N = X.shape[0]
    swapped: dict[int, int] = {}
    chosen, dupes, seen = [], [], set()
    for i in range(N):
        j = i + rng.randbelow(N - i)
        vi, vj = swapped.get(i, i), swapped.get(j, j)
        swapped[j] = vi
        key = X[vj].tobytes()
        if key in seen:
            dupes.append(vj)
        else:
            seen.add(key)
            chosen.append(vj)
            if len(chosen) == M:
                break
    chosen.extend(dupes[:M - len(chosen)])
    return X[np.asarray(chosen)].copy()


def bitwise_median(packed: np.ndarray, D: int | None = None) -> np.ndarray:
    """Exact Hamming 1-median of a set of packed descriptors (ties give 0)."""
    packed = np.asarray(packed, dtype=np.uint8)
    if packed.ndim != 2 or packed.shape[0] == 0:
        raise ContractViolation("need a non-empty (n, bytes) array")
    bits = unpack_bits(packed, D).astype(np.int64)
    return pack_bits(2 * bits.sum(axis=0) > packed.shape[0])


def _cluster_sigmas(dist_to_own: np.ndarray, labels: np.ndarray, M: int) -> np.ndarray:
    counts = np.bincount(labels, minlength=M)
    s1 = np.bincount(labels, weights=dist_to_own, minlength=M)
    s2 = np.bincount(labels, weights=dist_to_own.astype(np.float64) ** 2, minlength=M)
    with np.errstate(invalid="ignore", divide="ignore"):
        mean = s1 / counts
        var = np.maximum(s2 / counts - mean ** 2, 0.0)
    sig = np.sqrt(np.where(counts > 0, var, 0.0))
    ok = counts > 1
    fallback = float(sig[ok].mean()) if ok.any() else 0.0
    sig[~ok] = fallback
    return sig


def kmedians(train: DescriptorSet | np.ndarray, M: int, max_iter: int = 100, seed: int = 42,
             D: int | None = None) -> Codebook:
    """Lloyd-style k-medians under Hamming distance.

    Alternates nearest-centroid assignment (ties to the lowest index) and a
    bitwise-majority centroid update, which is the exact 1-median of a
    cluster in Hamming space.  Stops when the assignment repeats or after
    ``max_iter`` rounds.  Empty clusters are reseeded with the point that is
    farthest from its own centroid.  The cost after every assignment step is
    recorded in ``Codebook.history``.
    """
    if isinstance(train, DescriptorSet):
        D, X = train.D, train.bits
    else:
        X = np.asarray(train, dtype=np.uint8)
        D = D if D is not None else X.shape[1] * 8
    N = X.shape[0]
    if M < 2:
        raise ConfigurationError(f"M must be >= 2, got {M}")
    if N < M:
        raise ConfigurationError(f"need at least M={M} training descriptors, got {N}")
    if max_iter < 1:
        raise ConfigurationError("max_iter must be >= 1")

    rng = XorShift64Star(seed)
    centroids = _init_centroids(X, M, rng)
    bits = unpack_bits(X, D)
    history = []
    prev_labels = None
    for _ in range(max_iter):
        dist = hamming_matrix(X, centroids)
        labels = nearest(dist)
        own = dist[np.arange(N), labels]
        history.append(int(own.sum()))
        if prev_labels is not None and np.array_equal(labels, prev_labels):
            break
        centroids, counts = _majority(bits, labels, centroids, M)
        empty = np.flatnonzero(counts == 0)
        if empty.size:
            own = own.astype(np.int64).copy()
            for m in empty:
                j = int(np.argmax(own))
                if own[j] == 0:
                    break
                centroids[m] = X[j]
                own[j] = 0
        prev_labels = labels

    dist = hamming_matrix(X, centroids)
    labels = nearest(dist)
    own = dist[np.arange(N), labels]
    sigmas = _cluster_sigmas(own, labels, M)
    return Codebook(D, centroids, sigmas, seed=int(seed), train_size=N, history=history)


def sample_training_pool(sets, sample: int, seed: int) -> np.ndarray:
    """Uniformly subsample up to ``sample`` descriptors from many frames."""
    sets = list(sets)
    X = np.concatenate([s.bits for s in sets], axis=0) if sets else np.zeros((0, 0), np.uint8)
    if sample <= 0 or X.shape[0] <= sample:
        return X
    idx = XorShift64Star(seed).sample_without_replacement(X.shape[0], sample)
    return X[np.sort(np.asarray(idx))]


def codebook_bytes(cb: Codebook) -> bytes:
    head = _BCBK_HEADER.pack(BCBK_MAGIC, BCBK_VERSION, cb.M, cb.D)
    return head + cb.centroids.tobytes() + cb.sigmas.astype("<f8").tobytes()


def parse_codebook(buf: bytes) -> Codebook:
    if buf[:4] != BCBK_MAGIC:
        raise FormatError(f"magic: expected {BCBK_MAGIC!r}, got {bytes(buf[:4])!r}")
    if len(buf) < _BCBK_HEADER.size:
        raise TruncatedFileError("BCBK header truncated", len(buf))
    _, version, M, D = _BCBK_HEADER.unpack_from(buf)
    if version != BCBK_VERSION:
        raise FormatError(f"version: unsupported BCBK version {version}")
    if D == 0 or D % 8:
        raise FormatError(f"D: must be a positive multiple of 8, got {D}")
    off = _BCBK_HEADER.size
    need = M * D // 8 + 8 * M
    if len(buf) - off < need:
        raise TruncatedFileError(f"BCBK payload truncated: expected {need} bytes", len(buf))
    cents = np.frombuffer(buf, dtype=np.uint8, count=M * D // 8, offset=off).reshape(M, D // 8)
    sig = np.frombuffer(buf, dtype="<f8", count=M, offset=off + M * D // 8)
    return Codebook(D, cents.copy(), sig.astype(np.float64))


def write_codebook(cb: Codebook, path) -> None:
    with open(path, "wb") as fh:
        fh.write(codebook_bytes(cb))


def read_codebook(path) -> Codebook:
    with open(path, "rb") as fh:
        return parse_codebook(fh.read())


class HammingKMedians(ClusterMixin, TransformerMixin, BaseEstimator):
    """k-medians clustering of packed binary descriptors.

    ``X`` is a ``(n_samples, D // 8)`` uint8 array of packed descriptors.
    ``transform`` returns Hamming distances to every centroid.
    """

    def __init__(self, n_clusters=256, max_iter=100, seed=42):
        self.n_clusters = n_clusters
        self.max_iter = max_iter
        self.seed = seed

    def fit(self, X, y=None):
        X = _check_packed(X)
        self.codebook_ = kmedians(X, self.n_clusters, self.max_iter, self.seed)
        self.cluster_centers_ = self.codebook_.centroids
        self.sigmas_ = self.codebook_.sigmas
        self.cost_history_ = list(self.codebook_.history)
        self.labels_ = self.predict(X)
        return self

    def predict(self, X):
        check_is_fitted(self, "codebook_")
        return nearest(hamming_matrix(_check_packed(X), self.cluster_centers_))

    def transform(self, X):
        check_is_fitted(self, "codebook_")
        return hamming_matrix(_check_packed(X), self.cluster_centers_)


def _check_packed(X) -> np.ndarray:
    if isinstance(X, DescriptorSet):
        return X.bits
    X = np.asarray(X)
    if X.ndim != 2:
        raise ContractViolation(f"expected packed descriptors of shape (n, bytes), got {X.shape}")
    if X.dtype != np.uint8:
        if X.size and (X.min() < 0 or X.max() > 255):
            raise ContractViolation("packed descriptor bytes must be in [0, 255]")
        X = X.astype(np.uint8)
    return X
