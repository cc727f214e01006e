"""Binary SVM with the kernel ``exp(-gamma * d(x, x'))`` trained by SMO."""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist, pdist
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .exceptions import ConfigurationError, ContractViolation, FormatError, TruncatedFileError
from .prng import XorShift64Star

METRICS = {"l2": "euclidean", "l1": "cityblock"}
_METRIC_CODES = {"l2": 0, "l1": 1}
_METRIC_NAMES = {v: k for k, v in _METRIC_CODES.items()}

BSVM_MAGIC = b"BSVM"
BSVM_VERSION = 1
_BSVM_HEADER = struct.Struct("<4sBBddII")

_TAU = 1e-12


@dataclass(frozen=True)
class KernelConfig:
    metric: str = "l2"
    gamma: float | str = "auto"
    C: float = 10.0

    def __post_init__(self):
        if self.metric not in METRICS:
            raise ConfigurationError(f"metric must be one of {sorted(METRICS)}, got {self.metric!r}")
        if not self.C > 0:
            raise ConfigurationError(f"C must be positive, got {self.C}")
        if self.gamma != "auto" and not float(self.gamma) > 0:
            raise ConfigurationError(f"gamma must be positive or 'auto', got {self.gamma}")


def pairwise_distances(A, B, metric: str = "l2") -> np.ndarray:
    return cdist(np.asarray(A, dtype=np.float64), np.asarray(B, dtype=np.float64), METRICS[metric])


def gamma_auto(train, metric: str = "l2") -> float:
    """Inverse of the mean distance over all unordered training pairs."""
    X = np.asarray(train, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 2:
        raise ConfigurationError("gamma_auto needs at least two training vectors")
    mean = float(pdist(X, METRICS[metric]).mean())
    if mean == 0.0:
        raise ConfigurationError(
            "all training vectors are identical (mean pairwise distance 0); "
            "set gamma explicitly or check the feature extraction")
    return 1.0 / mean


def kernel_matrix(A, B, gamma: float, metric: str = "l2") -> np.ndarray:
    return np.exp(-gamma * pairwise_distances(A, B, metric))


@dataclass(eq=False)
class SvmModel:
    support_vectors: np.ndarray
    alphas: np.ndarray
    labels: np.ndarray
    bias: float
    metric: str
    gamma: float
    C: float
    n_iter: int = 0

    @property
    def dual_coef(self) -> np.ndarray:
        return self.alphas * self.labels


def smo(K: np.ndarray, y: np.ndarray, C: float, tol: float = 1e-3, max_passes: int = 200,
        seed: int = 0) -> tuple[np.ndarray, float, int]:
    """Solve the SVM dual on a precomputed kernel.

    Uses maximal-violating-pair selection with second-order choice of the
    second index.  Index ties are broken by a permutation drawn from
    ``seed``.  Stops when the largest KKT violation gap drops below ``tol``
    or after ``max_passes * n`` pair updates.

    Returns ``(alpha, bias, n_iter)``.
    """
    n = K.shape[0]
    y = y.astype(np.float64)
    perm = np.asarray(XorShift64Star(seed).permutation(n), dtype=np.intp)
    Kp = K[np.ix_(perm, perm)]
    yp = y[perm]
    Q = (yp[:, None] * yp[None, :]) * Kp
    QD = np.diag(Q).copy()
    alpha = np.zeros(n)
    G = -np.ones(n)
    max_iter = max(1, max_passes) * max(n, 1)
    it = 0
    while it < max_iter:
        yG = -yp * G
        up = ((yp > 0) & (alpha < C)) | ((yp < 0) & (alpha > 0))
        low = ((yp > 0) & (alpha > 0)) | ((yp < 0) & (alpha < C))
        if not up.any() or not low.any():
            break
        cand = np.where(up, yG, -np.inf)
        i = int(np.argmax(cand))
        gmax = cand[i]
        gmin = np.where(low, yG, np.inf).min()
        if gmax - gmin < tol:
            break
        b = gmax - yG
        mask = low & (b > 0)
        a = QD[i] + QD - 2.0 * yp[i] * yp * Q[i]
        a = np.where(a > 0, a, _TAU)
        obj = np.where(mask, -(b * b) / a, np.inf)
        j = int(np.argmin(obj))

        ai_old, aj_old = alpha[i], alpha[j]
        if yp[i] != yp[j]:
            quad = QD[i] + QD[j] + 2.0 * Q[i, j]
            quad = quad if quad > 0 else _TAU
            delta = (-G[i] - G[j]) / quad
            diff = alpha[i] - alpha[j]
            alpha[i] += delta
            alpha[j] += delta
            if diff > 0:
                if alpha[j] < 0:
                    alpha[j] = 0.0
                    alpha[i] = diff
            elif alpha[i] < 0:
                alpha[i] = 0.0
                alpha[j] = -diff
            if diff > 0:
                if alpha[i] > C:
                    alpha[i] = C
                    alpha[j] = C - diff
            elif alpha[j] > C:
                alpha[j] = C
                alpha[i] = C + diff
        else:
            quad = QD[i] + QD[j] - 2.0 * Q[i, j]
            quad = quad if quad > 0 else _TAU
            delta = (G[i] - G[j]) / quad
            total = alpha[i] + alpha[j]
            alpha[i] -= delta
            alpha[j] += delta
            if total > C:
                if alpha[i] > C:
                    alpha[i] = C
                    alpha[j] = total - C
            elif alpha[j] < 0:
                alpha[j] = 0.0
                alpha[i] = total
            if total > C:
                if alpha[j] > C:
                    alpha[j] = C
                    alpha[i] = total - C
            elif alpha[i] < 0:
                alpha[i] = 0.0
                alpha[j] = total
        G += Q[i] * (alpha[i] - ai_old) + Q[j] * (alpha[j] - aj_old)
        it += 1

    yG = yp * G
    free = (alpha > 0) & (alpha < C)
    if free.any():
        rho = float(yG[free].mean())
    else:
        ub, lb = np.inf, -np.inf
        for t in range(n):
            at_upper = alpha[t] >= C
            at_lower = alpha[t] <= 0
            if (at_upper and yp[t] < 0) or (at_lower and yp[t] > 0):
                ub = min(ub, yG[t])
            elif (at_upper and yp[t] > 0) or (at_lower and yp[t] < 0):
                lb = max(lb, yG[t])
        rho = (ub + lb) / 2.0
    out = np.empty(n)
    out[perm] = alpha
    return out, -rho, it


def _check_labels(y) -> np.ndarray:
    y = np.asarray(y)
    if not np.all(np.isin(y, (-1, 1))):
        raise ContractViolation("labels must be +1 or -1")
    if len(np.unique(y)) < 2:
        raise ConfigurationError("training data must contain both classes")
    return y.astype(np.int64)


def svm_train(X, y, cfg: KernelConfig = KernelConfig(), tol: float = 1e-3, max_passes: int = 200,
              seed: int = 0) -> SvmModel:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 2:
        raise ContractViolation("need a 2-D array with at least two samples")
    if not np.all(np.isfinite(X)):
        raise ContractViolation("features contain NaN or infinite values")
    y = _check_labels(y)
    gamma = gamma_auto(X, cfg.metric) if cfg.gamma == "auto" else float(cfg.gamma)
    K = kernel_matrix(X, X, gamma, cfg.metric)
    alpha, bias, n_iter = smo(K, y, cfg.C, tol, max_passes, seed)
    sv = alpha > 0
    return SvmModel(X[sv].copy(), alpha[sv], y[sv], bias, cfg.metric, gamma, cfg.C, n_iter)


def svm_decision(model: SvmModel, X) -> np.ndarray | float:
    X = np.asarray(X, dtype=np.float64)
    single = X.ndim == 1
    X2 = np.atleast_2d(X)
    dim = model.support_vectors.shape[1] if model.support_vectors.size else None
    if dim is not None and X2.shape[1] != dim:
        raise ContractViolation(f"expected {dim} features, got {X2.shape[1]}")
    if model.alphas.size == 0:
        scores = np.full(X2.shape[0], model.bias)
    else:
        K = kernel_matrix(model.support_vectors, X2, model.gamma, model.metric)
        scores = model.dual_coef @ K + model.bias
    return float(scores[0]) if single else scores


def svm_predict(model: SvmModel, X):
    s = svm_decision(model, X)
    return np.where(np.asarray(s) >= 0, 1, -1) if np.ndim(s) else (1 if s >= 0 else -1)


def model_bytes(model: SvmModel) -> bytes:
    n, dim = model.support_vectors.shape if model.support_vectors.size else (0, 0)
    head = _BSVM_HEADER.pack(BSVM_MAGIC, BSVM_VERSION, _METRIC_CODES[model.metric],
                             model.gamma, model.C, n, dim)
    return (head + model.support_vectors.astype("<f8").tobytes()
            + model.dual_coef.astype("<f8").tobytes() + struct.pack("<d", model.bias))


def parse_model(buf: bytes) -> SvmModel:
    if buf[:4] != BSVM_MAGIC:
        raise FormatError(f"magic: expected {BSVM_MAGIC!r}, got {bytes(buf[:4])!r}")
    if len(buf) < _BSVM_HEADER.size:
        raise TruncatedFileError("BSVM header truncated", len(buf))
    _, version, metric, gamma, C, n, dim = _BSVM_HEADER.unpack_from(buf)
    if version != BSVM_VERSION:
        raise FormatError(f"version: unsupported BSVM version {version}")
    if metric not in _METRIC_NAMES:
        raise FormatError(f"metric: unknown code {metric}")
    off = _BSVM_HEADER.size
    need = 8 * (n * dim + n + 1)
    if len(buf) - off < need:
        raise TruncatedFileError(f"BSVM payload truncated: expected {need} bytes", len(buf))
    sv = np.frombuffer(buf, "<f8", n * dim, off).reshape(n, dim).astype(np.float64)
    coef = np.frombuffer(buf, "<f8", n, off + 8 * n * dim).astype(np.float64)
    (bias,) = struct.unpack_from("<d", buf, off + 8 * (n * dim + n))
    labels = np.where(coef >= 0, 1, -1)
    return SvmModel(sv, np.abs(coef), labels, bias, _METRIC_NAMES[metric], gamma, C)


def write_model(model: SvmModel, path) -> None:
    with open(path, "wb") as fh:
        fh.write(model_bytes(model))


def read_model(path) -> SvmModel:
    with open(path, "rb") as fh:
        return parse_model(fh.read())


class ExpKernelSVC(ClassifierMixin, BaseEstimator):
    """Binary SVM with kernel ``exp(-gamma * d(x, x'))``.

    Parameters
    ----------
    C : float, default=10
        Box constraint on the dual coefficients.
    metric : {'l2', 'l1'}, default='l2'
        Distance ``d`` inside the kernel.
    gamma : float or 'auto', default='auto'
        ``'auto'`` uses the inverse mean pairwise training distance.
    tol : float, default=1e-3
        KKT tolerance of the SMO solver.
    max_passes : int, default=200
        Caps the solver at ``max_passes * n_samples`` pair updates.
    seed : int, default=0
        Seed for the working-set tie-breaking order.

    Attributes
    ----------
    model_ : SvmModel
    gamma_ : float
    support_vectors_ : ndarray of shape (n_support, n_features)
    dual_coef_ : ndarray of shape (n_support,)
        ``alpha_i * y_i`` for each support vector.
    intercept_ : float
    classes_ : ndarray, ``[-1, 1]``
    """

    def __init__(self, C=10.0, metric="l2", gamma="auto", tol=1e-3, max_passes=200, seed=0):
        self.C = C
        self.metric = metric
        self.gamma = gamma
        self.tol = tol
        self.max_passes = max_passes
        self.seed = seed

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64)
        cfg = KernelConfig(self.metric, self.gamma, self.C)
        self.model_ = svm_train(X, y, cfg, self.tol, self.max_passes, self.seed)
        self.gamma_ = self.model_.gamma
        self.support_vectors_ = self.model_.support_vectors
        self.dual_coef_ = self.model_.dual_coef
        self.intercept_ = self.model_.bias
        self.classes_ = np.array([-1, 1])
        self.n_features_in_ = X.shape[1]
        return self

    def decision_function(self, X):
        check_is_fitted(self, "model_")
        X = check_array(X, dtype=np.float64)
        return svm_decision(self.model_, X)

    def predict(self, X):
        return np.where(self.decision_function(X) >= 0, 1, -1)
