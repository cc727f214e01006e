"""Slow reference implementations used only by the tests."""

import math
from fractions import Fraction

import numpy as np

from vidbossa.descriptors import unpack_bits


def hamming_bits(a, b):
    return sum(1 for x, y in zip(a, b) if x != y)


def bow_oracle(desc_bits, centroid_bits):
    """Per-descriptor argmin with lowest-index ties, average pooled."""
    M = len(centroid_bits)
    h = [0.0] * M
    for x in desc_bits:
        best, best_d = 0, None
        for m, c in enumerate(centroid_bits):
            d = hamming_bits(x, c)
            if best_d is None or d < best_d:
                best, best_d = m, d
        h[best] += 1
    n = len(desc_bits)
    return [v / n for v in h] if n else h


def bossanova_oracle(desc_bits, centroid_bits, sigmas, B, lambda_min, lambda_max, knn):
    """Integer histogram counts (M x B) and nearest-codeword counts, by explicit loops.

    Bin edges are exact rationals between ``lambda_min * sigma`` and
    ``lambda_max * sigma`` (those two products taken as float64, like the
    encoder's bounds).
    """
    M = len(centroid_bits)
    hist = [[0] * B for _ in range(M)]
    t = [0] * M
    for x in desc_bits:
        d = [hamming_bits(x, c) for c in centroid_bits]
        ranked = sorted(range(M), key=lambda m: (d[m], m))
        t[ranked[0]] += 1
        for m in ranked[:knn]:
            lo = Fraction(float(lambda_min * sigmas[m]))
            hi = Fraction(float(lambda_max * sigmas[m]))
            if hi <= lo or not lo <= d[m] <= hi:
                continue
            for b in range(B):
                left = lo + (hi - lo) * b / B
                right = lo + (hi - lo) * (b + 1) / B
                if left <= d[m] < right or (b == B - 1 and d[m] == right):
                    hist[m][b] += 1
                    break
    return hist, t


def bits_of(packed, D):
    return [list(map(int, row)) for row in unpack_bits(np.asarray(packed), D)]


def auc_pairs(scores, labels):
    """Probability that a random positive outranks a random negative, ties count half."""
    pos = [s for s, y in zip(scores, labels) if y > 0]
    neg = [s for s, y in zip(scores, labels) if y <= 0]
    total = 0.0
    for p in pos:
        for q in neg:
            total += 1.0 if p > q else 0.5 if p == q else 0.0
    return total / (len(pos) * len(neg))


def kkt_residual(K, y, alpha, bias, C):
    """Largest violation of the soft-margin dual optimality conditions."""
    f = (K * (alpha * y)[None, :]).sum(axis=1) + bias
    margin = y * f
    worst = 0.0
    for a, m in zip(alpha, margin):
        if a <= 1e-12:
            worst = max(worst, 1.0 - m)
        elif a >= C - 1e-12:
            worst = max(worst, m - 1.0)
        else:
            worst = max(worst, abs(m - 1.0))
    return max(worst, 0.0)


def box_mean(values):
    return math.floor(sum(values) / len(values) + 0.5)
