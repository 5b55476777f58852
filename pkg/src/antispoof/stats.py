"""Pairwise significance testing of detection-error differences with the
Holm step-down multiple-comparison correction.

The pair test: at each system's own EER threshold, mark every trial as an
error or not (bona fide below threshold, spoof at or above it), then compare
the two pooled error proportions with a two-sided two-proportion z-test.
"""

import math
from dataclasses import dataclass

import numpy as np

from .data import BONAFIDE
from .errors import ParameterError
from .evaluate import compute_eer

DEFAULT_ALPHA = 0.05


@dataclass(frozen=True)
class SignificanceMatrix:
    labels: tuple
    p_values: np.ndarray  # (m, m), symmetric, unit diagonal
    reject: np.ndarray  # (m, m) bool, False diagonal
    alpha: float


def _error_vector(score_set, protocol, threshold):
    errs = np.zeros(len(protocol), dtype=bool)
    for i, rec in enumerate(protocol):
        s = score_set[rec.trial_id]
        if rec.label == BONAFIDE:
            errs[i] = s < threshold
        else:
            errs[i] = s >= threshold
    return errs


def eer_significance_pair(scores_a, scores_b, protocol) -> float:
    """Two-sided p-value for 'systems A and B have equal error rates'."""
    ids = [rec.trial_id for rec in protocol]
    for label, ss in (("A", scores_a), ("B", scores_b)):
        absent = [t for t in ids if t not in ss]
        if absent:
            raise ParameterError(
                f"score set {label} is missing {len(absent)} protocol trials "
                f"(first: {absent[0]})"
            )
    thr_a = compute_eer(scores_a, protocol).threshold
    thr_b = compute_eer(scores_b, protocol).threshold
    err_a = _error_vector(scores_a, protocol, thr_a)
    err_b = _error_vector(scores_b, protocol, thr_b)
    if np.array_equal(err_a, err_b):
        return 1.0
    n = err_a.size
    p1 = err_a.mean()
    p2 = err_b.mean()
    pooled = (err_a.sum() + err_b.sum()) / (2.0 * n)
    se = math.sqrt(pooled * (1.0 - pooled) * (2.0 / n))
    if se == 0.0:
        return 1.0
    z = (p1 - p2) / se
    return float(math.erfc(abs(z) / math.sqrt(2.0)))


def holm_bonferroni(pvalues, alpha=DEFAULT_ALPHA):
    """Step-down rejection flags, returned in the input order.

    Sorted p-values are rejected while p_(k) <= alpha / (m - k + 1)
    (1-indexed); the first failure stops all later rejections.
    """
    ps = [float(p) for p in pvalues]
    if not (0.0 < alpha < 1.0):
        raise ParameterError("alpha must be inside (0, 1)")
    for p in ps:
        if not (0.0 <= p <= 1.0) or not np.isfinite(p):
            raise ParameterError(f"p-value {p} outside [0, 1]")
    m = len(ps)
    reject = [False] * m
    order = np.argsort(ps, kind="stable")
    for k, idx in enumerate(order):
        if ps[idx] <= alpha / (m - k):
            reject[idx] = True
        else:
            break
    return reject


def build_matrix(labeled_scores, protocol, alpha=DEFAULT_ALPHA) -> SignificanceMatrix:
    """All pairwise tests plus one Holm correction over the collection.

    labeled_scores: sequence of (label, ScoreSet).
    """
    labeled_scores = list(labeled_scores)
    if len(labeled_scores) < 2:
        raise ParameterError("need at least two score sets to compare")
    labels = tuple(label for label, _ in labeled_scores)
    m = len(labels)
    pairs = [(i, j) for i in range(m) for j in range(i + 1, m)]
    raw = [
        eer_significance_pair(labeled_scores[i][1], labeled_scores[j][1], protocol)
        for i, j in pairs
    ]
    flags = holm_bonferroni(raw, alpha)
    p_mat = np.ones((m, m))
    r_mat = np.zeros((m, m), dtype=bool)
    for (i, j), p, flag in zip(pairs, raw, flags):
        p_mat[i, j] = p_mat[j, i] = p
        r_mat[i, j] = r_mat[j, i] = flag
    return SignificanceMatrix(
        labels=labels, p_values=p_mat, reject=r_mat, alpha=alpha
    )


def write_matrix_csv(path, matrix: SignificanceMatrix) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("labelA,labelB,p,reject\n")
        m = len(matrix.labels)
        for i in range(m):
            for j in range(i + 1, m):
                fh.write(
                    f"{matrix.labels[i]},{matrix.labels[j]},"
                    f"{matrix.p_values[i, j]:.6g},"
                    f"{int(matrix.reject[i, j])}\n"
                )
