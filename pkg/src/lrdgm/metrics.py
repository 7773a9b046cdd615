"""Recovery and tracking metrics for fitted precision sequences."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.stats

from . import spd
from .graph import conditional_correlation, threshold_edges
from .model import PrecisionSequence


def roc_auc(scored: list) -> float:
    """Area under the ROC curve from (score, is_positive) pairs.

    Rank-based (Mann-Whitney) formulation; tied scores contribute half counts.
    Needs at least one positive and one negative label.
    """
    pairs = list(scored)
    if not pairs:
        raise ValueError("empty score list")
    scores = np.asarray([float(s) for s, _ in pairs])
    labels = np.asarray([bool(l) for _, l in pairs])
    npos = int(labels.sum())
    nneg = len(labels) - npos
    if npos == 0 or nneg == 0:
        raise ValueError("need both positive and negative labels")
    ranks = scipy.stats.rankdata(scores)
    u = ranks[labels].sum() - npos * (npos + 1) / 2.0
    return float(u / (npos * nneg))


def pair_scores(corr: np.ndarray, truth_adj: np.ndarray) -> list:
    """Upper-triangle (score, label) pairs: |corr_ql| against the true edge set."""
    C = np.asarray(corr, dtype=float)
    A = np.asarray(truth_adj)
    if C.shape != A.shape or C.ndim != 2 or C.shape[0] != C.shape[1]:
        raise ValueError("matrices must be square and congruent")
    iu = np.triu_indices(C.shape[0], k=1)
    return list(zip(np.abs(C[iu]), (A[iu] != 0)))


def f1_at_threshold(corr: np.ndarray, truth_adj: np.ndarray, tau: float) -> float:
    """F1 score of thresholded edges against the true edge set (upper triangle)."""
    pred = threshold_edges(corr, tau)
    A = np.asarray(truth_adj)
    if pred.shape != A.shape:
        raise ValueError("matrices must be congruent")
    iu = np.triu_indices(A.shape[0], k=1)
    t = A[iu] != 0
    y = pred[iu] != 0
    if not t.any():
        raise ValueError("true edge set is empty")
    tp = int(np.sum(t & y))
    fp = int(np.sum(~t & y))
    fn = int(np.sum(t & ~y))
    denom = 2 * tp + fp + fn
    return float(2 * tp / denom) if denom > 0 else 0.0


def mean_geodesic_error(est: PrecisionSequence, truth: list) -> float:
    """Average squared affine-invariant distance to the true precisions."""
    if len(truth) != est.T:
        raise ValueError(f"{len(truth)} true matrices for {est.T} estimated windows")
    dense = est.dense()
    total = 0.0
    for M, Tr in zip(dense, truth):
        total += spd.geodesic_distance(M, Tr) ** 2
    return float(total / est.T)


def temporal_variation(seq: PrecisionSequence) -> float:
    """Sum of Frobenius distances between consecutive precisions; needs T >= 2."""
    if seq.T < 2:
        raise ValueError("temporal variation needs at least two windows")
    dense = seq.dense()
    return float(sum(np.linalg.norm(dense[t + 1] - dense[t]) for t in range(seq.T - 1)))


@dataclass(frozen=True, eq=False)
class EvalReport:
    """Aggregate evaluation of a fitted sequence against ground truth."""

    auc: float
    f1: float
    mean_geodesic_error: float
    temporal_variation: float | None
    per_window: tuple

    def as_dict(self) -> dict:
        return {
            "auc": self.auc,
            "f1": self.f1,
            "mean_geodesic_error": self.mean_geodesic_error,
            "temporal_variation": self.temporal_variation,
            "per_window": [dict(d) for d in self.per_window],
        }


def evaluate_sequence(est: PrecisionSequence, truth_precisions: list,
                      truth_edges: list, tau: float) -> EvalReport:
    """Score a fit window by window and overall.

    AUC and F1 pool the conditional-correlation scores of every window against
    that window's true edges; the geodesic error averages over windows and the
    temporal variation is reported for T >= 2 fits (None otherwise).
    """
    if len(truth_precisions) != est.T or len(truth_edges) != est.T:
        raise ValueError("ground truth length does not match the fit")
    dense = est.dense()
    pooled = []
    per_window = []
    for t in range(est.T):
        C = conditional_correlation(dense[t])
        scores = pair_scores(C, truth_edges[t])
        pooled.extend(scores)
        per_window.append({
            "window": t,
            "auc": roc_auc(scores),
            "f1": f1_at_threshold(C, truth_edges[t], tau),
            "geodesic_error_sq": spd.geodesic_distance(dense[t], truth_precisions[t]) ** 2,
        })
    pooled_corrs = [conditional_correlation(M) for M in dense]
    tp = 0
    fp = 0
    fn = 0
    for C, A in zip(pooled_corrs, truth_edges):
        pred = threshold_edges(C, tau)
        iu = np.triu_indices(A.shape[0], k=1)
        t_ = np.asarray(A)[iu] != 0
        y_ = pred[iu] != 0
        tp += int(np.sum(t_ & y_))
        fp += int(np.sum(~t_ & y_))
        fn += int(np.sum(t_ & ~y_))
    denom = 2 * tp + fp + fn
    pooled_f1 = float(2 * tp / denom) if denom > 0 else 0.0
    return EvalReport(
        auc=roc_auc(pooled),
        f1=pooled_f1,
        mean_geodesic_error=mean_geodesic_error(est, truth_precisions),
        temporal_variation=temporal_variation(est) if est.T >= 2 else None,
        per_window=tuple(per_window),
    )
