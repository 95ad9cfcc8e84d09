"""Ranking metrics over click impressions.

Ranks come from a stable descending sort, so tied scores resolve toward
the earlier candidate, and every accumulation runs in a fixed order.
Two evaluations of the same numbers produce bit-equal results, which the
tests exploit by comparing against brute-force reimplementations.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .data import DataError


def ranks_from_scores(scores):
    """1-based rank per candidate, descending score, ties by position."""
    scores = np.asarray(scores, dtype=np.float64)
    order = np.argsort(-scores, kind="stable")
    ranks = np.empty(len(scores), dtype=np.int64)
    ranks[order] = np.arange(1, len(scores) + 1)
    return ranks


def auc(labels, scores):
    """Probability a positive outranks a negative, ties counting half.

    Pair counting runs on integers grouped by score, so the result is
    exact whatever order the candidates arrive in."""
    labels = np.asarray(labels)
    scores = np.asarray(scores, dtype=np.float64)
    n_pos = int((labels == 1).sum())
    n_neg = int((labels == 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise DataError("auc needs at least one positive and one negative")
    order = np.argsort(-scores, kind="stable")
    wins2 = 0                          # doubled win count stays integral
    neg_below = n_neg
    i = 0
    while i < len(order):
        j = i
        group_pos = group_neg = 0
        while j < len(order) and scores[order[j]] == scores[order[i]]:
            if labels[order[j]] == 1:
                group_pos += 1
            elif labels[order[j]] == 0:
                group_neg += 1
            j += 1
        neg_below -= group_neg
        wins2 += group_pos * (2 * neg_below + group_neg)
        i = j
    return wins2 / (2.0 * n_pos * n_neg)


def mrr(labels, scores):
    """Mean reciprocal rank over the positive candidates."""
    labels = np.asarray(labels)
    ranks = ranks_from_scores(scores)
    total = 0.0
    n_pos = 0
    for i in range(len(labels)):
        if labels[i] == 1:
            total += 1.0 / ranks[i]
            n_pos += 1
    if n_pos == 0:
        raise DataError("mrr needs at least one positive")
    return total / n_pos


def ndcg_at(labels, scores, k):
    """Binary nDCG at cutoff k."""
    labels = np.asarray(labels)
    ranks = ranks_from_scores(scores)
    n_pos = int((labels == 1).sum())
    if n_pos == 0:
        raise DataError("ndcg needs at least one positive")
    by_rank = np.zeros(len(labels) + 1, dtype=np.int64)
    for i in range(len(labels)):
        by_rank[ranks[i]] = 1 if labels[i] == 1 else 0
    dcg = 0.0
    for r in range(1, min(k, len(labels)) + 1):
        if by_rank[r]:
            dcg += 1.0 / math.log2(r + 1.0)
    ideal = 0.0
    for r in range(1, min(k, n_pos) + 1):
        ideal += 1.0 / math.log2(r + 1.0)
    return dcg / ideal


@dataclass
class EvalReport:
    auc: float
    mrr: float
    ndcg5: float
    ndcg10: float
    n_impressions: int
    n_skipped: int

    def as_dict(self):
        return {"auc": self.auc, "mrr": self.mrr, "ndcg5": self.ndcg5,
                "ndcg10": self.ndcg10, "n_impressions": self.n_impressions,
                "n_skipped": self.n_skipped}


def evaluate(labeled):
    """Mean metrics over (labels, scores) pairs.

    Impressions without at least one positive and one negative carry no
    ranking signal and are skipped (counted, not silently dropped)."""
    sums = np.zeros(4)
    n = 0
    skipped = 0
    for labels, scores in labeled:
        labels = np.asarray(labels)
        usable = (labels == 1).any() and (labels == 0).any()
        if not usable:
            skipped += 1
            continue
        sums[0] += auc(labels, scores)
        sums[1] += mrr(labels, scores)
        sums[2] += ndcg_at(labels, scores, 5)
        sums[3] += ndcg_at(labels, scores, 10)
        n += 1
    if n == 0:
        raise DataError("no scorable impressions")
    return EvalReport(auc=sums[0] / n, mrr=sums[1] / n, ndcg5=sums[2] / n,
                      ndcg10=sums[3] / n, n_impressions=n, n_skipped=skipped)
