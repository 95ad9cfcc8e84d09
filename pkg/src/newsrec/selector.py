"""History selection: pick the few read items that matter for a candidate.

Every history item gets an informativeness score, the cosine between its
projected coarse vector and the candidate's. The top K survive as a hard
subset (recency order preserved), then a threshold gate zeroes the rows
whose score is still too low and scales the rest by their score. The
gather is discrete but the kept scores stay differentiable, so gradients
reach the projection through exactly the selected rows.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

# below any cosine, marks empty or all-padding history slots
INVALID_SCORE = -2.0


@dataclass
class SelectorParams:
    weight: Tensor                    # (d_sel, f)
    bias: Tensor                      # (d_sel,)

    def named(self, prefix="selector"):
        return {f"{prefix}.weight": self.weight, f"{prefix}.bias": self.bias}


@dataclass
class SelectedHistory:
    fine: Tensor                      # (K, L, N, f) gated rows
    weights: Tensor                   # (K,) gate output, 0 for dropped rows
    scores: Tensor                    # (K,) pre-gate informativeness
    indices: np.ndarray               # (K,) history positions, -1 for padding


def init_selector_params(config, rng):
    bound = 1.0 / np.sqrt(config.n_filters)
    return SelectorParams(
        weight=Tensor(
            rng.uniform(-bound, bound, size=(config.sel_dim, config.n_filters)),
            requires_grad=True,
        ),
        bias=Tensor(np.zeros(config.sel_dim), requires_grad=True),
    )


def project(coarse, params):
    """Map coarse vectors (M, f) or a single (f,) into selection space."""
    coarse = coarse if isinstance(coarse, Tensor) else Tensor(coarse)
    single = coarse.ndim == 1
    mat = ad.reshape(coarse, (1, coarse.shape[0])) if single else coarse
    out = ad.add(ad.matmul(mat, ad.transpose(params.weight)), params.bias)
    return ad.index0(out, 0) if single else out


def informativeness(history_proj, cand_proj, validity):
    """Cosine of each history row against the candidate; invalid slots
    are pinned to INVALID_SCORE so they always sort last."""
    scores = ad.row_cosine(history_proj, cand_proj)
    return ad.where_mask(scores, np.asarray(validity, dtype=bool), INVALID_SCORE)


def hard_select(scores, fine, k):
    """Keep the k best-scoring history rows.

    Ties break toward the more recent item (lower index). The returned
    indices are ascending, so the kept subsequence preserves recency
    order. Histories shorter than k pad with zero rows scored
    INVALID_SCORE under index -1. Returns (fine, scores, indices).
    """
    m = scores.shape[0]
    if fine.shape[0] != m:
        raise ad.DimensionError(f"scores cover {m} rows, fine has {fine.shape[0]}")
    order = np.argsort(-scores.data, kind="stable")
    kept = min(int(k), m)
    chosen = np.sort(order[:kept])
    if kept < m:
        ad.push_margin(scores.data[order[kept - 1]] - scores.data[order[kept]])
    sel_scores = ad.take(scores, chosen)
    sel_fine = ad.take(fine, chosen)
    if kept < k:
        pad = int(k) - kept
        sel_scores = ad.concat(
            [sel_scores, Tensor(np.full(pad, INVALID_SCORE))], axis=0)
        sel_fine = ad.concat(
            [sel_fine, Tensor(np.zeros((pad,) + fine.shape[1:]))], axis=0)
        chosen = np.concatenate([chosen, np.full(pad, -1, dtype=np.intp)])
    return sel_fine, sel_scores, chosen


def soft_select(sel_fine, sel_scores, threshold):
    """Gate the kept rows: a score below the threshold zeroes its row
    exactly, a score at or above scales the row by the score itself."""
    weights = ad.threshold_gate(sel_scores, threshold)
    k = sel_fine.shape[0]
    gated = ad.mul(ad.reshape(weights, (k,) + (1,) * (sel_fine.ndim - 1)), sel_fine)
    return gated, weights


def select_history(hist_fine, hist_proj, cand_proj, validity, k, threshold):
    """Full selection pass for one candidate."""
    scores = informativeness(hist_proj, cand_proj, validity)
    sel_fine, sel_scores, indices = hard_select(scores, hist_fine, k)
    gated, weights = soft_select(sel_fine, sel_scores, threshold)
    return SelectedHistory(fine=gated, weights=weights, scores=sel_scores,
                           indices=indices)


def recent_select(hist_fine, validity, k):
    """Baseline selection: the k most recent valid items, ungated."""
    k = int(k)
    valid_idx = np.flatnonzero(np.asarray(validity, dtype=bool))[:k].astype(np.intp)
    kept = valid_idx.size
    parts = []
    if kept:
        parts.append(ad.take(hist_fine, valid_idx))
    if kept < k:
        parts.append(Tensor(np.zeros((k - kept,) + hist_fine.shape[1:])))
    fine = parts[0] if len(parts) == 1 else ad.concat(parts, axis=0)
    w = np.zeros(k)
    w[:kept] = 1.0
    s = np.full(k, INVALID_SCORE)
    s[:kept] = 1.0
    indices = np.concatenate([valid_idx, np.full(k - kept, -1, dtype=np.intp)])
    return SelectedHistory(fine=fine, weights=Tensor(w), scores=Tensor(s),
                           indices=indices)
