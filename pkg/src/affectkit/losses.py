"""Training objectives: agreement loss for continuous affect, categorical
and masked binary cross-entropy, the weighted multi-task total, and the two
coupling losses (soft-target cross-entropy and distribution matching).

All losses build DiffTensor graphs, so gradients flow back to whatever
produced the predictions. Probabilities that feed a log are clamped to
[1e-7, 1-1e-7] after the sigmoid/softmax; the categorical term instead
uses a shifted log-softmax directly, which stays exact for saturated
logits.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import DiffTensor, as_tensor
from .errors import (
    BadDistribution,
    BatchTooSmall,
    EmptyMaskBatch,
    ShapeMismatch,
    ValueOutOfRange,
)
from .relatedness import RelatednessTable
from .types import AUVector, NUM_AUS, NUM_EXPRESSIONS

PROB_EPS = 1e-7


@dataclass(frozen=True)
class LossWeights:
    """Multipliers for the AU and VA terms of the multi-task total."""

    lambda1: float = 1.0
    lambda2: float = 1.0

    def __post_init__(self):
        for name, v in (("lambda1", self.lambda1), ("lambda2", self.lambda2)):
            if not np.isfinite(v) or v < 0:
                raise ValueOutOfRange(f"{name}={v} must be finite and >= 0")


@dataclass
class BatchPredictions:
    """Model outputs for one batch plus per-sample label availability.

    Any head a model lacks is None. Flags are {0,1} vectors saying which
    rows carry which label type; a None flag means every row does.
    """

    expr_logits: Optional[DiffTensor] = None
    au_logits: Optional[DiffTensor] = None
    va: Optional[DiffTensor] = None
    compound_logits: Optional[DiffTensor] = None
    has_expr: Optional[np.ndarray] = None
    has_au: Optional[np.ndarray] = None
    has_va: Optional[np.ndarray] = None
    has_compound: Optional[np.ndarray] = None


@dataclass
class BatchLabels:
    """Ground truth aligned row-for-row with a BatchPredictions.

    Rows whose availability flag is 0 may hold anything; they are never
    read. AU truth is a target/weight pair so hard co-annotation can feed
    fractional observational weights through the same code path.
    """

    expr: Optional[np.ndarray] = None  # (N,) int class ids
    au_targets: Optional[np.ndarray] = None  # (N,17) floats in [0,1]
    au_mask: Optional[np.ndarray] = None  # (N,17) nonnegative weights
    va: Optional[np.ndarray] = None  # (N,2) floats
    compound: Optional[np.ndarray] = None  # (N,) int compound class ids


def au_targets_and_mask(aus: Sequence[Optional[AUVector]]):
    """Stack AUVectors into (targets, mask) arrays; None rows get zero mask."""
    n = len(aus)
    targets = np.zeros((n, NUM_AUS), dtype=np.float64)
    mask = np.zeros((n, NUM_AUS), dtype=np.float64)
    for i, au in enumerate(aus):
        if au is None:
            continue
        targets[i] = au.values
        mask[i] = au.mask
    return targets, mask


# ---------------------------------------------------------------------------
# individual objectives


def _ccc_1d(pred: DiffTensor, truth: DiffTensor) -> DiffTensor:
    """Differentiable concordance of two (N,) tensors, population moments."""
    mean_p = ad.tmean(pred)
    mean_t = ad.tmean(truth)
    dp = pred - mean_p
    dt = truth - mean_t
    var_p = ad.tmean(dp * dp)
    var_t = ad.tmean(dt * dt)
    cov = ad.tmean(dp * dt)
    diff = mean_p - mean_t
    return (2.0 * cov) / (var_p + var_t + diff * diff)


def ccc_loss(pred_va: DiffTensor, truth_va) -> DiffTensor:
    """1 - mean of the valence and arousal concordance coefficients.

    Concordance needs a sequence, so the batch must have at least 2 rows.
    """
    truth = np.asarray(truth_va, dtype=np.float64)
    if pred_va.ndim != 2 or pred_va.shape[1] != 2 or truth.shape != pred_va.shape:
        raise ShapeMismatch(f"va shapes {pred_va.shape} vs {truth.shape}")
    if pred_va.shape[0] < 2:
        raise BatchTooSmall("concordance needs at least 2 samples")
    ccc_v = _ccc_1d(
        ad.slice_axis(pred_va, 0, 1, axis=1), as_tensor(truth[:, 0:1])
    )
    ccc_a = _ccc_1d(
        ad.slice_axis(pred_va, 1, 2, axis=1), as_tensor(truth[:, 1:2])
    )
    return 1.0 - 0.5 * (ccc_v + ccc_a)


def log_softmax(logits: DiffTensor, axis: int = 1) -> DiffTensor:
    """Shifted log-softmax; the max shift is a constant, so the gradient is
    exactly softmax - onehot without any clamping."""
    shift = logits - as_tensor(logits.data.max(axis=axis, keepdims=True))
    return shift - ad.log(ad.tsum(ad.exp(shift), axis=axis, keepdims=True))


def cce_loss(expr_logits: DiffTensor, truth) -> DiffTensor:
    """Mean over samples of -log softmax(logits)[true class]."""
    truth_ids = np.asarray(
        [t if isinstance(t, (int, np.integer)) else t.class_id for t in np.atleast_1d(truth)],
        dtype=np.int64,
    )
    n, k = expr_logits.shape
    if truth_ids.shape != (n,):
        raise ShapeMismatch(f"{truth_ids.shape[0]} labels for {n} rows")
    if np.any(truth_ids < 0) or np.any(truth_ids >= k):
        raise ValueOutOfRange(f"class ids must be in [0,{k})")
    onehot = np.zeros((n, k), dtype=np.float64)
    onehot[np.arange(n), truth_ids] = 1.0
    picked = ad.tsum(log_softmax(expr_logits) * as_tensor(onehot), axis=1)
    return -ad.tmean(picked)


def masked_bce_loss(au_logits: DiffTensor, targets, mask) -> DiffTensor:
    """Per-sample mask-weighted binary cross-entropy, averaged over samples.

    Per sample: -(sum w)^-1 * sum_i w_i [t_i log p_i + (1-t_i) log(1-p_i)]
    with p = sigmoid(logit) clamped to [1e-7, 1-1e-7]. Weights are usually
    the {0,1} annotation mask but may be fractional. Rows with zero total
    weight are skipped; a batch of only such rows is an error.
    """
    targets = np.asarray(targets, dtype=np.float64)
    mask = np.asarray(mask, dtype=np.float64)
    if au_logits.shape != targets.shape or au_logits.shape != mask.shape:
        raise ShapeMismatch(
            f"logits {au_logits.shape}, targets {targets.shape}, mask {mask.shape}"
        )
    if np.any(mask < 0):
        raise ValueOutOfRange("mask weights must be nonnegative")
    row_weight = mask.sum(axis=1)
    keep = np.flatnonzero(row_weight > 0)
    if keep.size == 0:
        raise EmptyMaskBatch("no sample has an annotated AU")
    logits = ad.take_rows(au_logits, keep)
    t = targets[keep]
    w = mask[keep]
    p = ad.clip(ad.sigmoid(logits), PROB_EPS, 1.0 - PROB_EPS)
    terms = as_tensor(t) * ad.log(p) + as_tensor(1.0 - t) * ad.log(1.0 - p)
    per_sample = ad.tsum(terms * as_tensor(w), axis=1) / as_tensor(row_weight[keep])
    return -ad.tmean(per_sample)


def multitask_loss(
    preds: BatchPredictions,
    labels: BatchLabels,
    weights: LossWeights = LossWeights(),
    return_terms: bool = False,
):
    """L_total = L_expr + lambda1 * L_au + lambda2 * L_va.

    Each term is computed only over the rows flagged as carrying that
    label type; a task with no labeled rows (or no head) contributes 0.
    A compound head, when present, adds a plain cross-entropy term at
    unit weight (the transfer-learning extension).
    """
    n = None
    for t in (preds.expr_logits, preds.au_logits, preds.va, preds.compound_logits):
        if t is not None:
            n = t.shape[0]
            break
    if n is None:
        raise ShapeMismatch("predictions carry no heads")

    def rows(flag):
        if flag is None:
            return np.arange(n)
        return np.flatnonzero(np.asarray(flag) != 0)

    zero = as_tensor(0.0)
    terms = {"expr": zero, "au": zero, "va": zero, "compound": zero}

    if preds.expr_logits is not None and labels.expr is not None:
        idx = rows(preds.has_expr)
        if idx.size:
            terms["expr"] = cce_loss(
                ad.take_rows(preds.expr_logits, idx),
                np.asarray(labels.expr)[idx],
            )
    if preds.au_logits is not None and labels.au_targets is not None:
        idx = rows(preds.has_au)
        if idx.size:
            terms["au"] = masked_bce_loss(
                ad.take_rows(preds.au_logits, idx),
                np.asarray(labels.au_targets)[idx],
                np.asarray(labels.au_mask)[idx],
            )
    if preds.va is not None and labels.va is not None:
        idx = rows(preds.has_va)
        if idx.size:
            terms["va"] = ccc_loss(
                ad.take_rows(preds.va, idx), np.asarray(labels.va)[idx]
            )
    if preds.compound_logits is not None and labels.compound is not None:
        idx = rows(preds.has_compound)
        if idx.size:
            terms["compound"] = cce_loss(
                ad.take_rows(preds.compound_logits, idx),
                np.asarray(labels.compound)[idx],
            )

    total = (
        terms["expr"]
        + weights.lambda1 * terms["au"]
        + weights.lambda2 * terms["va"]
        + terms["compound"]
    )
    if return_terms:
        return total, terms
    return total


# ---------------------------------------------------------------------------
# coupling objectives


def _check_rows_are_distributions(arr: np.ndarray, what: str) -> None:
    if np.any(arr < 0) or np.any(np.abs(arr.sum(axis=1) - 1.0) > 1e-6):
        raise BadDistribution(f"{what} rows must be distributions over classes")


def distribution_matching_loss(
    expr_probs: DiffTensor,
    au_probs: DiffTensor,
    table: RelatednessTable,
    reweight: bool = False,
) -> DiffTensor:
    """Cross-entropy between predicted AU activations and the AU mixture
    implied by the predicted emotion distribution.

    q = expr_probs @ p(AU|emotion); loss = mean_n sum_i -p(AU_i) log q_i
    with q clamped. Applied to every sample regardless of which labels it
    carries; gradients flow through both the AU and the emotion head.
    """
    if expr_probs.ndim != 2 or expr_probs.shape[1] != NUM_EXPRESSIONS:
        raise ShapeMismatch(f"expr_probs shape {expr_probs.shape}")
    if au_probs.ndim != 2 or au_probs.shape[1] != NUM_AUS:
        raise ShapeMismatch(f"au_probs shape {au_probs.shape}")
    if au_probs.shape[0] != expr_probs.shape[0]:
        raise ShapeMismatch("row counts differ")
    _check_rows_are_distributions(expr_probs.data, "emotion probability")
    if np.any(au_probs.data < 0) or np.any(au_probs.data > 1):
        raise BadDistribution("AU probabilities must lie in [0,1]")
    mixture = expr_probs @ as_tensor(table.conditional_matrix(reweight=reweight))
    q = ad.clip(mixture, PROB_EPS, 1.0 - PROB_EPS)
    per_sample = ad.tsum(au_probs * ad.log(q), axis=1)
    return -ad.tmean(per_sample)


def soft_target_cce(expr_probs: DiffTensor, soft_labels) -> DiffTensor:
    """Cross-entropy with soft targets: mean_n sum_k -soft_k log p_k."""
    soft = np.asarray(soft_labels, dtype=np.float64)
    if soft.shape != expr_probs.shape:
        raise ShapeMismatch(f"soft labels {soft.shape} vs probs {expr_probs.shape}")
    _check_rows_are_distributions(soft, "soft label")
    _check_rows_are_distributions(expr_probs.data, "emotion probability")
    p = ad.clip(expr_probs, PROB_EPS, 1.0 - PROB_EPS)
    per_sample = ad.tsum(as_tensor(soft) * ad.log(p), axis=1)
    return -ad.tmean(per_sample)
