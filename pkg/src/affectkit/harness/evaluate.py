"""Checkpoint evaluation: per-task metrics plus a predictions table.

Samples are pushed through the model in file order, chunked into fixed
length sequences. Metrics are computed per task over the samples that
carry that task's label; every sample gets a prediction row for each
head the model has.
"""

from __future__ import annotations

import warnings
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..errors import DegenerateInputWarning, EmptyRow, IncompatibleHeads
from ..metrics import (
    accuracy,
    binarize,
    ccc,
    confusion_matrix,
    e_total_au,
    e_total_expr,
    f1_binary,
    macro_f1,
    mean_diagonal,
    mse,
)
from ..models import Model, SequenceBatch, au_probs, compound_probs, expr_probs
from ..types import (
    NUM_EXPRESSIONS,
    AnnotatedSample,
    PredictionRecord,
)

_TASK_TO_HEAD = {"VA": "VA", "EXPR": "EXPR", "AU": "AU", "COMPOUND": "COMPOUND"}


def _forward_all(model: Model, samples: Sequence[AnnotatedSample], chunk: int):
    """Run samples through the model in order; returns per-head row arrays."""
    outs: Dict[str, List[np.ndarray]] = {"va": [], "expr": [], "au": [], "compound": []}
    heads = model.spec.heads
    for start in range(0, len(samples), chunk):
        part = samples[start : start + chunk]
        feats = np.stack([s.features for s in part])
        audio = None
        if model.dims.audio:
            audio = np.stack([s.audio_features for s in part])
        batch = SequenceBatch(features=feats[None], audio=None if audio is None else audio[None])
        preds = model.forward(batch, train=False)
        if "VA" in heads:
            outs["va"].append(preds.va.data.copy())
        if "EXPR" in heads:
            outs["expr"].append(expr_probs(preds).data.copy())
        if "AU" in heads:
            outs["au"].append(au_probs(preds).data.copy())
        if "COMPOUND" in heads:
            outs["compound"].append(compound_probs(preds).data.copy())
    return {k: (np.concatenate(v) if v else None) for k, v in outs.items()}


def _mean_recall(pred: np.ndarray, truth: np.ndarray, num_classes: int) -> float:
    """Mean per-class recall; classes absent from the truth are skipped."""
    cm = confusion_matrix(pred, truth, num_classes)
    try:
        return mean_diagonal(cm)
    except EmptyRow:
        row_sums = cm.sum(axis=1)
        present = row_sums > 0
        if not present.any():
            return 0.0
        return float(np.mean(np.diag(cm)[present] / row_sums[present]))


def evaluate_model(
    model: Model,
    samples: Sequence[AnnotatedSample],
    au_threshold: float = 0.5,
    tasks: Optional[Sequence[str]] = None,
    chunk: int = 512,
) -> Tuple[Dict[str, float], List[PredictionRecord]]:
    """Score the model on every task present (or the requested subset).

    Returns a flat metric dict and one prediction record per sample.
    ``degenerate_count`` reports how many metric computations hit a
    flagged 0/0 convention. Raises IncompatibleHeads when a requested
    (or present) task has no matching model head.
    """
    samples = list(samples)
    present = {s.task for s in samples}
    wanted = set(tasks) if tasks is not None else present
    for task in sorted(wanted):
        if task not in _TASK_TO_HEAD:
            raise IncompatibleHeads(f"unknown task {task!r}")
        if _TASK_TO_HEAD[task] not in model.spec.heads:
            raise IncompatibleHeads(f"task {task} needs a {_TASK_TO_HEAD[task]} head")

    rows = _forward_all(model, samples, chunk)
    records = [
        PredictionRecord(
            id=s.id,
            frame_index=s.frame_index,
            sequence_id=s.sequence_id,
            utterance_id=s.utterance_id,
            valence=None if rows["va"] is None else float(rows["va"][i, 0]),
            arousal=None if rows["va"] is None else float(rows["va"][i, 1]),
            expr_probs=None if rows["expr"] is None else rows["expr"][i],
            au_probs=None if rows["au"] is None else rows["au"][i],
        )
        for i, s in enumerate(samples)
    ]

    metrics: Dict[str, float] = {}
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", DegenerateInputWarning)

        idx = [i for i, s in enumerate(samples) if s.task == "VA"]
        if "VA" in wanted and len(idx) >= 2:
            pred = rows["va"][idx]
            truth = np.array([samples[i].label.as_array() for i in idx])
            metrics["va.ccc_v"] = ccc(pred[:, 0], truth[:, 0])
            metrics["va.ccc_a"] = ccc(pred[:, 1], truth[:, 1])
            metrics["va.mse_v"] = mse(pred[:, 0], truth[:, 0])
            metrics["va.mse_a"] = mse(pred[:, 1], truth[:, 1])

        idx = [i for i, s in enumerate(samples) if s.task == "EXPR"]
        if "EXPR" in wanted and idx:
            pred = rows["expr"][idx].argmax(axis=1)
            truth = np.array([samples[i].label.class_id for i in idx])
            metrics["expr.accuracy"] = accuracy(pred, truth)
            metrics["expr.f1"] = macro_f1(pred, truth, NUM_EXPRESSIONS)
            metrics["expr.mean_diagonal"] = _mean_recall(pred, truth, NUM_EXPRESSIONS)
            metrics["expr.e_total"] = e_total_expr(
                metrics["expr.f1"], metrics["expr.accuracy"]
            )

        idx = [i for i, s in enumerate(samples) if s.task == "AU"]
        if "AU" in wanted and idx:
            pred = binarize(rows["au"][idx], au_threshold)
            truth = np.array([samples[i].label.values for i in idx])
            mask = np.array([samples[i].label.mask for i in idx])
            f1s, accs = [], []
            for col in range(truth.shape[1]):
                keep = mask[:, col] == 1
                if not keep.any():
                    continue
                f1s.append(f1_binary(pred[keep, col], truth[keep, col]))
                accs.append(accuracy(pred[keep, col], truth[keep, col]))
            if f1s:
                metrics["au.macro_f1"] = float(np.mean(f1s))
                metrics["au.total_acc"] = float(np.mean(accs))
                metrics["au.afa"] = 0.5 * (metrics["au.macro_f1"] + metrics["au.total_acc"])
                metrics["au.e_total"] = e_total_au(
                    metrics["au.macro_f1"], metrics["au.total_acc"]
                )

        idx = [i for i, s in enumerate(samples) if s.task == "COMPOUND"]
        if "COMPOUND" in wanted and idx:
            pred = rows["compound"][idx].argmax(axis=1)
            truth = np.array([samples[i].label.class_id for i in idx])
            metrics["compound.accuracy"] = accuracy(pred, truth)
            metrics["compound.f1"] = macro_f1(
                pred, truth, model.spec.compound_classes
            )
            metrics["compound.mean_diagonal"] = _mean_recall(
                pred, truth, model.spec.compound_classes
            )

    metrics["degenerate_count"] = float(
        sum(1 for w in caught if issubclass(w.category, DegenerateInputWarning))
    )
    return metrics, records
