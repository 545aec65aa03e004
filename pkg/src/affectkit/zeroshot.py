"""Zero-shot compound-expression scoring.

A compound class (e.g. happily surprised) blends two basic emotions. With
no compound training data, a candidate score is assembled from what the
multi-head model already predicts: the weighted mean of the predicted
probabilities of the class's characteristic AUs, plus the two constituent
emotion probabilities, plus - for the compounds that imply positive
valence - a bonus from the sign of the predicted valence. The predicted
class is the argmax of the candidate scores.

The AU term is the weighted mean of the predictions (each AU acting as an
indicator for the class); weights are the relatedness weights of the AUs
in the class's set.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import (
    BadTableFile,
    EmptyDefs,
    MissingAUPrediction,
    ValueOutOfRange,
)
from .relatedness import COGNITIVE, RelatednessTable
from .types import ExpressionLabel, PredictionRecord, au_index, expression_id

# (name, constituent pair, positive-valence bonus) - the standard 11
# compound classes over the six basic emotions.
_DEFAULT_CLASSES = (
    ("happily_surprised", "happiness", "surprise", True),
    ("happily_disgusted", "happiness", "disgust", True),
    ("sadly_fearful", "sadness", "fear", False),
    ("sadly_angry", "sadness", "anger", False),
    ("sadly_surprised", "sadness", "surprise", False),
    ("sadly_disgusted", "sadness", "disgust", False),
    ("fearfully_angry", "fear", "anger", False),
    ("fearfully_surprised", "fear", "surprise", False),
    ("angrily_surprised", "anger", "surprise", False),
    ("angrily_disgusted", "anger", "disgust", False),
    ("disgustedly_surprised", "disgust", "surprise", False),
)


@dataclass(frozen=True)
class CompoundClassDef:
    """A compound class: two distinct constituent emotions, the weighted
    AU set characterizing the blend, and whether the positive-valence
    bonus applies."""

    name: str
    emo1: ExpressionLabel
    emo2: ExpressionLabel
    au_set: Tuple[Tuple[int, float], ...]
    valence_bonus: bool = False

    def __post_init__(self):
        if self.emo1.class_id == self.emo2.class_id:
            raise ValueOutOfRange(f"{self.name}: constituents must differ")
        if not self.au_set:
            raise ValueOutOfRange(f"{self.name}: AU set must be nonempty")
        for au, w in self.au_set:
            au_index(au)
            if w <= 0:
                raise ValueOutOfRange(f"{self.name}: AU{au} weight {w} must be > 0")


def _union_au_set(
    table: RelatednessTable, emo1: ExpressionLabel, emo2: ExpressionLabel
) -> Tuple[Tuple[int, float], ...]:
    """Union of both constituents' weighted AUs; duplicates keep the larger
    weight. Order: emo1's AUs first, then emo2's new ones."""
    merged: Dict[int, float] = {}
    order: List[int] = []
    for emo in (emo1, emo2):
        row = table.row(emo.class_id)
        if row is None:
            continue
        for au, w in row.weighted_aus():
            if au not in merged:
                merged[au] = w
                order.append(au)
            else:
                merged[au] = max(merged[au], w)
    return tuple((au, merged[au]) for au in order)


def default_compound_defs(table: RelatednessTable = COGNITIVE) -> List[CompoundClassDef]:
    """The 11 standard compound classes with AU sets derived from the
    relatedness table (union of the constituents' rows)."""
    defs = []
    for name, e1, e2, bonus in _DEFAULT_CLASSES:
        emo1 = ExpressionLabel(expression_id(e1))
        emo2 = ExpressionLabel(expression_id(e2))
        defs.append(
            CompoundClassDef(
                name=name,
                emo1=emo1,
                emo2=emo2,
                au_set=_union_au_set(table, emo1, emo2),
                valence_bonus=bonus,
            )
        )
    return defs


def candidate_score(cdef: CompoundClassDef, pred: PredictionRecord) -> float:
    """score = weighted mean of p(AU_k) over the class AU set
    + p(emo1) + p(emo2) + bonus.

    The bonus (only on positive-valence compounds) is 0.5*(sign(v)+1):
    1 for positive valence, 0 for negative, 0.5 at exactly zero.
    """
    if pred.au_probs is None:
        raise MissingAUPrediction(f"{cdef.name}: prediction has no AU probabilities")
    au = np.asarray(pred.au_probs, dtype=np.float64)
    num = 0.0
    den = 0.0
    for au_id, w in cdef.au_set:
        num += w * au[au_index(au_id)]
        den += w
    score = num / den
    if pred.expr_probs is None:
        raise ValueOutOfRange(f"{cdef.name}: prediction has no emotion probabilities")
    probs = np.asarray(pred.expr_probs, dtype=np.float64)
    score += float(probs[cdef.emo1.class_id]) + float(probs[cdef.emo2.class_id])
    if cdef.valence_bonus:
        if pred.valence is None:
            raise ValueOutOfRange(f"{cdef.name}: bonus needs a valence prediction")
        score += 0.5 * (np.sign(pred.valence) + 1.0)
    return float(score)


def classify_compound(
    defs: Sequence[CompoundClassDef], pred: PredictionRecord
) -> CompoundClassDef:
    """The definition with the maximum candidate score; ties go to the
    earlier definition."""
    if not defs:
        raise EmptyDefs("no compound definitions")
    best = defs[0]
    best_score = candidate_score(best, pred)
    for cdef in defs[1:]:
        s = candidate_score(cdef, pred)
        if s > best_score:
            best = cdef
            best_score = s
    return best


def load_compound_defs(
    path, table: RelatednessTable = COGNITIVE
) -> List[CompoundClassDef]:
    """Parse a CSV of ``name, emo1, emo2, bonus_flag[, au:w, ...]`` rows.

    Rows without an explicit AU list fall back to the table union. A
    header line is required; '#' lines are skipped.
    """
    import csv

    defs = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise EmptyDefs(f"{path}: empty definition file")
        for lineno, row in enumerate(reader, start=2):
            if not row or row[0].lstrip().startswith("#"):
                continue
            try:
                name, e1, e2, bonus = (c.strip() for c in row[:4])
                emo1 = ExpressionLabel(expression_id(e1))
                emo2 = ExpressionLabel(expression_id(e2))
                au_set: Tuple[Tuple[int, float], ...]
                if len(row) > 4:
                    pairs = []
                    for cell in row[4:]:
                        cell = cell.strip()
                        if not cell:
                            continue
                        au_s, _, w_s = cell.partition(":")
                        pairs.append((int(au_s), float(w_s)))
                    au_set = tuple(pairs)
                else:
                    au_set = _union_au_set(table, emo1, emo2)
                defs.append(
                    CompoundClassDef(
                        name=name,
                        emo1=emo1,
                        emo2=emo2,
                        au_set=au_set,
                        valence_bonus=bonus.lower() in ("1", "true", "yes"),
                    )
                )
            except (ValueError, IndexError) as exc:
                raise BadTableFile(f"{path}:{lineno}: {exc}") from exc
    if not defs:
        raise EmptyDefs(f"{path}: no definitions")
    return defs
