"""Emotion-to-AU relatedness tables and the three task-coupling engines.

A relatedness table states, per basic emotion, which action units are
prototypical (activated with weight 1) and which are observational
(activated with a fractional agreement weight w). Two variants ship:

* ``cognitive`` - agreement weights from a human annotator study, with an
  explicit prototypical/observational split;
* ``empirical`` - activation percentages measured on a large video corpus,
  kept as a single weighted set per emotion.

On top of the table sit the coupling engines used during multi-task
training: hard co-annotation in both directions, soft co-annotation (AU
pattern to a soft emotion distribution) and the emotion-mixture AU
distribution used by distribution matching.

Neutral has no table row: it maps to the empty AU set, scores 0 in soft
co-annotation and contributes nothing to mixtures.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from .errors import BadDistribution, BadTableFile, MissingMask
from .types import (
    AUVector,
    EXPRESSION_NAMES,
    ExpressionLabel,
    NUM_AUS,
    NUM_EXPRESSIONS,
    au_index,
    expression_id,
)

NEUTRAL_ID = 0


@dataclass(frozen=True)
class EmotionRow:
    """Relatedness row for one basic emotion.

    ``proto`` lists AU ids with implicit weight 1.0; ``obs`` pairs AU ids
    with weights in (0, 1]. Output orderings everywhere follow proto first,
    then obs, in stored order.
    """

    proto: Tuple[int, ...]
    obs: Tuple[Tuple[int, float], ...]

    def weighted_aus(self) -> Tuple[Tuple[int, float], ...]:
        return tuple((au, 1.0) for au in self.proto) + self.obs

    def au_ids(self) -> Tuple[int, ...]:
        return tuple(au for au, _ in self.weighted_aus())


@dataclass(frozen=True)
class RelatednessTable:
    """Rows keyed by expression class id (neutral excluded)."""

    name: str
    rows: Tuple[Tuple[int, EmotionRow], ...]

    def row(self, class_id: int) -> Optional[EmotionRow]:
        for cid, r in self.rows:
            if cid == class_id:
                return r
        return None

    def conditional_matrix(self, reweight: bool = False) -> np.ndarray:
        """p(AU_i | emotion) as a 7 x 17 matrix in canonical index orders.

        Membership gives probability 1; with ``reweight`` the observational
        weight w is used instead. The neutral row is all zeros.
        """
        m = np.zeros((NUM_EXPRESSIONS, NUM_AUS), dtype=np.float64)
        for cid, r in self.rows:
            for au in r.proto:
                m[cid, au_index(au)] = 1.0
            for au, w in r.obs:
                m[cid, au_index(au)] = w if reweight else 1.0
        return m

    def validate(self) -> None:
        for cid, r in self.rows:
            if cid == NEUTRAL_ID:
                raise BadTableFile("neutral must not have a relatedness row")
            proto_set = set(r.proto)
            for au, w in r.obs:
                if au in proto_set:
                    raise BadTableFile(
                        f"AU{au} both prototypical and observational for class {cid}"
                    )
                if not 0.0 < w <= 1.0:
                    raise BadTableFile(f"weight {w} for AU{au} outside (0,1]")
            for au in r.au_ids():
                au_index(au)  # raises UnknownAU


def _table(name, spec) -> RelatednessTable:
    rows = tuple(
        (expression_id(emo), EmotionRow(proto=tuple(proto), obs=tuple(obs)))
        for emo, proto, obs in spec
    )
    t = RelatednessTable(name=name, rows=rows)
    t.validate()
    return t


# Annotator-study variant: prototypical AUs plus observational AUs with the
# fraction of annotators that observed them.
COGNITIVE = _table(
    "cognitive",
    [
        ("happiness", [12, 25], [(6, 0.51)]),
        ("sadness", [4, 15], [(1, 0.6), (6, 0.5), (11, 0.26), (17, 0.67)]),
        ("fear", [1, 4, 20, 25], [(2, 0.57), (5, 0.63), (26, 0.33)]),
        ("anger", [4, 7, 24], [(10, 0.26), (17, 0.52), (23, 0.29)]),
        ("surprise", [1, 2, 25, 26], [(5, 0.66)]),
        ("disgust", [9, 10, 17], [(4, 0.31), (24, 0.26)]),
    ],
)

# Corpus-measured variant: all AUs carry an empirical activation rate, so
# every entry is observational (no prototypical split).
EMPIRICAL = _table(
    "empirical",
    [
        ("happiness", [], [(12, 0.82), (25, 0.7), (6, 0.57), (7, 0.83), (10, 0.63)]),
        ("sadness", [], [(4, 0.53), (15, 0.42), (1, 0.31), (7, 0.13), (17, 0.1)]),
        ("fear", [], [(1, 0.52), (4, 0.4), (25, 0.85), (5, 0.38), (7, 0.57), (10, 0.57)]),
        ("anger", [], [(4, 0.65), (7, 0.45), (25, 0.4), (10, 0.33), (9, 0.15)]),
        ("surprise", [], [(1, 0.38), (2, 0.37), (25, 0.85), (26, 0.3), (5, 0.5), (7, 0.2)]),
        ("disgust", [], [(9, 0.21), (10, 0.85), (17, 0.23), (4, 0.6), (7, 0.75), (25, 0.8)]),
    ],
)

BUILTIN_TABLES = {"cognitive": COGNITIVE, "empirical": EMPIRICAL}


def load_table(path, name: Optional[str] = None) -> RelatednessTable:
    """Parse a relatedness file: one ``<emotion> proto=<id,..> obs=<id:w,..>``
    line per emotion, ``#`` comments, UTF-8. Either key may be omitted."""
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            emo = parts[0]
            proto: list = []
            obs: list = []
            try:
                cid = expression_id(emo)
                for tok in parts[1:]:
                    key, _, val = tok.partition("=")
                    if key == "proto":
                        proto = [int(s) for s in val.split(",") if s]
                    elif key == "obs":
                        for pair in val.split(","):
                            if not pair:
                                continue
                            au_s, _, w_s = pair.partition(":")
                            obs.append((int(au_s), float(w_s)))
                    else:
                        raise ValueError(f"unknown key {key!r}")
            except Exception as exc:
                raise BadTableFile(f"{path}:{lineno}: {exc}") from exc
            rows.append((cid, EmotionRow(proto=tuple(proto), obs=tuple(obs))))
    table = RelatednessTable(name=name or str(path), rows=tuple(rows))
    table.validate()
    return table


@dataclass(frozen=True)
class SoftExpressionLabel:
    """A distribution over the 7 expression classes (nonnegative, sums to 1)."""

    probabilities: Tuple[float, ...]

    def as_array(self) -> np.ndarray:
        return np.asarray(self.probabilities, dtype=np.float64)


# ---------------------------------------------------------------------------
# coupling engines


def coannotate_emotion_to_aus(
    label: ExpressionLabel, table: RelatednessTable
) -> list:
    """AU targets implied by a ground-truth emotion.

    Returns ``[(au_id, target, weight), ...]`` with target always 1:
    prototypical AUs at weight 1.0, observational AUs at their table
    weight. Neutral yields the empty list. AUs outside the returned list
    are left unannotated (not forced negative).
    """
    row = table.row(label.class_id)
    if row is None:
        return []
    return [(au, 1, w) for au, w in row.weighted_aus()]


def coannotate_aus_to_emotion(
    aus: AUVector, table: RelatednessTable
) -> Optional[ExpressionLabel]:
    """Emotion implied by a ground-truth AU pattern, if any.

    An emotion qualifies when every one of its prototypical and
    observational AUs is annotated and active. Ties are broken by the
    larger required-AU count, then by canonical class order. Emotions with
    any required AU unannotated are skipped rather than failing the sample.
    """
    best: Optional[Tuple[int, int]] = None  # (requirement size, class id)
    for cid, row in table.rows:
        ids = row.au_ids()
        if not ids:
            continue
        if not all(aus.is_annotated(au) for au in ids):
            continue
        if not all(aus.value_of(au) == 1 for au in ids):
            continue
        key = (len(ids), -cid)
        if best is None or key > (best[0], -best[1]):
            best = (len(ids), cid)
    if best is None:
        return None
    return ExpressionLabel(best[1])


def soft_coannotate(
    aus: AUVector, table: RelatednessTable, reweight: bool = True
) -> SoftExpressionLabel:
    """Soft emotion distribution implied by an AU pattern.

    Per emotion the score is sum(w_i * y_i) / sum(w_i) over that emotion's
    prototypical+observational AUs (all weights 1 when ``reweight`` is
    false); neutral scores 0. The 7 scores pass through a softmax.

    Raises MissingMask when any table AU is unannotated.
    """
    scores = np.zeros(NUM_EXPRESSIONS, dtype=np.float64)
    for cid, row in table.rows:
        num = 0.0
        den = 0.0
        for au, w in row.weighted_aus():
            if not aus.is_annotated(au):
                raise MissingMask(
                    f"AU{au} required by {EXPRESSION_NAMES[cid]} is unannotated"
                )
            weight = w if reweight else 1.0
            num += weight * aus.value_of(au)
            den += weight
        scores[cid] = num / den if den > 0 else 0.0
    e = np.exp(scores - scores.max())
    probs = e / e.sum()
    return SoftExpressionLabel(probabilities=tuple(float(p) for p in probs))


def soft_scores(
    aus: AUVector, table: RelatednessTable, reweight: bool = True
) -> np.ndarray:
    """Pre-softmax per-emotion scores used by :func:`soft_coannotate`."""
    scores = np.zeros(NUM_EXPRESSIONS, dtype=np.float64)
    for cid, row in table.rows:
        num = 0.0
        den = 0.0
        for au, w in row.weighted_aus():
            if not aus.is_annotated(au):
                raise MissingMask(
                    f"AU{au} required by {EXPRESSION_NAMES[cid]} is unannotated"
                )
            weight = w if reweight else 1.0
            num += weight * aus.value_of(au)
            den += weight
        scores[cid] = num / den if den > 0 else 0.0
    return scores


def emotion_au_mixture(
    expr_probs: Sequence[float], table: RelatednessTable, reweight: bool = False
) -> np.ndarray:
    """AU distribution implied by an emotion distribution.

    q[i] = sum_emo p(emo) * p(AU_i | emo), where membership in the table
    row gives conditional probability 1 (or the observational weight when
    ``reweight``), else 0. Neutral contributes nothing. The result is a
    17-vector with entries in [0, 1].
    """
    p = np.asarray(expr_probs, dtype=np.float64)
    if p.shape != (NUM_EXPRESSIONS,):
        raise BadDistribution(f"expected 7 probabilities, got shape {p.shape}")
    if np.any(p < 0) or abs(float(p.sum()) - 1.0) > 1e-6:
        raise BadDistribution("emotion probabilities must be nonnegative and sum to 1")
    return p @ table.conditional_matrix(reweight=reweight)
