"""Ensemble combination and temporal post-processing of VA predictions.

Decision-level fusion averages member predictions weighted by each
member's validation concordance, per dimension. Model-level fusion is a
spec transformation: member trunks are concatenated into one composite
model with a shared fusion stage, trained end-to-end. The temporal tools
(median filter, exponential smoothing, utterance aggregation) operate on
plain series and are kept only when they help validation scores; that
gating lives in the harness.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .errors import (
    BadAlpha,
    EmptyUtterance,
    EvenWindow,
    KeyMisalignment,
    NegativeWeight,
    ZeroWeightSum,
)
from .models import ModelSpec


@dataclass(frozen=True)
class EnsembleMember:
    """One trained model's per-frame VA predictions plus the validation
    concordances that serve as its fusion weights."""

    member_id: str
    val_ccc_v: float
    val_ccc_a: float
    predictions: Mapping  # frame key -> (valence, arousal)


def decision_level_fuse(members: Sequence[EnsembleMember]) -> Dict:
    """Per frame and per dimension: (sum_n t_n)^-1 * sum_n t_n * o_n.

    Weights are the members' validation concordances; negative weights are
    rejected rather than flipped, and each dimension's weights must not
    sum to zero. All members must predict exactly the same frame keys.
    """
    if not members:
        raise ZeroWeightSum("no ensemble members")
    for m in members:
        if m.val_ccc_v < 0 or m.val_ccc_a < 0:
            raise NegativeWeight(
                f"member {m.member_id!r} has a negative validation concordance"
            )
    t_v = sum(m.val_ccc_v for m in members)
    t_a = sum(m.val_ccc_a for m in members)
    if t_v == 0 or t_a == 0:
        raise ZeroWeightSum("fusion weights sum to zero")
    keys = list(members[0].predictions.keys())
    key_set = set(keys)
    for m in members[1:]:
        if set(m.predictions.keys()) != key_set:
            raise KeyMisalignment(
                f"member {m.member_id!r} predicts a different frame set"
            )
    fused = {}
    for k in keys:
        v = sum(m.val_ccc_v * m.predictions[k][0] for m in members) / t_v
        a = sum(m.val_ccc_a * m.predictions[k][1] for m in members) / t_a
        fused[k] = (v, a)
    return fused


def model_level_fuse_spec(
    member_specs: Sequence[ModelSpec],
    mode: str,
    fusion_width: int = 16,
    heads: Optional[Tuple[str, ...]] = None,
) -> ModelSpec:
    """Composite spec whose members' trunk outputs concatenate into one
    fusion stage: a recurrent layer (``rnn``) or a dense layer (``fc``)."""
    spec = ModelSpec(
        members=tuple(member_specs),
        fusion=mode,
        fusion_width=fusion_width,
        heads=tuple(heads) if heads else (member_specs[0].heads if member_specs else ("VA",)),
    )
    spec.validate()
    return spec


def median_filter(series, window: int) -> np.ndarray:
    """Sliding median with edge replication; output length equals input."""
    if window < 1 or window % 2 == 0:
        raise EvenWindow(f"window must be odd and >= 1, got {window}")
    x = np.asarray(series, dtype=np.float64)
    if window == 1 or x.size == 0:
        return x.copy()
    half = window // 2
    padded = np.concatenate([np.repeat(x[0], half), x, np.repeat(x[-1], half)])
    windows = np.lib.stride_tricks.sliding_window_view(padded, window)
    return np.median(windows, axis=1)


def utterance_aggregate(groups: Mapping) -> Dict:
    """Mean of sequence medians per utterance, per dimension."""
    out = {}
    for utt, medians in groups.items():
        medians = [np.asarray(m, dtype=np.float64) for m in medians]
        if not medians:
            raise EmptyUtterance(f"utterance {utt!r} has no sequences")
        out[utt] = np.mean(np.stack(medians), axis=0)
    return out


def smooth(series, alpha: float) -> np.ndarray:
    """Causal exponential smoothing y_t = alpha*x_t + (1-alpha)*y_{t-1}."""
    if not 0.0 < alpha <= 1.0:
        raise BadAlpha(f"alpha must be in (0,1], got {alpha}")
    x = np.asarray(series, dtype=np.float64)
    y = np.empty_like(x)
    if x.size == 0:
        return y
    y[0] = x[0]
    for i in range(1, x.size):
        y[i] = alpha * x[i] + (1.0 - alpha) * y[i - 1]
    return y


def read_manifest(path) -> List[Tuple[str, float, float, str]]:
    """Parse a member manifest: CSV rows ``member_id, ccc_v, ccc_a, path``
    with a header line; paths point at prediction files."""
    import csv

    rows = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise ZeroWeightSum("empty manifest")
        for row in reader:
            if not row:
                continue
            member_id, ccc_v, ccc_a, pred_path = (c.strip() for c in row[:4])
            rows.append((member_id, float(ccc_v), float(ccc_a), pred_path))
    return rows
