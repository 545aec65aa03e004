"""CSV readers and writers for datasets, predictions, and metric reports.

Annotation rows carry one label each; the payload encoding depends on the
task column:

* ``VA``        ``<valence>;<arousal>``
* ``EXPR``      a single class digit
* ``AU``        17 characters over ``{0,1,-}`` ('-' marks unannotated units)
* ``COMPOUND``  ``<class>;<emo1>;<emo2>``

Optional columns round-trip ``None`` as the empty string.
"""

from __future__ import annotations

import csv
from typing import Dict, Iterable, List, Optional, Sequence

import numpy as np

from ..errors import BadMask, ConfigError, KeyMisalignment, UnknownClass
from ..types import (
    NUM_AUS,
    NUM_EXPRESSIONS,
    AnnotatedSample,
    AUVector,
    CompoundLabel,
    ExpressionLabel,
    PredictionRecord,
    ValenceArousal,
)

ANNOTATION_FIELDS = (
    "id",
    "split",
    "sequence_id",
    "utterance_id",
    "frame_index",
    "task",
    "payload",
)

PREDICTION_FIELDS = (
    "id",
    "frame_index",
    "valence",
    "arousal",
    "expr_probs",
    "au_probs",
)


def _encode_payload(sample: AnnotatedSample) -> str:
    label = sample.label
    if isinstance(label, ValenceArousal):
        return f"{label.valence!r};{label.arousal!r}"
    if isinstance(label, ExpressionLabel):
        return str(label.class_id)
    if isinstance(label, AUVector):
        chars = []
        for value, mask in zip(label.values, label.mask):
            chars.append(str(int(value)) if mask else "-")
        return "".join(chars)
    if isinstance(label, CompoundLabel):
        return f"{label.class_id};{label.emo1.class_id};{label.emo2.class_id}"
    raise ConfigError(f"cannot encode label of type {type(label).__name__}")


def _decode_payload(task: str, payload: str, where: str):
    if task == "VA":
        v, _, a = payload.partition(";")
        return ValenceArousal(valence=float(v), arousal=float(a))
    if task == "EXPR":
        class_id = int(payload)
        if not 0 <= class_id < NUM_EXPRESSIONS:
            raise UnknownClass(f"{where}: expression class {class_id}")
        return ExpressionLabel(class_id=class_id)
    if task == "AU":
        if len(payload) != NUM_AUS or any(c not in "01-" for c in payload):
            raise BadMask(f"{where}: AU payload must be {NUM_AUS} chars over 0/1/-")
        values = [1 if c == "1" else 0 for c in payload]
        mask = [0 if c == "-" else 1 for c in payload]
        return AUVector(values=values, mask=mask)
    if task == "COMPOUND":
        parts = payload.split(";")
        if len(parts) != 3:
            raise ConfigError(f"{where}: compound payload needs 3 fields")
        return CompoundLabel(
            class_id=int(parts[0]),
            emo1=ExpressionLabel(class_id=int(parts[1])),
            emo2=ExpressionLabel(class_id=int(parts[2])),
        )
    raise ConfigError(f"{where}: unknown task {task!r}")


def write_annotations(path, samples: Iterable[AnnotatedSample]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(ANNOTATION_FIELDS)
        for s in samples:
            writer.writerow(
                [
                    s.id,
                    s.split,
                    s.sequence_id if s.sequence_id is not None else "",
                    s.utterance_id if s.utterance_id is not None else "",
                    s.frame_index if s.frame_index is not None else "",
                    s.task,
                    _encode_payload(s),
                ]
            )


def read_annotations(path) -> List[AnnotatedSample]:
    """Read annotation rows; ``features`` are left empty until attached."""
    samples: List[AnnotatedSample] = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != ANNOTATION_FIELDS:
            raise ConfigError(f"{path}: bad annotation header {header}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(ANNOTATION_FIELDS):
                raise ConfigError(f"{path}:{lineno}: expected {len(ANNOTATION_FIELDS)} columns")
            sid, split, seq, utt, frame, task, payload = row
            samples.append(
                AnnotatedSample(
                    id=sid,
                    split=split,
                    features=np.empty(0),
                    label=_decode_payload(task, payload, f"{path}:{lineno}"),
                    sequence_id=seq or None,
                    utterance_id=utt or None,
                    frame_index=int(frame) if frame else None,
                )
            )
    return samples


def write_features(path, samples: Iterable[AnnotatedSample]) -> None:
    samples = list(samples)
    if not samples:
        raise ConfigError("no samples to write")
    dim = samples[0].features.shape[0]
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["id"] + [f"f{i}" for i in range(dim)])
        for s in samples:
            writer.writerow([s.id] + [repr(float(v)) for v in s.features])


def read_features(path) -> Dict[str, np.ndarray]:
    out: Dict[str, np.ndarray] = {}
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or not header or header[0] != "id":
            raise ConfigError(f"{path}: bad feature header")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ConfigError(f"{path}:{lineno}: expected {len(header)} columns")
            out[row[0]] = np.array([float(v) for v in row[1:]], dtype=np.float64)
    return out


def load_dataset(annotations_path, features_path, split: Optional[str] = None) -> List[AnnotatedSample]:
    """Read annotations, attach feature vectors by id, optionally filter by split."""
    samples = read_annotations(annotations_path)
    features = read_features(features_path)
    if split is not None:
        samples = [s for s in samples if s.split == split]
    missing = [s.id for s in samples if s.id not in features]
    if missing:
        raise KeyMisalignment(
            f"{len(missing)} annotated ids have no feature row "
            f"(first: {missing[0]!r})"
        )
    for s in samples:
        s.features = features[s.id]
    return samples


def _probs_field(probs: Optional[np.ndarray]) -> str:
    if probs is None:
        return ""
    return ";".join(repr(float(p)) for p in probs)


def _float_field(value: Optional[float]) -> str:
    return "" if value is None else repr(float(value))


def write_predictions(path, records: Iterable[PredictionRecord]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(PREDICTION_FIELDS)
        for r in records:
            writer.writerow(
                [
                    r.id,
                    r.frame_index if r.frame_index is not None else "",
                    _float_field(r.valence),
                    _float_field(r.arousal),
                    _probs_field(r.expr_probs),
                    _probs_field(r.au_probs),
                ]
            )


def read_predictions(path) -> List[PredictionRecord]:
    records: List[PredictionRecord] = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != PREDICTION_FIELDS:
            raise ConfigError(f"{path}: bad prediction header {header}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(PREDICTION_FIELDS):
                raise ConfigError(f"{path}:{lineno}: expected {len(PREDICTION_FIELDS)} columns")
            sid, frame, valence, arousal, expr, au = row
            records.append(
                PredictionRecord(
                    id=sid,
                    frame_index=int(frame) if frame else None,
                    valence=float(valence) if valence else None,
                    arousal=float(arousal) if arousal else None,
                    expr_probs=np.array([float(p) for p in expr.split(";")]) if expr else None,
                    au_probs=np.array([float(p) for p in au.split(";")]) if au else None,
                )
            )
    return records


def write_report(path, metrics: Dict[str, float]) -> None:
    """Write ``name = value`` lines, six decimals, sorted by name."""
    with open(path, "w", encoding="utf-8") as fh:
        for name in sorted(metrics):
            fh.write(f"{name} = {metrics[name]:.6f}\n")


def read_report(path) -> Dict[str, float]:
    out: Dict[str, float] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            name, _, value = line.partition("=")
            out[name.strip()] = float(value)
    return out
