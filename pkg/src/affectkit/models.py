"""Declarative model builders over the autodiff engine.

A ModelSpec names a family of small architectures: a dense backbone whose
tapped layer outputs feed either the heads directly, one shared recurrent
stack, or one recurrent branch per tap; one or two input streams (visual,
audio) with per-stream backbones fused by concatenation; optional
per-frame landmark features appended to the last tap; and any subset of
the four output heads (VA regression, expression logits, AU logits, and a
compound-expression head for transfer experiments).

Composite specs (``members`` set) concatenate several member trunks into
one fusion trunk - recurrent or dense - and train the whole stack
end-to-end.

Frame rows produced by ``forward`` are time-major: row = t * B + b.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import autodiff as ad
from .autodiff import DiffTensor, GruCell
from .errors import (
    BadCheckpoint,
    EmptySequence,
    InvalidSpec,
    ShapeMismatch,
)
from .losses import BatchPredictions
from .types import NUM_AUS, NUM_EXPRESSIONS, VA_DIM

HEAD_NAMES = ("VA", "EXPR", "AU", "COMPOUND")
_HEAD_WIDTHS = {"VA": VA_DIM, "EXPR": NUM_EXPRESSIONS, "AU": NUM_AUS}


@dataclass(frozen=True)
class RecurrentSpec:
    """Recurrent stage: one shared stack (``single``) over the concatenated
    taps, or one stack per tap (``per_tap``) whose outputs concatenate."""

    kind: str  # "single" | "per_tap"
    hidden: int
    layers: int = 1


@dataclass(frozen=True)
class InputDims:
    features: int
    audio: int = 0
    landmarks: int = 0


@dataclass(frozen=True)
class ModelSpec:
    backbone: Tuple[int, ...] = ()
    taps: Tuple[int, ...] = ()
    recurrent: Optional[RecurrentSpec] = None
    streams: int = 1
    heads: Tuple[str, ...] = ("VA",)
    landmark_concat: bool = False
    dropout: float = 0.0
    recurrent_dropout: float = 0.0
    compound_classes: int = 11
    # composite (model-level fusion) fields
    members: Optional[Tuple["ModelSpec", ...]] = None
    fusion: Optional[str] = None  # "rnn" | "fc"
    fusion_width: int = 16

    def validate(self) -> None:
        if not self.heads:
            raise InvalidSpec("at least one head required")
        for h in self.heads:
            if h not in HEAD_NAMES:
                raise InvalidSpec(f"unknown head {h!r}")
        if len(set(self.heads)) != len(self.heads):
            raise InvalidSpec("duplicate heads")
        if self.members is not None:
            if not self.members:
                raise InvalidSpec("composite spec needs at least one member")
            if self.fusion not in ("rnn", "fc"):
                raise InvalidSpec(f"fusion mode {self.fusion!r}")
            if self.fusion_width < 1:
                raise InvalidSpec("fusion_width must be positive")
            for m in self.members:
                if m.members is not None:
                    raise InvalidSpec("nested composites are not supported")
                m.validate()
            return
        if self.streams not in (1, 2):
            raise InvalidSpec(f"streams must be 1 or 2, got {self.streams}")
        for w in self.backbone:
            if w < 1:
                raise InvalidSpec("backbone widths must be positive")
        if self.taps:
            if list(self.taps) != sorted(set(self.taps)):
                raise InvalidSpec("taps must be strictly increasing")
            if self.taps[0] < 0 or self.taps[-1] >= len(self.backbone):
                raise InvalidSpec(f"tap out of range for backbone {self.backbone}")
            if self.taps[-1] != len(self.backbone) - 1:
                raise InvalidSpec("backbone layers after the last tap are unreachable")
        if self.recurrent is not None:
            if self.recurrent.kind not in ("single", "per_tap"):
                raise InvalidSpec(f"recurrent kind {self.recurrent.kind!r}")
            if self.recurrent.hidden < 1 or self.recurrent.layers < 1:
                raise InvalidSpec("recurrent hidden/layers must be positive")
            if self.recurrent.kind == "per_tap" and len(self.taps) < 2:
                raise InvalidSpec("per_tap recurrence needs at least 2 taps")
        for name, p in (("dropout", self.dropout), ("recurrent_dropout", self.recurrent_dropout)):
            if not 0.0 <= p < 1.0:
                raise InvalidSpec(f"{name}={p} outside [0,1)")
        if "COMPOUND" in self.heads and self.compound_classes < 2:
            raise InvalidSpec("compound head needs at least 2 classes")


@dataclass
class SequenceBatch:
    """B sequences of T frames. ``features`` is (B,T,D); ``audio`` and
    ``landmarks`` are optional parallel (B,T,*) arrays."""

    features: np.ndarray
    audio: Optional[np.ndarray] = None
    landmarks: Optional[np.ndarray] = None

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.ndim != 3:
            raise ShapeMismatch(f"features must be (B,T,D), got {self.features.shape}")
        b, t = self.features.shape[:2]
        for name in ("audio", "landmarks"):
            arr = getattr(self, name)
            if arr is None:
                continue
            arr = np.asarray(arr, dtype=np.float64)
            if arr.ndim != 3 or arr.shape[:2] != (b, t):
                raise ShapeMismatch(f"{name} shape {arr.shape} does not match (B,T,*)")
            setattr(self, name, arr)

    @property
    def batch_size(self) -> int:
        return self.features.shape[0]

    @property
    def seq_len(self) -> int:
        return self.features.shape[1]

    def validate_for(self, spec: ModelSpec) -> None:
        """Training-side invariant: concordance needs sequences, so a batch
        for a VA-headed model must have T >= 2."""
        if "VA" in spec.heads and self.seq_len < 2:
            raise ShapeMismatch("VA-headed models need sequence length >= 2")


def rows_to_btk(rows: np.ndarray, batch_size: int, seq_len: int) -> np.ndarray:
    """Reshape time-major (B*T, k) rows back to (B, T, k)."""
    k = rows.shape[1]
    return rows.reshape(seq_len, batch_size, k).transpose(1, 0, 2)


class _Trunk:
    """Backbone + taps + optional recurrence for one (sub)spec.

    Builds parameters eagerly in a fixed order so a seed fully determines
    them, and registers every parameter under ``prefix`` in ``registry``.
    """

    def __init__(
        self,
        spec: ModelSpec,
        dims: InputDims,
        rng: np.random.Generator,
        prefix: str,
        registry: Dict[str, DiffTensor],
    ):
        spec.validate()
        if spec.streams == 2 and dims.audio < 1:
            raise InvalidSpec("two-stream spec needs audio feature dims")
        if spec.landmark_concat and dims.landmarks < 1:
            raise InvalidSpec("landmark_concat needs landmark dims")
        self.spec = spec
        self.dims = dims
        stream_inputs = [dims.features, dims.audio][: spec.streams]

        self.layers: List[List[Tuple[DiffTensor, DiffTensor]]] = []
        for s, d_in in enumerate(stream_inputs):
            stream_layers = []
            d = d_in
            for i, width in enumerate(spec.backbone):
                w = DiffTensor(ad.glorot_uniform((d, width), rng))
                b = DiffTensor(np.zeros(width))
                registry[f"{prefix}backbone.s{s}.l{i}.w"] = w
                registry[f"{prefix}backbone.s{s}.l{i}.b"] = b
                stream_layers.append((w, b))
                d = width
            self.layers.append(stream_layers)

        if spec.taps:
            self._tap_set = set(spec.taps)
            tap_widths = [spec.backbone[i] * spec.streams for i in spec.taps]
        else:
            self._tap_set = set()
            per_stream = (
                [spec.backbone[-1]] * spec.streams if spec.backbone else stream_inputs
            )
            tap_widths = [sum(per_stream)]
        if spec.landmark_concat:
            tap_widths[-1] += dims.landmarks
        self.tap_widths = tap_widths

        self.branches: List[List[GruCell]] = []
        if spec.recurrent is None:
            self.out_width = sum(tap_widths)
        elif spec.recurrent.kind == "single":
            self.branches.append(
                self._make_stack(sum(tap_widths), spec.recurrent, rng, prefix, 0, registry)
            )
            self.out_width = spec.recurrent.hidden
        else:
            for j, w_in in enumerate(tap_widths):
                self.branches.append(
                    self._make_stack(w_in, spec.recurrent, rng, prefix, j, registry)
                )
            self.out_width = spec.recurrent.hidden * len(tap_widths)

    @staticmethod
    def _make_stack(input_dim, rec, rng, prefix, branch, registry) -> List[GruCell]:
        cells = []
        d = input_dim
        for k in range(rec.layers):
            cell = GruCell(d, rec.hidden, rng)
            registry.update(cell.named_parameters(f"{prefix}recurrent.b{branch}.l{k}"))
            cells.append(cell)
            d = rec.hidden
        return cells

    def init_state(self, batch: int) -> List[List[DiffTensor]]:
        return [[cell.initial_state(batch) for cell in stack] for stack in self.branches]

    def step(self, xs, lmk, state, train, rng):
        spec = self.spec
        tap_outs: List[List[DiffTensor]] = []
        for s, x in enumerate(xs):
            h = x
            outs = []
            for i, (w, b) in enumerate(self.layers[s]):
                h = ad.relu(ad.dense(h, w, b))
                if train and spec.dropout > 0:
                    h = ad.dropout(h, spec.dropout, True, rng)
                if i in self._tap_set:
                    outs.append(h)
            if not self._tap_set:
                outs = [h]
            tap_outs.append(outs)
        n_taps = len(tap_outs[0])
        fused = [
            tap_outs[0][j]
            if spec.streams == 1
            else ad.concat([tap_outs[s][j] for s in range(spec.streams)], axis=1)
            for j in range(n_taps)
        ]
        if spec.landmark_concat:
            fused[-1] = ad.concat([fused[-1], lmk], axis=1)

        if spec.recurrent is None:
            out = fused[0] if len(fused) == 1 else ad.concat(fused, axis=1)
            return out, state

        branch_ins = [ad.concat(fused, axis=1) if len(fused) > 1 else fused[0]] \
            if spec.recurrent.kind == "single" else fused
        new_state = []
        branch_outs = []
        for j, (stack, h_prevs) in enumerate(zip(self.branches, state)):
            x_in = branch_ins[j]
            hs = []
            for k, cell in enumerate(stack):
                if k == 0 and train and spec.recurrent_dropout > 0:
                    x_in = ad.dropout(x_in, spec.recurrent_dropout, True, rng)
                h = ad.gru_step(cell, x_in, h_prevs[k])
                hs.append(h)
                x_in = h
            new_state.append(hs)
            branch_outs.append(hs[-1])
        out = branch_outs[0] if len(branch_outs) == 1 else ad.concat(branch_outs, axis=1)
        return out, new_state


class Model:
    """A built, parameterized instance of a ModelSpec."""

    def __init__(self, spec: ModelSpec, dims: InputDims, seed: int):
        spec.validate()
        self.spec = spec
        self.dims = dims
        self._params: Dict[str, DiffTensor] = {}
        rng = np.random.default_rng(seed)

        if spec.members is not None:
            self.trunks = [
                _Trunk(m, dims, rng, f"member{i}.", self._params)
                for i, m in enumerate(spec.members)
            ]
            member_width = sum(t.out_width for t in self.trunks)
            if spec.fusion == "fc":
                w = DiffTensor(ad.glorot_uniform((member_width, spec.fusion_width), rng))
                b = DiffTensor(np.zeros(spec.fusion_width))
                self._params["fusion.w"] = w
                self._params["fusion.b"] = b
                self.fusion_layer: object = ("fc", w, b)
            else:
                cell = GruCell(member_width, spec.fusion_width, rng)
                self._params.update(cell.named_parameters("fusion"))
                self.fusion_layer = ("rnn", cell)
            trunk_out = spec.fusion_width
        else:
            self.trunks = [_Trunk(spec, dims, rng, "", self._params)]
            self.fusion_layer = None
            trunk_out = self.trunks[0].out_width

        self.trunk_width = trunk_out
        self.heads: Dict[str, Tuple[DiffTensor, DiffTensor]] = {}
        for name in HEAD_NAMES:
            if name not in spec.heads:
                continue
            width = _HEAD_WIDTHS.get(name, spec.compound_classes)
            w = DiffTensor(ad.glorot_uniform((trunk_out, width), rng))
            b = DiffTensor(np.zeros(width))
            key = name.lower()
            self._params[f"head.{key}.w"] = w
            self._params[f"head.{key}.b"] = b
            self.heads[name] = (w, b)

    # -- parameter access ---------------------------------------------------

    def named_parameters(self) -> Dict[str, DiffTensor]:
        return dict(self._params)

    def parameters(self) -> List[DiffTensor]:
        return list(self._params.values())

    def head_parameters(self) -> List[DiffTensor]:
        return [p for n, p in self._params.items() if n.startswith("head.")]

    def trunk_parameters(self) -> List[DiffTensor]:
        return [p for n, p in self._params.items() if not n.startswith("head.")]

    def parameter_count(self) -> int:
        return sum(p.size for p in self._params.values())

    # -- execution ----------------------------------------------------------

    def _check_batch(self, batch: SequenceBatch) -> None:
        specs = self.spec.members if self.spec.members is not None else (self.spec,)
        if batch.features.shape[2] != self.dims.features:
            raise ShapeMismatch(
                f"features dim {batch.features.shape[2]}, model expects {self.dims.features}"
            )
        if any(s.streams == 2 for s in specs):
            if batch.audio is None:
                raise ShapeMismatch("two-stream model needs audio features")
            if batch.audio.shape[2] != self.dims.audio:
                raise ShapeMismatch(
                    f"audio dim {batch.audio.shape[2]}, model expects {self.dims.audio}"
                )
        if any(s.landmark_concat for s in specs):
            if batch.landmarks is None:
                raise ShapeMismatch("landmark_concat model needs landmark features")
            if batch.landmarks.shape[2] != self.dims.landmarks:
                raise ShapeMismatch(
                    f"landmark dim {batch.landmarks.shape[2]}, model expects {self.dims.landmarks}"
                )

    def forward(
        self,
        batch: SequenceBatch,
        train: bool = False,
        rng: Optional[np.random.Generator] = None,
    ) -> BatchPredictions:
        """Run all frames; returns per-row head outputs (row = t*B + b)."""
        self._check_batch(batch)
        b_size, t_len = batch.batch_size, batch.seq_len
        states = [t.init_state(b_size) for t in self.trunks]
        fusion_state = None
        if self.fusion_layer is not None and self.fusion_layer[0] == "rnn":
            fusion_state = self.fusion_layer[1].initial_state(b_size)

        per_head_rows: Dict[str, List[DiffTensor]] = {n: [] for n in self.heads}
        for t in range(t_len):
            lmk = (
                DiffTensor(batch.landmarks[:, t, :])
                if batch.landmarks is not None
                else None
            )
            outs = []
            for i, trunk in enumerate(self.trunks):
                xs = [DiffTensor(batch.features[:, t, :])]
                if trunk.spec.streams == 2:
                    xs.append(DiffTensor(batch.audio[:, t, :]))
                out, states[i] = trunk.step(xs, lmk, states[i], train, rng)
                outs.append(out)
            feat = outs[0] if len(outs) == 1 else ad.concat(outs, axis=1)
            if self.fusion_layer is not None:
                if self.fusion_layer[0] == "fc":
                    _, w, b = self.fusion_layer
                    feat = ad.relu(ad.dense(feat, w, b))
                else:
                    fusion_state = ad.gru_step(self.fusion_layer[1], feat, fusion_state)
                    feat = fusion_state
            for name, (w, b) in self.heads.items():
                per_head_rows[name].append(ad.dense(feat, w, b))

        def stack(name):
            rows = per_head_rows.get(name)
            if not rows:
                return None
            return rows[0] if len(rows) == 1 else ad.concat(rows, axis=0)

        return BatchPredictions(
            expr_logits=stack("EXPR"),
            au_logits=stack("AU"),
            va=stack("VA"),
            compound_logits=stack("COMPOUND"),
        )


def build(spec: ModelSpec, dims: InputDims, seed: int) -> Model:
    return Model(spec, dims, seed)


def forward(
    model: Model,
    batch: SequenceBatch,
    train: bool = False,
    rng: Optional[np.random.Generator] = None,
) -> BatchPredictions:
    return model.forward(batch, train=train, rng=rng)


def expr_probs(preds: BatchPredictions) -> DiffTensor:
    """Softmax over the expression logits (differentiable)."""
    return ad.softmax(preds.expr_logits, axis=1)


def au_probs(preds: BatchPredictions) -> DiffTensor:
    """Sigmoid over the AU logits (differentiable)."""
    return ad.sigmoid(preds.au_logits)


def compound_probs(preds: BatchPredictions) -> DiffTensor:
    return ad.softmax(preds.compound_logits, axis=1)


@dataclass
class SequencePrediction:
    """Per-frame outputs for one sequence plus the per-dimension VA median."""

    va: Optional[np.ndarray]  # (T,2)
    expr_probs: Optional[np.ndarray]  # (T,7)
    au_probs: Optional[np.ndarray]  # (T,17)
    va_median: Optional[np.ndarray]  # (2,)


def predict_sequence(
    model: Model,
    frames: np.ndarray,
    audio: Optional[np.ndarray] = None,
    landmarks: Optional[np.ndarray] = None,
) -> SequencePrediction:
    """Evaluate one sequence of frames; VA estimates are summarized by their
    per-dimension median (even counts use the mean of the middle two)."""
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim != 2 or frames.shape[0] == 0:
        raise EmptySequence(f"frames must be nonempty (T,D), got {frames.shape}")
    batch = SequenceBatch(
        features=frames[None, :, :],
        audio=None if audio is None else np.asarray(audio, dtype=np.float64)[None],
        landmarks=None
        if landmarks is None
        else np.asarray(landmarks, dtype=np.float64)[None],
    )
    preds = model.forward(batch, train=False)
    va = None if preds.va is None else preds.va.data.copy()
    return SequencePrediction(
        va=va,
        expr_probs=None
        if preds.expr_logits is None
        else expr_probs(preds).data.copy(),
        au_probs=None if preds.au_logits is None else au_probs(preds).data.copy(),
        va_median=None if va is None else np.median(va, axis=0),
    )


def load_parameters(model: Model, values: Dict[str, np.ndarray], strict: bool = True):
    """Copy checkpoint arrays into the model's parameters by name.

    With ``strict`` the name sets must match exactly; otherwise only the
    intersection is loaded (used when transferring a trunk under a new
    head). Shape mismatches always fail. Returns (loaded, skipped) names.
    """
    params = model.named_parameters()
    if strict:
        missing = sorted(set(params) - set(values))
        extra = sorted(set(values) - set(params))
        if missing or extra:
            raise BadCheckpoint(f"parameter names differ: missing={missing} extra={extra}")
    loaded, skipped = [], []
    for name, p in params.items():
        if name not in values:
            skipped.append(name)
            continue
        arr = np.asarray(values[name], dtype=np.float64)
        if arr.shape != p.data.shape:
            raise BadCheckpoint(
                f"{name}: checkpoint shape {arr.shape} vs model {p.data.shape}"
            )
        p.data = arr.copy()
        loaded.append(name)
    return loaded, skipped


def single_task_spec(spec: ModelSpec, head: str) -> ModelSpec:
    """The same architecture restricted to one head (comparison runs)."""
    if head not in HEAD_NAMES:
        raise InvalidSpec(f"unknown head {head!r}")
    return replace(spec, heads=(head,))
