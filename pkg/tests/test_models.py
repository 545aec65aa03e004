"""Model construction, forward semantics, and parameter handling."""

import numpy as np
import pytest

from affectkit.errors import (
    BadCheckpoint,
    EmptySequence,
    InvalidSpec,
    ShapeMismatch,
)
from affectkit.models import (
    InputDims,
    Model,
    ModelSpec,
    RecurrentSpec,
    SequenceBatch,
    au_probs,
    build,
    expr_probs,
    load_parameters,
    predict_sequence,
    rows_to_btk,
    single_task_spec,
)

DIMS = InputDims(features=5)


def tiny_model(**kwargs):
    spec = ModelSpec(backbone=(6,), heads=("EXPR", "AU", "VA"), **kwargs)
    return build(spec, DIMS, seed=0)


class TestSpecValidation:
    def test_default_is_valid(self):
        ModelSpec().validate()

    def test_unknown_head(self):
        with pytest.raises(InvalidSpec):
            ModelSpec(heads=("EXPR", "BOGUS")).validate()

    def test_duplicate_heads(self):
        with pytest.raises(InvalidSpec):
            ModelSpec(heads=("VA", "VA")).validate()

    def test_no_heads(self):
        with pytest.raises(InvalidSpec):
            ModelSpec(heads=()).validate()

    def test_taps_must_increase(self):
        with pytest.raises(InvalidSpec):
            ModelSpec(backbone=(4, 4), taps=(1, 0)).validate()

    def test_tap_out_of_range(self):
        with pytest.raises(InvalidSpec):
            ModelSpec(backbone=(4,), taps=(1,)).validate()

    def test_layers_after_last_tap_rejected(self):
        with pytest.raises(InvalidSpec):
            ModelSpec(backbone=(4, 4), taps=(0,)).validate()

    def test_per_tap_needs_multiple_taps(self):
        with pytest.raises(InvalidSpec):
            ModelSpec(
                backbone=(4,),
                taps=(0,),
                recurrent=RecurrentSpec("per_tap", 8),
            ).validate()

    def test_streams_limited(self):
        with pytest.raises(InvalidSpec):
            ModelSpec(streams=3).validate()

    def test_dropout_range(self):
        with pytest.raises(InvalidSpec):
            ModelSpec(dropout=1.0).validate()

    def test_compound_classes_floor(self):
        with pytest.raises(InvalidSpec):
            ModelSpec(heads=("COMPOUND",), compound_classes=1).validate()

    def test_nested_composite_rejected(self):
        inner = ModelSpec(members=(ModelSpec(),), fusion="fc")
        with pytest.raises(InvalidSpec):
            ModelSpec(members=(inner,), fusion="fc").validate()

    def test_bad_fusion_mode(self):
        with pytest.raises(InvalidSpec):
            ModelSpec(members=(ModelSpec(),), fusion="avg").validate()


class TestBatchShapes:
    def test_features_must_be_3d(self):
        with pytest.raises(ShapeMismatch):
            SequenceBatch(features=np.zeros((4, 5)))

    def test_parallel_arrays_must_align(self):
        with pytest.raises(ShapeMismatch):
            SequenceBatch(features=np.zeros((2, 3, 5)), audio=np.zeros((2, 4, 6)))

    def test_va_head_needs_sequences(self):
        batch = SequenceBatch(features=np.zeros((4, 1, 5)))
        with pytest.raises(ShapeMismatch):
            batch.validate_for(ModelSpec(heads=("VA",)))
        batch.validate_for(ModelSpec(heads=("EXPR",)))

    def test_rows_to_btk_round_trip(self):
        b, t, k = 3, 4, 2
        btk = np.arange(b * t * k, dtype=float).reshape(b, t, k)
        rows = btk.transpose(1, 0, 2).reshape(t * b, k)  # row = t*B + b
        assert np.array_equal(rows_to_btk(rows, b, t), btk)


class TestForward:
    def test_head_widths(self):
        model = tiny_model()
        batch = SequenceBatch(features=np.zeros((2, 3, 5)))
        preds = model.forward(batch)
        assert preds.expr_logits.shape == (6, 7)
        assert preds.au_logits.shape == (6, 17)
        assert preds.va.shape == (6, 2)
        assert preds.compound_logits is None

    def test_row_order_is_time_major(self):
        # passthrough trunk (no backbone) with a known head weight lets the
        # row layout be checked against a direct matrix product
        spec = ModelSpec(backbone=(), heads=("VA",))
        model = build(spec, DIMS, seed=0)
        rng = np.random.default_rng(0)
        w = rng.normal(size=(5, 2))
        b = rng.normal(size=(2,))
        load_parameters(model, {"head.va.w": w, "head.va.b": b})
        x = rng.normal(size=(3, 4, 5))
        preds = model.forward(SequenceBatch(features=x))
        for t in range(4):
            for bi in range(3):
                assert preds.va.data[t * 3 + bi] == pytest.approx(x[bi, t] @ w + b)

    def test_same_seed_same_parameters(self):
        a = tiny_model()
        b = tiny_model()
        for name, p in a.named_parameters().items():
            assert np.array_equal(p.data, b.named_parameters()[name].data)

    def test_different_seeds_differ(self):
        a = build(ModelSpec(backbone=(6,), heads=("VA",)), DIMS, seed=0)
        b = build(ModelSpec(backbone=(6,), heads=("VA",)), DIMS, seed=1)
        assert not np.array_equal(
            a.named_parameters()["backbone.s0.l0.w"].data,
            b.named_parameters()["backbone.s0.l0.w"].data,
        )

    def test_eval_forward_deterministic(self):
        model = tiny_model(dropout=0.5)
        x = np.random.default_rng(1).normal(size=(2, 3, 5))
        a = model.forward(SequenceBatch(features=x)).va.data
        b = model.forward(SequenceBatch(features=x)).va.data
        assert np.array_equal(a, b)

    def test_train_dropout_perturbs_outputs(self):
        model = tiny_model(dropout=0.5)
        x = np.random.default_rng(1).normal(size=(2, 3, 5))
        eval_out = model.forward(SequenceBatch(features=x)).va.data
        train_out = model.forward(
            SequenceBatch(features=x), train=True, rng=np.random.default_rng(2)
        ).va.data
        assert not np.array_equal(eval_out, train_out)

    def test_feature_dim_checked(self):
        model = tiny_model()
        with pytest.raises(ShapeMismatch):
            model.forward(SequenceBatch(features=np.zeros((1, 2, 9))))

    def test_zero_parameters_give_uniform_expressions(self):
        model = build(ModelSpec(backbone=(4,), heads=("EXPR",)), DIMS, seed=0)
        zeros = {n: np.zeros_like(p.data) for n, p in model.named_parameters().items()}
        load_parameters(model, zeros)
        preds = model.forward(SequenceBatch(features=np.ones((2, 2, 5))))
        assert expr_probs(preds).data == pytest.approx(np.full((4, 7), 1 / 7))
        assert preds.expr_logits.data == pytest.approx(np.zeros((4, 7)))


class TestRecurrence:
    def test_single_stack_carries_state(self):
        spec = ModelSpec(
            backbone=(6,), recurrent=RecurrentSpec("single", 8, layers=2), heads=("VA",)
        )
        model = build(spec, DIMS, seed=3)
        rng = np.random.default_rng(4)
        x = rng.normal(size=(1, 5, 5))
        fwd = model.forward(SequenceBatch(features=x)).va.data
        rev = model.forward(SequenceBatch(features=x[:, ::-1, :])).va.data
        # final frame sees different histories
        assert not np.allclose(fwd[-1], rev[0])

    def test_stateless_trunk_ignores_order(self):
        model = build(ModelSpec(backbone=(6,), heads=("EXPR",)), DIMS, seed=3)
        rng = np.random.default_rng(4)
        x = rng.normal(size=(1, 5, 5))
        fwd = model.forward(SequenceBatch(features=x)).expr_logits.data
        rev = model.forward(SequenceBatch(features=x[:, ::-1, :])).expr_logits.data
        assert np.allclose(fwd[::-1], rev)

    def test_per_tap_output_width(self):
        spec = ModelSpec(
            backbone=(6, 4),
            taps=(0, 1),
            recurrent=RecurrentSpec("per_tap", 3),
            heads=("VA",),
        )
        model = build(spec, DIMS, seed=0)
        assert model.trunk_width == 6
        names = model.named_parameters()
        assert any(n.startswith("recurrent.b0.") for n in names)
        assert any(n.startswith("recurrent.b1.") for n in names)

    def test_tap_concat_width(self):
        spec = ModelSpec(backbone=(6, 4), taps=(0, 1), heads=("VA",))
        model = build(spec, DIMS, seed=0)
        assert model.trunk_width == 10


class TestStreamsAndLandmarks:
    def test_two_stream_needs_audio(self):
        dims = InputDims(features=5, audio=3)
        spec = ModelSpec(backbone=(6,), streams=2, heads=("VA",))
        model = build(spec, dims, seed=0)
        with pytest.raises(ShapeMismatch):
            model.forward(SequenceBatch(features=np.zeros((1, 2, 5))))
        preds = model.forward(
            SequenceBatch(features=np.zeros((1, 2, 5)), audio=np.zeros((1, 2, 3)))
        )
        assert preds.va.shape == (2, 2)

    def test_two_stream_without_audio_dims(self):
        with pytest.raises(InvalidSpec):
            build(ModelSpec(streams=2, heads=("VA",)), InputDims(features=5), seed=0)

    def test_landmark_concat_widens_trunk(self):
        dims = InputDims(features=5, landmarks=4)
        spec = ModelSpec(backbone=(6,), landmark_concat=True, heads=("VA",))
        model = build(spec, dims, seed=0)
        assert model.trunk_width == 10
        with pytest.raises(ShapeMismatch):
            model.forward(SequenceBatch(features=np.zeros((1, 2, 5))))
        preds = model.forward(
            SequenceBatch(
                features=np.zeros((1, 2, 5)), landmarks=np.zeros((1, 2, 4))
            )
        )
        assert preds.va.shape == (2, 2)


class TestComposite:
    def composite_spec(self, fusion):
        member = ModelSpec(backbone=(6,))
        return ModelSpec(
            members=(member, member),
            fusion=fusion,
            fusion_width=8,
            heads=("EXPR", "VA"),
        )

    @pytest.mark.parametrize("fusion", ["fc", "rnn"])
    def test_forward_shapes(self, fusion):
        model = build(self.composite_spec(fusion), DIMS, seed=0)
        preds = model.forward(SequenceBatch(features=np.ones((2, 3, 5))))
        assert preds.expr_logits.shape == (6, 7)
        assert preds.va.shape == (6, 2)

    def test_member_parameter_prefixes(self):
        model = build(self.composite_spec("fc"), DIMS, seed=0)
        names = set(model.named_parameters())
        assert any(n.startswith("member0.backbone") for n in names)
        assert any(n.startswith("member1.backbone") for n in names)
        assert "fusion.w" in names

    def test_members_initialized_independently(self):
        model = build(self.composite_spec("fc"), DIMS, seed=0)
        params = model.named_parameters()
        assert not np.array_equal(
            params["member0.backbone.s0.l0.w"].data,
            params["member1.backbone.s0.l0.w"].data,
        )


class TestParameterAccess:
    def test_head_trunk_split(self):
        model = tiny_model()
        heads = model.head_parameters()
        trunk = model.trunk_parameters()
        assert len(heads) + len(trunk) == len(model.parameters())
        assert len(heads) == 6  # three heads, weight and bias each

    def test_parameter_count(self):
        model = build(ModelSpec(backbone=(6,), heads=("VA",)), DIMS, seed=0)
        # dense 5->6 plus head 6->2 with biases
        assert model.parameter_count() == 5 * 6 + 6 + 6 * 2 + 2


class TestLoadParameters:
    def test_strict_round_trip(self):
        src = tiny_model()
        dst = build(src.spec, DIMS, seed=9)
        values = {n: p.data for n, p in src.named_parameters().items()}
        loaded, skipped = load_parameters(dst, values)
        assert not skipped and len(loaded) == len(values)
        x = SequenceBatch(features=np.ones((1, 2, 5)))
        assert np.array_equal(src.forward(x).va.data, dst.forward(x).va.data)

    def test_strict_name_mismatch(self):
        model = tiny_model()
        with pytest.raises(BadCheckpoint):
            load_parameters(model, {"nope": np.zeros(2)})

    def test_partial_load(self):
        trunk_donor = build(ModelSpec(backbone=(6,), heads=("VA",)), DIMS, seed=1)
        model = build(ModelSpec(backbone=(6,), heads=("EXPR",)), DIMS, seed=2)
        values = {n: p.data for n, p in trunk_donor.named_parameters().items()}
        loaded, skipped = load_parameters(model, values, strict=False)
        assert "backbone.s0.l0.w" in loaded
        assert "head.expr.w" in skipped
        assert np.array_equal(
            model.named_parameters()["backbone.s0.l0.w"].data,
            values["backbone.s0.l0.w"],
        )

    def test_shape_mismatch_always_fails(self):
        model = tiny_model()
        values = {n: p.data for n, p in model.named_parameters().items()}
        values["head.va.w"] = np.zeros((3, 3))
        with pytest.raises(BadCheckpoint):
            load_parameters(model, values)


class TestPredictSequence:
    def make_va_identity_model(self):
        # passthrough trunk, head projects feature 0 to valence, 1 to arousal
        spec = ModelSpec(backbone=(), heads=("VA",))
        model = build(spec, InputDims(features=2), seed=0)
        w = np.eye(2)
        load_parameters(model, {"head.va.w": w, "head.va.b": np.zeros(2)})
        return model

    def test_median_odd_count(self):
        model = self.make_va_identity_model()
        frames = np.array([[0.1, 0.0], [0.9, 0.0], [0.2, 0.0]])
        out = predict_sequence(model, frames)
        assert out.va.shape == (3, 2)
        assert out.va_median[0] == pytest.approx(0.2)

    def test_median_even_count_averages_middle(self):
        model = self.make_va_identity_model()
        frames = np.array([[0.1, 0.0], [0.3, 0.0]])
        out = predict_sequence(model, frames)
        assert out.va_median[0] == pytest.approx(0.2)

    def test_probability_heads(self):
        model = tiny_model()
        out = predict_sequence(model, np.ones((4, 5)))
        assert out.expr_probs.shape == (4, 7)
        assert out.expr_probs.sum(axis=1) == pytest.approx(np.ones(4))
        assert np.all((out.au_probs >= 0) & (out.au_probs <= 1))

    def test_missing_heads_are_none(self):
        model = build(ModelSpec(backbone=(4,), heads=("EXPR",)), DIMS, seed=0)
        out = predict_sequence(model, np.ones((2, 5)))
        assert out.va is None and out.va_median is None
        assert out.au_probs is None

    def test_empty_sequence(self):
        model = tiny_model()
        with pytest.raises(EmptySequence):
            predict_sequence(model, np.zeros((0, 5)))


class TestSingleTaskSpec:
    def test_restricts_heads(self):
        spec = ModelSpec(backbone=(8, 8), heads=("EXPR", "AU", "VA"), dropout=0.1)
        solo = single_task_spec(spec, "EXPR")
        assert solo.heads == ("EXPR",)
        assert solo.backbone == spec.backbone
        assert solo.dropout == spec.dropout

    def test_unknown_head(self):
        with pytest.raises(InvalidSpec):
            single_task_spec(ModelSpec(), "FACE")
