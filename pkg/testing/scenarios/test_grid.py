"""
Tests for the pixel-grid value types, kernels, random streams and tensor files.
"""

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from grid.errors import InvariantError, PreconditionError, ShapeError, TensorFormatError
from grid.fields import ConfusionField, ImageTensor, LabelMap, ProbabilityMap
from grid.kernels import cm_apply, normalize_columns, one_hot, softmax_pixelwise, trace_mean
from grid.rng import Rng
from grid.tensor_io import atomic_directory, atomic_write_bytes, decode_tensor, encode_tensor, read_tensor, write_tensor


def random_cms(rng: np.random.Generator, width: int, height: int, num_classes: int) -> np.ndarray:
    raw = rng.random((width, height, num_classes, num_classes)) + 1e-3
    return raw / raw.sum(axis=2, keepdims=True)


def random_probs(rng: np.random.Generator, width: int, height: int, num_classes: int) -> np.ndarray:
    raw = rng.random((width, height, num_classes)) + 1e-3
    return raw / raw.sum(axis=-1, keepdims=True)


class TestSoftmax:
    def test_zero_logits_are_uniform(self):
        probs = softmax_pixelwise(np.zeros((3, 2, 4)))
        assert np.allclose(probs.probs, 0.25)

    def test_large_logit_does_not_overflow(self):
        probs = softmax_pixelwise(np.array([[[1000.0, 0.0]]]))
        assert probs.probs[0, 0, 0] == pytest.approx(1.0)
        assert probs.probs[0, 0, 1] == pytest.approx(0.0, abs=1e-300)

    def test_closed_form_two_classes(self):
        probs = softmax_pixelwise(np.array([[[math.log(2.0), 0.0]]]))
        assert abs(probs.probs[0, 0, 0] - 2.0 / 3.0) < 1e-12
        assert abs(probs.probs[0, 0, 1] - 1.0 / 3.0) < 1e-12

    def test_non_finite_logits_rejected(self):
        with pytest.raises(InvariantError):
            softmax_pixelwise(np.array([[[np.nan, 0.0]]]))

    def test_wrong_rank_rejected(self):
        with pytest.raises(ShapeError):
            softmax_pixelwise(np.zeros((2, 2)))


class TestOneHot:
    def test_single_pixel(self):
        encoded = one_hot(LabelMap(np.array([[2]]), 4), 4)
        assert encoded.probs[0, 0].tolist() == [0.0, 0.0, 1.0, 0.0]

    def test_all_background(self):
        encoded = one_hot(LabelMap(np.zeros((2, 2), dtype=int), 2), 2)
        assert np.all(encoded.probs[..., 0] == 1.0)
        assert np.all(encoded.probs[..., 1] == 0.0)

    def test_label_out_of_range(self):
        with pytest.raises(PreconditionError):
            one_hot(LabelMap(np.array([[3]]), 4), 2)


class TestNormalizeColumns:
    def test_hand_example(self):
        field = normalize_columns(np.array([[2.0, 0.0], [2.0, 1.0]])[None, None])
        assert np.allclose(field.entries[0, 0], [[0.5, 0.0], [0.5, 1.0]])

    def test_identity_is_fixed(self):
        field = normalize_columns(np.broadcast_to(np.eye(3), (2, 2, 3, 3)))
        assert np.array_equal(field.entries, np.broadcast_to(np.eye(3), (2, 2, 3, 3)))

    @given(st.integers(0, 2**32 - 1), st.integers(2, 5))
    def test_idempotent(self, seed, num_classes):
        raw = np.random.default_rng(seed).random((3, 2, num_classes, num_classes)) + 1e-3
        once = normalize_columns(raw)
        assert np.allclose(normalize_columns(once.entries).entries, once.entries, rtol=0.0, atol=1e-15)

    def test_zero_column_rejected(self):
        raw = np.array([[1.0, 0.0], [1.0, 0.0]])[None, None]
        with pytest.raises(PreconditionError, match="zero-sum column 1"):
            normalize_columns(raw)


class TestCmApply:
    def test_identity_returns_probs(self):
        probs = ProbabilityMap(random_probs(np.random.default_rng(0), 3, 4, 3))
        out = cm_apply(ConfusionField.identity(3, 4, 3), probs)
        assert np.array_equal(out.probs, probs.probs)

    def test_one_hot_picks_column(self):
        cms = ConfusionField(random_cms(np.random.default_rng(1), 2, 3, 3))
        probs = one_hot(LabelMap(np.full((2, 3), 1), 3), 3)
        out = cm_apply(cms, probs)
        assert np.allclose(out.probs, cms.entries[:, :, :, 1])

    @given(st.integers(0, 2**32 - 1), st.integers(2, 5))
    def test_output_is_a_distribution(self, seed, num_classes):
        rng = np.random.default_rng(seed)
        cms = ConfusionField(random_cms(rng, 3, 2, num_classes))
        probs = ProbabilityMap(random_probs(rng, 3, 2, num_classes))
        out = cm_apply(cms, probs)
        assert np.all(np.abs(out.probs.sum(axis=-1) - 1.0) < 1e-9)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            cm_apply(ConfusionField.identity(2, 2, 2), ProbabilityMap(np.full((3, 2, 2), 0.5)))


class TestTraceMean:
    @pytest.mark.parametrize("num_classes", range(2, 9))
    def test_identity(self, num_classes):
        assert trace_mean(ConfusionField.identity(4, 4, num_classes)) == pytest.approx(num_classes)

    def test_uniform(self):
        assert trace_mean(ConfusionField.uniform(3, 3, 2)) == pytest.approx(1.0)

    def test_half_identity_half_uniform(self):
        entries = np.empty((2, 1, 2, 2))
        entries[0, 0] = np.eye(2)
        entries[1, 0] = 0.5
        assert trace_mean(ConfusionField(entries)) == pytest.approx(1.5)


class TestFields:
    def test_confusion_field_rejects_row_stochastic(self):
        with pytest.raises(InvariantError):
            ConfusionField(np.array([[0.9, 0.1], [0.9, 0.1]])[None, None])

    def test_validation_can_be_disabled(self, monkeypatch):
        monkeypatch.setenv("NLSG_VALIDATE", "0")
        field = ConfusionField(np.full((1, 1, 2, 2), 0.9))
        assert field.num_classes == 2

    def test_label_map_range_checked(self):
        with pytest.raises(InvariantError):
            LabelMap(np.array([[0, 2]]), 2)

    def test_fields_are_read_only(self):
        label = LabelMap(np.zeros((2, 2), dtype=int), 2)
        with pytest.raises(ValueError):
            label.labels[0, 0] = 1

    def test_image_promotes_two_dimensional_input(self):
        image = ImageTensor(np.zeros((5, 4)))
        assert (image.width, image.height, image.channels) == (5, 4, 1)

    def test_argmax_ties_go_low(self):
        probs = ProbabilityMap(np.full((1, 1, 3), 1.0 / 3.0))
        assert probs.argmax().labels[0, 0] == 0


class TestRng:
    def test_same_seed_same_stream(self):
        assert np.array_equal(Rng(7).generator.random(5), Rng(7).generator.random(5))

    def test_children_do_not_depend_on_draw_order(self):
        parent = Rng(3)
        first = parent.child(2).generator.random(3)
        parent.generator.random(100)
        parent.child(0).generator.random(10)
        assert np.array_equal(parent.child(2).generator.random(3), first)

    def test_children_differ(self):
        rng = Rng(3)
        assert not np.array_equal(rng.child(0).generator.random(4), rng.child(1).generator.random(4))

    def test_negative_seed_rejected(self):
        with pytest.raises(PreconditionError):
            Rng(-1)


class TestTensorFiles:
    def test_float_payload_is_bit_exact(self, tmp_path):
        values = np.random.default_rng(0).normal(size=(3, 4, 2))
        path = write_tensor(tmp_path / "x.nlsg", values)
        assert read_tensor(path).tobytes() == values.tobytes()

    def test_uint8_payload(self):
        values = np.array([[0, 1], [2, 255]], dtype=np.int64)
        decoded = decode_tensor(encode_tensor(values))
        assert decoded.dtype == np.uint8
        assert np.array_equal(decoded, values)

    def test_bad_magic(self):
        with pytest.raises(TensorFormatError, match="magic"):
            decode_tensor(b"XXXX" + bytes(20))

    def test_truncated_payload(self):
        data = encode_tensor(np.zeros((4, 4)))
        with pytest.raises(TensorFormatError, match="payload"):
            decode_tensor(data[:-8])

    def test_integer_overflow_rejected(self):
        with pytest.raises(TensorFormatError):
            encode_tensor(np.array([256]))

    def test_atomic_directory_keeps_target_on_error(self, tmp_path):
        target = tmp_path / "out"
        with atomic_directory(target) as tmp:
            (tmp / "a.txt").write_text("first")

        with pytest.raises(RuntimeError):
            with atomic_directory(target) as tmp:
                (tmp / "a.txt").write_text("second")
                raise RuntimeError("boom")

        assert (target / "a.txt").read_text() == "first"
        assert sorted(p.name for p in tmp_path.iterdir()) == ["out"]

    def test_failed_write_leaves_no_temp_file(self, tmp_path):
        target = atomic_write_bytes(tmp_path / "a.bin", b"first")
        with pytest.raises(TypeError):
            atomic_write_bytes(target, "not bytes")
        assert target.read_bytes() == b"first"
        assert sorted(p.name for p in tmp_path.iterdir()) == ["a.bin"]
