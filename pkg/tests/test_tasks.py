"""Tasks: blob generation, IDX ingestion, the MLP and its gradients (checked
against finite differences and a high-precision recomputation), subsampling,
and the training loop."""

import dataclasses
import struct

import mpmath
import numpy as np
import pytest
from sklearn.linear_model import LogisticRegression

from conftest import blobs4_task, easy_blobs_task, write_idx_pair
from evoopt.genome import preset
from evoopt.tasks import (
    Dataset,
    IdxFormatError,
    MlpModel,
    REASON_LOSS_EXCEEDED,
    accuracy,
    backward,
    flatten_params,
    forward_loss,
    init_mlp,
    load_idx,
    make_blobs,
    subsample,
    train,
    unflatten_params,
)


class TestMakeBlobs:
    def test_deterministic(self):
        a = make_blobs(7, 50, 2, 3, 0.2)
        b = make_blobs(7, 50, 2, 3, 0.2)
        assert np.array_equal(a.train_x, b.train_x)
        assert np.array_equal(a.test_x, b.test_x)
        assert np.array_equal(a.train_y, b.train_y)

    def test_every_class_has_n_per_class_examples(self):
        d = make_blobs(3, 40, 2, 5, 0.1)
        labels = np.concatenate([d.train_y, d.test_y])
        counts = np.bincount(labels, minlength=5)
        assert np.array_equal(counts, np.full(5, 40))

    def test_split_is_80_20(self):
        d = make_blobs(3, 50, 2, 3, 0.1)
        assert d.train_x.shape == (120, 2)
        assert d.test_x.shape == (30, 2)

    def test_means_on_unit_circle(self):
        d = make_blobs(0, 2000, 4, 3, 0.01)
        for c in range(3):
            centroid = d.train_x[d.train_y == c].mean(axis=0)
            angle = 2 * np.pi * c / 3
            expected = np.array([np.cos(angle), np.sin(angle), 0.0, 0.0])
            assert np.linalg.norm(centroid - expected) < 0.01

    def test_low_noise_two_class_is_linearly_separable(self):
        d = make_blobs(11, 200, 2, 2, 0.05)
        clf = LogisticRegression(max_iter=2000).fit(d.train_x, d.train_y)
        assert clf.score(d.test_x, d.test_y) > 0.99

    def test_bad_arguments(self):
        with pytest.raises(ValueError):
            make_blobs(0, 1, 2, 2, 0.1)
        with pytest.raises(ValueError):
            make_blobs(0, 10, 2, 2, 0.0)


class TestLoadIdx:
    def _write_pair(self, tmp_path, images, labels):
        ip = str(tmp_path / "imgs")
        lp = str(tmp_path / "lbls")
        write_idx_pair(ip, lp, images, labels)
        return ip, lp

    def test_header_arithmetic(self, tmp_path):
        ip = tmp_path / "two"
        ip.write_bytes(struct.pack(">IIII", 0x803, 2, 28, 28) + bytes(2 * 28 * 28))
        lp = tmp_path / "twol"
        lp.write_bytes(struct.pack(">II", 0x801, 2) + bytes([3, 9]))
        x, y = load_idx(str(ip), str(lp))
        assert x.shape == (2, 784)
        assert y.tolist() == [3, 9]

    def test_pixel_255_scales_to_one(self, tmp_path):
        ip = tmp_path / "one"
        ip.write_bytes(struct.pack(">IIII", 0x803, 1, 2, 2) + bytes([255, 0, 51, 102]))
        lp = tmp_path / "onel"
        lp.write_bytes(struct.pack(">II", 0x801, 1) + bytes([7]))
        x, _ = load_idx(str(ip), str(lp))
        assert x[0, 0] == 1.0
        assert x[0, 1] == 0.0
        assert x[0, 2] == 51 / 255

    def test_roundtrip_exact(self, tmp_path):
        rng = np.random.default_rng(0)
        images = rng.integers(0, 256, size=(5, 28, 28)).astype(np.uint8)
        labels = rng.integers(0, 10, size=5).astype(np.uint8)
        ip, lp = self._write_pair(tmp_path, images, labels)
        x, y = load_idx(ip, lp)
        assert np.array_equal(x, images.reshape(5, 784) / 255.0)
        assert np.array_equal(y, labels)

    def test_wrong_magic(self, tmp_path):
        ip = tmp_path / "bad"
        ip.write_bytes(struct.pack(">IIII", 0x801, 1, 2, 2) + bytes(4))
        lp = tmp_path / "lbl"
        lp.write_bytes(struct.pack(">II", 0x801, 1) + bytes(1))
        with pytest.raises(IdxFormatError, match="magic"):
            load_idx(str(ip), str(lp))

    def test_truncated(self, tmp_path):
        ip = tmp_path / "short"
        ip.write_bytes(struct.pack(">IIII", 0x803, 2, 28, 28) + bytes(100))
        lp = tmp_path / "lbl"
        lp.write_bytes(struct.pack(">II", 0x801, 2) + bytes(2))
        with pytest.raises(IdxFormatError, match="truncated"):
            load_idx(str(ip), str(lp))

    def test_count_mismatch(self, tmp_path):
        ip = tmp_path / "i"
        ip.write_bytes(struct.pack(">IIII", 0x803, 2, 2, 2) + bytes(8))
        lp = tmp_path / "l"
        lp.write_bytes(struct.pack(">II", 0x801, 3) + bytes(3))
        with pytest.raises(IdxFormatError, match="mismatch"):
            load_idx(str(ip), str(lp))

    def test_trailing_bytes(self, tmp_path):
        ip = tmp_path / "i"
        ip.write_bytes(struct.pack(">IIII", 0x803, 1, 2, 2) + bytes(5))
        lp = tmp_path / "l"
        lp.write_bytes(struct.pack(">II", 0x801, 1) + bytes(1))
        with pytest.raises(IdxFormatError, match="trailing"):
            load_idx(str(ip), str(lp))


class TestSubsample:
    def _dataset(self, n=100):
        rng = np.random.default_rng(4)
        return Dataset(
            train_x=rng.standard_normal((n, 3)),
            train_y=rng.integers(0, 2, n),
            test_x=rng.standard_normal((10, 3)),
            test_y=rng.integers(0, 2, 10),
            d=3,
            C=2,
        )

    def test_deterministic(self):
        d = self._dataset()
        a = subsample(d, 30, seed=5)
        b = subsample(d, 30, seed=5)
        assert np.array_equal(a.train_x, b.train_x)

    def test_full_size_is_same_multiset(self):
        d = self._dataset()
        s = subsample(d, 100, seed=1)
        assert sorted(map(tuple, s.train_x)) == sorted(map(tuple, d.train_x))

    def test_different_seeds_differ(self):
        d = self._dataset(10000)
        a = subsample(d, 1000, seed=1)
        b = subsample(d, 1000, seed=2)
        assert not np.array_equal(a.train_x, b.train_x)

    def test_test_split_unchanged(self):
        d = self._dataset()
        s = subsample(d, 10, seed=0)
        assert np.array_equal(s.test_x, d.test_x)

    def test_too_large(self):
        with pytest.raises(ValueError):
            subsample(self._dataset(), 101, seed=0)


class TestInitMlp:
    def test_deterministic(self):
        a, b = init_mlp(9, 4, 8, 3), init_mlp(9, 4, 8, 3)
        assert np.array_equal(a.W1, b.W1) and np.array_equal(a.W2, b.W2)

    def test_zero_biases(self):
        m = init_mlp(0, 4, 8, 3)
        assert not m.b1.any() and not m.b2.any()

    def test_fan_in_bound(self):
        m = init_mlp(1, 9, 16, 4)
        assert np.all(np.abs(m.W1) <= np.sqrt(3 / 9))
        assert np.all(np.abs(m.W2) <= np.sqrt(3 / 16))

    def test_flatten_roundtrip(self):
        m = init_mlp(2, 5, 7, 3)
        vec = flatten_params(m)
        back = unflatten_params(vec, 5, 7, 3)
        assert np.array_equal(back.W1, m.W1) and np.array_equal(back.b2, m.b2)


class TestForwardLoss:
    def test_zero_weights_give_log_c(self):
        m = MlpModel(W1=np.zeros((4, 6)), b1=np.zeros(6), W2=np.zeros((6, 5)), b2=np.zeros(5))
        x = np.random.default_rng(0).standard_normal((8, 4))
        y = np.random.default_rng(1).integers(0, 5, 8)
        loss, _ = forward_loss(m, x, y)
        assert loss == float(np.log(5.0))

    def test_binary_margin_identity(self):
        # For two classes the per-example loss is log(1 + exp(-margin)).
        m = MlpModel(
            W1=np.eye(2), b1=np.zeros(2), W2=np.array([[2.0, 0.0], [0.0, 1.0]]), b2=np.zeros(2)
        )
        x = np.array([[1.5, 1.0]])  # hidden = [1.5, 1.0], logits = [3.0, 1.0]
        loss, logits = forward_loss(m, x, np.array([0]))
        margin = logits[0, 0] - logits[0, 1]
        assert loss == pytest.approx(float(np.log1p(np.exp(-margin))), rel=1e-14)

    def test_matches_high_precision_recomputation(self):
        rng = np.random.default_rng(12)
        m = init_mlp(12, 6, 9, 4)
        x = rng.standard_normal((5, 6))
        y = rng.integers(0, 4, 5)
        loss, _ = forward_loss(m, x, y)

        mpmath.mp.dps = 50
        hidden = np.maximum(x @ m.W1 + m.b1, 0.0)
        logits = hidden @ m.W2 + m.b2
        total = mpmath.mpf(0)
        for i in range(5):
            row = [mpmath.mpf(v) for v in logits[i]]
            lse = mpmath.log(mpmath.fsum(mpmath.e**z for z in row))
            total += lse - row[y[i]]
        expected = float(total / 5)
        assert loss == pytest.approx(expected, rel=1e-12)

    def test_nonfinite_input_rejected(self):
        m = init_mlp(0, 2, 3, 2)
        with pytest.raises(ValueError):
            forward_loss(m, np.array([[1.0, np.nan]]), np.array([0]))


def central_differences(model, x, y, d, h, C, eps=1e-5):
    vec = flatten_params(model)
    out = np.zeros_like(vec)
    for i in range(vec.size):
        up, down = vec.copy(), vec.copy()
        up[i] += eps
        down[i] -= eps
        lu, _ = forward_loss(unflatten_params(up, d, h, C), x, y)
        ld, _ = forward_loss(unflatten_params(down, d, h, C), x, y)
        out[i] = (lu - ld) / (2 * eps)
    return out


class TestBackward:
    def test_matches_finite_differences(self):
        rng = np.random.default_rng(21)
        for trial in range(5):
            d, h, C = 5, 7, 3
            model = init_mlp(trial, d, h, C)
            x = rng.standard_normal((6, d))
            y = rng.integers(0, C, 6)
            got = backward(model, x, y)
            want = central_differences(model, x, y, d, h, C)
            denom = np.maximum(np.abs(want), 1e-3)
            assert np.max(np.abs(got - want) / denom) < 1e-4

    def test_duplicated_example_equals_single(self):
        model = init_mlp(5, 4, 6, 3)
        x = np.random.default_rng(2).standard_normal((1, 4))
        y = np.array([1])
        single = backward(model, x, y)
        doubled = backward(model, np.vstack([x, x]), np.array([1, 1]))
        assert doubled == pytest.approx(single, rel=1e-12, abs=1e-15)

    def test_saturated_softmax_has_tiny_gradient(self):
        # Correct class holds a logit margin of 50: upstream error underflows.
        m = MlpModel(
            W1=np.eye(2), b1=np.zeros(2), W2=np.array([[50.0, 0.0], [0.0, 0.0]]), b2=np.zeros(2)
        )
        x = np.array([[1.0, 0.5]])
        g = backward(m, x, np.array([0]))
        assert np.linalg.norm(g) < 1e-6


class TestAccuracy:
    def test_zero_model_ties_to_class_zero(self):
        m = MlpModel(W1=np.zeros((3, 4)), b1=np.zeros(4), W2=np.zeros((4, 10)), b2=np.zeros(10))
        x = np.random.default_rng(0).standard_normal((100, 3))
        y = np.repeat(np.arange(10), 10)
        assert accuracy(m, x, y) == 0.1

    def test_perfect_model(self):
        # hidden = [relu(x), relu(-x)] lets the second layer reconstruct x,
        # so logits equal the inputs and argmax labels are always right.
        k = 4
        m = MlpModel(
            W1=np.hstack([np.eye(k), -np.eye(k)]),
            b1=np.zeros(2 * k),
            W2=np.vstack([np.eye(k), -np.eye(k)]),
            b2=np.zeros(k),
        )
        x = np.random.default_rng(5).standard_normal((60, k))
        y = np.argmax(x, axis=1)
        assert accuracy(m, x, y) == 1.0

    def test_matches_bruteforce_recount(self):
        rng = np.random.default_rng(8)
        m = init_mlp(3, 4, 8, 5)
        x = rng.standard_normal((50, 4))
        y = rng.integers(0, 5, 50)
        got = accuracy(m, x, y)
        hits = 0
        for i in range(50):
            hidden = np.maximum(x[i] @ m.W1 + m.b1, 0.0)
            logits = hidden @ m.W2 + m.b2
            best = 0
            for c in range(1, 5):
                if logits[c] > logits[best]:
                    best = c
            hits += int(best == y[i])
        assert got == hits / 50

    def test_empty_test_set(self):
        m = init_mlp(0, 2, 3, 2)
        with pytest.raises(ValueError):
            accuracy(m, np.zeros((0, 2)), np.zeros(0, dtype=int))


class TestTrain:
    def test_sgd_solves_easy_blobs(self):
        run = train(preset("sgd"), easy_blobs_task(200), seed=0)
        assert not run.diverged
        assert run.test_accuracy > 0.95
        assert len(run.loss_trace) == 200

    def test_huge_lr_diverges(self):
        bad = dataclasses.replace(preset("sgd"), log10_lr=3.0)
        run = train(bad, blobs4_task(200), seed=0)
        assert run.diverged
        assert run.divergence_reason == REASON_LOSS_EXCEEDED
        assert run.test_accuracy is None
        assert len(run.loss_trace) < 200

    def test_bitwise_deterministic(self):
        task = blobs4_task(100)
        a = train(preset("adam"), task, seed=3)
        b = train(preset("adam"), task, seed=3)
        assert a == b

    def test_adam_loss_decreases_on_blobs(self):
        run = train(preset("adam"), blobs4_task(200), seed=1)
        assert not run.diverged
        assert all(np.isfinite(run.loss_trace))
        first50 = sum(run.loss_trace[:50]) / 50
        last50 = sum(run.loss_trace[-50:]) / 50
        assert last50 < first50

    def test_different_seeds_differ(self):
        task = blobs4_task(50)
        a = train(preset("adam"), task, seed=0)
        b = train(preset("adam"), task, seed=1)
        assert a.loss_trace != b.loss_trace

    def test_batch_size_larger_than_subset_rejected(self):
        task = dataclasses.replace(easy_blobs_task(10), batch_size=1000)
        with pytest.raises(ValueError):
            train(preset("sgd"), task, seed=0)
