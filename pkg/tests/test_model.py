import numpy as np
import pytest

from segal.model import (
    FEATURE_CHANNELS,
    FeatureSpec,
    ModelParams,
    SingleClassWarning,
    TrainConfig,
    cross_entropy,
    feature_matrix,
    load_model,
    predict,
    save_model,
    softmax,
    train,
)
from segal.sieve import SievedDataset


def toy_dataset(rng, num_images=2, h=8, w=8, c=3, n=40):
    images = {
        i: rng.integers(0, 256, size=(h, w, 3), dtype=np.uint8)
        for i in range(num_images)
    }
    img_ids = rng.integers(0, num_images, size=n).astype(np.uint32)
    pixels = np.zeros(n, dtype=np.uint32)
    used: set[tuple[int, int]] = set()
    for k in range(n):
        while True:
            p = int(rng.integers(0, h * w))
            if (int(img_ids[k]), p) not in used:
                used.add((int(img_ids[k]), p))
                pixels[k] = p
                break
    labels = rng.integers(0, c, size=n).astype(np.uint16)
    labels[:c] = np.arange(c)  # every class present
    ds = SievedDataset(
        image_ids=img_ids, pixel_indices=pixels, class_ids=labels, num_classes=c
    )
    return ds, images


class TestFeatureMatrix:
    def test_shape_and_bias(self, rng):
        img = rng.integers(0, 256, size=(5, 7, 3), dtype=np.uint8)
        feats = feature_matrix(img)
        assert feats.shape == (35, len(FEATURE_CHANNELS) + 1)
        np.testing.assert_array_equal(feats[:, -1], 1.0)

    def test_rgb_scaling_and_coords(self):
        img = np.zeros((3, 5, 3), dtype=np.uint8)
        img[1, 2] = (255, 128, 0)
        feats = feature_matrix(img)
        row = feats[1 * 5 + 2]
        spec = FeatureSpec()
        assert row[spec.channels.index("r")] == pytest.approx(1.0)
        assert row[spec.channels.index("g")] == pytest.approx(128 / 255)
        assert row[spec.channels.index("b")] == pytest.approx(0.0)
        assert row[spec.channels.index("x_norm")] == pytest.approx(2 / 4)
        assert row[spec.channels.index("y_norm")] == pytest.approx(1 / 2)

    def test_mean_channels_are_3x3_box_means(self):
        img = np.zeros((3, 3, 3), dtype=np.uint8)
        img[1, 1, 0] = 90
        feats = feature_matrix(img)
        idx = FeatureSpec().channels.index("mean_r")
        # interior pixel: mean of the 3x3 block
        assert feats[4, idx] == pytest.approx(90 / 255 / 9)

    def test_constant_image_constant_mean(self):
        img = np.full((4, 4, 3), 100, dtype=np.uint8)
        feats = feature_matrix(img)
        for name in ("mean_r", "mean_g", "mean_b"):
            idx = FeatureSpec().channels.index(name)
            np.testing.assert_allclose(feats[:, idx], 100 / 255)

    def test_rejects_non_rgb(self):
        with pytest.raises(ValueError):
            feature_matrix(np.zeros((4, 4), dtype=np.uint8))

    def test_spec_subset(self, rng):
        img = rng.integers(0, 256, size=(4, 4, 3), dtype=np.uint8)
        spec = FeatureSpec(channels=("r", "x_norm"))
        feats = feature_matrix(img, spec)
        assert feats.shape == (16, 3)

    def test_spec_validation(self):
        with pytest.raises(ValueError):
            FeatureSpec(channels=())
        with pytest.raises(ValueError):
            FeatureSpec(channels=("r", "r"))
        with pytest.raises(ValueError):
            FeatureSpec(channels=("r", "nope"))


class TestSoftmaxAndGradient:
    def test_softmax_rows_sum_to_one(self, rng):
        logits = rng.normal(0, 10, size=(50, 6))
        probs = softmax(logits)
        np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-6)
        assert (probs >= 0).all()

    def test_softmax_is_shift_invariant_and_stable(self):
        logits = np.array([[1000.0, 1000.0], [-1000.0, 0.0]])
        probs = softmax(logits)
        assert np.isfinite(probs).all()
        np.testing.assert_allclose(probs[0], [0.5, 0.5])

    def test_gradient_matches_finite_differences(self, rng):
        c, d, n = 3, 5, 12
        feats = rng.normal(size=(n, d))
        labels = rng.integers(0, c, size=n)
        weights = rng.normal(size=(d, c)) * 0.5
        _, grad = cross_entropy(weights, feats, labels, c)
        eps = 1e-6
        for _ in range(100):
            i = int(rng.integers(0, d))
            j = int(rng.integers(0, c))
            up = weights.copy()
            up[i, j] += eps
            down = weights.copy()
            down[i, j] -= eps
            lu, _ = cross_entropy(up, feats, labels, c)
            ld, _ = cross_entropy(down, feats, labels, c)
            numeric = (lu - ld) / (2 * eps)
            denom = max(abs(numeric), abs(grad[i, j]), 1e-8)
            assert abs(grad[i, j] - numeric) / denom <= 1e-4


class TestTraining:
    def test_learns_separable_problem(self, rng):
        # left half dark-red, right half bright-blue
        img = np.zeros((8, 8, 3), dtype=np.uint8)
        img[:, :4] = (200, 30, 30)
        img[:, 4:] = (30, 30, 200)
        labels = np.zeros(64, dtype=np.uint16)
        labels[np.arange(64) % 8 >= 4] = 1
        ds = SievedDataset(
            image_ids=np.zeros(64, dtype=np.uint32),
            pixel_indices=np.arange(64, dtype=np.uint32),
            class_ids=labels,
            num_classes=2,
        )
        params = train(ds, {0: img}, cfg=TrainConfig(epochs=40, seed=0))
        pm = predict(params, img)
        pred = np.argmax(pm.planes, axis=0)
        assert (pred[:, :4] == 0).all() and (pred[:, 4:] == 1).all()

    def test_deterministic_given_seed(self, rng):
        ds, images = toy_dataset(rng)
        a = train(ds, images, cfg=TrainConfig(epochs=5, seed=9))
        b = train(ds, images, cfg=TrainConfig(epochs=5, seed=9))
        np.testing.assert_array_equal(a.weights, b.weights)

    def test_seed_changes_minibatch_composition(self, rng):
        # batch smaller than the dataset, so the shuffle actually matters
        ds, images = toy_dataset(rng)
        a = train(ds, images, cfg=TrainConfig(epochs=5, seed=1, batch_size=16))
        b = train(ds, images, cfg=TrainConfig(epochs=5, seed=2, batch_size=16))
        assert not np.array_equal(a.weights, b.weights)

    def test_weights_are_float32(self, rng):
        ds, images = toy_dataset(rng)
        params = train(ds, images, cfg=TrainConfig(epochs=2))
        assert params.weights.dtype == np.float32

    def test_zero_epochs_zero_weights(self, rng):
        ds, images = toy_dataset(rng)
        params = train(ds, images, cfg=TrainConfig(epochs=0))
        np.testing.assert_array_equal(params.weights, 0.0)

    def test_single_class_warns(self, rng):
        ds, images = toy_dataset(rng)
        ds = SievedDataset(
            image_ids=ds.image_ids,
            pixel_indices=ds.pixel_indices,
            class_ids=np.zeros(len(ds), dtype=np.uint16),
            num_classes=3,
        )
        with pytest.warns(SingleClassWarning):
            train(ds, images, cfg=TrainConfig(epochs=1))

    def test_empty_dataset_raises(self):
        ds = SievedDataset(
            image_ids=np.array([], dtype=np.uint32),
            pixel_indices=np.array([], dtype=np.uint32),
            class_ids=np.array([], dtype=np.uint16),
            num_classes=2,
        )
        with pytest.raises(ValueError):
            train(ds, {}, cfg=TrainConfig(epochs=1))

    def test_config_validation(self):
        with pytest.raises(ValueError):
            TrainConfig(learning_rate=0.0)
        with pytest.raises(ValueError):
            TrainConfig(epochs=-1)
        with pytest.raises(ValueError):
            TrainConfig(batch_size=0)


class TestPredictAndPersistence:
    def test_predict_is_valid_prob_map(self, rng):
        ds, images = toy_dataset(rng)
        params = train(ds, images, cfg=TrainConfig(epochs=3))
        pm = predict(params, images[0])
        assert pm.num_classes == 3
        sums = pm.planes.sum(axis=0, dtype=np.float64)
        np.testing.assert_allclose(sums, 1.0, atol=1e-5)

    def test_round_trip_exact(self, tmp_path, rng):
        ds, images = toy_dataset(rng)
        params = train(ds, images, cfg=TrainConfig(epochs=3, seed=4))
        save_model(params, tmp_path / "m.mlp")
        back = load_model(tmp_path / "m.mlp")
        np.testing.assert_array_equal(back.weights, params.weights)

    def test_magic_guard(self, tmp_path):
        (tmp_path / "bad.mlp").write_bytes(b"JUNK" + b"\0" * 16)
        with pytest.raises(ValueError, match="magic"):
            load_model(tmp_path / "bad.mlp")

    def test_spec_dim_guard(self, tmp_path, rng):
        ds, images = toy_dataset(rng)
        params = train(ds, images, cfg=TrainConfig(epochs=1))
        save_model(params, tmp_path / "m.mlp")
        with pytest.raises(ValueError):
            load_model(tmp_path / "m.mlp", spec=FeatureSpec(channels=("r", "g")))

    def test_params_validation(self):
        with pytest.raises(ValueError):
            ModelParams(weights=np.zeros((3, 2), dtype=np.float32))
        with pytest.raises(ValueError):
            ModelParams(weights=np.full((9, 2), np.nan, dtype=np.float32))
