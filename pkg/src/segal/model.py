"""Pixel classifier: multinomial logistic regression on cheap local features.

Deliberately small — the point of the surrounding tooling is annotation
efficiency, and a fast, deterministic learner keeps whole-loop experiments
reproducible down to the bit.
"""

from __future__ import annotations

import struct
import warnings
from dataclasses import dataclass
from typing import Mapping

import numpy as np
from scipy.ndimage import uniform_filter

from .raster import ProbMap, RasterError
from .sieve import SievedDataset

MLP_MAGIC = b"MLP1"

FEATURE_CHANNELS = ("r", "g", "b", "x_norm", "y_norm", "mean_r", "mean_g", "mean_b")


class SingleClassWarning(UserWarning):
    """Training data contains a single distinct label."""


@dataclass(frozen=True)
class FeatureSpec:
    channels: tuple[str, ...] = FEATURE_CHANNELS

    def __post_init__(self):
        if not self.channels:
            raise ValueError("feature spec needs at least one channel")
        unknown = set(self.channels) - set(FEATURE_CHANNELS)
        if unknown:
            raise ValueError(f"unknown feature channels: {sorted(unknown)}")
        if len(set(self.channels)) != len(self.channels):
            raise ValueError("duplicate feature channel")

    @property
    def feature_dim(self) -> int:
        return len(self.channels)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.5
    epochs: int = 60
    batch_size: int = 256
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


@dataclass(frozen=True)
class ModelParams:
    weights: np.ndarray  # (feature_dim + 1, C) float32, bias row last
    spec: FeatureSpec = FeatureSpec()
    config: TrainConfig | None = None

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float32)
        if w.ndim != 2 or w.shape[0] != self.spec.feature_dim + 1:
            raise ValueError("weight matrix shape does not match feature spec")
        if not np.isfinite(w).all():
            raise ValueError("weights must be finite")
        object.__setattr__(self, "weights", w)

    @property
    def num_classes(self) -> int:
        return self.weights.shape[1]


def feature_matrix(image: np.ndarray, spec: FeatureSpec = FeatureSpec()) -> np.ndarray:
    """Per-pixel features in [0, 1], bias column of ones appended; (h*w, dim+1)."""
    img = np.asarray(image)
    if img.ndim != 3 or img.shape[2] != 3 or img.dtype != np.uint8:
        raise ValueError("expected an (h, w, 3) uint8 image")
    h, w, _ = img.shape
    rgb = img.astype(np.float64) / 255.0
    channels: dict[str, np.ndarray] = {
        "r": rgb[:, :, 0],
        "g": rgb[:, :, 1],
        "b": rgb[:, :, 2],
    }
    xs = np.arange(w, dtype=np.float64) / (w - 1) if w > 1 else np.zeros(w)
    ys = np.arange(h, dtype=np.float64) / (h - 1) if h > 1 else np.zeros(h)
    channels["x_norm"] = np.broadcast_to(xs[None, :], (h, w))
    channels["y_norm"] = np.broadcast_to(ys[:, None], (h, w))
    for name, idx in (("mean_r", 0), ("mean_g", 1), ("mean_b", 2)):
        if name in spec.channels:
            channels[name] = uniform_filter(rgb[:, :, idx], size=3, mode="nearest")
    cols = [channels[name].ravel() for name in spec.channels]
    cols.append(np.ones(h * w))
    return np.stack(cols, axis=1)


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def cross_entropy(
    weights: np.ndarray, features: np.ndarray, labels: np.ndarray, num_classes: int
) -> tuple[float, np.ndarray]:
    """Mean cross-entropy loss and its gradient w.r.t. the weight matrix."""
    n = features.shape[0]
    logits = features @ weights
    z = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(z).sum(axis=1))
    loss = float(np.mean(log_norm - z[np.arange(n), labels]))
    probs = softmax(logits)
    probs[np.arange(n), labels] -= 1.0
    grad = features.T @ probs / n
    return loss, grad


def _gather_features(
    dataset: SievedDataset, images: Mapping[int, np.ndarray], spec: FeatureSpec
) -> np.ndarray:
    rows = np.empty((len(dataset), spec.feature_dim + 1))
    for image_id in np.unique(dataset.image_ids):
        mask = dataset.image_ids == image_id
        feats = feature_matrix(images[int(image_id)], spec)
        rows[mask] = feats[dataset.pixel_indices[mask].astype(np.int64)]
    return rows


def train(
    dataset: SievedDataset,
    images: Mapping[int, np.ndarray],
    spec: FeatureSpec = FeatureSpec(),
    cfg: TrainConfig = TrainConfig(),
) -> ModelParams:
    """Minibatch SGD from a zero initialization; bit-reproducible per seed."""
    if len(dataset) == 0:
        raise ValueError("cannot train on an empty dataset")
    labels = dataset.class_ids.astype(np.int64)
    if np.unique(labels).size < 2:
        warnings.warn("training data contains a single class", SingleClassWarning)
    features = _gather_features(dataset, images, spec)
    n = features.shape[0]
    num_classes = dataset.num_classes
    weights = np.zeros((spec.feature_dim + 1, num_classes))
    rng = np.random.default_rng(cfg.seed)
    for _ in range(cfg.epochs):
        perm = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            batch = perm[start: start + cfg.batch_size]
            _, grad = cross_entropy(weights, features[batch], labels[batch], num_classes)
            weights -= cfg.learning_rate * grad
    return ModelParams(weights=weights.astype(np.float32), spec=spec, config=cfg)


def predict(model: ModelParams, image: np.ndarray) -> ProbMap:
    """Full-image class probabilities; rows sum to 1 up to float32 rounding."""
    h, w, _ = np.asarray(image).shape
    feats = feature_matrix(image, model.spec)
    probs = softmax(feats @ model.weights.astype(np.float64))
    planes = probs.T.reshape(model.num_classes, h, w).astype(np.float32)
    return ProbMap(width=w, height=h, num_classes=model.num_classes, planes=planes)


def save_model(model: ModelParams, path) -> None:
    with open(path, "wb") as fh:
        fh.write(MLP_MAGIC)
        fh.write(struct.pack("<II", model.spec.feature_dim, model.num_classes))
        fh.write(model.weights.astype("<f4").tobytes(order="C"))


def load_model(model_path, spec: FeatureSpec = FeatureSpec()) -> ModelParams:
    with open(model_path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != MLP_MAGIC:
        raise RasterError(f"{model_path}: bad magic {blob[:4]!r}")
    feature_dim, num_classes = struct.unpack_from("<II", blob, 4)
    if feature_dim != spec.feature_dim:
        raise RasterError(
            f"{model_path}: stores {feature_dim} features, spec has {spec.feature_dim}"
        )
    body = blob[12:]
    expected = (feature_dim + 1) * num_classes * 4
    if len(body) != expected:
        raise RasterError(f"{model_path}: expected {expected} weight bytes, found {len(body)}")
    weights = np.frombuffer(body, dtype="<f4").reshape(feature_dim + 1, num_classes).copy()
    return ModelParams(weights=weights, spec=spec)
