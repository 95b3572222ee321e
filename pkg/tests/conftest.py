import numpy as np
import pytest

from segal.raster import LabelMap, ProbMap
from segal.synthetic import ShapesConfig, in_memory_shapes


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_shapes():
    """Six 48x48 training pairs and two validation pairs, four classes."""
    cfg = ShapesConfig(num_train=6, num_val=2, size=48, seed=7)
    train, val = in_memory_shapes(cfg)
    return cfg, train, val


def as_label_map(labels: np.ndarray, num_classes: int, ignore_id: int = 255) -> LabelMap:
    h, w = labels.shape
    return LabelMap(
        width=w, height=h, data=labels, ignore_id=ignore_id, num_classes=num_classes
    )


def random_prob_map(rng: np.random.Generator, h: int, w: int, c: int) -> ProbMap:
    raw = rng.random((c, h, w)) + 1e-6
    planes = (raw / raw.sum(axis=0)).astype(np.float32)
    return ProbMap(width=w, height=h, num_classes=c, planes=planes)
