import numpy as np
import pytest

from dualdiff.config import make_config
from dualdiff.data import CLASSES, SyntheticSpec, make_caption, render_shape
from dualdiff.encoders import tokenize


def tiny_config(**overrides):
    """Small-but-real config for fast training/inference tests."""
    base = dict(
        base_channels=8, time_dim=32, text_dim=32, batch_size=8,
        max_steps=5, warmup_steps=2, checkpoint_every=0,
        train_size=24, val_size=12, test_size=12,
        logit_scale=10.0, timesteps=20, sample_steps=4, eval_steps=4,
    )
    base.update(overrides)
    return make_config(**base)


def toy_batch(rng, n):
    """n rendered (image, token_ids) pairs cycling through the 12 classes."""
    spec = SyntheticSpec()
    imgs, ids, class_ids, captions = [], [], [], []
    for i in range(n):
        color, shape = CLASSES[i % len(CLASSES)]
        imgs.append(render_shape(rng, color, shape, spec))
        cap = make_caption(rng, color, shape, spec)
        captions.append(cap)
        ids.append(tokenize(cap))
        class_ids.append(i % len(CLASSES))
    return (np.stack(imgs), np.array(ids, dtype=np.int64),
            np.array(class_ids, dtype=np.int64), captions)


@pytest.fixture
def rng():
    return np.random.default_rng(0)
