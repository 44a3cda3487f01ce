import pathlib
import sys

import numpy as np
import pytest

sys.path.insert(0, str(pathlib.Path(__file__).resolve().parent.parent / "src"))

from skillmix import data
from skillmix.transformer import ModelConfig

# Small-but-real dimensions used across the unit tests; acceptance uses the
# desk preset instead.
TINY = ModelConfig(d=16, d_model=16, heads=2, head_depth=4, filter_size=32,
                   max_segments=8)


@pytest.fixture(scope="session")
def small_corpus():
    return data.generate_synthetic_corpus(7, (48, 12, 12))


@pytest.fixture(scope="session")
def small_setup(small_corpus):
    vocab = data.Vocabulary.build(small_corpus.train)
    return {
        "corpus": small_corpus,
        "vocab": vocab,
        "tags": small_corpus.schema.type_tags,
        "skills": small_corpus.schema.skills,
    }


def fd_gradients(build_loss, tensors, step=1e-5):
    """Max relative error between analytic and central-difference gradients."""
    from skillmix import autodiff as ad

    loss = build_loss()
    ad.backward(loss)
    analytic = [t.grad.copy() if t.grad is not None else np.zeros_like(t.data)
                for t in tensors]
    for t in tensors:
        t.grad = None
    worst = 0.0
    for t, an in zip(tensors, analytic):
        flat = t.data.reshape(-1)
        an_flat = an.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            up = build_loss().item()
            flat[i] = orig - step
            down = build_loss().item()
            flat[i] = orig
            numeric = (up - down) / (2 * step)
            denom = max(abs(an_flat[i]), abs(numeric), 1e-4)
            worst = max(worst, abs(an_flat[i] - numeric) / denom)
    return worst
