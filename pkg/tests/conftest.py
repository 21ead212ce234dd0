import numpy as np
import pytest

from savi_alloc.model import GopModel, ModelSpec


def rel_err(a, b):
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300))


def make_model(n=3, d=2, m=3, seed=0, graph=None, **kw):
    spec = ModelSpec.random(frame_count=n, latent_dim=d, pixel_count=m, seed=seed, **kw)
    return GopModel(spec, graph=graph)


@pytest.fixture
def chain_model():
    return make_model()
