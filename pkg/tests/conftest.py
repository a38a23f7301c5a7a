import numpy as np
import pytest

from cfmsa import CParams, assemble


@pytest.fixture
def rng():
    return np.random.default_rng(42)


def random_bundle(rng, num_classes=3, c=None, scale=2.0):
    """A score bundle over random branch logits (and random c by default)."""
    if c is None:
        c = CParams(
            mode="nonuniform",
            num_classes=num_classes,
            theta=rng.standard_normal((4, num_classes)),
            learnable=True,
        )
    z_t = scale * rng.standard_normal(num_classes)
    z_i = scale * rng.standard_normal(num_classes)
    z_k = scale * rng.standard_normal(num_classes)
    return assemble(z_t, z_i, z_k, c)
