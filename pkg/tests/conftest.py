import numpy as np
import pytest

from errexplain.features import MaskedInput
from errexplain.model import EOS, ModelDims, init_params


def small_dims(variant: bool = False, vocab: int = 9) -> ModelDims:
    return ModelDims(
        n_entities=5,
        n_objects=3,
        vocab_size=vocab,
        entity_embed=3,
        encoder_hidden=4,
        n_raw=3,
        object_embed=2,
        word_embed=3,
        attention_dim=3,
        attend_to_init=variant,
    )


def random_instance(seed: int, variant: bool = False):
    """A small random model plus one random (input, target) pair."""
    rng = np.random.default_rng(seed)
    dims = small_dims(variant)
    params = init_params(dims, np.random.SeedSequence(seed), scale=0.4)
    n = int(rng.integers(1, 4))
    m = int(rng.integers(1, 6))
    mask = rng.random(dims.n_raw) > 0.3
    values = np.where(mask, rng.normal(size=dims.n_raw), 0.0)
    inputs = MaskedInput(
        n_values=values,
        n_mask=mask,
        x_ids=rng.integers(0, dims.n_entities, size=n),
        o_id=int(rng.integers(0, dims.n_objects)),
    )
    targets = np.append(rng.integers(3, dims.vocab_size, size=m), EOS)
    return params, inputs, targets


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
