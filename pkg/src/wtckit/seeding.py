"""Named random streams derived from one master seed.

Every consumer of randomness (data sampling, reparameterization noise,
permutations, gradient-penalty interpolation, initialization, evaluation)
pulls from its own stream, so changing one consumer never perturbs the
draws seen by another. Two runs that share a master seed see bit-identical
streams for every name they both use.
"""

import numpy as np

_STREAM_KEYS = {
    "init_encoder": 0,
    "init_decoder": 1,
    "init_critic_f": 2,
    "init_critic_g": 3,
    "data": 4,
    "reparam": 5,
    "permute": 6,
    "gp": 7,
    "prior": 8,
    "eval": 9,
}


def stream_rng(seed, name):
    """A fresh Generator for the named stream of this master seed."""
    try:
        key = _STREAM_KEYS[name]
    except KeyError:
        raise ValueError(f"unknown stream name '{name}'") from None
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(key,)))


def stream_names():
    return tuple(_STREAM_KEYS)
