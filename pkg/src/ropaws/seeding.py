"""Named random sub-streams derived from one master seed."""
import numpy as np

STREAMS = ("data", "init", "batching", "augmentation", "eval")


def rng_stream(seed, name):
    """Independent generator for one named use of the master seed."""
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(STREAMS.index(name),)))
