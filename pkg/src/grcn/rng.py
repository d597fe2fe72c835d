"""Independent, reproducible random streams derived from one seed.

Each named stream is a Philox (counter-based) generator keyed by the run
seed and a fixed per-stream spawn key, so streams never overlap and adding a
consumer to one stream does not shift another.
"""
import numpy as np

STREAMS = {"init": 0, "split": 1, "sample": 2, "synth": 3}


def stream(seed, name):
    key = STREAMS[name]
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(key,))
    return np.random.Generator(np.random.Philox(ss))
