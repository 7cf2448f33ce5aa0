"""Seed derivation for reproducible, order-independent Monte Carlo runs.

Every run gets four independent generators derived from
``(master_seed, sample_id, stream_id)`` so that parallel workers produce
the same draws no matter which process picks up which sample.
"""

from dataclasses import dataclass

import numpy as np

SWAP = 1
DISSEMINATION = 2
NOISE = 3
INIT = 4


def derive_rng(master_seed, sample_id, stream_id):
    seq = np.random.SeedSequence(entropy=int(master_seed), spawn_key=(int(sample_id), int(stream_id)))
    return np.random.default_rng(seq)


@dataclass
class RunStreams:
    swap: np.random.Generator
    dissemination: np.random.Generator
    noise: np.random.Generator
    init: np.random.Generator

    @classmethod
    def from_seed(cls, master_seed, sample_id=0):
        return cls(
            swap=derive_rng(master_seed, sample_id, SWAP),
            dissemination=derive_rng(master_seed, sample_id, DISSEMINATION),
            noise=derive_rng(master_seed, sample_id, NOISE),
            init=derive_rng(master_seed, sample_id, INIT),
        )
