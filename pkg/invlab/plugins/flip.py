"""
Random horizontal flips: every image of the batch is mirrored with
probability 0.5, generator-designated positions included.
"""
import numpy as np

from invlab.git import Batch
from invlab.plugins import Contract, plugin

FLIP_PROBABILITY = 0.5


@plugin(Contract.OnBatch)
def flip(batch: Batch, rng: np.random.Generator) -> Batch:
    mirrored = rng.random(len(batch)) < FLIP_PROBABILITY
    if not mirrored.any():
        return batch
    images = np.array(batch.images, copy=True)
    images[mirrored] = images[mirrored, :, ::-1]
    return batch.replace(images=images)
