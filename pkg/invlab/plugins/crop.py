"""
Random crops after zero padding of 4 pixels, on the positions of the batch
that are not designated for generative augmentation.
"""
import numpy as np

from invlab.git import Batch
from invlab.plugins import Contract, plugin

PADDING = 4


@plugin(Contract.OnBatch)
def crop(batch: Batch, rng: np.random.Generator) -> Batch:
    others = batch.images[batch.other_slots]
    if len(others) == 0:
        return batch
    n, h, w, _ = others.shape
    padded = np.pad(others, ((0, 0), (PADDING, PADDING), (PADDING, PADDING), (0, 0)))
    tops = rng.integers(0, 2 * PADDING + 1, n)
    lefts = rng.integers(0, 2 * PADDING + 1, n)
    images = np.array(batch.images, copy=True)
    for i, (top, left) in enumerate(zip(tops, lefts)):
        images[batch.git_slots + i] = padded[i, top : top + h, left : left + w]
    return batch.replace(images=images)
