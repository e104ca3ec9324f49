"""Reservoir-sampled replay memory.

Classic single-pass reservoir (algorithm R): the first ``capacity`` offers
fill the slots without consuming randomness; offer number ``n`` thereafter
replaces a uniformly random slot with probability ``capacity / n``, so at
any point every offered item is stored with equal probability.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError, StateError
from .model import Dataset, LabeledBatch, Sample, as_batch


class ReservoirBuffer:
    """Bounded uniform sample of everything offered so far.

    Single-writer: offers and draws share one seeded generator, so a fixed
    seed plus a fixed offer/draw sequence reproduces the buffer exactly.
    """

    def __init__(self, capacity: int, rng: np.random.Generator | int):
        if capacity < 1:
            raise ConfigError(f"capacity must be >= 1, got {capacity}")
        self.capacity = capacity
        self.items: list[Sample] = []
        self.seen = 0
        self.rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)

    def __len__(self) -> int:
        return len(self.items)

    def update(self, task_data: Dataset) -> None:
        """Offer items one by one; an empty offering is a no-op."""
        if not isinstance(task_data, LabeledBatch) and not list(task_data):
            return
        for sample in as_batch(task_data):
            self.seen += 1
            if len(self.items) < self.capacity:
                self.items.append(sample)
            else:
                j = int(self.rng.integers(0, self.seen))
                if j < self.capacity:
                    self.items[j] = sample

    def sample_batch(self, b: int) -> LabeledBatch:
        """Uniform draw of ``b`` items with replacement."""
        if b < 1:
            raise ValueError(f"batch size must be >= 1, got {b}")
        if not self.items:
            raise StateError("cannot sample from an empty buffer")
        idx = self.rng.integers(0, len(self.items), size=b)
        return LabeledBatch.from_samples([self.items[i] for i in idx])

    def snapshot(self) -> list[Sample]:
        """Copy of the current contents, length min(seen, capacity)."""
        return list(self.items)

    def as_batch(self) -> LabeledBatch:
        """Entire contents as one batch (exhaustive-mode replay term)."""
        if not self.items:
            raise StateError("buffer is empty")
        return LabeledBatch.from_samples(self.items)
