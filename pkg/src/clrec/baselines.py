"""Non-learned baseline: global item popularity.

Counts come from the training split only, so the held-out validation and
test items never leak into the scores. Every user receives the identical
score vector; ranking quality then reflects raw popularity alone. The
trained-model ablation modes are trainer configurations, not separate
implementations, so they are not duplicated here.
"""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np

from .corpus import SplitDataset


@dataclass
class PopModel:
    """Per-item training interaction counts; column j scores item j + 1."""

    counts: np.ndarray

    def score_items(self, users: Sequence[int]) -> np.ndarray:
        return np.tile(self.counts.astype(np.float64), (len(users), 1))


def pop_fit(split: SplitDataset) -> PopModel:
    counts = np.zeros(split.num_items, dtype=np.int64)
    for items in split.train.values():
        for item in items:
            counts[item - 1] += 1
    return PopModel(counts=counts)
