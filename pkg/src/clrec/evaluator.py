"""Full-catalog ranking metrics under leave-one-out, plus a similarity report.

Every catalog item is scored for every evaluated user (no candidate
sampling). Items the user touched in earlier phases are removed from the
candidate set; the target always stays. Ties count against the target, so
a reported rank can only be pessimistic, and repeated evaluations of the
same model give the same numbers.

Scorers are anything with ``score_items(users) -> (len(users), num_items)``
returning scores whose column j belongs to dense item id j + 1. The
trained encoder and the popularity baseline both fit this shape, so they
share one evaluation path.
"""

from __future__ import annotations

import json
import math
from collections.abc import Mapping, Sequence
from dataclasses import dataclass
from typing import Protocol

import numpy as np
import torch

from .corpus import SplitDataset, make_window

DEFAULT_KS = (5, 10, 20)
SIM_BIN_WIDTH = 0.05
SIM_BIN_COUNT = 40  # covers [-1, 1]; the top bin includes cosine exactly 1


class Scorer(Protocol):
    def score_items(self, users: Sequence[int]) -> np.ndarray: ...


@dataclass
class EvalReport:
    """Aggregated ranking metrics for one model on one split phase."""

    phase: str
    ks: tuple[int, ...]
    hr: dict[int, float]
    ndcg: dict[int, float]
    ranks: np.ndarray
    user_count: int
    fingerprint: str = ""

    def to_json(self) -> str:
        payload = {
            "phase": self.phase,
            "users": self.user_count,
            "hr": {str(k): self.hr[k] for k in self.ks},
            "ndcg": {str(k): self.ndcg[k] for k in self.ks},
            "fingerprint": self.fingerprint,
        }
        return json.dumps(payload, indent=2, sort_keys=True) + "\n"

    @staticmethod
    def csv_header(ks: Sequence[int] = DEFAULT_KS) -> str:
        metrics = [f"HR@{k}" for k in ks] + [f"NDCG@{k}" for k in ks]
        return ",".join(["label", *metrics])

    def csv_row(self, label: str) -> str:
        cells = [f"{self.hr[k]:.6f}" for k in self.ks] + [f"{self.ndcg[k]:.6f}" for k in self.ks]
        return ",".join([label, *cells])


def hr_at_k(rank: int, k: int) -> float:
    """1 if the target made the top k, else 0."""
    if rank < 1:
        raise ValueError(f"rank must be positive, got {rank}")
    return 1.0 if rank <= k else 0.0


def ndcg_at_k(rank: int, k: int) -> float:
    """Position-discounted credit 1/log2(rank + 1) inside the top k, else 0."""
    if rank < 1:
        raise ValueError(f"rank must be positive, got {rank}")
    if rank > k:
        return 0.0
    return 1.0 / math.log2(rank + 1.0)


def rank_targets(scores: np.ndarray, targets: np.ndarray, excluded: Sequence[set[int]]) -> np.ndarray:
    """Pessimistic rank of each row's target among its candidate items.

    ``scores`` columns map to dense item id column + 1. ``excluded`` items
    leave the candidate set entirely (the target is kept even if listed).
    The rank counts every candidate scoring at or above the target, target
    included, so equal scores push the target down.
    """
    scores = np.asarray(scores, dtype=np.float64)
    rows, num_items = scores.shape
    targets = np.asarray(targets, dtype=np.int64)
    if targets.shape[0] != rows or len(excluded) != rows:
        raise ValueError("scores, targets, and exclusion lists must agree on row count")
    if np.any((targets < 1) | (targets > num_items)):
        raise ValueError("target id outside the catalog")
    masked = scores.copy()
    for row, items in enumerate(excluded):
        for item in items:
            if item != targets[row] and 1 <= item <= num_items:
                masked[row, item - 1] = -np.inf
    target_scores = masked[np.arange(rows), targets - 1]
    return (masked >= target_scores[:, None]).sum(axis=1).astype(np.int64)


def evaluate(
    scorer: Scorer,
    split: SplitDataset,
    phase: str,
    ks: Sequence[int] = DEFAULT_KS,
    filter_seen: bool = True,
    fingerprint: str = "",
    batch_size: int = 512,
) -> EvalReport:
    """Rank every user's held-out item and average HR@k and NDCG@k."""
    if phase not in ("valid", "test"):
        raise ValueError(f"phase must be 'valid' or 'test', got {phase!r}")
    ks = tuple(sorted(ks))
    held_out = split.valid if phase == "valid" else split.test
    all_ranks: list[np.ndarray] = []
    for start in range(0, len(split.users), batch_size):
        users = split.users[start:start + batch_size]
        scores = scorer.score_items(users)
        targets = np.array([held_out[u] for u in users], dtype=np.int64)
        excluded: list[set[int]] = []
        for u in users:
            if not filter_seen:
                excluded.append(set())
            elif phase == "valid":
                excluded.append(set(split.train[u]))
            else:
                excluded.append(set(split.train[u]) | {split.valid[u]})
        all_ranks.append(rank_targets(scores, targets, excluded))
    ranks = np.concatenate(all_ranks) if all_ranks else np.zeros(0, dtype=np.int64)
    hr = {k: float(np.mean([hr_at_k(int(r), k) for r in ranks])) for k in ks}
    ndcg = {k: float(np.mean([ndcg_at_k(int(r), k) for r in ranks])) for k in ks}
    return EvalReport(
        phase=phase,
        ks=ks,
        hr=hr,
        ndcg=ndcg,
        ranks=ranks,
        user_count=len(ranks),
        fingerprint=fingerprint,
    )


class ModelScorer:
    """Scores the whole catalog from the encoder's last-slot states.

    The input sequence per user depends on the phase: validation ranks from
    the training prefix, test additionally appends the validation item.
    """

    def __init__(self, model, split: SplitDataset, phase: str):
        if phase not in ("valid", "test"):
            raise ValueError(f"phase must be 'valid' or 'test', got {phase!r}")
        self.model = model
        self.split = split
        self.phase = phase

    def score_items(self, users: Sequence[int]) -> np.ndarray:
        window = self.model.hyper.window
        rows = []
        for u in users:
            items = self.split.train[u]
            if self.phase == "test":
                items = items + [self.split.valid[u]]
            rows.append(make_window(items, window).ids)
        ids = torch.from_numpy(np.stack(rows))
        with torch.no_grad():
            states = self.model.last_state(ids)
            catalog = self.model.item_embedding.weight[1:self.split.num_items + 1]
            scores = states @ catalog.T
        return scores.numpy().astype(np.float64)


def cosine(u: np.ndarray, v: np.ndarray) -> float:
    """Cosine similarity; zero-norm inputs report 0 rather than dividing by 0."""
    norm = float(np.linalg.norm(u) * np.linalg.norm(v))
    if norm == 0.0:
        return 0.0
    return float(np.dot(u, v) / norm)


@dataclass
class SimilarityReport:
    """Mean cosine and a fixed-width histogram over user pairs."""

    mean: float | None
    bin_counts: np.ndarray
    pairs_used: int
    pairs_skipped: int

    @staticmethod
    def bin_left_edges() -> np.ndarray:
        return -1.0 + SIM_BIN_WIDTH * np.arange(SIM_BIN_COUNT)

    def to_csv(self) -> str:
        lines = ["bin_left,bin_right,count"]
        for left, count in zip(self.bin_left_edges(), self.bin_counts):
            lines.append(f"{left:.2f},{left + SIM_BIN_WIDTH:.2f},{int(count)}")
        mean_cell = "undefined" if self.mean is None else f"{self.mean:.6f}"
        lines.append(f"mean,,{mean_cell}")
        return "\n".join(lines) + "\n"


def cosine_similarity_report(
    vectors: Mapping[int, np.ndarray], pairs: Sequence[tuple[int, int]]
) -> SimilarityReport:
    """Cosine of each pair's representations, binned at width 0.05 over [-1, 1].

    Pairs naming a user without a representation are skipped and counted.
    The top bin is closed on the right so identical vectors (cosine 1) land
    in it. An empty usable-pair list reports an undefined mean.
    """
    counts = np.zeros(SIM_BIN_COUNT, dtype=np.int64)
    values = []
    skipped = 0
    for a, b in pairs:
        if a not in vectors or b not in vectors:
            skipped += 1
            continue
        value = cosine(np.asarray(vectors[a]), np.asarray(vectors[b]))
        value = min(max(value, -1.0), 1.0)
        values.append(value)
        index = min(int((value + 1.0) / SIM_BIN_WIDTH), SIM_BIN_COUNT - 1)
        counts[index] += 1
    mean = float(np.mean(values)) if values else None
    return SimilarityReport(mean=mean, bin_counts=counts, pairs_used=len(values), pairs_skipped=skipped)
