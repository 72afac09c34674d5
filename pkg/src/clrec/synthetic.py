"""Synthetic interaction generators with known structure.

Two generators cover different needs:

``successor_chain_rows`` arranges the catalog in one global cyclic chain
and gives every user a contiguous walk along it. The best possible next
item after any prefix is exactly the successor of the newest item, so
tests can check that training actually learns the transition structure.

``clustered_rows`` is the documented desk-scale generator: each user
favors one interest cluster, drawing popular items inside it with noise
draws from the whole catalog mixed in. Sequences are short and noisy on
purpose, which is the regime where sequence augmentation and the
contrastive task have room to help. Items within a user never repeat, so
the corpus dedup step keeps every row.

Both emit raw (user, item, rating, timestamp) tuples that flow through the
normal ingestion pipeline, not pre-built tensors.
"""

from __future__ import annotations

import numpy as np

from .corpus import (
    SplitDataset,
    build_sequences,
    five_core_filter,
    ingest,
    leave_one_out_split,
)

Row = tuple[str, str, int, int]


def successor_chain_rows(
    num_users: int = 200,
    catalog: int = 20,
    length: int = 10,
    seed: int = 0,
) -> list[Row]:
    """Walks along a fixed item cycle: after item i always comes i + 1."""
    if length > catalog:
        raise ValueError("walk length cannot exceed the catalog in a cycle without repeats")
    rng = np.random.default_rng(seed)
    rows: list[Row] = []
    for user in range(num_users):
        start = int(rng.integers(0, catalog))
        for step in range(length):
            item = (start + step) % catalog
            rows.append((f"u{user}", f"i{item}", 1, step))
    return rows


def clustered_rows(
    num_users: int = 2000,
    num_clusters: int = 20,
    items_per_cluster: int = 50,
    min_length: int = 8,
    max_length: int = 20,
    in_cluster_prob: float = 0.8,
    popularity_tilt: float = 1.0,
    interests_per_user: int = 1,
    interest_stickiness: float = 0.0,
    seed: int = 0,
) -> list[Row]:
    """Cluster-structured noisy histories for desk-scale experiments.

    Each user samples ``interests_per_user`` distinct clusters, then a
    sequence whose steps mostly pick items from one of those clusters
    under a rank-based popularity tilt; the rest of the steps pick
    uniformly from the whole catalog. No item repeats within a user.

    ``interest_stickiness`` is the probability that a step keeps the
    previous step's cluster instead of redrawing one uniformly from the
    user's interests. At 0 the interests interleave freely; near 1 the
    history becomes runs of one interest with occasional switches, so the
    recent items carry the current interest while the switch destinations
    are still user-specific.

    With more than one interest per user the cluster combination is close
    to unique per user, so good recommendations need a summary of this
    particular history rather than a single shared cluster label.
    """
    if not 0.0 <= in_cluster_prob <= 1.0:
        raise ValueError("in_cluster_prob must lie in [0, 1]")
    if not 0.0 <= interest_stickiness <= 1.0:
        raise ValueError("interest_stickiness must lie in [0, 1]")
    if min_length < 1 or max_length < min_length:
        raise ValueError("need 1 <= min_length <= max_length")
    if not 1 <= interests_per_user <= num_clusters:
        raise ValueError("interests_per_user must lie in [1, num_clusters]")
    catalog = num_clusters * items_per_cluster
    if max_length > interests_per_user * items_per_cluster:
        raise ValueError("max_length cannot exceed the per-user item pool without exhausting it")
    rng = np.random.default_rng(seed)
    ranks = np.arange(items_per_cluster, dtype=np.float64)
    weights = 1.0 / (ranks + 1.0) ** popularity_tilt
    weights /= weights.sum()
    rows: list[Row] = []
    for user in range(num_users):
        clusters = rng.choice(num_clusters, size=interests_per_user, replace=False)
        length = int(rng.integers(min_length, max_length + 1))
        chosen: set[int] = set()
        current = int(clusters[int(rng.integers(0, interests_per_user))])
        step = 0
        while len(chosen) < length:
            if rng.random() < in_cluster_prob:
                if rng.random() >= interest_stickiness:
                    current = int(clusters[int(rng.integers(0, interests_per_user))])
                item = current * items_per_cluster + int(rng.choice(items_per_cluster, p=weights))
            else:
                item = int(rng.integers(0, catalog))
            if item in chosen:
                continue
            chosen.add(item)
            rows.append((f"u{user}", f"i{item}", 1, step))
            step += 1
    return rows


def write_raw(path: str, rows: list[Row]) -> None:
    """Whitespace-delimited raw log file, one interaction per line."""
    with open(path, "w", encoding="utf-8") as fh:
        for user, item, rating, timestamp in rows:
            fh.write(f"{user} {item} {rating} {timestamp}\n")


def rows_to_split(rows: list[Row], min_count: int = 5) -> tuple[SplitDataset, dict[str, int]]:
    """Run rows through the full preprocessing pipeline to a split dataset.

    Returns the split plus the user index so tests can reach externals.
    """
    log = five_core_filter(ingest(rows), min_count=min_count)
    sequences = build_sequences(log)
    split = leave_one_out_split(sequences, log.num_items)
    return split, log.user_index
