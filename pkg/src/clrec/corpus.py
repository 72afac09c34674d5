"""Raw interaction logs to model-ready sequence datasets.

Ingestion binarizes (user, item, rating-or-review, timestamp) records,
drops per-user duplicate items keeping the earliest one, applies iterative
5-core filtering, and orders each user's items chronologically. Splits are
leave-one-out: last item held out for test, second-to-last for validation,
the rest for training. Windows are left-padded with id 0 so the newest item
always sits in the final slot.

Dense ids are contiguous and 1-based; id 0 is reserved for padding and the
id one past the catalog is reserved for the mask token used by augmentation.
"""

from __future__ import annotations

import json
import logging
import os
import shutil
import tempfile
from collections import Counter
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field

import numpy as np

logger = logging.getLogger(__name__)

PAD_ID = 0
MIN_CORE = 5
MIN_SPLIT_LENGTH = 3


@dataclass(frozen=True)
class Interaction:
    """One binarized log record: who touched what, and when."""

    user: str
    item: str
    timestamp: float


@dataclass
class InteractionLog:
    """Deduplicated interactions plus external-to-dense id maps.

    ``interactions`` keeps the surviving records in original input order;
    chronological sorting happens later in :func:`build_sequences` so that
    equal timestamps preserve input order via a stable sort.
    """

    interactions: list[Interaction]
    user_index: dict[str, int]
    item_index: dict[str, int]
    skipped_records: int = 0
    duplicates_removed: int = 0

    @property
    def num_users(self) -> int:
        return len(self.user_index)

    @property
    def num_items(self) -> int:
        return len(self.item_index)


@dataclass(frozen=True)
class UserSequence:
    """A user's items in chronological order, as dense ids."""

    user: int
    items: tuple[int, ...]


@dataclass
class SplitDataset:
    """Leave-one-out split over all users with at least 3 interactions."""

    users: list[int]
    train: dict[int, list[int]]
    valid: dict[int, int]
    test: dict[int, int]
    num_items: int
    excluded_users: int = 0

    def full_sequence(self, user: int) -> list[int]:
        """Train items followed by the held-out validation and test items."""
        return self.train[user] + [self.valid[user], self.test[user]]

    def seen_items(self, user: int) -> set[int]:
        return set(self.full_sequence(user))


@dataclass(frozen=True)
class PaddedWindow:
    """Fixed-length view of a sequence tail, left-padded with ``PAD_ID``."""

    ids: np.ndarray
    true_length: int


@dataclass
class ProcessedDataset:
    """What a preprocessed dataset directory holds once loaded back."""

    user_index: dict[str, int]
    item_index: dict[str, int]
    sequences: list[UserSequence]
    stats: dict = field(default_factory=dict)

    @property
    def num_items(self) -> int:
        return len(self.item_index)


def ingest(records: Iterable[Sequence]) -> InteractionLog:
    """Binarize a stream of (user, item, rating-or-review, timestamp) records.

    Ratings and review text are discarded. Per user, duplicate items keep
    only the earliest occurrence (ties by input order). Malformed records
    are skipped and counted. Raises ``ValueError`` if nothing valid remains.
    """
    per_user: dict[str, list[tuple[float, int, str]]] = {}
    skipped = 0
    position = 0
    for record in records:
        position += 1
        try:
            user, item, _rating, raw_ts = record
            user = str(user)
            item = str(item)
            timestamp = float(raw_ts)
        except (ValueError, TypeError):
            skipped += 1
            continue
        if not user or not item:
            skipped += 1
            continue
        per_user.setdefault(user, []).append((timestamp, position, item))
    if not per_user:
        raise ValueError("no valid interaction records in input")

    interactions: list[tuple[int, Interaction]] = []
    duplicates = 0
    for user, rows in per_user.items():
        seen: set[str] = set()
        for timestamp, position, item in sorted(rows, key=lambda r: (r[0], r[1])):
            if item in seen:
                duplicates += 1
                continue
            seen.add(item)
            interactions.append((position, Interaction(user, item, timestamp)))
    interactions.sort(key=lambda pair: pair[0])
    ordered = [interaction for _, interaction in interactions]

    log = InteractionLog(
        interactions=ordered,
        user_index=_index_by_first_appearance(i.user for i in ordered),
        item_index=_index_by_first_appearance(i.item for i in ordered),
        skipped_records=skipped,
        duplicates_removed=duplicates,
    )
    if skipped:
        logger.warning("skipped %d malformed records", skipped)
    logger.info(
        "ingested %d interactions (%d users, %d items, %d duplicates dropped)",
        len(ordered), log.num_users, log.num_items, duplicates,
    )
    return log


def five_core_filter(log: InteractionLog, min_count: int = MIN_CORE) -> InteractionLog:
    """Iteratively drop users and items with fewer than ``min_count`` interactions.

    Alternates user and item removal until a fixed point, then rebuilds the
    dense id maps over the survivors. Raises ``ValueError`` if the fixed
    point is empty.
    """
    rows = list(log.interactions)
    while True:
        user_counts = Counter(r.user for r in rows)
        after_users = [r for r in rows if user_counts[r.user] >= min_count]
        item_counts = Counter(r.item for r in after_users)
        after_items = [r for r in after_users if item_counts[r.item] >= min_count]
        at_fixed_point = len(after_items) == len(rows)
        rows = after_items
        if at_fixed_point or not rows:
            break
    if not rows:
        raise ValueError(f"{min_count}-core filtering removed every interaction")
    return InteractionLog(
        interactions=rows,
        user_index=_index_by_first_appearance(r.user for r in rows),
        item_index=_index_by_first_appearance(r.item for r in rows),
        skipped_records=log.skipped_records,
        duplicates_removed=log.duplicates_removed,
    )


def build_sequences(log: InteractionLog) -> list[UserSequence]:
    """Chronological dense-id item list per user, ordered by dense user id.

    Sorting is stable, so records sharing a timestamp keep their original
    input order.
    """
    grouped: dict[int, list[Interaction]] = {dense: [] for dense in log.user_index.values()}
    for row in log.interactions:
        grouped[log.user_index[row.user]].append(row)
    sequences = []
    for dense_user in sorted(grouped):
        rows = sorted(grouped[dense_user], key=lambda r: r.timestamp)
        items = tuple(log.item_index[r.item] for r in rows)
        sequences.append(UserSequence(user=dense_user, items=items))
    return sequences


def leave_one_out_split(sequences: Sequence[UserSequence], num_items: int) -> SplitDataset:
    """Hold out each user's last item for test and second-to-last for validation.

    Users with fewer than 3 interactions cannot fill all three phases; they
    are excluded and counted.
    """
    users: list[int] = []
    train: dict[int, list[int]] = {}
    valid: dict[int, int] = {}
    test: dict[int, int] = {}
    excluded = 0
    for seq in sequences:
        if len(seq.items) < MIN_SPLIT_LENGTH:
            excluded += 1
            continue
        users.append(seq.user)
        train[seq.user] = list(seq.items[:-2])
        valid[seq.user] = seq.items[-2]
        test[seq.user] = seq.items[-1]
    if excluded:
        logger.warning("excluded %d users with fewer than %d interactions", excluded, MIN_SPLIT_LENGTH)
    if not users:
        raise ValueError("no users left after the leave-one-out split")
    return SplitDataset(
        users=users,
        train=train,
        valid=valid,
        test=test,
        num_items=num_items,
        excluded_users=excluded,
    )


def make_window(items: Sequence[int], length: int) -> PaddedWindow:
    """Keep the most recent ``length`` items, left-padding short sequences.

    The newest item always occupies the final slot.
    """
    if length < 1:
        raise ValueError(f"window length must be >= 1, got {length}")
    if len(items) == 0:
        raise ValueError("cannot window an empty item sequence")
    tail = list(items[-length:])
    ids = np.zeros(length, dtype=np.int64)
    ids[length - len(tail):] = tail
    return PaddedWindow(ids=ids, true_length=len(tail))


def compute_stats(sequences: Sequence[UserSequence], num_items: int) -> dict:
    """Corpus summary after preprocessing: sizes, average length, density."""
    num_users = len(sequences)
    actions = sum(len(s.items) for s in sequences)
    return {
        "users": num_users,
        "items": num_items,
        "actions": actions,
        "avg_length": actions / num_users if num_users else 0.0,
        "density": actions / (num_users * num_items) if num_users and num_items else 0.0,
    }


def save_dataset(out_dir: str, log: InteractionLog, sequences: Sequence[UserSequence]) -> None:
    """Write index maps, per-user sequences, and stats to a dataset directory.

    The directory is assembled in a temporary sibling and swapped into place
    so an interrupted run leaves no partial output at the final path.
    """
    parent = os.path.dirname(os.path.abspath(out_dir)) or "."
    os.makedirs(parent, exist_ok=True)
    tmp_dir = tempfile.mkdtemp(prefix=".tmp-dataset-", dir=parent)
    try:
        _write_index(os.path.join(tmp_dir, "user_index.txt"), log.user_index)
        _write_index(os.path.join(tmp_dir, "item_index.txt"), log.item_index)
        with open(os.path.join(tmp_dir, "sequences.txt"), "w", encoding="utf-8") as fh:
            for seq in sequences:
                fh.write(" ".join([str(seq.user), *map(str, seq.items)]) + "\n")
        stats = compute_stats(sequences, log.num_items)
        with open(os.path.join(tmp_dir, "stats.json"), "w", encoding="utf-8") as fh:
            json.dump(stats, fh, indent=2, sort_keys=True)
            fh.write("\n")
        if os.path.isdir(out_dir):
            shutil.rmtree(out_dir)
        os.replace(tmp_dir, out_dir)
    except Exception:
        shutil.rmtree(tmp_dir, ignore_errors=True)
        raise


def load_dataset(data_dir: str) -> ProcessedDataset:
    """Read a dataset directory written by :func:`save_dataset`."""
    user_index = _read_index(os.path.join(data_dir, "user_index.txt"))
    item_index = _read_index(os.path.join(data_dir, "item_index.txt"))
    sequences = []
    with open(os.path.join(data_dir, "sequences.txt"), encoding="utf-8") as fh:
        for line in fh:
            parts = line.split()
            if not parts:
                continue
            sequences.append(UserSequence(user=int(parts[0]), items=tuple(map(int, parts[1:]))))
    with open(os.path.join(data_dir, "stats.json"), encoding="utf-8") as fh:
        stats = json.load(fh)
    return ProcessedDataset(
        user_index=user_index,
        item_index=item_index,
        sequences=sequences,
        stats=stats,
    )


def read_raw_file(path: str, delimiter: str | None = None) -> list[tuple]:
    """Parse a raw log file into record tuples for :func:`ingest`.

    Each line holds user, item, rating-or-review, timestamp. ``delimiter``
    defaults to any whitespace; pass e.g. ``","`` or ``"::"`` for delimited
    exports. Lines with a missing rating field (three columns) are accepted
    by treating the third column as the timestamp.
    """
    records: list[tuple] = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            parts = line.split(delimiter) if delimiter else line.split()
            if len(parts) == 3:
                user, item, timestamp = parts
                records.append((user, item, 1, timestamp))
            else:
                records.append(tuple(parts))
    return records


def _index_by_first_appearance(values: Iterable[str]) -> dict[str, int]:
    index: dict[str, int] = {}
    for value in values:
        if value not in index:
            index[value] = len(index) + 1
    return index


def _write_index(path: str, index: dict[str, int]) -> None:
    rows = sorted(index.items(), key=lambda kv: kv[1])
    with open(path, "w", encoding="utf-8") as fh:
        for external, dense in rows:
            fh.write(f"{external}\t{dense}\n")


def _read_index(path: str) -> dict[str, int]:
    index: dict[str, int] = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            external, dense = line.rstrip("\n").split("\t")
            index[external] = int(dense)
    return index
