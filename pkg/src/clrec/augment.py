"""Stochastic sequence augmentation: crop, mask, reorder, and view pairs.

Each operator has a deterministic core that takes the sampled placement
outright (``crop_slice``, ``mask_positions``, ``reorder_block``) and a
stochastic wrapper that draws the placement from a seeded numpy generator.
The cores make exact-example tests possible without scripting generators.

Rates select how much of the sequence the operator touches. Crop keeps a
contiguous fraction, mask replaces a fraction of positions with the mask
token, reorder shuffles a contiguous fraction in place. Augmentation runs
on the untruncated training prefix; windowing happens afterwards.
"""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np

CROP = "crop"
MASK = "mask"
REORDER = "reorder"
OP_KINDS = (CROP, MASK, REORDER)


@dataclass(frozen=True)
class AugmentOp:
    """One operator kind paired with its rate."""

    kind: str
    rate: float

    def __post_init__(self) -> None:
        if self.kind not in OP_KINDS:
            raise ValueError(f"unknown augmentation kind {self.kind!r}, expected one of {OP_KINDS}")
        if not 0.0 <= self.rate <= 1.0:
            raise ValueError(f"augmentation rate must be in [0, 1], got {self.rate}")


@dataclass(frozen=True)
class AugmentedPair:
    """Two independently augmented views of one user's sequence."""

    view_a: tuple[int, ...]
    view_b: tuple[int, ...]
    source_user: int

    def __post_init__(self) -> None:
        if not self.view_a or not self.view_b:
            raise ValueError("augmented views must be non-empty")


def crop_slice(seq: Sequence[int], start: int, length: int) -> list[int]:
    """Deterministic crop core: the slice of ``length`` items at ``start``."""
    if not 0 <= start <= len(seq) - length:
        raise ValueError(f"crop start {start} out of range for length {length} on |seq|={len(seq)}")
    return list(seq[start:start + length])


def crop(seq: Sequence[int], rate: float, rng: np.random.Generator) -> list[int]:
    """Keep a uniformly placed contiguous slice covering ``rate`` of the items.

    The slice length is ``floor(rate * |seq|)`` clamped to at least 1 so the
    view is never empty. ``rate=1`` is the identity.
    """
    _check_inputs(seq, rate)
    length = max(1, int(rate * len(seq)))
    start = int(rng.integers(0, len(seq) - length + 1))
    return crop_slice(seq, start, length)


def mask_positions(seq: Sequence[int], positions: Sequence[int], mask_id: int) -> list[int]:
    """Deterministic mask core: replace the given positions with ``mask_id``."""
    out = list(seq)
    for pos in positions:
        if not 0 <= pos < len(out):
            raise ValueError(f"mask position {pos} out of range for |seq|={len(out)}")
        out[pos] = mask_id
    return out


def mask(seq: Sequence[int], rate: float, rng: np.random.Generator, mask_id: int) -> list[int]:
    """Replace ``floor(rate * |seq|)`` uniformly chosen positions with the mask token.

    Length is preserved and untouched positions keep their items. ``rate=0``
    is the identity, ``rate=1`` masks every position.
    """
    _check_inputs(seq, rate)
    count = int(rate * len(seq))
    positions = rng.choice(len(seq), size=count, replace=False)
    return mask_positions(seq, [int(p) for p in positions], mask_id)


def reorder_block(seq: Sequence[int], start: int, order: Sequence[int]) -> list[int]:
    """Deterministic reorder core: permute the block at ``start`` by ``order``."""
    length = len(order)
    if not 0 <= start <= len(seq) - length:
        raise ValueError(f"reorder start {start} out of range for block {length} on |seq|={len(seq)}")
    if sorted(order) != list(range(length)):
        raise ValueError("order must be a permutation of the block indices")
    out = list(seq)
    block = out[start:start + length]
    out[start:start + length] = [block[i] for i in order]
    return out


def reorder(seq: Sequence[int], rate: float, rng: np.random.Generator) -> list[int]:
    """Shuffle a uniformly placed contiguous block covering ``rate`` of the items.

    The block length is ``floor(rate * |seq|)``; blocks shorter than 2 leave
    the sequence unchanged, so ``rate=0`` is the identity.
    """
    _check_inputs(seq, rate)
    length = int(rate * len(seq))
    if length < 2:
        return list(seq)
    start = int(rng.integers(0, len(seq) - length + 1))
    order = [int(i) for i in rng.permutation(length)]
    return reorder_block(seq, start, order)


def apply_op(seq: Sequence[int], op: AugmentOp, rng: np.random.Generator, mask_id: int) -> list[int]:
    """Apply one configured operator to a fresh copy of ``seq``."""
    if op.kind == CROP:
        return crop(seq, op.rate, rng)
    if op.kind == MASK:
        return mask(seq, op.rate, rng, mask_id)
    return reorder(seq, op.rate, rng)


def sample_pair(
    seq: Sequence[int],
    enabled_ops: Sequence[AugmentOp],
    rng: np.random.Generator,
    mask_id: int,
    source_user: int = 0,
) -> AugmentedPair:
    """Draw two operators independently (repeats allowed) and build both views.

    Single-operator configurations therefore get two independent draws of
    the same kind. Sequences shorter than 2 cannot form a usable pair and
    raise; callers skip and count them.
    """
    if len(enabled_ops) == 0:
        raise ValueError("sample_pair needs at least one enabled operator")
    if len(seq) < 2:
        raise ValueError("sequences shorter than 2 are skipped for the contrastive task")
    first = enabled_ops[int(rng.integers(0, len(enabled_ops)))]
    second = enabled_ops[int(rng.integers(0, len(enabled_ops)))]
    return AugmentedPair(
        view_a=tuple(apply_op(seq, first, rng, mask_id)),
        view_b=tuple(apply_op(seq, second, rng, mask_id)),
        source_user=source_user,
    )


def _check_inputs(seq: Sequence[int], rate: float) -> None:
    if len(seq) < 1:
        raise ValueError("cannot augment an empty sequence")
    if not 0.0 <= rate <= 1.0:
        raise ValueError(f"augmentation rate must be in [0, 1], got {rate}")
