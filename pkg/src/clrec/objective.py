"""Training objectives: next-item loss, in-batch contrastive loss, total.

The contrastive loss takes a stack of 2N view representations ordered as
adjacent pairs. Each view's partner is its positive; the other 2(N-1)
views in the batch are its negatives. Similarity is a plain dot product,
with no temperature and no projection head. The next-item loss is a
sampled softmax over the positive item and k uniformly drawn negatives,
scored against the shared item-embedding table. Both losses reduce by
mean and go through log-sum-exp, so logits of several hundred stay finite.
"""

from __future__ import annotations

import logging

import numpy as np
import torch
from torch import Tensor

logger = logging.getLogger(__name__)


def similarity(u: Tensor, v: Tensor) -> Tensor:
    """Dot product along the last axis; shapes must match exactly."""
    if u.shape != v.shape:
        raise ValueError(f"similarity width mismatch: {tuple(u.shape)} vs {tuple(v.shape)}")
    return (u * v).sum(dim=-1)


def contrastive_loss(views: Tensor, symmetric: bool = True) -> Tensor:
    """Mean softmax cross-entropy pulling paired views together.

    ``views`` has shape (2N, width) with pairs adjacent: rows 0 and 1 come
    from the same user, rows 2 and 3 from the next, and so on. Each row is
    an anchor whose positive is its partner row and whose denominator runs
    over every other row in the batch. With ``symmetric`` (the default) all
    2N anchors are averaged; otherwise only the first view of each pair
    anchors.

    A batch with fewer than two users has no negatives; the loss is
    reported as zero with a warning.
    """
    if views.dim() != 2:
        raise ValueError(f"expected (2N, width) views, got shape {tuple(views.shape)}")
    total = views.shape[0]
    if total % 2 != 0:
        raise ValueError(f"view count must be even, got {total}")
    if total // 2 < 2:
        logger.warning("contrastive batch has %d user(s), no negatives exist; loss set to 0", total // 2)
        return views.new_zeros(())
    sims = views @ views.T
    anchors = torch.arange(total, device=views.device)
    positive = sims[anchors, anchors ^ 1]
    off_diagonal = sims.masked_fill(torch.eye(total, dtype=torch.bool, device=views.device), float("-inf"))
    per_anchor = torch.logsumexp(off_diagonal, dim=1) - positive
    if symmetric:
        return per_anchor.mean()
    return per_anchor[0::2].mean()


def sample_negatives(positive: int, count: int, num_items: int, rng: np.random.Generator) -> np.ndarray:
    """Draw ``count`` distinct item ids uniformly, never the positive.

    Ids come from the real catalog 1..num_items, so padding and the mask
    token are unreachable by construction.
    """
    if not 1 <= positive <= num_items:
        raise ValueError(f"positive id {positive} outside catalog 1..{num_items}")
    if count >= num_items:
        raise ValueError(f"cannot draw {count} distinct negatives from a catalog of {num_items}")
    draws = rng.choice(num_items - 1, size=count, replace=False).astype(np.int64) + 1
    return draws + (draws >= positive)


def sample_negative_matrix(
    positives: np.ndarray, count: int, num_items: int, rng: np.random.Generator
) -> np.ndarray:
    """Per-row negatives for a whole batch of positives, shape (len, count).

    The single-negative case is drawn in one vectorized pass: a uniform id
    from a catalog of size num_items - 1, shifted up by one where it would
    collide with the row's positive.
    """
    positives = np.asarray(positives, dtype=np.int64)
    if count >= num_items:
        raise ValueError(f"cannot draw {count} distinct negatives from a catalog of {num_items}")
    if count == 1:
        draws = rng.integers(1, num_items, size=positives.shape[0], dtype=np.int64)
        return (draws + (draws >= positives))[:, None]
    return np.stack([sample_negatives(int(p), count, num_items, rng) for p in positives])


def main_loss(states: Tensor, positives: Tensor, negatives: Tensor, item_table: Tensor) -> Tensor:
    """Sampled-softmax loss for next-item prediction, averaged over steps.

    ``states`` holds one predicted vector per included (user, timestep);
    ``positives`` the true next item per row; ``negatives`` a (rows, k)
    matrix of sampled ids. Scores are dot products against rows of the
    shared ``item_table``.
    """
    if states.dim() != 2:
        raise ValueError(f"expected (rows, width) states, got {tuple(states.shape)}")
    if states.shape[0] == 0:
        raise ValueError("next-item loss needs a non-empty batch")
    if positives.shape[0] != states.shape[0] or negatives.shape[0] != states.shape[0]:
        raise ValueError("states, positives, and negatives must agree on row count")
    positive_logit = (states * item_table[positives]).sum(dim=-1)
    negative_logit = torch.einsum("rw,rkw->rk", states, item_table[negatives])
    logits = torch.cat([positive_logit[:, None], negative_logit], dim=1)
    return (torch.logsumexp(logits, dim=1) - positive_logit).mean()


def total_loss(main: Tensor, contrastive: Tensor, weight: float) -> Tensor:
    """Joint objective: next-item loss plus ``weight`` times the contrastive term."""
    if weight < 0:
        raise ValueError(f"contrastive weight must be nonnegative, got {weight}")
    return main + weight * contrastive
