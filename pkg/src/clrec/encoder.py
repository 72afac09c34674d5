"""Unidirectional self-attention encoder over item-id windows.

Slot states start as item embedding plus slot-position embedding. Each
block applies causal multi-head attention then a position-wise two-layer
feed-forward, both wrapped residually as normalize(x + dropout(sub(x))).
Attention is masked so a slot sees only itself, earlier slots, and no
padding; a fully padded query row outputs an exact zero vector from the
attention sublayer. The user representation is the final slot's state.

Dropout draws from an explicit torch generator so training forwards can be
replayed bit-exactly from a recorded state.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
from torch import Tensor, nn

PAD_ID = 0
ATTENTION_BLOCK_VALUE = -1e9
NORM_EPS = 1e-8


@dataclass(frozen=True)
class EncoderHyper:
    """Architecture sizes. ``num_items`` counts real catalog items only."""

    num_items: int
    width: int = 64
    heads: int = 2
    layers: int = 2
    window: int = 50
    ffn_width: int | None = None
    dropout: float = 0.2

    def __post_init__(self) -> None:
        if self.num_items < 1:
            raise ValueError("catalog must contain at least one item")
        if self.width < 1 or self.width % self.heads != 0:
            raise ValueError(f"width {self.width} must be a positive multiple of heads {self.heads}")
        if self.layers < 0:
            raise ValueError("layer count cannot be negative")
        if self.window < 1:
            raise ValueError("window length must be at least 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.ffn_width is None:
            object.__setattr__(self, "ffn_width", self.width)

    @property
    def mask_id(self) -> int:
        """Id of the augmentation mask token, one past the catalog."""
        return self.num_items + 1

    @property
    def vocab_size(self) -> int:
        """Catalog plus the padding row (0) and the mask-token row."""
        return self.num_items + 2


def seeded_dropout(x: Tensor, rate: float, rng: torch.Generator | None) -> Tensor:
    """Bernoulli-keep dropout with inverted scaling, drawn from ``rng``."""
    if rate <= 0.0:
        return x
    if rng is None:
        raise ValueError("dropout with rate > 0 needs an explicit generator")
    keep = 1.0 - rate
    kept = torch.rand(x.shape, generator=rng, dtype=x.dtype, device=x.device) < keep
    return x * kept.to(x.dtype) / keep


class CausalSelfAttention(nn.Module):
    """Multi-head scaled dot-product attention with visibility masking."""

    def __init__(self, width: int, heads: int):
        super().__init__()
        self.heads = heads
        self.head_width = width // heads
        self.query = nn.Linear(width, width, bias=False)
        self.key = nn.Linear(width, width, bias=False)
        self.value = nn.Linear(width, width, bias=False)
        self.output = nn.Linear(width, width, bias=False)

    def forward(self, states: Tensor, visible: Tensor) -> tuple[Tensor, Tensor]:
        """Attend within each sequence.

        ``visible`` is a boolean (batch, 1, slots, slots) mask saying which
        key slot each query slot may read. Blocked logits are filled with a
        large negative constant; after softmax they underflow to exactly
        zero, which is what the leakage tests rely on. Rows with no visible
        key at all are zeroed outright.

        Returns the projected context and the attention weights.
        """
        batch, slots, width = states.shape
        q = self._split(self.query(states), batch, slots)
        k = self._split(self.key(states), batch, slots)
        v = self._split(self.value(states), batch, slots)
        logits = q @ k.transpose(-2, -1) / math.sqrt(self.head_width)
        logits = logits.masked_fill(~visible, ATTENTION_BLOCK_VALUE)
        weights = torch.softmax(logits, dim=-1)
        weights = weights * visible.any(dim=-1, keepdim=True).to(weights.dtype)
        context = weights @ v
        context = context.transpose(1, 2).reshape(batch, slots, width)
        return self.output(context), weights

    def _split(self, projected: Tensor, batch: int, slots: int) -> Tensor:
        return projected.view(batch, slots, self.heads, self.head_width).transpose(1, 2)


class FeedForward(nn.Module):
    """Per-slot two-layer transform with a ReLU in between."""

    def __init__(self, width: int, inner_width: int):
        super().__init__()
        self.expand = nn.Linear(width, inner_width)
        self.contract = nn.Linear(inner_width, width)

    def forward(self, states: Tensor) -> Tensor:
        return self.contract(torch.relu(self.expand(states)))


class EncoderBlock(nn.Module):
    """Attention and feed-forward sublayers, each post-normalized."""

    def __init__(self, hyper: EncoderHyper):
        super().__init__()
        self.attention = CausalSelfAttention(hyper.width, hyper.heads)
        self.feed_forward = FeedForward(hyper.width, hyper.ffn_width)
        self.norm_attention = nn.LayerNorm(hyper.width, eps=NORM_EPS)
        self.norm_feed_forward = nn.LayerNorm(hyper.width, eps=NORM_EPS)

    def forward(
        self,
        states: Tensor,
        visible: Tensor,
        drop_rate: float = 0.0,
        rng: torch.Generator | None = None,
    ) -> Tensor:
        attended, _ = self.attention(states, visible)
        states = self.norm_attention(states + seeded_dropout(attended, drop_rate, rng))
        transformed = self.feed_forward(states)
        return self.norm_feed_forward(states + seeded_dropout(transformed, drop_rate, rng))


class SequenceEncoder(nn.Module):
    """The full model: embeddings plus a stack of encoder blocks."""

    def __init__(self, hyper: EncoderHyper):
        super().__init__()
        self.hyper = hyper
        self.item_embedding = nn.Embedding(hyper.vocab_size, hyper.width)
        self.position_embedding = nn.Embedding(hyper.window, hyper.width)
        self.blocks = nn.ModuleList(EncoderBlock(hyper) for _ in range(hyper.layers))

    def embed(self, ids: Tensor) -> Tensor:
        """Initial slot states: item row plus position row for each slot."""
        if ids.dim() != 2 or ids.shape[1] != self.hyper.window:
            raise ValueError(f"expected ids of shape (batch, {self.hyper.window}), got {tuple(ids.shape)}")
        if int(ids.min()) < 0 or int(ids.max()) >= self.hyper.vocab_size:
            raise ValueError("item id out of embedding range")
        slots = torch.arange(ids.shape[1], device=ids.device)
        return self.item_embedding(ids) + self.position_embedding(slots)[None, :, :]

    def visibility(self, ids: Tensor) -> Tensor:
        """Causal-and-not-padding key mask, shaped for head broadcast."""
        slots = ids.shape[1]
        causal = torch.tril(torch.ones(slots, slots, dtype=torch.bool, device=ids.device))
        real_key = ids != PAD_ID
        return (causal[None, :, :] & real_key[:, None, :]).unsqueeze(1)

    def forward(
        self,
        ids: Tensor,
        train: bool = False,
        rng: torch.Generator | None = None,
    ) -> Tensor:
        """Per-slot states after all blocks, shape (batch, window, width)."""
        states = self.embed(ids)
        visible = self.visibility(ids)
        drop_rate = self.hyper.dropout if train else 0.0
        if drop_rate > 0.0 and rng is None:
            raise ValueError("training-mode forward needs a dropout generator")
        for block in self.blocks:
            states = block(states, visible, drop_rate, rng)
        return states

    def last_state(
        self,
        ids: Tensor,
        train: bool = False,
        rng: torch.Generator | None = None,
    ) -> Tensor:
        """The newest slot's state, used as the user representation."""
        return self.forward(ids, train=train, rng=rng)[:, -1, :]


def parameter_gradients(loss: Tensor, model: nn.Module) -> dict[str, Tensor]:
    """Gradients of a scalar loss for every named parameter of ``model``.

    Parameters the loss never touched come back as explicit zeros. Raises
    if the loss carries no autograd graph (for example, computed under
    ``torch.no_grad``).
    """
    if loss.dim() != 0:
        raise ValueError("loss must be a scalar")
    if not loss.requires_grad:
        raise ValueError("loss has no recorded forward pass to differentiate")
    named = list(model.named_parameters())
    grads = torch.autograd.grad(loss, [p for _, p in named], allow_unused=True)
    return {
        name: grad if grad is not None else torch.zeros_like(param)
        for (name, param), grad in zip(named, grads)
    }
