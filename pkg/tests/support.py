"""Shared helpers for the test suite."""

import numpy as np
import torch

from clrec import objective
from clrec.encoder import EncoderHyper, SequenceEncoder
from clrec.trainer import init_params


def finite_difference_gradients(model, loss_fn, step=1e-5):
    """Central finite differences of ``loss_fn()`` for every model parameter.

    ``loss_fn`` must recompute the loss from the model's current parameters
    on every call and must be deterministic (eval mode, fixed batch). The
    model should be in double precision so the quotient is not drowned by
    rounding noise.
    """
    estimates = {}
    with torch.no_grad():
        for name, param in model.named_parameters():
            grad = torch.zeros_like(param)
            flat = param.data.view(-1)
            grad_flat = grad.view(-1)
            for idx in range(flat.numel()):
                original = flat[idx].item()
                flat[idx] = original + step
                plus = float(loss_fn())
                flat[idx] = original - step
                minus = float(loss_fn())
                flat[idx] = original
                grad_flat[idx] = (plus - minus) / (2.0 * step)
            estimates[name] = grad
    return estimates


def max_relative_error(reference, candidate, floor=1e-6):
    """Largest elementwise relative error with a tiny-denominator floor.

    The floor keeps measurement noise out of the denominator: a central
    difference of a double-precision loss quantizes near 1e-11 with step
    1e-5, so gradients far below the floor cannot be resolved relatively
    and are instead compared absolutely at ``floor`` resolution. Real
    gradients in these models sit orders of magnitude above the floor.
    """
    worst = 0.0
    for name in reference:
        a = reference[name].reshape(-1)
        b = candidate[name].reshape(-1)
        for x, y in zip(a.tolist(), b.tolist()):
            denom = max(abs(x), abs(y), floor)
            worst = max(worst, abs(x - y) / denom)
    return worst


def tiny_joint_loss_setup(seed=0, cl_weight=0.5):
    """A 5-item, width-4, one-block model in double precision plus a loss closure.

    The closure recomputes the joint objective (next-item term plus
    ``cl_weight`` times the contrastive term) on one fixed batch every call,
    always in eval mode, so it is a pure deterministic function of the
    current parameters. That is exactly what a finite-difference probe needs.
    """
    hyper = EncoderHyper(num_items=5, width=4, heads=2, layers=1, window=3, dropout=0.0)
    model = SequenceEncoder(hyper).double()
    gen = torch.Generator()
    gen.manual_seed(seed)
    init_params(model, gen)

    inputs = torch.tensor([[0, 1, 2], [3, 4, 5]], dtype=torch.int64)
    targets = torch.tensor([[0, 2, 3], [4, 5, 1]], dtype=torch.int64)
    include = targets != 0
    positives = targets[include]
    rng = np.random.default_rng(seed)
    negatives = torch.from_numpy(
        objective.sample_negative_matrix(positives.numpy(), 1, hyper.num_items, rng)
    )
    # two users, views adjacent, right-aligned so the last slot is real
    mask_id = hyper.mask_id
    views = torch.tensor(
        [[0, 1, mask_id], [2, 1, 3], [3, mask_id, 5], [0, 4, 5]], dtype=torch.int64
    )

    def loss_fn():
        states = model.forward(inputs)
        main = objective.main_loss(states[include], positives, negatives, model.item_embedding.weight)
        contrastive = objective.contrastive_loss(model.last_state(views))
        return objective.total_loss(main, contrastive, cl_weight)

    return model, loss_fn
