"""Joint optimization loop with deterministic state and checkpointing.

One epoch walks shuffled user batches. Per batch the encoder runs once on
the plain training window for the per-timestep next-item loss (mode
``sasrec_aug`` augments the sequence first), and in ``cl4srec`` mode twice
more on two augmented views whose last-slot states feed the contrastive
loss. A single hand-rolled Adam step applies the combined gradients under
a linearly decaying learning rate. When the contrastive path is inactive
(other modes, zero weight, or no operators) it is skipped entirely, so it
consumes no randomness and ``sasrec`` is bit-identical to ``cl4srec`` with
the contrastive term switched off.

All randomness flows through two explicit streams, a torch generator for
initialization and dropout and a numpy generator for shuffling,
augmentation, and negative sampling. Both are serialized into checkpoints,
which is what makes save/load/resume reproduce the uninterrupted run
bit-exactly.
"""

from __future__ import annotations

import io
import json
import logging
import math
import os
import time
from dataclasses import dataclass

import numpy as np
import torch
from torch import Tensor

from . import augment, objective
from .config import ExperimentConfig, config_fingerprint, config_to_text
from .corpus import SplitDataset, make_window
from .encoder import EncoderHyper, SequenceEncoder, parameter_gradients
from .evaluator import ModelScorer, evaluate

logger = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1
ADAM_EPS = 1e-8
LR_FLOOR_FRACTION = 0.1
INIT_STD = 0.01
INIT_BOUND = 0.01
BEST_CHECKPOINT = "ckpt_best"
LAST_CHECKPOINT = "ckpt_last"
LOG_FILE = "log.jsonl"


class NonFiniteGradient(RuntimeError):
    """Raised when a batch produces NaN or infinite gradients."""


@dataclass
class AdamState:
    """First and second moments per parameter, plus the step counter."""

    step: int
    first_moment: dict[str, Tensor]
    second_moment: dict[str, Tensor]


@dataclass
class EpochStats:
    main_loss: float
    cl_loss: float
    total_loss: float
    batches: int
    first_lr: float
    skipped_main_sequences: int = 0
    skipped_contrastive_sequences: int = 0
    aborted_batches: int = 0


@dataclass
class FitResult:
    run_dir: str
    epochs_run: int
    best_epoch: int
    best_valid_ndcg10: float
    stopped_early: bool


def truncated_normal_(tensor: Tensor, std: float, bound: float, rng: torch.Generator) -> None:
    """Fill in place with normal draws, redrawing anything beyond the bound."""
    flat = tensor.view(-1)
    values = torch.randn(flat.shape, generator=rng, dtype=flat.dtype) * std
    out_of_range = values.abs() > bound
    while bool(out_of_range.any()):
        redraw = torch.randn(int(out_of_range.sum()), generator=rng, dtype=flat.dtype) * std
        values[out_of_range] = redraw
        out_of_range = values.abs() > bound
    with torch.no_grad():
        flat.copy_(values)


def init_params(model: SequenceEncoder, rng: torch.Generator) -> None:
    """Truncated-normal init for all weights; norm gains 1, norm biases 0."""
    for name, param in model.named_parameters():
        is_norm = any(part.startswith("norm") for part in name.split("."))
        if is_norm:
            with torch.no_grad():
                param.fill_(0.0 if name.endswith("bias") else 1.0)
        else:
            truncated_normal_(param, INIT_STD, INIT_BOUND, rng)


def init_adam(model: SequenceEncoder) -> AdamState:
    zeros = {name: torch.zeros_like(p) for name, p in model.named_parameters()}
    return AdamState(
        step=0,
        first_moment=zeros,
        second_moment={name: torch.zeros_like(p) for name, p in model.named_parameters()},
    )


def adam_step(
    model: SequenceEncoder,
    grads: dict[str, Tensor],
    state: AdamState,
    lr: float,
    beta1: float,
    beta2: float,
) -> None:
    """One bias-corrected Adam update; aborts whole-step on non-finite grads."""
    for name, grad in grads.items():
        if not bool(torch.isfinite(grad).all()):
            raise NonFiniteGradient(f"non-finite gradient for {name}")
    state.step += 1
    bias1 = 1.0 - beta1 ** state.step
    bias2 = 1.0 - beta2 ** state.step
    with torch.no_grad():
        for name, param in model.named_parameters():
            grad = grads[name]
            m = state.first_moment[name]
            v = state.second_moment[name]
            m.mul_(beta1).add_(grad, alpha=1.0 - beta1)
            v.mul_(beta2).addcmul_(grad, grad, value=1.0 - beta2)
            param.add_(-(lr / bias1) * m / ((v / bias2).sqrt() + ADAM_EPS))


def linear_lr(base: float, completed_steps: int, total_steps: int, floor_fraction: float = LR_FLOOR_FRACTION) -> float:
    """Linear decay over the planned horizon, floored at a fraction of base."""
    if total_steps <= 0:
        return base
    decayed = base * (1.0 - completed_steps / total_steps)
    return max(decayed, base * floor_fraction)


def contrastive_path_active(cfg: ExperimentConfig) -> bool:
    return cfg.trainer_mode == "cl4srec" and cfg.loss_lambda > 0 and len(cfg.augment_ops) > 0


def _main_batch(
    split: SplitDataset,
    users: list[int],
    cfg: ExperimentConfig,
    mask_id: int,
    rng: np.random.Generator,
) -> tuple[np.ndarray, np.ndarray, int]:
    """Input and target windows for the next-item task, plus skip count.

    Inputs are each sequence without its last item, targets the sequence
    shifted by one; both share the same right-aligned window so slot t of
    the targets is the item after slot t of the inputs.
    """
    window = cfg.corpus_window
    ops = cfg.enabled_ops()
    inputs, targets = [], []
    skipped = 0
    for user in users:
        seq = list(split.train[user])
        if cfg.trainer_mode == "sasrec_aug" and ops:
            chosen = ops[int(rng.integers(0, len(ops)))]
            seq = augment.apply_op(seq, chosen, rng, mask_id)
        if len(seq) < 2:
            skipped += 1
            continue
        inputs.append(make_window(seq[:-1], window).ids)
        targets.append(make_window(seq[1:], window).ids)
    if not inputs:
        return np.zeros((0, window), np.int64), np.zeros((0, window), np.int64), skipped
    return np.stack(inputs), np.stack(targets), skipped


def _contrastive_views(
    split: SplitDataset,
    users: list[int],
    cfg: ExperimentConfig,
    mask_id: int,
    rng: np.random.Generator,
) -> tuple[np.ndarray, int]:
    """Adjacent-pair view windows for the contrastive task, plus skip count."""
    window = cfg.corpus_window
    ops = cfg.enabled_ops()
    rows = []
    skipped = 0
    for user in users:
        seq = split.train[user]
        if len(seq) < 2:
            skipped += 1
            continue
        pair = augment.sample_pair(seq, ops, rng, mask_id, source_user=user)
        rows.append(make_window(pair.view_a, window).ids)
        rows.append(make_window(pair.view_b, window).ids)
    if not rows:
        return np.zeros((0, window), np.int64), skipped
    return np.stack(rows), skipped


def train_epoch(
    model: SequenceEncoder,
    split: SplitDataset,
    cfg: ExperimentConfig,
    adam: AdamState,
    torch_rng: torch.Generator,
    data_rng: np.random.Generator,
    total_steps: int,
) -> EpochStats:
    """One pass over shuffled users; one optimizer step per batch."""
    if not split.users:
        raise ValueError("cannot train on an empty dataset")
    mask_id = model.hyper.mask_id
    order = [split.users[i] for i in data_rng.permutation(len(split.users))]
    batch_size = cfg.trainer_batch_size
    use_contrastive = contrastive_path_active(cfg)

    main_losses, cl_losses, total_losses = [], [], []
    skipped_main = skipped_cl = aborted = 0
    first_lr = linear_lr(cfg.trainer_lr, adam.step, total_steps)
    for start in range(0, len(order), batch_size):
        users = order[start:start + batch_size]
        input_ids, target_ids, batch_skipped = _main_batch(split, users, cfg, mask_id, data_rng)
        skipped_main += batch_skipped
        if input_ids.shape[0] == 0:
            continue
        inputs = torch.from_numpy(input_ids)
        targets = torch.from_numpy(target_ids)
        states = model.forward(inputs, train=True, rng=torch_rng)
        include = (targets != 0) & (targets != mask_id)
        flat_states = states[include]
        positives = targets[include]
        negatives = objective.sample_negative_matrix(
            positives.numpy(), cfg.loss_negatives_k, split.num_items, data_rng
        )
        main = objective.main_loss(
            flat_states, positives, torch.from_numpy(negatives), model.item_embedding.weight
        )

        if use_contrastive:
            view_ids, batch_cl_skipped = _contrastive_views(split, users, cfg, mask_id, data_rng)
            skipped_cl += batch_cl_skipped
            if view_ids.shape[0] >= 4:
                view_states = model.last_state(torch.from_numpy(view_ids), train=True, rng=torch_rng)
                cl = objective.contrastive_loss(view_states, symmetric=cfg.loss_symmetric_cl)
            else:
                cl = main.new_zeros(())
        else:
            cl = main.new_zeros(())

        total = objective.total_loss(main, cl, cfg.loss_lambda if use_contrastive else 0.0)
        grads = parameter_gradients(total, model)
        lr_now = linear_lr(cfg.trainer_lr, adam.step, total_steps)
        try:
            adam_step(model, grads, adam, lr_now, cfg.trainer_beta1, cfg.trainer_beta2)
        except NonFiniteGradient as err:
            aborted += 1
            logger.warning("batch starting at user index %d aborted: %s", start, err)
            continue
        main_losses.append(float(main.detach()))
        cl_losses.append(float(cl.detach()))
        total_losses.append(float(total.detach()))

    def _mean(xs: list[float]) -> float:
        return float(np.mean(xs)) if xs else 0.0

    return EpochStats(
        main_loss=_mean(main_losses),
        cl_loss=_mean(cl_losses),
        total_loss=_mean(total_losses),
        batches=len(total_losses),
        first_lr=first_lr,
        skipped_main_sequences=skipped_main,
        skipped_contrastive_sequences=skipped_cl,
        aborted_batches=aborted,
    )


def save_checkpoint(
    path: str,
    model: SequenceEncoder,
    adam: AdamState,
    torch_rng: torch.Generator,
    data_rng: np.random.Generator,
    extra_meta: dict,
) -> None:
    """Serialize params, moments, both RNG states, and metadata atomically."""
    hyper = model.hyper
    meta = {
        "format_version": CHECKPOINT_VERSION,
        "hyper": {
            "num_items": hyper.num_items,
            "width": hyper.width,
            "heads": hyper.heads,
            "layers": hyper.layers,
            "window": hyper.window,
            "ffn_width": hyper.ffn_width,
            "dropout": hyper.dropout,
        },
        "adam_step": adam.step,
        "data_rng_state": data_rng.bit_generator.state,
        **extra_meta,
    }
    arrays: dict[str, np.ndarray] = {}
    for name, param in model.named_parameters():
        arrays[f"param/{name}"] = param.detach().numpy()
        arrays[f"adam_m/{name}"] = adam.first_moment[name].numpy()
        arrays[f"adam_v/{name}"] = adam.second_moment[name].numpy()
    arrays["torch_rng_state"] = torch_rng.get_state().numpy()
    arrays["meta_json"] = np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8)
    tmp_path = path + ".tmp"
    with open(tmp_path, "wb") as fh:
        np.savez(fh, **arrays)
    os.replace(tmp_path, path)


@dataclass
class Checkpoint:
    meta: dict
    params: dict[str, np.ndarray]
    adam_m: dict[str, np.ndarray]
    adam_v: dict[str, np.ndarray]
    torch_rng_state: np.ndarray


def load_checkpoint(path: str) -> Checkpoint:
    with open(path, "rb") as fh:
        data = np.load(io.BytesIO(fh.read()))
    meta = json.loads(bytes(data["meta_json"]).decode())
    if meta.get("format_version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {meta.get('format_version')!r}")
    params, adam_m, adam_v = {}, {}, {}
    for key in data.files:
        if key.startswith("param/"):
            params[key[len("param/"):]] = data[key]
        elif key.startswith("adam_m/"):
            adam_m[key[len("adam_m/"):]] = data[key]
        elif key.startswith("adam_v/"):
            adam_v[key[len("adam_v/"):]] = data[key]
    return Checkpoint(
        meta=meta,
        params=params,
        adam_m=adam_m,
        adam_v=adam_v,
        torch_rng_state=data["torch_rng_state"],
    )


def restore_training_state(
    ckpt: Checkpoint,
) -> tuple[SequenceEncoder, AdamState, torch.Generator, np.random.Generator]:
    """Rebuild model, optimizer, and both RNG streams from a checkpoint."""
    hyper = EncoderHyper(**ckpt.meta["hyper"])
    model = SequenceEncoder(hyper)
    model.load_state_dict({name: torch.from_numpy(arr.copy()) for name, arr in ckpt.params.items()})
    adam = AdamState(
        step=ckpt.meta["adam_step"],
        first_moment={n: torch.from_numpy(a.copy()) for n, a in ckpt.adam_m.items()},
        second_moment={n: torch.from_numpy(a.copy()) for n, a in ckpt.adam_v.items()},
    )
    torch_rng = torch.Generator()
    torch_rng.set_state(torch.from_numpy(ckpt.torch_rng_state.copy()))
    data_rng = np.random.default_rng()
    data_rng.bit_generator.state = ckpt.meta["data_rng_state"]
    return model, adam, torch_rng, data_rng


def planned_total_steps(num_users: int, batch_size: int, max_epochs: int) -> int:
    return max_epochs * math.ceil(num_users / batch_size)


def fit(split: SplitDataset, cfg: ExperimentConfig, run_dir: str, resume: bool = False) -> FitResult:
    """Full training run with validation-based early stopping.

    Writes ``log.jsonl`` (one JSON record per epoch), ``ckpt_last`` after
    every epoch, and ``ckpt_best`` whenever validation NDCG@10 improves.
    ``resume=True`` continues from ``ckpt_last`` and reproduces exactly what
    an uninterrupted run would have done.
    """
    cfg.validate()
    torch.set_num_threads(1)
    os.makedirs(run_dir, exist_ok=True)
    fingerprint = config_fingerprint(cfg)
    last_path = os.path.join(run_dir, LAST_CHECKPOINT)
    best_path = os.path.join(run_dir, BEST_CHECKPOINT)
    total_steps = planned_total_steps(len(split.users), cfg.trainer_batch_size, cfg.trainer_max_epochs)

    if resume:
        if not os.path.exists(last_path):
            raise FileNotFoundError(f"cannot resume: {last_path} does not exist")
        ckpt = load_checkpoint(last_path)
        if ckpt.meta.get("config_fingerprint") != fingerprint:
            stored = ckpt.meta.get("config_text", "")
            changed = sorted({
                line.split(" = ", 1)[0]
                for line in set(config_to_text(cfg).splitlines()).symmetric_difference(stored.splitlines())
            })
            detail = ", ".join(changed) if changed else "unknown keys"
            raise ValueError(f"checkpoint was written under a different config (differs at: {detail})")
        model, adam, torch_rng, data_rng = restore_training_state(ckpt)
        start_epoch = ckpt.meta["epoch"] + 1
        best_metric = ckpt.meta["best_valid_ndcg10"]
        best_epoch = ckpt.meta["best_epoch"]
        bad_epochs = ckpt.meta["bad_epochs"]
    else:
        hyper = cfg.to_hyper(split.num_items)
        model = SequenceEncoder(hyper)
        torch_rng = torch.Generator()
        torch_rng.manual_seed(cfg.trainer_seed)
        init_params(model, torch_rng)
        adam = init_adam(model)
        data_rng = np.random.default_rng(cfg.trainer_seed)
        start_epoch = 0
        best_metric = -1.0
        best_epoch = -1
        bad_epochs = 0
        with open(os.path.join(run_dir, "config.resolved"), "w", encoding="utf-8") as fh:
            fh.write(config_to_text(cfg))

    log_path = os.path.join(run_dir, LOG_FILE)
    stopped_early = False
    epoch = start_epoch - 1
    for epoch in range(start_epoch, cfg.trainer_max_epochs):
        started = time.monotonic()
        stats = train_epoch(model, split, cfg, adam, torch_rng, data_rng, total_steps)
        report = evaluate(ModelScorer(model, split, "valid"), split, "valid", ks=(10,))
        elapsed = time.monotonic() - started

        record = {
            "epoch": epoch,
            "lr": stats.first_lr,
            "main_loss": stats.main_loss,
            "cl_loss": stats.cl_loss,
            "valid_hr10": report.hr[10],
            "valid_ndcg10": report.ndcg[10],
            "elapsed_s": round(elapsed, 3),
        }
        with open(log_path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(record) + "\n")
        logger.info(
            "epoch %d: main %.4f cl %.4f valid ndcg@10 %.4f",
            epoch, stats.main_loss, stats.cl_loss, report.ndcg[10],
        )

        improved = report.ndcg[10] > best_metric
        if improved:
            best_metric = report.ndcg[10]
            best_epoch = epoch
            bad_epochs = 0
        else:
            bad_epochs += 1

        meta = {
            "config_fingerprint": fingerprint,
            "config_text": config_to_text(cfg),
            "epoch": epoch,
            "best_epoch": best_epoch,
            "best_valid_ndcg10": best_metric,
            "bad_epochs": bad_epochs,
        }
        save_checkpoint(last_path, model, adam, torch_rng, data_rng, meta)
        if improved:
            save_checkpoint(best_path, model, adam, torch_rng, data_rng, meta)

        if bad_epochs > cfg.trainer_patience:
            stopped_early = True
            break

    return FitResult(
        run_dir=run_dir,
        epochs_run=epoch - start_epoch + 1,
        best_epoch=best_epoch,
        best_valid_ndcg10=best_metric,
        stopped_early=stopped_early,
    )
