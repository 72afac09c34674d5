"""Declarative experiment configuration with a flat dotted-key text format.

A config file is plain ``key = value`` lines (``#`` comments allowed) whose
keys use dotted sections, for example ``trainer.lr = 0.001`` or
``augment.ops = crop,mask``. Unknown keys are rejected up front. Command
line overrides win over file values, and every run directory receives the
fully materialized config text so the run can be reproduced from it alone.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, fields

from .augment import OP_KINDS, AugmentOp
from .encoder import EncoderHyper

MODES = ("cl4srec", "sasrec", "sasrec_aug")
LAMBDA_GRID = (0.1, 0.5, 1.0, 2.0, 4.0)
PROPORTION_GRID = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9)


@dataclass
class ExperimentConfig:
    """Every knob of a run, one attribute per config key.

    Attribute names are the dotted keys with dots turned into underscores;
    ``loss.lambda`` becomes ``loss_lambda``. ``encoder_ffn_width = 0`` means
    inherit the embedding width, and an empty ``corpus_delimiter`` means
    split raw lines on any whitespace.
    """

    data_raw: str = ""
    data_dir: str = ""
    corpus_window: int = 50
    corpus_delimiter: str = ""
    encoder_width: int = 64
    encoder_heads: int = 2
    encoder_layers: int = 2
    encoder_dropout: float = 0.2
    encoder_ffn_width: int = 0
    augment_ops: tuple[str, ...] = ("crop", "mask", "reorder")
    augment_eta: float = 0.6
    augment_gamma: float = 0.3
    augment_beta: float = 0.6
    loss_lambda: float = 0.1
    loss_negatives_k: int = 1
    loss_symmetric_cl: bool = True
    loss_filter_history: bool = False
    trainer_mode: str = "cl4srec"
    trainer_batch_size: int = 256
    trainer_lr: float = 0.001
    trainer_beta1: float = 0.9
    trainer_beta2: float = 0.999
    trainer_max_epochs: int = 100
    trainer_patience: int = 10
    trainer_seed: int = 42
    eval_ks: tuple[int, ...] = (5, 10, 20)

    def validate(self) -> None:
        if self.trainer_mode not in MODES:
            raise ValueError(f"trainer.mode must be one of {MODES}, got {self.trainer_mode!r}")
        if self.trainer_lr <= 0:
            raise ValueError("trainer.lr must be positive")
        if not 0 < self.trainer_beta1 < 1 or not 0 < self.trainer_beta2 < 1:
            raise ValueError("adam betas must lie in (0, 1)")
        if self.trainer_batch_size < 1:
            raise ValueError("trainer.batch_size must be at least 1")
        if self.trainer_mode == "cl4srec" and self.trainer_batch_size < 2:
            raise ValueError("contrastive training needs trainer.batch_size >= 2 for in-batch negatives")
        if self.trainer_max_epochs < 1:
            raise ValueError("trainer.max_epochs must be at least 1")
        if self.trainer_patience < 0:
            raise ValueError("trainer.patience cannot be negative")
        if self.corpus_window < 1:
            raise ValueError("corpus.window must be at least 1")
        if self.loss_lambda < 0:
            raise ValueError("loss.lambda must be nonnegative")
        if self.loss_negatives_k < 1:
            raise ValueError("loss.negatives_k must be at least 1")
        for name, rate in (("eta", self.augment_eta), ("gamma", self.augment_gamma), ("beta", self.augment_beta)):
            if not 0.0 <= rate <= 1.0:
                raise ValueError(f"augment.{name} must lie in [0, 1], got {rate}")
        for kind in self.augment_ops:
            if kind not in OP_KINDS:
                raise ValueError(f"augment.ops entry {kind!r} not in {OP_KINDS}")
        if len(set(self.augment_ops)) != len(self.augment_ops):
            raise ValueError("augment.ops lists an operator twice")
        if not self.eval_ks or any(k < 1 for k in self.eval_ks):
            raise ValueError("eval.ks must be a non-empty list of positive cutoffs")
        # encoder shape constraints are enforced by EncoderHyper itself
        EncoderHyper(
            num_items=1,
            width=self.encoder_width,
            heads=self.encoder_heads,
            layers=self.encoder_layers,
            window=self.corpus_window,
            ffn_width=self.encoder_ffn_width or None,
            dropout=self.encoder_dropout,
        )

    def to_hyper(self, num_items: int) -> EncoderHyper:
        return EncoderHyper(
            num_items=num_items,
            width=self.encoder_width,
            heads=self.encoder_heads,
            layers=self.encoder_layers,
            window=self.corpus_window,
            ffn_width=self.encoder_ffn_width or None,
            dropout=self.encoder_dropout,
        )

    def enabled_ops(self) -> tuple[AugmentOp, ...]:
        """The configured operators with their rates, in listed order."""
        rate_by_kind = {"crop": self.augment_eta, "mask": self.augment_gamma, "reorder": self.augment_beta}
        return tuple(AugmentOp(kind=kind, rate=rate_by_kind[kind]) for kind in self.augment_ops)

    def run_name(self, dataset_label: str) -> str:
        """Self-describing run-directory name for sweep and ablation cells."""
        ops = "+".join(self.augment_ops) if self.augment_ops else "none"
        rates = "-".join(
            f"{rate:g}" for kind, rate in (
                ("crop", self.augment_eta), ("mask", self.augment_gamma), ("reorder", self.augment_beta)
            ) if kind in self.augment_ops
        ) or "na"
        return (
            f"{dataset_label}_{self.trainer_mode}_{ops}_{rates}"
            f"_lam{self.loss_lambda:g}_seed{self.trainer_seed}"
        )


def _known_keys() -> dict[str, str]:
    config_fields = {f.name for f in fields(ExperimentConfig)}
    return {name.replace("_", ".", 1): name for name in config_fields}


KNOWN_KEYS = _known_keys()


def _parse_value(key: str, raw: str) -> object:
    attr = KNOWN_KEYS[key]
    raw = raw.strip()
    if attr == "augment_ops":
        parts = [p.strip() for p in raw.split(",") if p.strip()]
        return tuple(parts)
    if attr == "eval_ks":
        try:
            return tuple(int(p) for p in raw.split(",") if p.strip())
        except ValueError as exc:
            raise ValueError(f"{key} expects comma-separated integers, got {raw!r}") from exc
    default = getattr(ExperimentConfig(), attr)
    if isinstance(default, bool):
        lowered = raw.lower()
        if lowered in ("true", "1", "yes", "on"):
            return True
        if lowered in ("false", "0", "no", "off"):
            return False
        raise ValueError(f"{key} expects a boolean, got {raw!r}")
    if isinstance(default, int):
        try:
            return int(raw)
        except ValueError as exc:
            raise ValueError(f"{key} expects an integer, got {raw!r}") from exc
    if isinstance(default, float):
        try:
            return float(raw)
        except ValueError as exc:
            raise ValueError(f"{key} expects a number, got {raw!r}") from exc
    return raw


def _format_value(attr: str, value: object) -> str:
    if attr in ("augment_ops", "eval_ks"):
        return ",".join(str(v) for v in value)
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return f"{value:g}"
    return str(value)


def parse_config_text(text: str) -> dict[str, str]:
    """Raw key -> value strings from config text; rejects unknown keys."""
    values: dict[str, str] = {}
    for line_number, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ValueError(f"line {line_number}: expected 'key = value', got {line!r}")
        key, raw = stripped.split("=", 1)
        key = key.strip()
        if key not in KNOWN_KEYS:
            raise ValueError(f"line {line_number}: unknown config key {key!r}")
        values[key] = raw.strip()
    return values


def resolve_config(text: str | None = None, overrides: dict[str, str] | None = None) -> ExperimentConfig:
    """Build a validated config from file text plus override key/values."""
    cfg = ExperimentConfig()
    merged: dict[str, str] = {}
    if text is not None:
        merged.update(parse_config_text(text))
    for key, raw in (overrides or {}).items():
        if key not in KNOWN_KEYS:
            raise ValueError(f"unknown config key {key!r}")
        merged[key] = raw
    for key, raw in merged.items():
        setattr(cfg, KNOWN_KEYS[key], _parse_value(key, raw))
    cfg.validate()
    return cfg


def config_to_text(cfg: ExperimentConfig) -> str:
    """Fully materialized config, every key present, sorted for diffing."""
    lines = []
    for key in sorted(KNOWN_KEYS):
        attr = KNOWN_KEYS[key]
        lines.append(f"{key} = {_format_value(attr, getattr(cfg, attr))}")
    return "\n".join(lines) + "\n"


def config_fingerprint(cfg: ExperimentConfig) -> str:
    return hashlib.sha256(config_to_text(cfg).encode()).hexdigest()[:16]


def load_config_file(path: str) -> ExperimentConfig:
    with open(path, encoding="utf-8") as fh:
        return resolve_config(fh.read())
