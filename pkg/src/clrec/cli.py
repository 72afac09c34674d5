"""Command-line surface: preprocess, train, evaluate, sweep, ablate, simreport.

Every command validates its configuration before doing work, writes final
outputs through a temp-then-rename step, and exits nonzero on failure. Run
directories are self-describing: they hold the fully materialized config,
the epoch log, and both checkpoints, which is enough to reproduce or
resume the run.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
import tempfile

import numpy as np
import torch

from . import corpus, synthetic, trainer
from .config import (
    LAMBDA_GRID,
    PROPORTION_GRID,
    ExperimentConfig,
    config_fingerprint,
    config_to_text,
    resolve_config,
)
from .evaluator import EvalReport, ModelScorer, cosine_similarity_report, evaluate

logger = logging.getLogger(__name__)


def _write_atomic(path: str, text: str) -> None:
    directory = os.path.dirname(os.path.abspath(path)) or "."
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except Exception:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _resolve_from_args(args: argparse.Namespace, extra: dict[str, str] | None = None) -> ExperimentConfig:
    text = None
    if getattr(args, "config", None):
        with open(args.config, encoding="utf-8") as fh:
            text = fh.read()
    overrides: dict[str, str] = {}
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise ValueError(f"--set expects KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        overrides[key.strip()] = value.strip()
    if getattr(args, "seed", None) is not None:
        overrides["trainer.seed"] = str(args.seed)
    if getattr(args, "data", None):
        overrides["data.dir"] = args.data
    overrides.update(extra or {})
    return resolve_config(text, overrides)


def _load_split(cfg: ExperimentConfig) -> corpus.SplitDataset:
    if not cfg.data_dir:
        raise ValueError("no dataset directory: set data.dir in the config or pass --data")
    dataset = corpus.load_dataset(cfg.data_dir)
    return corpus.leave_one_out_split(dataset.sequences, dataset.num_items)


def _restore_model(run_dir: str, which: str):
    path = os.path.join(run_dir, trainer.BEST_CHECKPOINT if which == "best" else trainer.LAST_CHECKPOINT)
    if not os.path.exists(path):
        raise FileNotFoundError(f"checkpoint not found: {path}")
    ckpt = trainer.load_checkpoint(path)
    model, _, _, _ = trainer.restore_training_state(ckpt)
    model.eval()
    return model, ckpt.meta


def cmd_preprocess(args: argparse.Namespace) -> int:
    cfg = _resolve_from_args(args)
    records = corpus.read_raw_file(args.raw, cfg.corpus_delimiter or None)
    log = corpus.five_core_filter(corpus.ingest(records))
    sequences = corpus.build_sequences(log)
    corpus.save_dataset(args.out, log, sequences)
    stats = corpus.compute_stats(sequences, log.num_items)
    print(f"dataset written to {args.out}")
    print(f"  users      {stats['users']}")
    print(f"  items      {stats['items']}")
    print(f"  actions    {stats['actions']}")
    print(f"  avg_length {stats['avg_length']:.1f}")
    print(f"  density    {stats['density'] * 100:.2f}%")
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    cfg = _resolve_from_args(args)
    split = _load_split(cfg)
    print(config_to_text(cfg), end="")
    result = trainer.fit(split, cfg, args.out, resume=args.resume)
    print(
        f"run {result.run_dir}: {result.epochs_run} epoch(s), "
        f"best valid ndcg@10 {result.best_valid_ndcg10:.4f} at epoch {result.best_epoch}"
        + (" (early stop)" if result.stopped_early else "")
    )
    return 0


def _evaluate_run(run_dir: str, cfg: ExperimentConfig, split: corpus.SplitDataset, phase: str, which: str) -> EvalReport:
    model, _ = _restore_model(run_dir, which)
    report = evaluate(
        ModelScorer(model, split, phase),
        split,
        phase,
        ks=cfg.eval_ks,
        filter_seen=True,
        fingerprint=config_fingerprint(cfg),
    )
    return report


def cmd_evaluate(args: argparse.Namespace) -> int:
    _, meta = _restore_model(args.run, args.checkpoint)
    cfg = resolve_config(meta["config_text"], {"data.dir": args.data} if args.data else None)
    split = _load_split(cfg)
    report = _evaluate_run(args.run, cfg, split, args.phase, args.checkpoint)
    _write_atomic(os.path.join(args.run, f"eval_{args.phase}.json"), report.to_json())
    csv_text = EvalReport.csv_header(report.ks) + "\n" + report.csv_row(cfg.trainer_mode) + "\n"
    _write_atomic(os.path.join(args.run, f"eval_{args.phase}.csv"), csv_text)
    print(EvalReport.csv_header(report.ks))
    print(report.csv_row(cfg.trainer_mode))
    return 0


def _train_and_test(cfg: ExperimentConfig, run_dir: str) -> EvalReport:
    split = _load_split(cfg)
    trainer.fit(split, cfg, run_dir)
    return _evaluate_run(run_dir, cfg, split, "test", "best")


def cmd_sweep(args: argparse.Namespace) -> int:
    if args.values:
        values = [float(v) for v in args.values.split(",")]
    else:
        values = list(PROPORTION_GRID if args.axis == "proportion" else LAMBDA_GRID)
    base_cfg = _resolve_from_args(args)
    label = os.path.basename(os.path.normpath(base_cfg.data_dir)) or "data"
    os.makedirs(args.out, exist_ok=True)
    rows = [f"axis,value,run,status,{EvalReport.csv_header(base_cfg.eval_ks).split(',', 1)[1]}"]
    for value in values:
        if args.axis == "proportion":
            extra = {"augment.eta": str(value), "augment.gamma": str(value), "augment.beta": str(value)}
        else:
            extra = {"loss.lambda": str(value)}
        run_label = f"{args.axis}_{value:g}"
        try:
            cfg = _resolve_from_args(args, extra)
            run_label = cfg.run_name(label)
            report = _train_and_test(cfg, os.path.join(args.out, run_label))
            metric_cells = report.csv_row("x").split(",", 1)[1]
            rows.append(f"{args.axis},{value:g},{run_label},ok,{metric_cells}")
        except Exception as err:  # record the cell failure, keep sweeping
            logger.exception("sweep cell %s=%s failed", args.axis, value)
            empty = ",".join("" for _ in range(2 * len(base_cfg.eval_ks)))
            rows.append(f"{args.axis},{value:g},{run_label},error: {err},{empty}")
    _write_atomic(os.path.join(args.out, "sweep.csv"), "\n".join(rows) + "\n")
    print(f"sweep table written to {os.path.join(args.out, 'sweep.csv')}")
    return 0


def cmd_ablate(args: argparse.Namespace) -> int:
    base_cfg = _resolve_from_args(args)
    if not base_cfg.augment_ops:
        raise ValueError("ablation needs at least one augmentation operator enabled")
    label = os.path.basename(os.path.normpath(base_cfg.data_dir)) or "data"
    os.makedirs(args.out, exist_ok=True)
    rows = ["label,HR@20,NDCG@20"]
    for mode in ("sasrec", "sasrec_aug", "cl4srec"):
        cfg = _resolve_from_args(args, {"trainer.mode": mode})
        run_dir = os.path.join(args.out, cfg.run_name(label))
        report = _train_and_test(cfg, run_dir)
        rows.append(f"{mode},{report.hr[20]:.6f},{report.ndcg[20]:.6f}")
        print(rows[-1])
    _write_atomic(os.path.join(args.out, "ablation.csv"), "\n".join(rows) + "\n")
    return 0


def cmd_simreport(args: argparse.Namespace) -> int:
    model, meta = _restore_model(args.run, "best")
    cfg = resolve_config(meta["config_text"], {"data.dir": args.data} if args.data else None)
    dataset = corpus.load_dataset(cfg.data_dir)
    split = corpus.leave_one_out_split(dataset.sequences, dataset.num_items)

    pairs: list[tuple[str, str]] = []
    with open(args.pairs, encoding="utf-8") as fh:
        for line in fh:
            parts = line.split()
            if len(parts) == 2:
                pairs.append((parts[0], parts[1]))

    needed_externals = {u for pair in pairs for u in pair}
    dense_by_external = {
        ext: dense for ext, dense in dataset.user_index.items()
        if ext in needed_externals and dense in split.train
    }
    vectors: dict[str, np.ndarray] = {}
    window = model.hyper.window
    for ext, dense in dense_by_external.items():
        ids = torch.from_numpy(corpus.make_window(split.full_sequence(dense), window).ids[None, :])
        with torch.no_grad():
            vectors[ext] = model.last_state(ids)[0].numpy()

    report = cosine_similarity_report(vectors, pairs)
    _write_atomic(args.out, report.to_csv())
    mean_text = "undefined" if report.mean is None else f"{report.mean:.4f}"
    print(
        f"{report.pairs_used} pair(s) reported, {report.pairs_skipped} skipped; mean cosine {mean_text}"
    )
    return 0


def cmd_synth(args: argparse.Namespace) -> int:
    if args.kind == "chain":
        rows = synthetic.successor_chain_rows(num_users=args.users, seed=args.seed or 0)
    else:
        rows = synthetic.clustered_rows(
            num_users=args.users,
            num_clusters=args.clusters,
            items_per_cluster=args.items_per_cluster,
            min_length=args.min_len,
            max_length=args.max_len,
            in_cluster_prob=args.in_cluster,
            popularity_tilt=args.tilt,
            interests_per_user=args.interests,
            interest_stickiness=args.stickiness,
            seed=args.seed or 0,
        )
    synthetic.write_raw(args.out, rows)
    print(f"{len(rows)} interactions written to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    shared = argparse.ArgumentParser(add_help=False)
    shared.add_argument("--config", help="config file of key = value lines")
    shared.add_argument("--seed", type=int, help="override trainer.seed")
    shared.add_argument("--set", action="append", metavar="KEY=VALUE", help="override any config key")

    parser = argparse.ArgumentParser(prog="clrec", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preprocess", parents=[shared], help="raw log file to dataset directory")
    p.add_argument("raw", help="raw interaction log")
    p.add_argument("--out", required=True, help="dataset directory to write")
    p.set_defaults(handler=cmd_preprocess)

    p = sub.add_parser("train", parents=[shared], help="train one run")
    p.add_argument("--out", required=True, help="run directory")
    p.add_argument("--data", help="dataset directory (overrides data.dir)")
    p.add_argument("--resume", action="store_true", help="continue from ckpt_last")
    p.set_defaults(handler=cmd_train)

    p = sub.add_parser("evaluate", parents=[shared], help="rank held-out items for a finished run")
    p.add_argument("--run", required=True, help="run directory with checkpoints")
    p.add_argument("--data", help="dataset directory (overrides the stored config)")
    p.add_argument("--phase", choices=("valid", "test"), default="test")
    p.add_argument("--checkpoint", choices=("best", "last"), default="best")
    p.set_defaults(handler=cmd_evaluate)

    p = sub.add_parser("sweep", parents=[shared], help="train and evaluate along one axis")
    p.add_argument("--axis", choices=("proportion", "lambda"), required=True)
    p.add_argument("--values", help="comma-separated values; defaults to the standard grid")
    p.add_argument("--out", required=True, help="sweep output directory")
    p.add_argument("--data", help="dataset directory (overrides data.dir)")
    p.set_defaults(handler=cmd_sweep)

    p = sub.add_parser("ablate", parents=[shared], help="three-mode comparison table")
    p.add_argument("--out", required=True, help="ablation output directory")
    p.add_argument("--data", help="dataset directory (overrides data.dir)")
    p.set_defaults(handler=cmd_ablate)

    p = sub.add_parser("simreport", parents=[shared], help="cosine-similarity histogram over user pairs")
    p.add_argument("--run", required=True, help="run directory with checkpoints")
    p.add_argument("--pairs", required=True, help="two-column file of external user ids")
    p.add_argument("--out", required=True, help="CSV path to write")
    p.add_argument("--data", help="dataset directory (overrides the stored config)")
    p.set_defaults(handler=cmd_simreport)

    p = sub.add_parser("synth", parents=[shared], help="generate a synthetic raw log")
    p.add_argument("--out", required=True, help="raw log path to write")
    p.add_argument("--kind", choices=("clustered", "chain"), default="clustered")
    p.add_argument("--users", type=int, default=2000)
    p.add_argument("--clusters", type=int, default=20)
    p.add_argument("--items-per-cluster", type=int, default=50, dest="items_per_cluster")
    p.add_argument("--min-len", type=int, default=8, dest="min_len")
    p.add_argument("--max-len", type=int, default=20, dest="max_len")
    p.add_argument("--in-cluster", type=float, default=0.8, dest="in_cluster")
    p.add_argument("--tilt", type=float, default=1.0)
    p.add_argument("--interests", type=int, default=1)
    p.add_argument("--stickiness", type=float, default=0.0)
    p.set_defaults(handler=cmd_synth)

    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.handler(args)
    except Exception as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
