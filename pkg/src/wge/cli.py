"""Command-line entry points: ``prepare``, ``train``, ``evaluate``, ``ablate``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import graphs as gv
from .config import ConfigError, RunConfig, resolve
from .data import TripleParseError, load_dataset
from .encoder import ABLATIONS, EncoderConfig, build_graphs
from .evaluation import evaluate_model
from .model import CheckpointError, ScoreWeights, WGEModel, load_checkpoint, save_checkpoint
from .training import DivergenceError, TrainConfig, train

log = logging.getLogger("wge")

CHECKPOINT_NAME = "checkpoint.wge"


def _out_dir(run: RunConfig) -> Path:
    out = Path(run.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _need_dataset(run: RunConfig) -> str:
    if not run.dataset_dir:
        raise ConfigError("dataset_dir is not set (use --dataset-dir, the config file or WGE_DATASET_DIR)")
    return run.dataset_dir


def cmd_prepare(run: RunConfig) -> dict:
    store, vocab = load_dataset(_need_dataset(run))
    out = _out_dir(run) / "prepared"
    out.mkdir(exist_ok=True)
    with open(out / "entities.tsv", "w", encoding="utf-8") as fh:
        fh.writelines(f"{i}\t{label}\n" for i, label in enumerate(vocab.entities))
    with open(out / "relations.tsv", "w", encoding="utf-8") as fh:
        fh.writelines(f"{i}\t{label}\n" for i, label in enumerate(vocab.relations))

    train_triples = store.train
    ef = gv.build_entity_focused(train_triples, vocab.n_entities)
    constraints, counts = gv.extract_rf_constraints(train_triples)
    kept = gv.filter_constraints(constraints, run.train.beta, counts)
    rf = gv.build_relation_focused(kept)
    levi = gv.build_levi(train_triples)
    ef.write_edge_list(out / "ef_edges.tsv")
    rf.write_edge_list(out / "rf_edges.tsv")
    levi.write_edge_list(out / "levi_edges.tsv")

    kept_pairs = {(c.r_s, c.r_o) for c in kept}
    with open(out / "rf_pairs.tsv", "w", encoding="utf-8") as fh:
        for r_s, r_o in gv.rank_pairs(counts):
            fh.write(f"{r_s}\t{r_o}\t{counts[(r_s, r_o)]}\t{int((r_s, r_o) in kept_pairs)}\n")
    summary = {
        "dataset_dir": str(run.dataset_dir),
        "n_entities": vocab.n_entities,
        "n_relations": vocab.n_relations,
        **{f"n_{name}": len(store.split(name)) for name in ("train", "valid", "test")},
        "beta": run.train.beta,
        "n_constraints": len(constraints),
        "n_pairs": len(counts),
        "n_kept_constraints": len(kept),
        "n_kept_pairs": len(kept_pairs),
        "ef_nodes": ef.n_nodes, "ef_edges": len(ef.edges),
        "rf_nodes": rf.n_nodes, "rf_edges": len(rf.edges),
        "levi_nodes": levi.n_nodes, "levi_edges": len(levi.edges),
        "vocab_digest": vocab.digest(),
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    run.write(_out_dir(run) / "config.txt")
    print(f"entities: {vocab.n_entities}  relations: {vocab.n_relations}  "
          f"train/valid/test: {summary['n_train']}/{summary['n_valid']}/{summary['n_test']}")
    print(f"RF constraints: {len(constraints)} over {len(counts)} relation pairs; "
          f"beta={run.train.beta} keeps {len(kept_pairs)} pairs ({len(kept)} constraints)")
    return summary


def _train_into(run: RunConfig, out: Path, store=None, vocab=None) -> dict:
    if store is None:
        store, vocab = load_dataset(_need_dataset(run))
    out.mkdir(parents=True, exist_ok=True)
    run.write(out / "config.txt")
    with open(out / "metrics.jsonl", "w", encoding="utf-8") as fh:
        def on_record(rec):
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
            fh.flush()
            if "mrr" in rec:
                log.info("epoch %d %s mrr=%.4f hits@10=%.4f", rec["epoch"], rec["split"], rec["mrr"], rec["hits@10"])
            else:
                log.info("epoch %d loss=%.4f", rec["epoch"], rec["loss"])

        try:
            result = train(run.train, store, on_record=on_record)
        except DivergenceError as exc:
            if exc.snapshot is not None:
                save_checkpoint(out / "last_good.wge", exc.snapshot, _meta(run, vocab, exc.epoch, None))
            raise
    save_checkpoint(out / CHECKPOINT_NAME, result.best_snapshot,
                    _meta(run, vocab, result.best_epoch, result.best_metrics))
    summary = {"variant": run.train.variant, "best_epoch": result.best_epoch,
               "split": run.train.eval_split if len(store.split(run.train.eval_split)) else "train",
               **(result.best_metrics or {})}
    (out / "best.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return summary


def _meta(run: RunConfig, vocab, epoch: int, metrics: dict | None) -> dict:
    return {
        "vocab_digest": vocab.digest(),
        "n_entities": vocab.n_entities,
        "n_relations": vocab.n_relations,
        "dataset_dir": str(run.dataset_dir),
        "train_config": run.train.to_dict(),
        "best_epoch": epoch,
        "best_metrics": metrics,
    }


def cmd_train(run: RunConfig) -> dict:
    summary = _train_into(run, _out_dir(run))
    _print_metrics(summary)
    return summary


def _print_metrics(summary: dict) -> None:
    print(f"best epoch {summary['best_epoch']} on {summary['split']}")
    for key in ("mrr", "hits@1", "hits@3", "hits@10"):
        if key in summary:
            print(f"  {key:<8}{summary[key]:.4f}")


def cmd_evaluate(run: RunConfig, checkpoint: str | None, split: str) -> dict:
    ckpt = Path(checkpoint) if checkpoint else Path(run.out_dir) / CHECKPOINT_NAME
    if not ckpt.is_file():
        raise FileNotFoundError(f"checkpoint not found: {ckpt}")
    params, meta = load_checkpoint(ckpt)
    dataset_dir = run.dataset_dir or meta.get("dataset_dir", "")
    if not dataset_dir:
        raise ConfigError("dataset_dir is not set and the checkpoint does not record one")
    store, vocab = load_dataset(dataset_dir)
    params, meta = load_checkpoint(ckpt, vocab_digest=vocab.digest())
    tc = TrainConfig(**meta["train_config"])
    graphs = build_graphs(store, tc.variant, tc.beta)
    model = WGEModel(tc.encoder_config(), graphs, tc.score_weights(), params=_as_params(params))
    report = evaluate_model(model, store, split)
    out = _out_dir(run)
    with open(out / f"eval_{split}.jsonl", "w", encoding="utf-8") as fh:
        for q in report.queries:
            fh.write(json.dumps({"triple": list(q.triple), "direction": q.direction, "rank": q.rank}) + "\n")
        fh.write(report.record(checkpoint=str(ckpt), epoch=meta.get("best_epoch")) + "\n")
    print(report.table())
    print(report.record(epoch=meta.get("best_epoch")))
    return report.metrics()


def _as_params(values: dict) -> dict:
    from .autodiff import Param
    return {name: Param(np.array(v), name=name) for name, v in values.items()}


def cmd_ablate(run: RunConfig, variant: str) -> list[dict]:
    variants = ("two-view",) + ABLATIONS if variant == "all" else (variant,)
    for v in variants:
        if v not in ABLATIONS and v != "two-view":
            raise ConfigError(f"unknown variant {v!r}; expected one of {', '.join(ABLATIONS)} or 'all'")
    store, vocab = load_dataset(_need_dataset(run))
    base = _out_dir(run) / "ablate"
    rows = []
    for v in variants:
        sub = RunConfig(dataset_dir=run.dataset_dir, out_dir=str(base / v), train=replace(run.train, variant=v))
        log.info("ablation variant %s", v)
        rows.append(_train_into(sub, base / v, store, vocab))
    with open(base / "ablation.jsonl", "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True) + "\n")
    print(f"{'variant':<18}{'mrr':>8}{'hits@10':>9}")
    for row in rows:
        print(f"{row['variant']:<18}{row.get('mrr', float('nan')):>8.4f}{row.get('hits@10', float('nan')):>9.4f}")
    return rows


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key = value config file")
    common.add_argument("--dataset-dir", help="directory holding train.txt/valid.txt/test.txt")
    common.add_argument("--out-dir", help="directory for all outputs")
    common.add_argument("--seed", type=int)
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override any config key (repeatable)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="wge", description="Two-view quaternion GNN link prediction.")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("prepare", parents=[common], help="build vocab, graph views and RF constraint statistics")
    p_train = sub.add_parser("train", parents=[common], help="train and keep the best validation checkpoint")
    p_train.add_argument("--variant", help="encoder variant (default two-view)")
    p_eval = sub.add_parser("evaluate", parents=[common], help="filtered ranking of a split with a checkpoint")
    p_eval.add_argument("--checkpoint", help=f"checkpoint path (default OUT_DIR/{CHECKPOINT_NAME})")
    p_eval.add_argument("--split", default="test", choices=["train", "valid", "test"])
    p_abl = sub.add_parser("ablate", parents=[common], help="train one ablation variant, or all of them")
    p_abl.add_argument("--variant", required=True, help=f"one of {', '.join(ABLATIONS)}, two-view, or all")
    return parser


def _overrides(args) -> dict:
    out = {"dataset_dir": args.dataset_dir, "out_dir": args.out_dir, "seed": args.seed}
    if args.command == "train" and args.variant:
        out["variant"] = args.variant
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        out[key.strip().replace("-", "_")] = value.strip()
    return out


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        run = resolve(args.config, _overrides(args))
        if args.command == "prepare":
            cmd_prepare(run)
        elif args.command == "train":
            cmd_train(run)
        elif args.command == "evaluate":
            cmd_evaluate(run, args.checkpoint, args.split)
        elif args.command == "ablate":
            cmd_ablate(run, args.variant)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (FileNotFoundError, TripleParseError, CheckpointError, DivergenceError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
