"""Command-line entry point: ``structra <verb> [flags]``."""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import analysis
from .backbone import load_external_backbone
from .corpus import DEFAULT_MAX_LEN, DEFAULT_MAX_SIZE, build_vocab, load_corpus, read_lines, toy_corpus
from .harness.config import ConfigError, TrainConfig, load_config
from .harness.data import load_csv_dataset, sinusoid_mixture, write_csv_series
from .harness.protocols import evaluate, naive_report, train, zero_shot_eval
from .hmm import load_hmm, save_hmm, train_hmm
from .model import load_model, save_model
from .patching import instance_normalize
from .semal import load_token_table

log = logging.getLogger("structra")

# CLI flag -> TrainConfig field
_CONFIG_FLAGS = {
    "states": "states", "topk": "topk", "patch_len": "patch_len", "stride": "stride",
    "horizon": "horizon", "input_len": "input_len", "epochs": "epochs", "lr": "lr",
    "seed": "seed", "few_shot": "few_shot", "freeze_prior": "freeze_prior",
}


class UsageError(Exception):
    pass


def _add_model_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key=value run config; flags override it")
    p.add_argument("--states", type=int)
    p.add_argument("--topk", type=int)
    p.add_argument("--patch-len", type=int)
    p.add_argument("--stride", type=int)
    p.add_argument("--horizon", type=int)
    p.add_argument("--input-len", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--few-shot", type=float)
    p.add_argument("--freeze-prior", action="store_true", default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="structra", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("gen-toy", help="write synthetic sinusoid CSVs and a toy text corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--length", type=int, default=2000)
    p.add_argument("--channels", type=int, default=3)
    p.add_argument("--lines", type=int, default=2000)

    p = sub.add_parser("train-hmm", help="fit the text HMM")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--states", type=int, default=10)
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--lr", type=float, default=0.05)
    p.add_argument("--seed", type=int)
    p.add_argument("--max-vocab", type=int, default=DEFAULT_MAX_SIZE)
    p.add_argument("--min-count", type=int, default=1)
    p.add_argument("--max-len", type=int, default=DEFAULT_MAX_LEN)

    p = sub.add_parser("align-train", help="train the aligned forecaster")
    p.add_argument("--dataset", required=True)
    p.add_argument("--hmm", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--token-table", help="container with an M x d_llm 'table' tensor")
    p.add_argument("--backbone", help="exported backbone weight container")
    _add_model_flags(p)

    for verb, text in (("evaluate", "score a model on a dataset's test split"),
                       ("transfer", "zero-shot: score a model on another dataset")):
        p = sub.add_parser(verb, help=text)
        p.add_argument("--model", required=True)
        p.add_argument("--dataset", required=True)
        p.add_argument("--out")
        if verb == "evaluate":
            p.add_argument("--split", choices=("train", "val", "test"), default="test")

    p = sub.add_parser("graph-export", help="text vs time transition graph")
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--threshold", type=float, default=analysis.EDGE_THRESHOLD)

    p = sub.add_parser("trace-states", help="before/after state probabilities for one window")
    p.add_argument("--model", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--window", type=int, default=0)
    p.add_argument("--channel", type=int, default=0)
    return parser


def _seed(args) -> int:
    if getattr(args, "seed", None) is not None:
        return args.seed
    env = os.environ.get("STRUCTRA_SEED")
    if env is None:
        return 0
    try:
        return int(env)
    except ValueError:
        raise UsageError(f"STRUCTRA_SEED must be an integer, got {env!r}") from None


def resolve_config(args) -> TrainConfig:
    try:
        cfg = load_config(args.config) if args.config else TrainConfig()
        overrides = {field: getattr(args, flag) for flag, field in _CONFIG_FLAGS.items()
                     if getattr(args, flag, None) is not None}
        if args.seed is None and "STRUCTRA_SEED" in os.environ:
            overrides["seed"] = _seed(args)
        return cfg.updated(**overrides)
    except (ConfigError, OSError) as exc:
        raise UsageError(str(exc)) from exc


def _write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _write_records(path, reports) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rep in reports:
            fh.write(json.dumps(rep.to_record(), sort_keys=True) + "\n")


def cmd_gen_toy(args) -> None:
    seed = _seed(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_csv_series(out / "toy_a.csv", sinusoid_mixture(args.length, args.channels, 24.0, seed=seed))
    write_csv_series(out / "toy_b.csv", sinusoid_mixture(args.length, args.channels, 32.0, seed=seed + 1))
    lines = toy_corpus(args.lines, np.random.default_rng(seed))
    (out / "corpus.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    print(f"wrote toy_a.csv, toy_b.csv and corpus.txt to {out}")


def cmd_train_hmm(args) -> None:
    seed = _seed(args)
    vocab = build_vocab(read_lines(args.corpus), args.max_vocab, args.min_count)
    seqs = load_corpus(args.corpus, vocab, args.max_len)
    hmm, trace = train_hmm(seqs, args.states, vocab.size, args.epochs, args.lr, seed)
    config = {"states": args.states, "epochs": args.epochs, "lr": args.lr, "seed": seed,
              "max_vocab": args.max_vocab, "min_count": args.min_count, "max_len": args.max_len,
              "corpus": Path(args.corpus).name, "sequences": len(seqs)}
    save_hmm(hmm, args.out, {"config": config, "seed": seed, "vocab_hash": vocab.digest(),
                             "tokens": vocab.tokens})
    _write_json(args.out + ".trace.json", {"config": config, "mean_nll": trace.mean_nll})
    print(f"hmm: {len(seqs)} sequences, M={vocab.size}, final mean NLL {trace.mean_nll[-1]:.4f}")


def cmd_align_train(args) -> None:
    cfg = resolve_config(args)
    hmm, hmm_meta = load_hmm(args.hmm)
    token_table = None
    if args.token_table:
        token_table, meta = load_token_table(args.token_table)
        if "vocab_hash" in meta and meta["vocab_hash"] != hmm_meta.get("vocab_hash", meta["vocab_hash"]):
            raise ValueError("token table vocabulary does not match the HMM vocabulary")
    backbone = None
    if args.backbone:
        backbone = load_external_backbone(args.backbone, expect={"d_llm": cfg.d_llm})
    tr, va, te = load_csv_dataset(args.dataset, cfg.input_len, cfg.horizon, cfg.split_ratios)
    model, trace = train(cfg, tr, va, hmm, token_table, backbone)
    meta = {"dataset": Path(args.dataset).stem, "hmm_vocab_hash": hmm_meta.get("vocab_hash")}
    save_model(model, args.out, meta)
    _write_json(args.out + ".trace.json", {"config": cfg.to_dict(), **meta,
                                           "train_loss": trace.train_loss, "val_mse": trace.val_mse})
    print(f"trained {cfg.epochs} epochs; final train loss {trace.train_loss[-1]:.5f}"
          + (f", val mse {trace.val_mse[-1]:.5f}" if trace.val_mse else ""))


def _split(args, model, tag):
    cfg = model.config
    splits = load_csv_dataset(args.dataset, cfg.input_len, cfg.horizon, cfg.split_ratios)
    return dict(zip(("train", "val", "test"), splits))[tag]


def cmd_evaluate(args) -> None:
    model, _ = load_model(args.model)
    split = _split(args, model, args.split)
    name = Path(args.dataset).stem
    reports = [evaluate(model, split, name), naive_report(split, model.config.seasonality, name)]
    reports[0].meta["model"] = "aligned-forecaster"
    _emit_reports(args, reports)


def cmd_transfer(args) -> None:
    model, meta = load_model(args.model)
    split = _split(args, model, "test")
    name = Path(args.dataset).stem
    rep = zero_shot_eval(model, split, name)
    rep.meta["trained_on"] = meta.get("dataset")
    _emit_reports(args, [rep, naive_report(split, model.config.seasonality, name)])


def _emit_reports(args, reports) -> None:
    if args.out:
        _write_records(args.out, reports)
    for rep in reports:
        print(f"{rep.meta.get('model', 'aligned-forecaster'):<20} {rep.row()}")


def cmd_graph_export(args) -> None:
    model, _ = load_model(args.model)
    a_text, a_time = model.text_trans.data, model.prior.trans().data
    graph = analysis.export_transition_graph(a_text, a_time, args.threshold, args.out)
    summary = analysis.structure_report(a_text, a_time, args.threshold)
    _write_json(args.out + ".summary.json", {"threshold": args.threshold, **summary})
    print(f"{len(graph.edges)} edges ({summary['edges_shared']} shared, {summary['edges_time-only']} "
          f"time-only, {summary['edges_text-only']} text-only); L1 mean {summary['l1_mean']:.6f}, "
          f"sum {summary['l1_sum']:.6f}")


def cmd_trace_states(args) -> None:
    model, _ = load_model(args.model)
    split = _split(args, model, "test")
    if not 0 <= args.window < len(split) or not 0 <= args.channel < split.inputs.shape[1]:
        raise ValueError("window or channel index out of range")
    x, _ = instance_normalize(split.inputs[args.window, args.channel])
    records = analysis.state_prob_trace(model, x)
    analysis.write_trace(records, args.out)
    print(f"wrote {len(records)} patch records to {args.out}")


COMMANDS = {
    "gen-toy": cmd_gen_toy, "train-hmm": cmd_train_hmm, "align-train": cmd_align_train,
    "evaluate": cmd_evaluate, "transfer": cmd_transfer, "graph-export": cmd_graph_export,
    "trace-states": cmd_trace_states,
}


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        COMMANDS[args.verb](args)
    except UsageError as exc:
        print(f"structra {args.verb}: usage error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # one-line diagnostic for any runtime failure
        print(f"structra {args.verb}: error: {exc}", file=sys.stderr)
        return 1
    return 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
