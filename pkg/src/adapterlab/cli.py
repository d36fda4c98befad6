"""Command-line entry points: train, evaluate, generate, gradcheck, param-count.

Every config key is mirrored as a ``--key value`` flag (underscores become
hyphens); flags override the config file, which overrides defaults. All
subcommands exit nonzero on any error.
"""

from __future__ import annotations

import argparse
import dataclasses
import os
import sys

import numpy as np

from .config import ConfigError, RunConfig, parse_config, write_config
from .data import (
    load_paraphrase_tsv,
    load_sentiment_tsv,
    load_sonnets,
    synth_paraphrase,
    synth_sentiment,
    synth_sonnets,
)
from .gradcheck_suite import gradcheck_battery
from .model import GPT
from .runio import MetricsWriter, load_checkpoint, read_header, save_checkpoint
from .tokenizer import byte_level_vocab, decode, encode, load_vocab
from .training import ParaphraseTask, SentimentClassifier, SentimentTask, SonnetTask, train_loop

_TOY_TRAIN_N = 64
_TOY_DEV_N = 32


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    for f in dataclasses.fields(RunConfig):
        parser.add_argument(f"--{f.name.replace('_', '-')}", dest=f.name, default=None, metavar="V")


def _overrides(args: argparse.Namespace) -> dict[str, str]:
    names = {f.name for f in dataclasses.fields(RunConfig)}
    return {k: v for k, v in vars(args).items() if k in names and v is not None}


def _build_vocab(cfg: RunConfig):
    if cfg.vocab_path and cfg.merges_path:
        return load_vocab(cfg.vocab_path, cfg.merges_path)
    # end-of-text lives at id 256 so the sonnet task can mark poem ends
    return byte_level_vocab(include_end_of_text=True)


def _n_classes(task: str) -> int:
    return {"sst": 5, "cfimdb": 2}[task]


def _load_records(cfg: RunConfig, split: str):
    path = cfg.train_path if split == "train" else cfg.dev_path
    n_toy = _TOY_TRAIN_N if split == "train" else _TOY_DEV_N
    seed = cfg.seed if split == "train" else cfg.seed + 10_000
    if cfg.task in ("sst", "cfimdb"):
        if path:
            return load_sentiment_tsv(path, _n_classes(cfg.task))
        return synth_sentiment(n_toy, _n_classes(cfg.task), seed=seed)
    if cfg.task == "paraphrase":
        if path:
            return load_paraphrase_tsv(path)
        return synth_paraphrase(n_toy, seed=seed)
    if path:
        return load_sonnets(path)
    return synth_sonnets(max(4, n_toy // 8), seed=seed)


def _build_task(cfg: RunConfig, vocab, train_records, dev_records):
    if cfg.task in ("sst", "cfimdb"):
        return SentimentTask(train_records, dev_records, vocab, _n_classes(cfg.task), cfg.max_seq_len)
    if cfg.task == "paraphrase":
        return ParaphraseTask(train_records, dev_records, vocab, cfg.max_seq_len)
    return SonnetTask(
        train_records,
        dev_records,
        vocab,
        cfg.max_seq_len,
        gen_tokens=cfg.max_new_tokens,
        temperature=cfg.temperature,
        top_p=cfg.top_p,
    )


def _build_model(cfg: RunConfig, vocab):
    gpt = GPT(cfg.model_config(vocab_size=len(vocab)), seed=cfg.seed)
    if cfg.task in ("sst", "cfimdb"):
        return SentimentClassifier(gpt, _n_classes(cfg.task), seed=cfg.seed)
    return gpt


def _gpt_of(model):
    return model.gpt if isinstance(model, SentimentClassifier) else model


def _cmd_train(args) -> int:
    cfg = parse_config(args.config, _overrides(args))
    os.makedirs(cfg.out_dir, exist_ok=True)
    vocab = _build_vocab(cfg)
    train_records = _load_records(cfg, "train")
    dev_records = _load_records(cfg, "dev")
    task = _build_task(cfg, vocab, train_records, dev_records)
    model = _build_model(cfg, vocab)
    write_config(cfg, os.path.join(cfg.out_dir, "config.txt"))
    metrics_path = os.path.join(cfg.out_dir, "metrics.jsonl")
    if os.path.exists(metrics_path):
        os.remove(metrics_path)
    with MetricsWriter(metrics_path) as writer:
        records = train_loop(model, task, cfg.train_config(), writer=writer)
    ckpt_path = os.path.join(cfg.out_dir, "model.ckpt")
    save_checkpoint(model, ckpt_path, run_config=cfg, seed=cfg.seed)
    dev_scores = [r["value"] for r in records if r["split"] == "dev"]
    total, trainable = model.param_counts()
    print(f"task={cfg.task} ffn_kind={cfg.ffn_kind} steps={records[-1]['step']}")
    print(f"params total={total} trainable={trainable}")
    print(f"best dev {task.metric_name}={max(dev_scores):.4f}")
    print(f"checkpoint: {ckpt_path}")
    print(f"metrics: {metrics_path}")
    return 0


def _restore(checkpoint: str):
    header = read_header(checkpoint)
    if not header.get("run_config"):
        raise ConfigError(f"{checkpoint}: no run_config snapshot stored")
    cfg = RunConfig(**header["run_config"])
    vocab = _build_vocab(cfg)
    model = _build_model(cfg, vocab)
    load_checkpoint(checkpoint, model)
    return cfg, vocab, model


def _cmd_evaluate(args) -> int:
    cfg, vocab, model = _restore(args.checkpoint)
    if args.data:
        cfg = dataclasses.replace(cfg, dev_path=args.data)
    dev_records = _load_records(cfg, "dev")
    task = _build_task(cfg, vocab, [], dev_records)
    model.eval()
    metric = task.evaluate(model)
    print(f"task={cfg.task} split=dev {task.metric_name}={metric:.4f} n={len(dev_records)}")
    return 0


def _cmd_generate(args) -> int:
    cfg, vocab, model = _restore(args.checkpoint)
    gpt = _gpt_of(model)
    prompt_ids = encode(args.prompt, vocab)
    if not prompt_ids:
        raise ValueError("prompt encodes to zero tokens")
    out = gpt.generate(
        prompt_ids,
        max_new_tokens=args.max_new_tokens if args.max_new_tokens is not None else cfg.max_new_tokens,
        temperature=args.temperature if args.temperature is not None else cfg.temperature,
        top_p=args.top_p if args.top_p is not None else cfg.top_p,
        seed=args.seed if args.seed is not None else cfg.seed,
        end_of_text_id=vocab.end_of_text_id,
    )
    print(decode([t for t in out if t != vocab.end_of_text_id], vocab))
    return 0


def _cmd_gradcheck(args) -> int:
    results = gradcheck_battery(seed=args.seed or 0)
    worst = 0.0
    for name, err in results.items():
        status = "ok" if err < 1e-4 else "FAIL"
        print(f"{name:<18} max relative error {err:.3e}  {status}")
        worst = max(worst, err)
    print(f"worst: {worst:.3e}")
    return 0 if worst < 1e-4 else 1


def _cmd_param_count(args) -> int:
    cfg = parse_config(args.config, _overrides(args))
    vocab = _build_vocab(cfg)
    model = _build_model(cfg, vocab)
    total, trainable = model.param_counts()
    frozen = total - trainable
    print(f"ffn_kind={cfg.ffn_kind} d_model={cfg.d_model} n_layers={cfg.n_layers}")
    print(f"total={total} trainable={trainable} frozen={frozen}")
    for name, p in model.named_parameters().items():
        flag = "train" if p.trainable else "frozen"
        print(f"  {name:<40} {str(p.shape):<16} {p.data.size:>8} {flag}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="adapterlab", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train a model and write a run directory")
    p_train.add_argument("--config", default=None, help="key = value config file")
    _add_config_flags(p_train)
    p_train.set_defaults(func=_cmd_train)

    p_eval = sub.add_parser("evaluate", help="score a checkpoint on a dev set")
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--data", default=None, help="dataset path (default: the built-in toy set)")
    p_eval.set_defaults(func=_cmd_evaluate)

    p_gen = sub.add_parser("generate", help="sample a completion from a checkpoint")
    p_gen.add_argument("--checkpoint", required=True)
    p_gen.add_argument("--prompt", required=True)
    p_gen.add_argument("--max-new-tokens", type=int, default=None)
    p_gen.add_argument("--temperature", type=float, default=None)
    p_gen.add_argument("--top-p", type=float, default=None)
    p_gen.add_argument("--seed", type=int, default=None)
    p_gen.set_defaults(func=_cmd_generate)

    p_gc = sub.add_parser("gradcheck", help="run the finite-difference layer battery")
    p_gc.add_argument("--seed", type=int, default=0)
    p_gc.set_defaults(func=_cmd_gradcheck)

    p_pc = sub.add_parser("param-count", help="report total and trainable parameters")
    p_pc.add_argument("--config", default=None)
    _add_config_flags(p_pc)
    p_pc.set_defaults(func=_cmd_param_count)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:  # CLI boundary: report and exit nonzero
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
