"""Command-line surface: generate, train, eval, parse, retrieve, gradcheck."""

from __future__ import annotations

import argparse
import json
import os
import sys

from .config import TrainConfig, config_to_text, load_config
from .synthgen import (
    corpus_stats,
    default_categories,
    generate_corpus,
    read_dataset,
    write_dataset,
)


def _categories(raw):
    return tuple(c.strip() for c in raw.split(",") if c.strip()) if raw else ()


def cmd_generate(args):
    grammars = default_categories(
        feat_dim=args.feat_dim,
        separation=args.separation,
        feature_scale=args.feature_scale,
        seed=args.seed,
        token_swap_prob=args.token_swap_prob,
    )
    train, test = generate_corpus(
        grammars,
        args.n_train,
        args.n_test,
        seed=args.seed,
        holdout_categories=_categories(args.holdout_categories),
    )
    os.makedirs(args.out_dir, exist_ok=True)
    write_dataset(os.path.join(args.out_dir, "train.jsonl"), train)
    write_dataset(os.path.join(args.out_dir, "test.jsonl"), test)
    stats = {"train": corpus_stats(train), "test": corpus_stats(test)}
    with open(os.path.join(args.out_dir, "corpus_stats.json"), "w") as fh:
        json.dump(stats, fh, sort_keys=True, indent=2)
        fh.write("\n")
    print(f"wrote {len(train)} train / {len(test)} test instances to {args.out_dir}")
    return 0


def cmd_train(args):
    from .trainer import evaluate, train, write_report

    config = load_config(args.config) if args.config else TrainConfig()
    if args.seed is not None:
        import dataclasses

        config = dataclasses.replace(config, seed=args.seed)
    instances = read_dataset(args.data)
    eval_instances = read_dataset(args.eval_data) if args.eval_data else None
    model, history = train(
        config,
        instances,
        args.out_dir,
        eval_instances=eval_instances,
        resume_from=args.checkpoint,
        holdout_categories=_categories(args.holdout_categories),
    )
    if history:
        last = history[-1]
        print(
            f"trained {len(history)} epochs; final loss "
            f"{last.get('loss_total', float('nan')):.4f}"
        )
    if eval_instances:
        report = evaluate(
            model, config, eval_instances, seed=config.seed,
            holdout_categories=_categories(args.holdout_categories),
        )
        write_report(args.out_dir, report)
        print(report.to_text(), end="")
    return 0


def cmd_eval(args):
    from .trainer import evaluate, load_model, parse_dump, write_report

    model, config, _ = load_model(args.checkpoint)
    instances = read_dataset(args.data)
    report = evaluate(
        model, config, instances, seed=args.seed,
        holdout_categories=_categories(args.holdout_categories),
    )
    brackets = None
    if args.dump_brackets:
        brackets = parse_dump(model, config, instances, seed=args.seed)
    write_report(args.out_dir, report, dump_brackets=brackets)
    print(report.to_text(), end="")
    return 0


def cmd_parse(args):
    from .trainer import load_model, parse_dump

    model, config, _ = load_model(args.checkpoint)
    instances = read_dataset(args.data)
    if args.limit:
        instances = instances[: args.limit]
    lines = parse_dump(model, config, instances, seed=args.seed,
                       labeled=args.labeled)
    text = "\n".join(lines)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text + "\n")
    else:
        print(text)
    return 0


def cmd_retrieve(args):
    from .trainer import decode_instances, load_model, _pair_scorer

    model, config, _ = load_model(args.checkpoint)
    instances = read_dataset(args.data)
    for idx, name in ((args.lang_index, "lang-index"), (args.vis_index, "vis-index")):
        if not 0 <= idx < len(instances):
            print(f"error: --{name} {idx} out of range (corpus has "
                  f"{len(instances)} instances)", file=sys.stderr)
            return 1
    from .trainer import resolve_config

    config = resolve_config(config, instances)
    results = decode_instances(model, config, instances, seed=args.seed)
    scorer = _pair_scorer(config, results, instances)
    score = scorer(args.lang_index, args.vis_index)
    match = scorer(args.lang_index, args.lang_index)
    print(
        f"alignment({instances[args.lang_index].id} -> "
        f"{instances[args.vis_index].id}) = {score:.6f}"
    )
    print(
        f"alignment({instances[args.lang_index].id} -> its own image) = "
        f"{match:.6f}"
    )
    return 0


def cmd_gradcheck(args):
    from .gradcheck import run_all

    ok, lines = run_all(quick=args.quick, seed=args.seed)
    for line in lines:
        print(line)
    return 0 if ok else 1


def build_parser():
    parser = argparse.ArgumentParser(
        prog="pairgram",
        description="Joint grammar induction over paired token/part sequences",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="sample a synthetic paired corpus")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-train", type=int, default=160)
    p.add_argument("--n-test", type=int, default=48)
    p.add_argument("--feat-dim", type=int, default=16)
    p.add_argument("--separation", type=float, default=4.0)
    p.add_argument("--feature-scale", type=float, default=1.0)
    p.add_argument("--token-swap-prob", type=float, default=0.0)
    p.add_argument("--holdout-categories", default="",
                   help="comma-separated categories excluded from the train split")
    p.set_defaults(fn=cmd_generate)

    p = sub.add_parser("train", help="train the joint model")
    p.add_argument("--data", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--checkpoint", default=None, help="resume from this file")
    p.add_argument("--eval-data", default=None)
    p.add_argument("--holdout-categories", default="")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--holdout-categories", default="")
    p.add_argument("--dump-brackets", action="store_true")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("parse", help="emit bracketed trees for instances")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--limit", type=int, default=0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--labeled", action="store_true",
                   help="also print labeled max-probability parses")
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_parse)

    p = sub.add_parser("retrieve", help="score one language/vision pair")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--lang-index", type=int, required=True)
    p.add_argument("--vis-index", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_retrieve)

    p = sub.add_parser("gradcheck", help="run the finite-difference suites")
    p.add_argument("--quick", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_gradcheck)

    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
