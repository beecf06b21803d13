"""Command-line entry point.

One subcommand per pipeline stage plus ``run-all``.  Configuration comes
from an optional JSON file (--config) with flag overrides on top; defaults
are the baseline settings (hard tokenization, 400-token code window,
200-token comments, 100-token targets, 2000/8000 vocabulary, beam 10,
coverage off).

Exit codes: 0 ok, 2 configuration error, 3 data/prerequisite error,
4 training divergence.
"""

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

from .gerrit import GerritError
from .neural.training import TrainingDiverged
from .pipeline import (
    STAGE_ORDER,
    ConfigError,
    PipelineConfig,
    StageError,
    load_config,
    run_all,
    run_stage,
    stage_report,
)

_DEFAULTS = PipelineConfig()

_FLAG_SPECS = [
    # (flag, dest, type, help)
    ("--workdir", "workdir", str, "artifact directory"),
    ("--fixtures", "fixtures", str, "recorded-response directory (or $REVFIX_FIXTURES)"),
    ("--endpoint", "endpoint", str, "review server base URL (or $REVFIX_GERRIT_BASE)"),
    ("--auth-token", "auth_token", str, "static bearer token for the review server"),
    ("--query", "query", str, "change search query for mining"),
    ("--page-size", "page_size", int, "changes fetched per page"),
    ("--rate-limit", "rate_limit", float, "request rate limit per second"),
    ("--jobs", "jobs", int, "parallel fetch workers inside a stage"),
    ("--test-fraction", "test_fraction", float, "most-recent fraction per project held out"),
    ("--near-window", "near_window", int, "max review-line distance to the paired change"),
    ("--variant", "variant", str, "cc (code+comment) or c (code only)"),
    ("--token-mode", "token_mode", str, "hard (lossless) or soft tokenization"),
    ("--context-window", "context_window", int, "code token window W"),
    ("--comment-limit", "comment_limit", int, "comment tokens kept (head)"),
    ("--target-limit", "target_limit", int, "max target tokens"),
    ("--code-vocab-size", "code_vocab_size", int, "code-side vocabulary size"),
    ("--comment-vocab-size", "comment_vocab_size", int, "comment-side vocabulary size"),
    ("--embed-dim", "embed_dim", int, "embedding width"),
    ("--encoder-hidden", "encoder_hidden", int, "encoder hidden width per direction"),
    ("--coverage-weight", "coverage_weight", float, "coverage loss weight"),
    ("--dropout", "dropout", float, "dropout on embeddings and decoder input"),
    ("--seed", "seed", int, "seed for init, batching, dropout"),
    ("--steps", "steps", int, "training steps"),
    ("--batch-size", "batch_size", int, "training batch size"),
    ("--lr", "learning_rate", float, "SGD learning rate"),
    ("--clip-norm", "clip_norm", float, "global gradient-norm clip"),
    ("--eval-interval", "eval_interval", int, "steps between validation evals"),
    ("--patience", "patience", int, "stale evals before halving the rate"),
    ("--valid-fraction", "valid_fraction", float, "train slice used for validation"),
    ("--beam-k", "beam_k", int, "beam width"),
    ("--top-n", "top_n", int, "suggestions returned per sample"),
]

_BOOL_SPECS = [
    ("--coverage", "coverage", "enable the coverage mechanism"),
    ("--include-insert-at-head", "include_insert_at_head", "keep insertions before line 1"),
    ("--length-normalize", "length_normalize", "normalize beam scores by length"),
    ("--no-merge-duplicates", "merge_duplicates", "keep duplicate suggestion texts"),
    ("--force", "force", "ignore config-fingerprint conflicts"),
]


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, default=None, help="JSON config file")
    for flag, dest, typ, help_text in _FLAG_SPECS:
        default = getattr(_DEFAULTS, dest)
        parser.add_argument(
            flag, dest=dest, type=typ, default=None, help=f"{help_text} (default: {default})"
        )
    for flag, dest, help_text in _BOOL_SPECS:
        default = getattr(_DEFAULTS, dest)
        if flag.startswith("--no-"):
            parser.add_argument(
                flag,
                dest=dest,
                action="store_const",
                const=False,
                default=None,
                help=f"{help_text} (default: {default})",
            )
        else:
            parser.add_argument(
                flag,
                dest=dest,
                action="store_const",
                const=True,
                default=None,
                help=f"{help_text} (default: {default})",
            )


def _config_from_args(args: argparse.Namespace) -> PipelineConfig:
    field_names = {f.name for f in dataclasses.fields(PipelineConfig)}
    overrides = {k: v for k, v in vars(args).items() if k in field_names}
    return load_config(args.config, overrides)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="revfix",
        description="Learn code-fix suggestions from review history and emit ranked patches.",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)
    descriptions = {
        "mine": "fetch review events from fixtures or a live server",
        "extract": "events -> deduplicated triples + chronological split",
        "localize": "pair each comment with its nearest change and cut edit regions",
        "build-vocab": "frequency-ranked dual vocabulary from the training split",
        "prepare": "framed source/target datasets for the configured variant",
        "train": "train the pointer-generator on the prepared dataset",
        "suggest": "beam-search fix suggestions for the test split",
        "evaluate": "top-k exact-match report",
        "report": "print the evaluation report",
        "run-all": "run every stage in order",
    }
    for name in STAGE_ORDER + ["run-all"]:
        p = sub.add_parser(name, help=descriptions[name])
        _add_config_flags(p)
        if name == "report":
            p.add_argument("--csv", type=Path, default=None, help="append a CSV row here")
            p.add_argument("--row-name", type=str, default="run", help="CSV row label")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        cfg = _config_from_args(args)
        if args.command == "run-all":
            run_all(cfg)
        elif args.command == "report":
            stage_report(cfg, csv_path=args.csv, row_name=args.row_name)
        else:
            run_stage(args.command, cfg)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except TrainingDiverged as e:
        print(f"training diverged: {e}", file=sys.stderr)
        return 4
    except (StageError, GerritError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
