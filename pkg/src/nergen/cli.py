"""Command-line entry point.

Pipeline stages (attrs, entities, generate, correct, export) take a config
file and a run directory; eval and cost work directly on files.  Exit codes:
0 success, 2 configuration problem, 3 request budget exhausted, 4 missing
prerequisite (including a fixture-store miss in replay mode).
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .config import ConfigError, load_pipeline_config
from .diversity import EmptyPool
from .evaluation import format_report
from .gateway import BudgetExceeded, ReplayMiss
from .pipeline import (
    STAGES,
    MissingPrerequisite,
    run_cost,
    run_eval,
    run_stage,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_BUDGET = 3
EXIT_PREREQ = 4


def _add_stage_parser(sub, stage: str, help_text: str):
    p = sub.add_parser(stage, help=help_text)
    p.add_argument("--config", required=True, help="pipeline config (TOML)")
    p.add_argument("--out", default="run", help="run directory (default: run)")
    p.add_argument("--seed", type=int, default=None, help="override [run].seed")
    p.add_argument(
        "--backend",
        choices=("replay", "record", "live"),
        default=None,
        help="override [backend].mode",
    )
    p.set_defaults(stage=stage)
    return p


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nergen",
        description="Synthesize, self-correct, and export NER training data.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    _add_stage_parser(sub, "attrs", "ask the model for attribute values")
    _add_stage_parser(sub, "entities", "ask the model for entity term pools")
    _add_stage_parser(sub, "generate", "generate and validate annotated samples")
    _add_stage_parser(sub, "correct", "self-correct low-confidence annotations")
    _add_stage_parser(sub, "export", "write the training files")

    p_eval = sub.add_parser("eval", help="score predictions against gold CoNLL")
    p_eval.add_argument("gold", help="gold CoNLL file")
    p_eval.add_argument("pred", help="prediction CoNLL file")
    p_eval.add_argument("--out", default="run", help="output directory")
    p_eval.add_argument(
        "--strict-predictions",
        action="store_true",
        help="reject malformed prediction tag sequences instead of skipping them",
    )
    p_eval.set_defaults(stage=None)

    p_cost = sub.add_parser("cost", help="summarize request spend for a run")
    p_cost.add_argument("--out", default="run", help="run directory")
    p_cost.set_defaults(stage=None)
    return parser


def _run_pipeline_stage(args) -> int:
    config = load_pipeline_config(
        args.config, seed_override=args.seed, backend_override=args.backend
    )
    result = run_stage(config, args.out, args.stage)
    run_dir = Path(args.out)
    print(f"[{result.stage}] wrote:")
    for name in result.artifacts:
        print(f"  {run_dir / name}")
    print(json.dumps(result.info, sort_keys=True, ensure_ascii=False, indent=2))
    return EXIT_OK


def _run_eval(args) -> int:
    exact, partial = run_eval(
        args.gold,
        args.pred,
        args.out,
        tolerant_predictions=not args.strict_predictions,
    )
    print(format_report(exact))
    print(format_report(partial), end="")
    print(f"wrote {Path(args.out) / 'eval.txt'} and eval.json")
    return EXIT_OK


def _run_cost(args) -> int:
    print(run_cost(args.out), end="")
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "eval":
            return _run_eval(args)
        if args.command == "cost":
            return _run_cost(args)
        return _run_pipeline_stage(args)
    except (ConfigError, EmptyPool) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except BudgetExceeded as exc:
        print(f"budget exhausted: {exc}", file=sys.stderr)
        return EXIT_BUDGET
    except (MissingPrerequisite, ReplayMiss) as exc:
        print(f"missing prerequisite: {exc}", file=sys.stderr)
        return EXIT_PREREQ


if __name__ == "__main__":
    sys.exit(main())
