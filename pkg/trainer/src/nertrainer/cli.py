"""Command-line entry point: train on a config file, then score a test file.

Config layout (paths resolve relative to the config file)::

    [data]
    train = "train.conll"
    weights = "train.weights"   # optional sidecar
    test = "test.conll"         # optional; triggers predict-and-score

    [training]                  # optional; fields mirror TrainConfig
    epochs = 16

    [output]
    dir = "trainer-out"         # default "trainer-out"
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from dataclasses import dataclass
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from .training import TrainConfig, predict_and_score, train

EXIT_OK = 0
EXIT_ERROR = 2

_SECTIONS = {"data", "training", "output"}
_DATA_KEYS = {"train", "weights", "test"}
_OUTPUT_KEYS = {"dir"}
_TRAINING_KEYS = {field.name for field in dataclasses.fields(TrainConfig)}


@dataclass(frozen=True)
class RunSetup:
    train: Path
    weights: Path | None
    test: Path | None
    out_dir: Path
    config: TrainConfig


def _check_keys(table: dict, allowed: set[str], where: str) -> None:
    unknown = sorted(set(table) - allowed)
    if unknown:
        raise ValueError(f"unknown key(s) in {where}: {', '.join(unknown)}")


def load_setup(path) -> RunSetup:
    path = Path(path)
    with open(path, "rb") as fh:
        raw = tomllib.load(fh)
    _check_keys(raw, _SECTIONS, str(path))
    data = raw.get("data")
    if not isinstance(data, dict) or "train" not in data:
        raise ValueError(f"{path}: a [data] table with a train file is required")
    _check_keys(data, _DATA_KEYS, "[data]")
    _check_keys(raw.get("training", {}), _TRAINING_KEYS, "[training]")
    _check_keys(raw.get("output", {}), _OUTPUT_KEYS, "[output]")
    base = path.parent

    def resolve(name: str) -> Path | None:
        value = data.get(name)
        if value is None:
            return None
        resolved = base / value
        if not resolved.exists():
            raise FileNotFoundError(f"[data] {name}: no such file: {resolved}")
        return resolved

    config = TrainConfig(**raw.get("training", {}))
    out_dir = base / raw.get("output", {}).get("dir", "trainer-out")
    train_path = resolve("train")
    assert train_path is not None
    return RunSetup(train_path, resolve("weights"), resolve("test"), out_dir, config)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ner-trainer",
        description="Train a token classifier on a CoNLL corpus and score it.",
    )
    parser.add_argument("config", help="run configuration (TOML)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        setup = load_setup(args.config)
        result = train(setup.train, setup.weights, setup.config, setup.out_dir)
        print(f"trained on {setup.train}")
        print(f"  model: {result.model_path}")
        print(f"  log:   {result.log_path}")
        print(f"  final loss: {result.epoch_losses[-1]:.6f}")
        if setup.test is not None:
            outcome = predict_and_score(result, setup.test, setup.out_dir)
            print(f"scored against {setup.test}")
            print(f"  predictions: {outcome.predictions_path}")
            print(f"  scores:      {outcome.scores_path}")
            print(json.dumps(outcome.scores.as_obj(), indent=2, sort_keys=True))
    except (ValueError, OSError, tomllib.TOMLDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    return EXIT_OK


if __name__ == "__main__":
    raise SystemExit(main())
