#!/usr/bin/env python3
"""Rebuild the committed fixture store under micro/fixtures.

Runs the real pipeline stages against a scripted backend and records every
request/response pair, so later replay runs hit the exact keys the stages
compute.  The scripted completions carry one logprob per character: -0.001
everywhere except inside deliberately "uncertain" entity items, which get
-0.5 so the confidence selection picks exactly those for correction.
"""
from __future__ import annotations

import re
import shutil
import sys
import tempfile
from pathlib import Path

ROOT = Path(__file__).resolve().parents[1]
sys.path.insert(0, str(ROOT / "src"))

from nergen import pipeline
from nergen.config import load_pipeline_config
from nergen.gateway import (
    CompletionRequest,
    CompletionResponse,
    CostLedger,
    Gateway,
    RecordingBackend,
    ReplayStore,
    TokenLogprob,
    Usage,
)

CONFIDENT = -0.001
UNCERTAIN = -0.5


def char_response(text: str, uncertain_ranges: list[tuple[int, int]], prompt_chars: int) -> CompletionResponse:
    logprobs = [CONFIDENT] * len(text)
    for start, end in uncertain_ranges:
        for i in range(start, end):
            logprobs[i] = UNCERTAIN
    return CompletionResponse(
        text=text,
        token_logprobs=tuple(
            TokenLogprob(ch, lp) for ch, lp in zip(text, logprobs)
        ),
        usage=Usage(prompt_chars // 4 + 1, len(text) // 4 + 1),
    )


def ner_text(blocks: list[tuple[str, list[tuple[str, bool]]]]) -> tuple[str, list[tuple[int, int]]]:
    """Assemble Natural Pair blocks, returning uncertain item char ranges."""
    parts: list[str] = []
    ranges: list[tuple[int, int]] = []
    pos = 0

    def emit(s: str) -> None:
        nonlocal pos
        parts.append(s)
        pos += len(s)

    for sentence, items in blocks:
        emit(f"Sentence: {sentence}\n")
        emit("Named Entities: [")
        for i, (item, uncertain) in enumerate(items):
            if i:
                emit(", ")
            if uncertain:
                ranges.append((pos, pos + len(item)))
            emit(item)
        emit("]\n\n")
    return "".join(parts), ranges


NER_RESPONSES = [
    [
        ("Bob visited Paris.", [("Bob (person)", False), ("Paris (location)", False)]),
        ("The Berlin Wall fell in 1989.", [("Berlin Wall (location)", True)]),
        ("France won the match.", [("France (person)", True)]),
        ("Everyone enjoyed Pluto Day.", [("Pluto Day (organization)", True)]),
        ("Atlantis rules the sea.", [("Atlantis (kingdom)", False)]),
    ],
    [
        ("Bob visited Paris.", [("Bob (person)", False), ("Paris (location)", False)]),
        ("Mary leads Acme Corp.", [("Mary (person)", False), ("Acme Corp (organization)", False)]),
        ("Tokyo hosted the games.", [("Tokyo (location)", False)]),
        ("The mayor spoke in Oslo.", [("Oslo (location)", True)]),
        ("Rivers flow.", []),
    ],
]

VERDICTS = {
    "France": "type: location",
    "Berlin Wall": "span: Berlin",
    "Oslo": "keep",
    "Pluto Day": "drop, not a named entity",
}


class ScriptedBackend:
    """Deterministic stand-in for the chat API, dispatching on request kind."""

    def __init__(self) -> None:
        self.ner_calls = 0

    def complete(self, request: CompletionRequest) -> CompletionResponse:
        prompt = "".join(m.content for m in request.messages)
        if request.kind == "attr-dim":
            text = "1. news topic\n2. writing style\n3. region\n"
        elif request.kind == "attr-val":
            if "writing style" in prompt:
                text = "1. formal\n2. casual\n"
            else:
                text = "1. sports\n2. politics\n3. science\n"
        elif request.kind == "ner":
            blocks = NER_RESPONSES[self.ner_calls % len(NER_RESPONSES)]
            self.ner_calls += 1
            text, ranges = ner_text(blocks)
            return char_response(text, ranges, len(prompt))
        elif request.kind == "correction":
            # demo items carry an Answer line; batch items follow the last one
            spans = re.findall(r"^Entity: (.*) \([^()]*\)$", prompt, re.M)
            items = spans[-_batch_size(prompt) :]
            text = "".join(
                f"{i}. {VERDICTS[s]}\n" for i, s in enumerate(items, start=1)
            )
        else:
            raise AssertionError(f"unexpected request kind {request.kind!r}")
        return char_response(text, [], len(prompt))


def _batch_size(prompt: str) -> int:
    """Count numbered items after the final demo answer."""
    tail = prompt.rsplit("\nAnswer:", 1)[-1]
    return len(re.findall(r"^\d+\. Sentence:", tail, re.M))


def main() -> None:
    micro = ROOT / "micro"
    fixtures = micro / "fixtures"
    if fixtures.exists():
        shutil.rmtree(fixtures)
    config = load_pipeline_config(micro / "pipeline.toml")
    backend = ScriptedBackend()
    store = ReplayStore(fixtures)

    def recording_gateway(cfg):
        return Gateway(
            RecordingBackend(backend, store),
            price_table=cfg.prices,
            ledger=CostLedger(),
            max_requests=cfg.max_requests,
        )

    pipeline.build_gateway = recording_gateway
    with tempfile.TemporaryDirectory() as tmp:
        for stage in ("attrs", "generate", "correct", "export"):
            result = pipeline.run_stage(config, Path(tmp) / "run", stage)
            print(f"[{stage}] {result.info}")
    files = sorted(p.relative_to(fixtures) for p in fixtures.rglob("*.json"))
    print(f"recorded {len(files)} fixture keys under {fixtures}")


if __name__ == "__main__":
    main()
