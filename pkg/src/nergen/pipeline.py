"""Stage orchestration over an append-only run directory.

Stages write their artifacts atomically (temp file + rename) into one run
directory and never touch the outputs of earlier stages; re-running a stage
rewrites only its own files.  With a seeded config and a recorded fixture
store, a rerun reproduces every artifact byte for byte.

Stage chain: attrs -> entities -> generate -> correct -> export.  The eval
and cost verbs read files and can run at any point.
"""
from __future__ import annotations

import hashlib
import json
import os
import random
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

from . import dataio, evaluation
from .config import ClassGuide, ConfigError, PipelineConfig
from .correction import (
    AnnotationRecord,
    apply_directives,
    bind_actions,
    lint_correction_config,
    records_for_sample,
    select_for_correction,
)
from .diversity import (
    AttributePool,
    DiversityConfig,
    EntityPool,
    load_pools,
    render_requirement,
    sample_config_x,
    sample_config_xy,
    sample_config_y,
)
from .gateway import (
    CostLedger,
    Gateway,
    LedgerEntry,
    LiveBackend,
    RecordingBackend,
    ReplayBackend,
    ReplayStore,
)
from .parsing import (
    count_raw_samples,
    parse_correction_response,
    parse_entity_list,
    parse_generation,
)
from .prompting import (
    PromptBundle,
    build_attr_dim_prompt,
    build_attr_value_prompt,
    build_correction_prompt,
    build_entity_prompt,
    build_sample_prompt,
    load_template_pack,
)
from .schema import Annotation, NerSample, dedup_indices
from decimal import Decimal

STAGES = ("attrs", "entities", "generate", "correct", "export")

ATTR_POOL_FILE = "pools.attrs.toml"
ENTITY_POOL_FILE = "pools.entities.toml"


class MissingPrerequisite(RuntimeError):
    """A stage needs an artifact that no earlier stage has produced."""


@dataclass(frozen=True)
class StageResult:
    stage: str
    artifacts: tuple[str, ...]
    info: dict


# ---------------------------------------------------------------------------
# Run-directory plumbing


def atomic_write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
    os.replace(tmp, path)


def file_digest(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def stage_rng(seed: int | None, stage: str) -> random.Random:
    if seed is None:
        return random.Random()
    return random.Random(f"{seed}:{stage}")


def _update_manifest(run_dir: Path, result: StageResult) -> None:
    path = run_dir / "manifest.json"
    manifest = (
        json.loads(path.read_text(encoding="utf-8"))
        if path.exists()
        else {"stages": {}, "files": {}}
    )
    manifest["stages"][result.stage] = result.info
    for name in result.artifacts:
        manifest["files"][name] = file_digest(run_dir / name)
    atomic_write_text(
        path, json.dumps(manifest, sort_keys=True, ensure_ascii=False, indent=2) + "\n"
    )


def _persist_ledger(run_dir: Path, stage: str, ledger: CostLedger) -> None:
    path = run_dir / "ledger.jsonl"
    existing = path.read_text(encoding="utf-8") if path.exists() else ""
    lines = [
        json.dumps(
            {
                "stage": stage,
                "request_index": e.request_index,
                "kind": e.kind,
                "model": e.model_id,
                "prompt_tokens": e.prompt_tokens,
                "completion_tokens": e.completion_tokens,
                "dollars": str(e.dollars),
            },
            sort_keys=True,
        )
        + "\n"
        for e in ledger.entries
    ]
    atomic_write_text(path, existing + "".join(lines))


def _load_ledger(run_dir: Path) -> CostLedger:
    ledger = CostLedger()
    path = run_dir / "ledger.jsonl"
    if not path.exists():
        return ledger
    for line in path.read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        obj = json.loads(line)
        ledger.record(
            LedgerEntry(
                request_index=obj["request_index"],
                kind=obj["kind"],
                model_id=obj["model"],
                prompt_tokens=obj["prompt_tokens"],
                completion_tokens=obj["completion_tokens"],
                dollars=Decimal(obj["dollars"]),
            )
        )
    return ledger


def build_gateway(config: PipelineConfig) -> Gateway:
    backend_cfg = config.backend
    if backend_cfg.mode == "replay":
        backend = ReplayBackend(ReplayStore(backend_cfg.fixtures))
    elif backend_cfg.mode == "record":
        live = LiveBackend(
            base_url=backend_cfg.base_url, api_key_env=backend_cfg.api_key_env
        )
        backend = RecordingBackend(live, ReplayStore(backend_cfg.fixtures))
    else:
        backend = LiveBackend(
            base_url=backend_cfg.base_url, api_key_env=backend_cfg.api_key_env
        )
    return Gateway(
        backend,
        price_table=config.prices,
        ledger=CostLedger(),
        max_requests=config.max_requests,
    )


# ---------------------------------------------------------------------------
# Pool files


def _toml_str(value: str) -> str:
    return json.dumps(value, ensure_ascii=False)


def _toml_str_list(values: Sequence[str]) -> str:
    return "[" + ", ".join(_toml_str(v) for v in values) + "]"


def format_attr_pool(dimensions) -> str:
    """Serialize attrs-stage output in the pool-file dimension format."""
    parts = []
    for dim in dimensions:
        lines = ["[[dimension]]", f"name = {_toml_str(dim['name'])}"]
        if dim.get("topic"):
            lines.append("topic = true")
        if dim.get("probability", 1.0) != 1.0:
            lines.append(f"probability = {dim['probability']}")
        if dim.get("conflict_group"):
            lines.append(f"conflict_group = {_toml_str(dim['conflict_group'])}")
        lines.append(f"values = {_toml_str_list(dim['values'])}")
        parts.append("\n".join(lines))
    return "\n\n".join(parts) + "\n"


def format_entity_pool(
    variant: str,
    vanilla: dict[str, Sequence[str]] | None = None,
    latent: dict[str, dict[str, Sequence[str]]] | None = None,
) -> str:
    """Serialize entities-stage output; latent maps topic -> class -> terms."""
    lines = ["[entities]", f"variant = {_toml_str(variant)}"]
    if variant == "vanilla":
        lines.append("")
        lines.append("[entities.values]")
        for cls, terms in (vanilla or {}).items():
            lines.append(f"{_toml_str(cls)} = {_toml_str_list(terms)}")
    else:
        for topic, by_class in (latent or {}).items():
            lines.append("")
            lines.append("[[entities.topic]]")
            lines.append(f"value = {_toml_str(topic)}")
            lines.append("[entities.topic.values]")
            for cls, terms in by_class.items():
                lines.append(f"{_toml_str(cls)} = {_toml_str_list(terms)}")
    return "\n".join(lines) + "\n"


def _load_stage_pools(
    config: PipelineConfig, run_dir: Path
) -> tuple[AttributePool | None, EntityPool | None]:
    """Run-directory pools win; a configured pools file fills the gaps."""
    attr_pool = entity_pool = None
    attr_file = run_dir / ATTR_POOL_FILE
    entity_file = run_dir / ENTITY_POOL_FILE
    if attr_file.exists():
        attr_pool, _ = load_pools(attr_file)
    if entity_file.exists():
        _, entity_pool = load_pools(entity_file)
    if config.pools_file is not None and (attr_pool is None or entity_pool is None):
        file_attr, file_entity = load_pools(config.pools_file)
        attr_pool = attr_pool or file_attr
        entity_pool = entity_pool or file_entity
    return attr_pool, entity_pool


def _require_attr_pool(config, run_dir) -> AttributePool:
    attr_pool, _ = _load_stage_pools(config, run_dir)
    if attr_pool is None:
        raise MissingPrerequisite(
            "no attribute pool: run the attrs stage or set [diversity].pools_file"
        )
    return attr_pool


def _require_entity_pool(config, run_dir, variant: str) -> EntityPool:
    _, entity_pool = _load_stage_pools(config, run_dir)
    if entity_pool is None:
        raise MissingPrerequisite(
            "no entity pool: run the entities stage or set [diversity].pools_file"
        )
    if entity_pool.variant != variant:
        raise MissingPrerequisite(
            f"entity pool variant {entity_pool.variant!r} does not match {variant!r}"
        )
    return entity_pool


# ---------------------------------------------------------------------------
# Stages


def run_attrs(config: PipelineConfig, run_dir: Path) -> StageResult:
    if config.variant not in ("x", "y-latent", "xy"):
        raise ConfigError(
            f"the attrs stage applies to attribute variants, not {config.variant!r}"
        )
    if not config.attr_dimensions:
        raise ConfigError("[[attributes.dimension]] entries are required for attrs")
    pack = load_template_pack(config.template_dir)
    gateway = build_gateway(config)
    spec = config.task
    model = config.models.generate

    suggestion_resp = gateway.complete(
        build_attr_dim_prompt(spec, config.attr_examples, pack),
        model_id=model,
        temperature=config.models.temperature,
        top_p=config.models.top_p,
    )
    suggestions = parse_entity_list(suggestion_resp.text)

    dimensions = []
    value_counts = {}
    for dim in config.attr_dimensions:
        resp = gateway.complete(
            build_attr_value_prompt(spec, dim.name, dim.count, dim.examples, pack),
            model_id=model,
            temperature=config.models.temperature,
            top_p=config.models.top_p,
        )
        generated = parse_entity_list(resp.text)
        values = list(dim.examples)
        for v in generated:
            if v not in values:
                values.append(v)
        dimensions.append(
            {
                "name": dim.name,
                "topic": dim.topic,
                "probability": dim.probability,
                "conflict_group": dim.conflict_group,
                "values": values,
            }
        )
        value_counts[dim.name] = len(values)

    atomic_write_text(run_dir / ATTR_POOL_FILE, format_attr_pool(dimensions))
    atomic_write_text(
        run_dir / "attr_suggestions.txt", "".join(s + "\n" for s in suggestions)
    )
    _persist_ledger(run_dir, "attrs", gateway.ledger)
    result = StageResult(
        stage="attrs",
        artifacts=(ATTR_POOL_FILE, "attr_suggestions.txt"),
        info={
            "dimensions": len(dimensions),
            "values": value_counts,
            "suggestions": len(suggestions),
            "requests": len(gateway.ledger.entries),
        },
    )
    _update_manifest(run_dir, result)
    return result


def run_entities(config: PipelineConfig, run_dir: Path) -> StageResult:
    if config.variant not in ("y-vanilla", "y-latent", "xy"):
        raise ConfigError(
            f"the entities stage applies to entity variants, not {config.variant!r}"
        )
    pack = load_template_pack(config.template_dir)
    gateway = build_gateway(config)
    spec = config.task
    model = config.models.generate
    count = config.entities_per_class

    def ask(class_name: str, topic: str | None) -> list[str]:
        resp = gateway.complete(
            build_entity_prompt(spec, class_name, count, pack, topic=topic),
            model_id=model,
            temperature=config.models.temperature,
            top_p=config.models.top_p,
        )
        return parse_entity_list(resp.text)

    if config.variant == "y-vanilla":
        vanilla = {cls: ask(cls, None) for cls in spec.class_names()}
        text = format_entity_pool("vanilla", vanilla=vanilla)
        info = {"variant": "vanilla", "terms": {c: len(v) for c, v in vanilla.items()}}
    else:
        attr_pool = _require_attr_pool(config, run_dir)
        topics = attr_pool.topic.values
        latent = {
            topic: {cls: ask(cls, topic) for cls in spec.class_names()}
            for topic in topics
        }
        text = format_entity_pool("latent", latent=latent)
        info = {
            "variant": "latent",
            "topics": len(topics),
            "terms": {
                topic: {c: len(v) for c, v in by_class.items()}
                for topic, by_class in latent.items()
            },
        }
    atomic_write_text(run_dir / ENTITY_POOL_FILE, text)
    _persist_ledger(run_dir, "entities", gateway.ledger)
    info["requests"] = len(gateway.ledger.entries)
    result = StageResult(
        stage="entities", artifacts=(ENTITY_POOL_FILE,), info=info
    )
    _update_manifest(run_dir, result)
    return result


def _config_sampler(
    config: PipelineConfig, run_dir: Path, rng: random.Random
) -> Callable[[], object]:
    """Per-prompt diversity-config draw for the configured variant."""
    variant = config.variant
    expected = config.task.expected_entity_requirement
    if variant == "simple":
        return lambda: DiversityConfig()
    if variant == "x":
        attr_pool = _require_attr_pool(config, run_dir)
        return lambda: sample_config_x(attr_pool, rng)
    if variant == "y-vanilla":
        entity_pool = _require_entity_pool(config, run_dir, "vanilla")
        return lambda: sample_config_y(entity_pool, rng, expected)
    # y-latent and xy sample a topic and draw topic-matched entities; y-latent
    # restricts the attribute side to the topic dimension alone
    attr_pool = _require_attr_pool(config, run_dir)
    if variant == "y-latent":
        attr_pool = AttributePool((attr_pool.topic,))
    entity_pool = _require_entity_pool(config, run_dir, "latent")
    return lambda: sample_config_xy(attr_pool, entity_pool, rng, expected)


def run_generate(config: PipelineConfig, run_dir: Path) -> StageResult:
    pack = load_template_pack(config.template_dir)
    gateway = build_gateway(config)
    spec = config.task
    rng = stage_rng(config.seed, "generate")
    sampler = _config_sampler(config, run_dir, rng)
    templates = pack.requirement_templates()

    def prompt_factory(_: int) -> PromptBundle:
        requirement = render_requirement(sampler(), templates)
        return build_sample_prompt(spec, requirement, config.samples_per_prompt, pack)

    responses = gateway.generate_until(
        prompt_factory,
        count_raw_samples,
        config.target_raw,
        model_id=config.models.generate,
        temperature=config.models.temperature,
        top_p=config.models.top_p,
    )

    all_samples: list[NerSample] = []
    provenance: list[tuple[int, tuple[tuple[int, int], ...]]] = []
    reject_rows: list[dict] = []
    block_total = 0
    for ri, resp in enumerate(responses):
        outcome = parse_generation(resp.text, spec)
        block_total += outcome.block_count
        for sample, ranges in zip(outcome.samples, outcome.annotation_ranges):
            all_samples.append(sample)
            provenance.append((ri, ranges))
        for reject in outcome.rejects:
            reject_rows.append(
                {
                    "raw": reject.raw,
                    "reason": reject.reason.value,
                    "detail": reject.detail,
                }
            )

    kept_idx, dedup_report = dedup_indices(all_samples)
    dataset = [all_samples[i] for i in kept_idx]

    records: list[AnnotationRecord] = []
    for new_id, orig in enumerate(kept_idx):
        ri, ranges = provenance[orig]
        token_logprobs = [
            (t.token, t.logprob) for t in responses[ri].token_logprobs
        ]
        records.extend(
            records_for_sample(new_id, dataset[new_id], ranges, token_logprobs)
        )

    atomic_write_text(run_dir / "dataset.jsonl", dataio.format_jsonl(dataset))
    atomic_write_text(
        run_dir / "rejects.jsonl",
        "".join(json.dumps(r, sort_keys=True, ensure_ascii=False) + "\n" for r in reject_rows),
    )
    atomic_write_text(
        run_dir / "records.jsonl",
        "".join(
            json.dumps(
                {
                    "sample_id": r.sample_id,
                    "annotation_index": r.annotation_index,
                    "span": r.annotation.span,
                    "type": r.annotation.class_name,
                    "occurrence": r.annotation.occurrence,
                    "token_logprobs": list(r.token_logprobs),
                    "score": r.score,
                },
                sort_keys=True,
                ensure_ascii=False,
            )
            + "\n"
            for r in records
        ),
    )
    reject_counts: dict[str, int] = {}
    for row in reject_rows:
        reject_counts[row["reason"]] = reject_counts.get(row["reason"], 0) + 1
    info = {
        "requests": len(responses),
        "generated": block_total,
        "valid": len(all_samples),
        "duplicates_removed": dedup_report.duplicates_removed,
        "conflicts_removed": dedup_report.conflicts_removed,
        "dataset": len(dataset),
        "rejects": reject_counts,
        "records": len(records),
    }
    atomic_write_text(
        run_dir / "generation.json",
        json.dumps(info, sort_keys=True, ensure_ascii=False, indent=2) + "\n",
    )
    _persist_ledger(run_dir, "generate", gateway.ledger)
    result = StageResult(
        stage="generate",
        artifacts=("dataset.jsonl", "rejects.jsonl", "records.jsonl", "generation.json"),
        info=info,
    )
    _update_manifest(run_dir, result)
    return result


def _load_records(run_dir: Path) -> list[AnnotationRecord]:
    records = []
    for line in (run_dir / "records.jsonl").read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        obj = json.loads(line)
        records.append(
            AnnotationRecord(
                sample_id=obj["sample_id"],
                annotation_index=obj["annotation_index"],
                annotation=Annotation(obj["span"], obj["type"], obj["occurrence"]),
                token_logprobs=tuple(obj["token_logprobs"]),
            )
        )
    return records


def run_correct(config: PipelineConfig, run_dir: Path) -> StageResult:
    if not (run_dir / "dataset.jsonl").exists() or not (run_dir / "records.jsonl").exists():
        raise MissingPrerequisite("correct needs the generate stage outputs")
    guide = config.correction_guide
    if guide is None:
        raise ConfigError("the correct stage needs [correction].file in the config")
    pack = load_template_pack(config.template_dir)
    gateway = build_gateway(config)
    spec = config.task
    dataset = dataio.read_jsonl(run_dir / "dataset.jsonl")
    records = _load_records(run_dir)

    guided = [r for r in records if r.annotation.class_name in guide]
    selected = select_for_correction(guided, config.selection)

    lint_notes: list[str] = []
    batches: list[tuple[list[AnnotationRecord], PromptBundle]] = []
    for cls in spec.class_names():
        cls_records = [r for r in selected if r.annotation.class_name == cls]
        if not cls_records:
            continue
        cls_guide: ClassGuide = guide[cls]
        lint_notes.extend(lint_correction_config((), cls_guide.demos))
        size = config.correction_batch_size
        for i in range(0, len(cls_records), size):
            chunk = cls_records[i : i + size]
            batch_items = [
                (dataset[r.sample_id].sentence, r.annotation) for r in chunk
            ]
            bundle = build_correction_prompt(
                spec, cls, cls_guide.instruction, cls_guide.demos, batch_items, pack
            )
            batches.append((chunk, bundle))

    responses = gateway.complete_many(
        [bundle for _, bundle in batches],
        model_id=config.models.correct,
        temperature=config.models.temperature,
        top_p=config.models.top_p,
    )

    directives = []
    unintelligible = 0
    for (chunk, _), resp in zip(batches, responses):
        parsed = parse_correction_response(resp.text, len(chunk))
        unintelligible += len(parsed.invalid_indices)
        directives.extend(bind_actions(chunk, parsed.actions))

    corrected, stats = apply_directives(dataset, directives, spec)
    atomic_write_text(run_dir / "corrected.jsonl", dataio.format_jsonl(corrected))
    info = {
        "records": len(records),
        "guided": len(guided),
        "selected": len(selected),
        "batches": len(batches),
        "unintelligible_verdicts": unintelligible,
        "prompted": stats.prompted,
        "kept": stats.kept,
        "dropped": stats.dropped,
        "revised_span": stats.revised_span,
        "revised_type": stats.revised_type,
        "invalid": stats.invalid,
        "corrected_fraction": stats.corrected_fraction,
        "annotations_before": sum(len(s.annotations) for s in dataset),
        "annotations_after": sum(len(s.annotations) for s in corrected),
        "lint": lint_notes,
    }
    atomic_write_text(
        run_dir / "correction.json",
        json.dumps(info, sort_keys=True, ensure_ascii=False, indent=2) + "\n",
    )
    atomic_write_text(run_dir / "correction.txt", stats.report())
    _persist_ledger(run_dir, "correct", gateway.ledger)
    result = StageResult(
        stage="correct",
        artifacts=("corrected.jsonl", "correction.json", "correction.txt"),
        info=info,
    )
    _update_manifest(run_dir, result)
    return result


def run_export(config: PipelineConfig, run_dir: Path) -> StageResult:
    source = "corrected.jsonl"
    if not (run_dir / source).exists():
        source = "dataset.jsonl"
    if not (run_dir / source).exists():
        raise MissingPrerequisite("export needs the generate stage outputs")
    samples = dataio.read_jsonl(run_dir / source)
    blocks, weights = dataio.export_conll(
        samples, config.task.demos, config.replication, config.demo_weight
    )
    atomic_write_text(run_dir / "train.conll", dataio.format_conll(blocks))
    atomic_write_text(run_dir / "train.weights", dataio.format_weights(weights))

    counts = {}
    gen_file = run_dir / "generation.json"
    if gen_file.exists():
        gen_info = json.loads(gen_file.read_text(encoding="utf-8"))
        counts = {
            "generated": gen_info["generated"],
            "valid": gen_info["valid"],
            "deduped": gen_info["dataset"],
        }
        chain = [gen_info["generated"], gen_info["valid"], gen_info["dataset"]]
        if chain != sorted(chain, reverse=True):
            raise ValueError(f"filter-chain counts must not increase: {chain}")
    corr_file = run_dir / "correction.json"
    if corr_file.exists() and source == "corrected.jsonl":
        corr_info = json.loads(corr_file.read_text(encoding="utf-8"))
        counts["annotations_post_correction"] = corr_info["annotations_after"]
    info = {
        "source": source,
        "samples": len(samples),
        "demos": len(config.task.demos),
        "replication": config.replication,
        "demo_weight": config.demo_weight,
        "blocks": len(blocks),
        **counts,
    }
    atomic_write_text(
        run_dir / "export.json",
        json.dumps(info, sort_keys=True, ensure_ascii=False, indent=2) + "\n",
    )
    result = StageResult(
        stage="export",
        artifacts=("train.conll", "train.weights", "export.json"),
        info=info,
    )
    _update_manifest(run_dir, result)
    return result


_STAGE_RUNNERS = {
    "attrs": run_attrs,
    "entities": run_entities,
    "generate": run_generate,
    "correct": run_correct,
    "export": run_export,
}


def run_stage(config: PipelineConfig, run_dir, stage: str) -> StageResult:
    if stage not in _STAGE_RUNNERS:
        raise ConfigError(f"unknown stage {stage!r}; stages are {', '.join(STAGES)}")
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    return _STAGE_RUNNERS[stage](config, run_dir)


# ---------------------------------------------------------------------------
# File-level verbs


def run_eval(
    gold_path, pred_path, out_dir, tolerant_predictions: bool = True
) -> tuple[evaluation.EvalReport, evaluation.EvalReport]:
    gold_path, pred_path = Path(gold_path), Path(pred_path)
    for p in (gold_path, pred_path):
        if not p.exists():
            raise MissingPrerequisite(f"no such file: {p}")
    gold = dataio.read_conll(gold_path)
    pred = dataio.read_conll(pred_path)
    exact = evaluation.exact_micro(pred, gold, tolerant_predictions=tolerant_predictions)
    partial = evaluation.partial_micro(
        pred, gold, tolerant_predictions=tolerant_predictions
    )
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    text = evaluation.format_report(exact) + "\n" + evaluation.format_report(partial)
    atomic_write_text(out_dir / "eval.txt", text)

    def as_obj(report: evaluation.EvalReport) -> dict:
        return {
            "precision": report.precision,
            "recall": report.recall,
            "f1": report.f1,
            "per_class": {
                cls: {"precision": s.precision, "recall": s.recall, "f1": s.f1}
                for cls, s in report.per_class.items()
            },
        }

    atomic_write_text(
        out_dir / "eval.json",
        json.dumps(
            {"exact": as_obj(exact), "partial": as_obj(partial)},
            sort_keys=True,
            ensure_ascii=False,
            indent=2,
        )
        + "\n",
    )
    return exact, partial


def run_cost(run_dir) -> str:
    run_dir = Path(run_dir)
    ledger = _load_ledger(run_dir)
    text = ledger.report()
    atomic_write_text(run_dir / "cost.txt", text)
    return text
