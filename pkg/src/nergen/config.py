"""Configuration files for tasks, correction guides, and pipeline runs.

Everything is TOML.  Paths inside a file resolve relative to that file's
directory, so a config directory can be checked in and run from anywhere.
"""
from __future__ import annotations

import sys
from dataclasses import dataclass, field
from decimal import Decimal
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .correction import SelectionParams
from .gateway import DEFAULT_PRICES, PriceTable
from .parsing import normalize
from .prompting import CorrectionDemo
from .schema import Annotation, EntityClass, NerSample, TaskSpec

VARIANTS = ("simple", "x", "y-vanilla", "y-latent", "xy")
BACKENDS = ("replay", "record", "live")


class ConfigError(ValueError):
    """A configuration file is missing, malformed, or inconsistent."""


def _load_toml(path: Path) -> dict:
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        return tomllib.loads(path.read_text(encoding="utf-8"))
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def _check_keys(section: dict, allowed: set[str], where: str) -> None:
    unknown = set(section) - allowed
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")


# ---------------------------------------------------------------------------
# Task spec files


def load_task_spec(path) -> TaskSpec:
    """Task file: domain, entity classes, demos.

    ::

        domain = "news articles"
        lowercase = false
        negative_demo = false
        expected_entities = 1.5

        [[class]]
        name = "person"
        definition = "Names of specific people"

        [[demo]]
        sentence = "Alice toured Berlin."
        entities = [["Alice", "person"], ["Berlin", "location"]]
    """
    path = Path(path)
    data = _load_toml(path)
    _check_keys(
        data,
        {"domain", "lowercase", "negative_demo", "expected_entities", "class", "demo"},
        str(path),
    )
    try:
        classes = tuple(
            EntityClass(c["name"], c.get("definition", ""))
            for c in data.get("class", [])
        )
        demos = []
        for raw in data.get("demo", []):
            sentence = raw["sentence"]
            items = [
                (span, cls, (0, 0)) for span, cls in raw.get("entities", [])
            ]
            annotations, _ = normalize(sentence, items)
            demos.append(NerSample(sentence, annotations))
        return TaskSpec(
            domain_description=data["domain"],
            classes=classes,
            demos=tuple(demos),
            include_negative_demo=bool(data.get("negative_demo", False)),
            lowercase_outputs=bool(data.get("lowercase", False)),
            expected_entity_requirement=float(data.get("expected_entities", 1.5)),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc


# ---------------------------------------------------------------------------
# Correction guides


@dataclass(frozen=True)
class ClassGuide:
    """Per-class correction instruction plus worked demos."""

    instruction: str
    demos: tuple[CorrectionDemo, ...] = ()


def load_correction_guide(path, spec: TaskSpec) -> dict[str, ClassGuide]:
    """Correction file: one table per entity class.

    ::

        [person]
        instruction = "Check that each span names a specific person."

        [[person.demo]]
        sentence = "Bob slept."
        span = "Bob"
        answer = "keep"
    """
    path = Path(path)
    data = _load_toml(path)
    known = set(spec.class_names())
    guides: dict[str, ClassGuide] = {}
    for cls, section in data.items():
        if cls not in known:
            raise ConfigError(f"{path}: [{cls}] is not a task entity class")
        _check_keys(section, {"instruction", "demo"}, f"{path} [{cls}]")
        try:
            demos = tuple(
                CorrectionDemo(
                    sentence=d["sentence"],
                    annotation=Annotation(d["span"], cls, int(d.get("occurrence", 0))),
                    answer=d["answer"],
                )
                for d in section.get("demo", [])
            )
            guides[cls] = ClassGuide(section["instruction"], demos)
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"{path} [{cls}]: {exc}") from exc
    return guides


# ---------------------------------------------------------------------------
# Pipeline config


@dataclass(frozen=True)
class DimensionRequest:
    """One attribute dimension the attrs stage should fill with values."""

    name: str
    topic: bool = False
    count: int = 10
    examples: tuple[str, ...] = ()
    probability: float = 1.0
    conflict_group: str | None = None


@dataclass(frozen=True)
class ModelSettings:
    generate: str = "gpt-3.5-turbo"
    correct: str = "gpt-3.5-turbo"
    temperature: float = 1.0
    top_p: float = 1.0


@dataclass(frozen=True)
class BackendSettings:
    mode: str = "replay"
    fixtures: Path | None = None
    base_url: str = "https://api.openai.com/v1"
    api_key_env: str = "OPENAI_API_KEY"


@dataclass(frozen=True)
class PipelineConfig:
    task: TaskSpec
    variant: str
    samples_per_prompt: int
    target_raw: int
    pools_file: Path | None
    attr_examples: tuple[str, ...]
    attr_dimensions: tuple[DimensionRequest, ...]
    entities_per_class: int
    correction_guide: dict[str, ClassGuide] | None
    selection: SelectionParams
    correction_batch_size: int
    models: ModelSettings
    prices: PriceTable
    backend: BackendSettings
    max_requests: int | None
    replication: int
    demo_weight: float
    seed: int | None
    template_dir: Path | None = None


def _resolve(base: Path, value: str) -> Path:
    p = Path(value)
    return p if p.is_absolute() else (base / p)


def load_pipeline_config(
    path,
    seed_override: int | None = None,
    backend_override: str | None = None,
) -> PipelineConfig:
    path = Path(path).resolve()
    base = path.parent
    data = _load_toml(path)
    _check_keys(
        data,
        {
            "task",
            "run",
            "generation",
            "diversity",
            "attributes",
            "entities",
            "correction",
            "export",
            "budget",
            "backend",
            "templates",
            "prices",
        },
        str(path),
    )

    task_section = data.get("task", {})
    if "file" not in task_section:
        raise ConfigError(f"{path}: [task].file is required")
    task = load_task_spec(_resolve(base, task_section["file"]))

    gen = data.get("generation", {})
    _check_keys(
        gen,
        {"variant", "samples_per_prompt", "target_raw", "model", "temperature", "top_p"},
        f"{path} [generation]",
    )
    variant = gen.get("variant", "simple")
    if variant not in VARIANTS:
        raise ConfigError(
            f"{path}: [generation].variant must be one of {', '.join(VARIANTS)}"
        )
    samples_per_prompt = int(
        gen.get("samples_per_prompt", 50 if variant == "simple" else 3)
    )
    target_raw = int(gen.get("target_raw", 100))
    if samples_per_prompt < 1 or target_raw < 1:
        raise ConfigError(f"{path}: sample counts must be >= 1")

    diversity = data.get("diversity", {})
    _check_keys(diversity, {"pools_file"}, f"{path} [diversity]")
    pools_file = None
    if "pools_file" in diversity:
        pools_file = _resolve(base, diversity["pools_file"])
        if not pools_file.exists():
            raise ConfigError(f"{path}: pools file not found: {pools_file}")

    attrs = data.get("attributes", {})
    _check_keys(
        attrs, {"examples", "values_per_dimension", "dimension"}, f"{path} [attributes]"
    )
    default_count = int(attrs.get("values_per_dimension", 10))
    dimensions = []
    for raw in attrs.get("dimension", []):
        _check_keys(
            raw,
            {"name", "topic", "count", "examples", "probability", "conflict_group"},
            f"{path} [[attributes.dimension]]",
        )
        dimensions.append(
            DimensionRequest(
                name=raw["name"],
                topic=bool(raw.get("topic", False)),
                count=int(raw.get("count", default_count)),
                examples=tuple(raw.get("examples", [])),
                probability=float(raw.get("probability", 1.0)),
                conflict_group=raw.get("conflict_group"),
            )
        )
    if dimensions and sum(1 for d in dimensions if d.topic) != 1:
        raise ConfigError(f"{path}: exactly one [[attributes.dimension]] needs topic=true")

    entities = data.get("entities", {})
    _check_keys(entities, {"per_class"}, f"{path} [entities]")
    entities_per_class = int(entities.get("per_class", 15))

    corr = data.get("correction", {})
    _check_keys(
        corr,
        {"file", "threshold", "cap_fraction", "batch_size", "model"},
        f"{path} [correction]",
    )
    correction_guide = None
    if "file" in corr:
        correction_guide = load_correction_guide(_resolve(base, corr["file"]), task)
    try:
        selection = SelectionParams(
            threshold=float(corr.get("threshold", -0.02)),
            cap_fraction=float(corr.get("cap_fraction", 0.20)),
        )
    except ValueError as exc:
        raise ConfigError(f"{path} [correction]: {exc}") from exc
    batch_size = int(corr.get("batch_size", 6))
    if batch_size < 1:
        raise ConfigError(f"{path}: [correction].batch_size must be >= 1")

    export = data.get("export", {})
    _check_keys(export, {"replication", "demo_weight"}, f"{path} [export]")
    replication = int(export.get("replication", 5))
    demo_weight = float(export.get("demo_weight", 1.0))
    if replication < 1 or demo_weight <= 0:
        raise ConfigError(f"{path}: [export] values out of range")

    budget = data.get("budget", {})
    _check_keys(budget, {"max_requests"}, f"{path} [budget]")
    max_requests = budget.get("max_requests")
    if max_requests is not None:
        max_requests = int(max_requests)

    backend_section = data.get("backend", {})
    _check_keys(
        backend_section,
        {"mode", "fixtures", "base_url", "api_key_env"},
        f"{path} [backend]",
    )
    mode = backend_override or backend_section.get("mode", "replay")
    if mode not in BACKENDS:
        raise ConfigError(f"{path}: backend mode must be one of {', '.join(BACKENDS)}")
    fixtures = None
    if "fixtures" in backend_section:
        fixtures = _resolve(base, backend_section["fixtures"])
    if mode in ("replay", "record") and fixtures is None:
        raise ConfigError(f"{path}: [backend].fixtures is required for {mode} mode")

    models = ModelSettings(
        generate=gen.get("model", "gpt-3.5-turbo"),
        correct=corr.get("model", gen.get("model", "gpt-3.5-turbo")),
        temperature=float(gen.get("temperature", 1.0)),
        top_p=float(gen.get("top_p", 1.0)),
    )

    per_model = dict(DEFAULT_PRICES.per_model)
    for model_id, rates in data.get("prices", {}).items():
        _check_keys(rates, {"input", "output"}, f"{path} [prices.{model_id}]")
        try:
            per_model[model_id] = (
                Decimal(str(rates["input"])),
                Decimal(str(rates["output"])),
            )
        except (KeyError, ArithmeticError) as exc:
            raise ConfigError(f"{path} [prices.{model_id}]: {exc}") from exc

    run = data.get("run", {})
    _check_keys(run, {"seed"}, f"{path} [run]")
    seed = seed_override if seed_override is not None else run.get("seed")
    if seed is not None:
        seed = int(seed)
    if mode == "replay" and seed is None:
        raise ConfigError(
            f"{path}: a seed is required with the replay backend ([run].seed or --seed)"
        )

    templates = data.get("templates", {})
    _check_keys(templates, {"dir"}, f"{path} [templates]")
    template_dir = (
        _resolve(base, templates["dir"]) if "dir" in templates else None
    )
    if template_dir is not None and not template_dir.is_dir():
        raise ConfigError(f"{path}: template dir not found: {template_dir}")

    return PipelineConfig(
        task=task,
        variant=variant,
        samples_per_prompt=samples_per_prompt,
        target_raw=target_raw,
        pools_file=pools_file,
        attr_examples=tuple(attrs.get("examples", [])),
        attr_dimensions=tuple(dimensions),
        entities_per_class=entities_per_class,
        correction_guide=correction_guide,
        selection=selection,
        correction_batch_size=batch_size,
        models=models,
        prices=PriceTable(per_model),
        backend=BackendSettings(
            mode=mode,
            fixtures=fixtures,
            base_url=backend_section.get("base_url", "https://api.openai.com/v1"),
            api_key_env=backend_section.get("api_key_env", "OPENAI_API_KEY"),
        ),
        max_requests=max_requests,
        replication=replication,
        demo_weight=demo_weight,
        seed=seed,
        template_dir=template_dir,
    )
