"""Prompt construction for every model call the pipeline makes.

All wording lives in a template pack: a directory of ``*.txt`` files plus an
optional ``pack.toml`` carrying static fields (persona, sample description).
Builders fill placeholders with ``str.format`` and return immutable
:class:`PromptBundle` values, so rendering is pure: the same inputs always
produce the same messages.

Placeholder syntax is Python format fields, e.g. ``{persona}``; literal braces
in a custom template must be doubled (``{{`` / ``}}``).
"""
from __future__ import annotations

import string
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .schema import Annotation, NerSample, TaskSpec, detokenize, tokenize

KINDS = ("attr-dim", "attr-val", "entity", "ner", "correction", "prediction")

TEMPLATE_NAMES = (
    "attr_dim",
    "attr_value",
    "entity_vanilla",
    "entity_latent",
    "sample_gen",
    "correction",
    "icl",
    "requirement_header",
    "requirement_dimension",
    "requirement_entities",
)

REQUIRED_FIELDS: dict[str, frozenset[str]] = {
    "attr_dim": frozenset({"sample_description", "examples"}),
    "attr_value": frozenset(
        {"persona", "count", "dimension_phrase", "sample_description", "examples"}
    ),
    "entity_vanilla": frozenset(
        {"persona", "count", "sample_description", "class_name"}
    ),
    "entity_latent": frozenset(
        {"persona", "count", "sample_description", "class_name", "topic"}
    ),
    "sample_gen": frozenset(
        {
            "persona",
            "count",
            "sample_description",
            "class_list",
            "definitions",
            "negative_instruction",
            "requirement",
            "demos",
        }
    ),
    "correction": frozenset(
        {"sample_description", "class_name", "instruction", "demos", "batch"}
    ),
    "icl": frozenset({"sample_description", "class_list", "demos", "sentence"}),
    "requirement_header": frozenset(),
    "requirement_dimension": frozenset({"dimension", "value"}),
    "requirement_entities": frozenset({"entities"}),
}


class MissingPlaceholder(Exception):
    """A template lacks a required field or names an unknown one."""


class MixedClassBatch(Exception):
    """A correction batch mixes annotations of different entity classes."""


@dataclass(frozen=True)
class ChatMessage:
    role: str
    content: str

    def __post_init__(self) -> None:
        if self.role not in ("system", "user", "assistant"):
            raise ValueError(f"unknown chat role {self.role!r}")


@dataclass(frozen=True)
class PromptBundle:
    """A ready-to-send prompt, tagged with the ledger kind it bills to."""

    kind: str
    messages: tuple[ChatMessage, ...]
    metadata: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ValueError(f"unknown prompt kind {self.kind!r}")
        if not self.messages:
            raise ValueError("prompt bundle needs at least one message")


@dataclass(frozen=True)
class TemplatePack:
    texts: Mapping[str, str]
    persona: str = ""
    sample_description: str = ""

    def __post_init__(self) -> None:
        for name in TEMPLATE_NAMES:
            if name not in self.texts:
                raise MissingPlaceholder(f"template pack lacks {name!r}")
            fields = {
                fname
                for _, fname, _, _ in string.Formatter().parse(self.texts[name])
                if fname
            }
            missing = REQUIRED_FIELDS[name] - fields
            if missing:
                raise MissingPlaceholder(
                    f"template {name!r} lacks required fields {sorted(missing)}"
                )

    def render(self, name: str, **fields: str) -> str:
        try:
            return self.texts[name].format(**fields)
        except (KeyError, IndexError) as exc:
            raise MissingPlaceholder(
                f"template {name!r} references unknown field {exc}"
            ) from exc

    def requirement_templates(self) -> dict[str, str]:
        return {
            "header": self.texts["requirement_header"],
            "dimension": self.texts["requirement_dimension"],
            "entities": self.texts["requirement_entities"],
        }


_DEFAULT_DIR = Path(__file__).parent / "templates" / "default"


def load_template_pack(path=None) -> TemplatePack:
    """Load a pack directory; None loads the built-in default wording."""
    base = Path(path) if path is not None else _DEFAULT_DIR
    texts = {}
    for name in TEMPLATE_NAMES:
        file = base / f"{name}.txt"
        if not file.exists():
            raise MissingPlaceholder(f"template pack lacks {name!r} ({file})")
        texts[name] = file.read_text(encoding="utf-8").rstrip("\n")
    persona = ""
    sample_description = ""
    meta = base / "pack.toml"
    if meta.exists():
        data = tomllib.loads(meta.read_text(encoding="utf-8"))
        persona = data.get("persona", "")
        sample_description = data.get("sample_description", "")
    return TemplatePack(texts, persona=persona, sample_description=sample_description)


def _persona(pack: TemplatePack, spec: TaskSpec) -> str:
    return pack.persona or f"a writer of {_description(pack, spec)}"


def _description(pack: TemplatePack, spec: TaskSpec) -> str:
    return pack.sample_description or spec.domain_description


# ---------------------------------------------------------------------------
# Sample rendering (the "Sentence: / Named Entities:" pair format)


def render_entity_list(annotations: Sequence[Annotation]) -> str:
    inner = ", ".join(f"{a.span} ({a.class_name})" for a in annotations)
    return f"[{inner}]"


def render_sample(sample: NerSample, canonicalize: bool = False) -> str:
    """One sample in pair format.  ``canonicalize`` re-spaces the sentence
    through the tokenizer (used for demos inside prompts)."""
    sentence = detokenize(tokenize(sample.sentence)) if canonicalize else sample.sentence
    return f"Sentence: {sentence}\nNamed Entities: {render_entity_list(sample.annotations)}"


def _render_demos(spec: TaskSpec) -> str:
    return "\n\n".join(render_sample(d, canonicalize=True) for d in spec.demos)


# ---------------------------------------------------------------------------
# Builders


def build_attr_dim_prompt(
    spec: TaskSpec, example_dimensions: Sequence[str], pack: TemplatePack
) -> PromptBundle:
    text = pack.render(
        "attr_dim",
        sample_description=_description(pack, spec),
        examples=", ".join(example_dimensions),
    )
    return PromptBundle(
        kind="attr-dim",
        messages=(ChatMessage("user", text),),
        metadata={"examples": tuple(example_dimensions)},
    )


def build_attr_value_prompt(
    spec: TaskSpec,
    dimension: str,
    count: int,
    example_values: Sequence[str],
    pack: TemplatePack,
    dimension_phrase: str | None = None,
) -> PromptBundle:
    if count < 1:
        raise ValueError("value count must be >= 1")
    phrase = dimension_phrase or f"different {dimension}s"
    text = pack.render(
        "attr_value",
        persona=_persona(pack, spec),
        count=str(count),
        dimension_phrase=phrase,
        sample_description=_description(pack, spec),
        examples=", ".join(example_values),
    )
    return PromptBundle(
        kind="attr-val",
        messages=(ChatMessage("user", text),),
        metadata={"dimension": dimension, "count": count},
    )


def build_entity_prompt(
    spec: TaskSpec,
    class_name: str,
    count: int,
    pack: TemplatePack,
    topic: str | None = None,
) -> PromptBundle:
    if class_name not in spec.class_names():
        raise ValueError(f"unknown entity class {class_name!r}")
    if count < 1:
        raise ValueError("entity count must be >= 1")
    common = dict(
        persona=_persona(pack, spec),
        count=str(count),
        sample_description=_description(pack, spec),
        class_name=class_name,
    )
    if topic is None:
        text = pack.render("entity_vanilla", **common)
    else:
        text = pack.render("entity_latent", topic=topic, **common)
    return PromptBundle(
        kind="entity",
        messages=(ChatMessage("user", text),),
        metadata={"class_name": class_name, "topic": topic, "count": count},
    )


def build_sample_prompt(
    spec: TaskSpec,
    requirement: str,
    count: int,
    pack: TemplatePack,
) -> PromptBundle:
    """The dataset-generation prompt: instruction, demos, optional requirement.

    The requirement text (already rendered from a diversity config) is pasted
    verbatim after the instruction.
    """
    if count < 1:
        raise ValueError("sample count must be >= 1")
    definitions = ""
    if any(c.definition for c in spec.classes):
        lines = [
            f"- {c.name}: {c.definition}" for c in spec.classes if c.definition
        ]
        definitions = "\nDefinitions:\n" + "\n".join(lines)
    negative = ""
    if spec.include_negative_demo:
        negative = (
            "\nSome sentences may contain no named entities;"
            ' write "Named Entities: []" for those.'
        )
    req_block = f"\n\n{requirement}" if requirement else ""
    text = pack.render(
        "sample_gen",
        persona=_persona(pack, spec),
        count=str(count),
        sample_description=_description(pack, spec),
        class_list=", ".join(spec.class_names()),
        definitions=definitions,
        negative_instruction=negative,
        requirement=req_block,
        demos=_render_demos(spec),
    )
    return PromptBundle(
        kind="ner",
        messages=(ChatMessage("user", text),),
        metadata={"demo_count": len(spec.demos), "sample_count": count},
    )


@dataclass(frozen=True)
class CorrectionDemo:
    """A worked correction example shown in the correction prompt."""

    sentence: str
    annotation: Annotation
    answer: str


def _render_correction_item(i: int, sentence: str, ann: Annotation) -> str:
    return f"{i}. Sentence: {sentence}\nEntity: {ann.span} ({ann.class_name})"


def build_correction_prompt(
    spec: TaskSpec,
    class_name: str,
    instruction: str,
    demos: Sequence[CorrectionDemo],
    batch: Sequence[tuple[str, Annotation]],
    pack: TemplatePack,
) -> PromptBundle:
    """Self-verification prompt for one class and up to a handful of items.

    Every batch annotation must carry ``class_name``; mixing classes in one
    prompt would contradict the per-class instruction text.
    """
    if not batch:
        raise ValueError("correction batch must be non-empty")
    for _, ann in batch:
        if ann.class_name != class_name:
            raise MixedClassBatch(
                f"batch item {ann.span!r} has class {ann.class_name!r},"
                f" expected {class_name!r}"
            )
    demo_lines = []
    for i, demo in enumerate(demos, start=1):
        demo_lines.append(
            _render_correction_item(i, demo.sentence, demo.annotation)
            + f"\nAnswer: {demo.answer}"
        )
    batch_lines = [
        _render_correction_item(i, sentence, ann)
        for i, (sentence, ann) in enumerate(batch, start=1)
    ]
    text = pack.render(
        "correction",
        sample_description=_description(pack, spec),
        class_name=class_name,
        instruction=f"\n{instruction}" if instruction else "",
        demos="\n\n".join(demo_lines),
        batch="\n\n".join(batch_lines),
    )
    return PromptBundle(
        kind="correction",
        messages=(ChatMessage("user", text),),
        metadata={"class_name": class_name, "batch_size": len(batch)},
    )


def build_icl_prompt(
    spec: TaskSpec, sentence: str, pack: TemplatePack
) -> PromptBundle:
    """Few-shot tagging prompt for running predictions with the demos only."""
    text = pack.render(
        "icl",
        sample_description=_description(pack, spec),
        class_list=", ".join(spec.class_names()),
        demos=_render_demos(spec),
        sentence=sentence,
    )
    return PromptBundle(
        kind="prediction",
        messages=(ChatMessage("user", text),),
        metadata={"sentence": sentence},
    )
