"""Prompt builders: golden renders, purity, structural invariants."""
from __future__ import annotations

from pathlib import Path

import pytest

from nergen.diversity import DiversityConfig, render_requirement
from nergen.prompting import (
    ChatMessage,
    CorrectionDemo,
    MissingPlaceholder,
    MixedClassBatch,
    PromptBundle,
    TemplatePack,
    build_attr_dim_prompt,
    build_attr_value_prompt,
    build_correction_prompt,
    build_entity_prompt,
    build_icl_prompt,
    build_sample_prompt,
    load_template_pack,
    render_entity_list,
    render_sample,
)
from nergen.schema import Annotation, EntityClass, NerSample, TaskSpec

GOLDEN = Path(__file__).parent / "golden"


def golden(name: str) -> str:
    return (GOLDEN / name).read_text(encoding="utf-8").rstrip("\n")


def news_spec(**kw):
    defaults = dict(
        domain_description="news articles",
        classes=(
            EntityClass("person"),
            EntityClass("location"),
            EntityClass("organization"),
        ),
        demos=(
            NerSample(
                "Bob is born in Athens.",
                (Annotation("Bob", "person"), Annotation("Athens", "location")),
            ),
            NerSample("The weather was pleasant throughout the week."),
        ),
        include_negative_demo=True,
    )
    defaults.update(kw)
    return TaskSpec(**defaults)


@pytest.fixture(scope="module")
def pack():
    return load_template_pack()


def only_text(bundle: PromptBundle) -> str:
    assert len(bundle.messages) == 1
    assert bundle.messages[0].role == "user"
    return bundle.messages[0].content


# ---------------------------------------------------------------------------
# golden renders


def test_attr_dim_golden(pack):
    bundle = build_attr_dim_prompt(news_spec(), ["topic", "writing style"], pack)
    assert bundle.kind == "attr-dim"
    assert only_text(bundle) == golden("attr_dim.txt")


def test_attr_value_golden(pack):
    bundle = build_attr_value_prompt(
        news_spec(),
        "news category",
        30,
        ["health", "local stories", "international"],
        pack,
        dimension_phrase="diverse news categories",
    )
    assert bundle.kind == "attr-val"
    assert only_text(bundle) == golden("attr_value.txt")


def test_entity_vanilla_golden(pack):
    bundle = build_entity_prompt(news_spec(), "location", 50, pack)
    assert bundle.kind == "entity"
    assert only_text(bundle) == golden("entity_vanilla.txt")


def test_entity_latent_golden(pack):
    bundle = build_entity_prompt(
        news_spec(), "person", 15, pack, topic="Entertainment"
    )
    assert only_text(bundle) == golden("entity_latent.txt")


def test_sample_gen_golden(pack):
    config = DiversityConfig(
        x_pairs=(("news topic", "Technology"),),
        y_entities=("Ada Lovelace", "Acme Corp"),
        topic_value="Technology",
    )
    requirement = render_requirement(config, pack.requirement_templates())
    bundle = build_sample_prompt(news_spec(), requirement, 3, pack)
    assert bundle.kind == "ner"
    assert only_text(bundle) == golden("sample_gen.txt")
    assert bundle.metadata == {"demo_count": 2, "sample_count": 3}


def test_correction_golden(pack):
    demos = [
        CorrectionDemo(
            "The CEO announced a merger.", Annotation("CEO", "person"), "drop"
        )
    ]
    batch = [
        ("Ada met Bob in Athens.", Annotation("Ada", "person")),
        ("Grace Hopper wrote the report.", Annotation("Grace", "person")),
    ]
    bundle = build_correction_prompt(
        news_spec(),
        "person",
        "A person entity is the name of an individual human.",
        demos,
        batch,
        pack,
    )
    assert bundle.kind == "correction"
    assert only_text(bundle) == golden("correction.txt")


def test_icl_golden(pack):
    bundle = build_icl_prompt(news_spec(), "Ada met Bob in Athens.", pack)
    assert bundle.kind == "prediction"
    assert only_text(bundle) == golden("icl.txt")


# ---------------------------------------------------------------------------
# structural invariants


def test_builders_are_pure(pack):
    spec = news_spec()
    a = build_sample_prompt(spec, "", 5, pack)
    b = build_sample_prompt(spec, "", 5, pack)
    assert a.messages == b.messages
    assert a.metadata == b.metadata


def test_sample_prompt_embeds_every_class(pack):
    spec = news_spec()
    text = only_text(build_sample_prompt(spec, "", 5, pack))
    for name in spec.class_names():
        assert name in text


def test_sample_prompt_requirement_verbatim(pack):
    requirement = 'The news topic of the generated samples should be "Sports".'
    text = only_text(build_sample_prompt(news_spec(), requirement, 5, pack))
    assert requirement in text


def test_sample_prompt_without_negative_instruction(pack):
    spec = news_spec(include_negative_demo=False)
    text = only_text(build_sample_prompt(spec, "", 5, pack))
    assert "no named entities" not in text


def test_sample_prompt_renders_definitions(pack):
    spec = news_spec(
        classes=(
            EntityClass("person", "the name of an individual"),
            EntityClass("location"),
        ),
        demos=(
            NerSample(
                "Bob is born in Athens.",
                (Annotation("Bob", "person"), Annotation("Athens", "location")),
            ),
            NerSample("The weather was pleasant throughout the week."),
        ),
    )
    text = only_text(build_sample_prompt(spec, "", 5, pack))
    assert "- person: the name of an individual" in text


def test_demo_count_matches_spec(pack):
    spec = news_spec()
    text = only_text(build_sample_prompt(spec, "", 5, pack))
    demo_lines = [l for l in text.splitlines() if l.startswith("Sentence: ")]
    assert len(demo_lines) == len(spec.demos)


def test_correction_rejects_mixed_class_batch(pack):
    batch = [
        ("Ada met Bob.", Annotation("Ada", "person")),
        ("Athens is old.", Annotation("Athens", "location")),
    ]
    with pytest.raises(MixedClassBatch):
        build_correction_prompt(news_spec(), "person", "", [], batch, pack)


def test_correction_rejects_empty_batch(pack):
    with pytest.raises(ValueError):
        build_correction_prompt(news_spec(), "person", "", [], [], pack)


def test_entity_prompt_rejects_unknown_class(pack):
    with pytest.raises(ValueError):
        build_entity_prompt(news_spec(), "kingdom", 10, pack)


def test_render_entity_list_formats():
    assert render_entity_list([]) == "[]"
    assert render_entity_list(
        [Annotation("Bob", "person"), Annotation("Athens", "location")]
    ) == "[Bob (person), Athens (location)]"


def test_render_sample_plain_and_canonical():
    s = NerSample("Bob  is  here.", (Annotation("Bob", "person"),))
    assert render_sample(s) == "Sentence: Bob  is  here.\nNamed Entities: [Bob (person)]"
    assert render_sample(s, canonicalize=True) == (
        "Sentence: Bob is here.\nNamed Entities: [Bob (person)]"
    )


def test_template_pack_validates_required_fields(pack):
    texts = dict(pack.texts)
    texts["attr_dim"] = "no placeholders at all"
    with pytest.raises(MissingPlaceholder):
        TemplatePack(texts)


def test_template_pack_unknown_field_at_render(pack):
    texts = dict(pack.texts)
    texts["attr_dim"] = "{sample_description} {examples} {no_such_field}"
    broken = TemplatePack(texts)
    with pytest.raises(MissingPlaceholder):
        build_attr_dim_prompt(news_spec(), ["topic"], broken)


def test_persona_override(pack):
    custom = TemplatePack(dict(pack.texts), persona="a seasoned journalist")
    text = only_text(build_entity_prompt(news_spec(), "person", 5, custom))
    assert text.startswith("Suppose you are a seasoned journalist.")


def test_chat_message_role_checked():
    with pytest.raises(ValueError):
        ChatMessage("narrator", "hi")
