"""Diversity requirement sampling for dataset generation prompts.

Three levers widen the distribution of generated samples:

* attribute requirements ("x"): a topic dimension that is always sampled plus
  optional extra dimensions, each included with its own probability;
* entity requirements ("y"): a small set of entity terms the model is asked
  to weave into the samples, drawn per entity class and thinned to a target
  expected count;
* both at once ("xy"): entity terms are drawn from pools keyed by
  (topic value, entity class) so the requested terms fit the sampled topic.

Dimensions in the same conflict group are mutually exclusive (at most one of
them appears in a config); the group fires with probability equal to the
clamped sum of member probabilities, then one member is chosen proportionally.
"""
from __future__ import annotations

import random
import sys
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


class EmptyPool(ValueError):
    """A pool or dimension has nothing to sample from."""


class MissingTopicEntities(UserWarning):
    """A latent entity pool has no entry for a sampled topic value."""


@dataclass(frozen=True)
class AttributeDimension:
    """One attribute axis, e.g. "news topic" or "writing style"."""

    name: str
    values: tuple[str, ...]
    sample_probability: float = 1.0
    conflict_group: str | None = None
    is_topic: bool = False

    def __post_init__(self) -> None:
        if not isinstance(self.values, tuple):
            object.__setattr__(self, "values", tuple(self.values))
        if not self.name.strip():
            raise ValueError("dimension name must be non-empty")
        if not self.values:
            raise EmptyPool(f"dimension {self.name!r} has no values")
        if len(set(self.values)) != len(self.values):
            raise ValueError(f"dimension {self.name!r} has duplicate values")
        if not 0.0 <= self.sample_probability <= 1.0:
            raise ValueError("sample probability must be within [0, 1]")


@dataclass(frozen=True)
class AttributePool:
    dimensions: tuple[AttributeDimension, ...]

    def __post_init__(self) -> None:
        if not isinstance(self.dimensions, tuple):
            object.__setattr__(self, "dimensions", tuple(self.dimensions))
        topics = [d for d in self.dimensions if d.is_topic]
        if len(topics) != 1:
            raise EmptyPool("attribute pool needs exactly one topic dimension")
        names = [d.name for d in self.dimensions]
        if len(set(names)) != len(names):
            raise ValueError("dimension names must be unique")

    @property
    def topic(self) -> AttributeDimension:
        return next(d for d in self.dimensions if d.is_topic)


@dataclass(frozen=True)
class EntityPool:
    """Entity terms per class, either flat ("vanilla") or keyed by topic
    ("latent").  Entries keep file order so sampling is reproducible."""

    variant: str
    vanilla: dict[str, tuple[str, ...]] = field(default_factory=dict)
    latent: dict[tuple[str, str], tuple[str, ...]] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.variant not in ("vanilla", "latent"):
            raise ValueError("entity pool variant must be 'vanilla' or 'latent'")
        if self.variant == "vanilla" and not self.vanilla:
            raise EmptyPool("vanilla entity pool has no classes")
        if self.variant == "latent" and not self.latent:
            raise EmptyPool("latent entity pool has no (topic, class) entries")

    def view_for_topic(self, topic_value: str) -> dict[str, tuple[str, ...]]:
        """Per-class entity lists restricted to one topic value."""
        out: dict[str, tuple[str, ...]] = {}
        for (topic, cls), entities in self.latent.items():
            if topic == topic_value:
                out[cls] = entities
        return out


@dataclass(frozen=True)
class DiversityConfig:
    """One sampled requirement bundle attached to a generation prompt."""

    x_pairs: tuple[tuple[str, str], ...] = ()
    y_entities: tuple[str, ...] = ()
    topic_value: str | None = None

    def __post_init__(self) -> None:
        if not isinstance(self.x_pairs, tuple):
            object.__setattr__(self, "x_pairs", tuple(self.x_pairs))
        if not isinstance(self.y_entities, tuple):
            object.__setattr__(self, "y_entities", tuple(self.y_entities))


def _choose(rng: random.Random, values: Sequence[str]) -> str:
    return values[rng.randrange(len(values))]


def sample_config_x(pool: AttributePool, rng: random.Random) -> DiversityConfig:
    """Draw one attribute config: topic always, the rest probabilistically.

    Draw order is fixed (topic value, then dimensions in pool order, conflict
    groups resolved at their first member's position) so a seeded rng streams
    identical configs on every run.
    """
    topic = pool.topic
    topic_value = _choose(rng, topic.values)
    pairs: list[tuple[str, str]] = [(topic.name, topic_value)]
    handled_groups: set[str] = set()
    for dim in pool.dimensions:
        if dim.is_topic:
            continue
        if dim.conflict_group is None:
            if rng.random() < dim.sample_probability:
                pairs.append((dim.name, _choose(rng, dim.values)))
            continue
        if dim.conflict_group in handled_groups:
            continue
        handled_groups.add(dim.conflict_group)
        members = [
            d
            for d in pool.dimensions
            if d.conflict_group == dim.conflict_group and not d.is_topic
        ]
        total = sum(d.sample_probability for d in members)
        if rng.random() < min(1.0, total) and total > 0:
            r = rng.random() * total
            acc = 0.0
            chosen = members[-1]
            for member in members:
                acc += member.sample_probability
                if r < acc:
                    chosen = member
                    break
            pairs.append((chosen.name, _choose(rng, chosen.values)))
    return DiversityConfig(x_pairs=tuple(pairs), topic_value=topic_value)


def sample_entities(
    view: Mapping[str, Sequence[str]],
    rng: random.Random,
    expected_count: float,
) -> list[str]:
    """Draw entity terms: 0-3 per class uniformly, then thin to a target.

    Per class, K ~ uniform{0,1,2,3} entities are drawn without replacement
    (seeded shuffle prefix).  The union is thinned by keeping each term with
    probability min(1, expected_count / |union|), so the expected kept count
    is min(expected_count, |union|).  The survivors are shuffled.
    """
    if expected_count < 0:
        raise ValueError("expected entity count must be >= 0")
    union: list[str] = []
    seen: set[str] = set()
    for _, entities in view.items():
        k = rng.randrange(4)
        pool = list(entities)
        rng.shuffle(pool)
        for term in pool[: min(k, len(pool))]:
            if term not in seen:
                seen.add(term)
                union.append(term)
    if not union:
        return []
    p = min(1.0, expected_count / len(union))
    kept = [term for term in union if rng.random() < p]
    rng.shuffle(kept)
    return kept


def sample_config_y(
    pool: EntityPool, rng: random.Random, expected_count: float
) -> DiversityConfig:
    if pool.variant != "vanilla":
        raise ValueError("entity-only sampling needs a vanilla entity pool")
    entities = sample_entities(pool.vanilla, rng, expected_count)
    return DiversityConfig(y_entities=tuple(entities))


def sample_config_xy(
    attr_pool: AttributePool,
    entity_pool: EntityPool,
    rng: random.Random,
    expected_count: float,
) -> DiversityConfig:
    """Attribute config plus topic-matched entity terms.

    When the latent pool has no entry for the sampled topic the config
    degrades to attributes only and a MissingTopicEntities warning is issued.
    """
    if entity_pool.variant != "latent":
        raise ValueError("combined sampling needs a latent entity pool")
    config = sample_config_x(attr_pool, rng)
    view = entity_pool.view_for_topic(config.topic_value or "")
    if not view:
        warnings.warn(
            f"no latent entities for topic {config.topic_value!r}",
            MissingTopicEntities,
        )
        return config
    entities = sample_entities(view, rng, expected_count)
    return DiversityConfig(
        x_pairs=config.x_pairs,
        y_entities=tuple(entities),
        topic_value=config.topic_value,
    )


def render_requirement(config: DiversityConfig, templates: Mapping[str, str]) -> str:
    """Deterministic requirement text for a config; empty config renders "".

    The entity clause lists bare terms, never entity classes: naming classes
    would leak label hints into the generation prompt.
    """
    lines: list[str] = []
    for dimension, value in config.x_pairs:
        lines.append(templates["dimension"].format(dimension=dimension, value=value))
    if config.y_entities:
        quoted = ", ".join(f'"{term}"' for term in config.y_entities)
        lines.append(templates["entities"].format(entities=quoted))
    if not lines:
        return ""
    body = "\n".join(f"{i}. {line}" for i, line in enumerate(lines, start=1))
    return templates["header"] + "\n" + body


# ---------------------------------------------------------------------------
# Pool files


def parse_pools(text: str) -> tuple[AttributePool | None, EntityPool | None]:
    """Parse a TOML pool file; either section may be absent.

    Format::

        [[dimension]]
        name = "news topic"
        topic = true            # exactly one dimension carries this flag
        values = ["Politics", "Sports"]

        [[dimension]]
        name = "writing style"
        probability = 0.4       # default 1.0
        conflict_group = "g1"   # optional mutual-exclusion group
        values = ["formal", "casual"]

        [entities]
        variant = "vanilla"     # or "latent"
        [entities.values]
        person = ["Joe", "Ada"]

        # latent pools nest per topic:
        # [[entities.topic]]
        # value = "Politics"
        # [entities.topic.values]
        # person = ["Joe"]
    """
    data = tomllib.loads(text)
    attr_pool = None
    if "dimension" in data:
        dims = []
        for raw in data["dimension"]:
            dims.append(
                AttributeDimension(
                    name=raw["name"],
                    values=tuple(raw["values"]),
                    sample_probability=float(raw.get("probability", 1.0)),
                    conflict_group=raw.get("conflict_group"),
                    is_topic=bool(raw.get("topic", False)),
                )
            )
        attr_pool = AttributePool(tuple(dims))
    entity_pool = None
    if "entities" in data:
        section = data["entities"]
        variant = section.get("variant", "vanilla")
        if variant == "vanilla":
            entity_pool = EntityPool(
                variant="vanilla",
                vanilla={
                    cls: tuple(vals)
                    for cls, vals in section.get("values", {}).items()
                },
            )
        else:
            latent: dict[tuple[str, str], tuple[str, ...]] = {}
            for block in section.get("topic", []):
                topic_value = block["value"]
                for cls, vals in block.get("values", {}).items():
                    latent[(topic_value, cls)] = tuple(vals)
            entity_pool = EntityPool(variant="latent", latent=latent)
    return attr_pool, entity_pool


def load_pools(path) -> tuple[AttributePool | None, EntityPool | None]:
    return parse_pools(Path(path).read_text(encoding="utf-8"))
