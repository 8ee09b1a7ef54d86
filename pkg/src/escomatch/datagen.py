"""Synthetic training-sentence generation for every taxonomy skill.

Builds the per-skill generation prompt (quota phrase selected by skill
category, alternative names injected as extra information), collects the
provider's numbered list into SyntheticExamples, and validates the corpus
against the 40-count / 30-floor thresholds.
"""

from __future__ import annotations

import json
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from .providers import (
    DEFAULT_DATAGEN_TEMPERATURE,
    ChatMessage,
    ChatProvider,
    ChatRequest,
    ContentFilteredError,
    TransportError,
)
from .taxonomy import Skill, Taxonomy
from .templates import load_template

QUOTA_PHRASES = {
    "tech": "FIVE",
    "language": "ZERO",
    "general": "80% (THIRTY-TWO)",
}


class DataGenError(Exception):
    """Aggregate generation failure (too many transport errors)."""


class ParseFailure(ValueError):
    """The provider response contained no parseable example list."""

    def __init__(self, message: str, raw: str):
        super().__init__(message)
        self.raw = raw


@dataclass(frozen=True)
class DataGenConfig:
    examples_per_skill: int = 40
    min_acceptable: int = 30
    implicit_quota: dict[str, int] = field(
        default_factory=lambda: {"tech": 5, "language": 0, "general": 32}
    )
    model_id: str = "gpt-3.5-turbo-0301"
    temperature: float = DEFAULT_DATAGEN_TEMPERATURE
    max_tokens: int = 4096
    retries: int = 1
    max_transport_failure_fraction: float = 0.05

    def __post_init__(self) -> None:
        if self.min_acceptable > self.examples_per_skill:
            raise ValueError("min_acceptable must be <= examples_per_skill")
        if any(q > self.examples_per_skill for q in self.implicit_quota.values()):
            raise ValueError("implicit quotas must be <= examples_per_skill")


@dataclass(frozen=True)
class SyntheticExample:
    skill_id: str
    text: str
    ordinal: int

    def __post_init__(self) -> None:
        if not self.text:
            raise ValueError("synthetic example text must be non-empty")

    @property
    def key(self) -> str:
        """Corpus-wide unique key, used by the sentence index."""
        return f"{self.skill_id}#{self.ordinal}"


@dataclass
class GenerationReport:
    counts: dict[str, int]
    skills_below_min: list[str]
    skipped: list[tuple[str, str]]  # (skill_id, machine-readable reason)
    examples_per_skill: int
    min_acceptable: int

    @property
    def attempted(self) -> int:
        return len(self.counts) + len(self.skipped)

    @property
    def skills_full(self) -> float:
        if self.attempted == 0:
            return 0.0
        full = sum(1 for c in self.counts.values() if c == self.examples_per_skill)
        return full / self.attempted

    def to_json(self) -> dict:
        return {
            "attempted": self.attempted,
            "skills_full": self.skills_full,
            "counts": dict(sorted(self.counts.items())),
            "skills_below_min": sorted(self.skills_below_min),
            "skipped": sorted([list(s) for s in self.skipped]),
            "examples_per_skill": self.examples_per_skill,
            "min_acceptable": self.min_acceptable,
        }

    def summary(self) -> str:
        lines = [
            f"skills attempted:      {self.attempted}",
            f"fully generated:       {self.skills_full:.1%}",
            f"below {self.min_acceptable}-example floor: {len(self.skills_below_min)}",
            f"skipped:               {len(self.skipped)}",
        ]
        for skill_id, reason in sorted(self.skipped):
            lines.append(f"  - {skill_id}: {reason}")
        return "\n".join(lines)


def build_datagen_prompt(skill: Skill, config: DataGenConfig) -> ChatRequest:
    """Two-message generation request for one skill.

    The extra-information block is dropped entirely when the skill has no
    alternative labels.
    """
    system = load_template("datagen_system.txt")
    user = load_template("datagen_user.txt")
    if skill.alt_labels:
        extra = (
            "Extra Information/Alternative Names (you may discard this information if irrelevant): "
            + ", ".join(skill.alt_labels)
            + "\nAvoid explicitly using the wording of this extra information in your examples.\n"
        )
    else:
        extra = ""
    user = (
        user.replace("{{quota}}", QUOTA_PHRASES[skill.category])
        .replace("{{extra_information}}", extra)
        .replace("{{target}}", skill.preferred_label)
    )
    return ChatRequest(
        model_id=config.model_id,
        messages=(ChatMessage("system", system), ChatMessage("user", user)),
        temperature=config.temperature,
        max_tokens=config.max_tokens,
    )


_ITEM_RE = re.compile(r"^\s*(?:\d+\s*[.):]|[-*•])\s+(.*)$")
_QUOTES = "\"'“”‘’"


def parse_generation(response: str) -> list[str]:
    """Split a numbered or bulleted list response into example texts.

    Continuation lines are folded into the preceding item, so multi-sentence
    examples survive as one entry; blank items are dropped.
    """
    items: list[str] = []
    in_list = False
    for line in response.splitlines():
        match = _ITEM_RE.match(line)
        if match:
            items.append(match.group(1).strip())
            in_list = True
        elif in_list and line.strip() and items:
            items[-1] = f"{items[-1]} {line.strip()}"
    cleaned = []
    for item in items:
        item = item.strip().strip(_QUOTES).strip()
        if item:
            cleaned.append(item)
    if not cleaned:
        raise ParseFailure("no parseable list items in response", raw=response)
    return cleaned


def _generate_for_skill(
    skill: Skill, provider: ChatProvider, config: DataGenConfig
) -> list[str]:
    request = build_datagen_prompt(skill, config)
    attempts = config.retries + 1
    best: list[str] = []
    for _ in range(attempts):
        response = provider.complete_chat(request)
        try:
            items = parse_generation(response)
        except ParseFailure:
            continue
        if len(items) > len(best):
            best = items
        if len(best) >= config.min_acceptable:
            break
    if not best:
        raise ParseFailure("all generation attempts unparseable", raw="")
    return best[: config.examples_per_skill]


def generate_dataset(
    taxonomy: Taxonomy,
    provider: ChatProvider,
    config: DataGenConfig | None = None,
    max_workers: int = 1,
) -> tuple[list[SyntheticExample], GenerationReport]:
    """Generate the synthetic corpus for every skill in the taxonomy.

    Content-filtered skills are skipped (recorded with a reason) rather than
    failing the run; the whole run only fails when the transport-failure
    fraction exceeds the configured limit.
    """
    config = config or DataGenConfig()
    skills = sorted(taxonomy.skills, key=lambda s: s.id)

    def task(skill: Skill):
        try:
            return skill.id, _generate_for_skill(skill, provider, config), None
        except ContentFilteredError:
            return skill.id, None, "content_filtered"
        except ParseFailure:
            return skill.id, None, "parse_failure"
        except TransportError:
            return skill.id, None, "transport_error"

    if max_workers > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            results = list(pool.map(task, skills))
    else:
        results = [task(s) for s in skills]

    examples: list[SyntheticExample] = []
    counts: dict[str, int] = {}
    skipped: list[tuple[str, str]] = []
    transport_failures = 0
    for skill_id, items, reason in results:
        if items is None:
            skipped.append((skill_id, reason))
            if reason == "transport_error":
                transport_failures += 1
            continue
        counts[skill_id] = len(items)
        for ordinal, text in enumerate(items):
            examples.append(SyntheticExample(skill_id=skill_id, text=text, ordinal=ordinal))

    if skills and transport_failures / len(skills) > config.max_transport_failure_fraction:
        raise DataGenError(
            f"{transport_failures}/{len(skills)} skills failed transport "
            f"(limit {config.max_transport_failure_fraction:.0%})"
        )

    report = GenerationReport(
        counts=counts,
        skills_below_min=[s for s, c in counts.items() if c < config.min_acceptable],
        skipped=skipped,
        examples_per_skill=config.examples_per_skill,
        min_acceptable=config.min_acceptable,
    )
    return examples, report


def validate_dataset(
    dataset: list[SyntheticExample], taxonomy: Taxonomy, config: DataGenConfig | None = None
) -> GenerationReport:
    """Recompute per-skill counts and thresholds over a stored corpus."""
    config = config or DataGenConfig()
    counts: dict[str, int] = {}
    for example in dataset:
        if example.skill_id not in taxonomy.by_id:
            raise ValueError(f"corpus references unknown skill id: {example.skill_id}")
        counts[example.skill_id] = counts.get(example.skill_id, 0) + 1
    return GenerationReport(
        counts=counts,
        skills_below_min=[s for s, c in counts.items() if c < config.min_acceptable],
        skipped=[],
        examples_per_skill=config.examples_per_skill,
        min_acceptable=config.min_acceptable,
    )


def save_corpus(dataset: list[SyntheticExample], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for example in dataset:
            f.write(
                json.dumps(
                    {"skill_id": example.skill_id, "text": example.text, "ordinal": example.ordinal},
                    ensure_ascii=False,
                )
                + "\n"
            )


def load_corpus(path: str | Path) -> list[SyntheticExample]:
    dataset = []
    with open(path, encoding="utf-8") as f:
        for line_num, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                dataset.append(
                    SyntheticExample(skill_id=obj["skill_id"], text=obj["text"], ordinal=obj["ordinal"])
                )
            except (json.JSONDecodeError, KeyError) as exc:
                raise ValueError(f"{path}: line {line_num}: invalid corpus record: {exc}") from exc
    return dataset


def sample_examples(dataset: list[SyntheticExample], n_skills: int, seed: int = 0) -> dict[str, list[str]]:
    """Random spot-check sample: texts for n random skills, keyed by skill id."""
    import random

    by_skill: dict[str, list[str]] = {}
    for example in dataset:
        by_skill.setdefault(example.skill_id, []).append(example.text)
    rng = random.Random(seed)
    chosen = rng.sample(sorted(by_skill), min(n_skills, len(by_skill)))
    return {skill_id: by_skill[skill_id] for skill_id in chosen}
