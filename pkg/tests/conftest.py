from __future__ import annotations

import json

import pytest

from escomatch.providers import ChatRequest, MockEmbedder, extract_candidate_labels
from escomatch.taxonomy import Skill, Taxonomy, _build_taxonomy

# Distinct word pairs per skill so the mock embedder's token hashing gives
# each skill a separable neighbourhood.
_WORDS = [
    "python", "welding", "forecasting", "negotiation", "baking", "plumbing",
    "translation", "auditing", "surgery", "roofing", "sailing", "brewing",
    "carpentry", "archiving", "modelling", "tutoring", "fencing", "logistics",
    "painting", "pruning", "fishing", "stitching", "drafting", "mining",
    "dispatch", "grading", "casting", "binding", "glazing", "milling",
    "riveting", "tanning", "weaving", "zoning", "valuation", "sampling",
    "hosting", "editing", "piloting", "scanning", "sorting", "testing",
    "billing", "coaching", "curing", "dyeing", "etching", "forging",
    "herding", "joinery", "kilning", "lathing", "mapping", "nursing",
    "orating", "paving", "quilting", "rigging", "salting", "tiling",
    "ushering", "vending", "waxing", "xraying", "yodeling", "zesting",
    "angling", "boring", "caulking", "docking", "embossing", "filing",
    "gilding", "hauling", "inking", "jigging", "knitting", "lacquering",
    "molding", "notching", "oiling", "plaiting", "quarrying", "reaming",
    "sanding", "tapping", "upholstery", "varnishing", "winding", "xeriscaping",
    "yarning", "zincing", "abrading", "bevelling", "chroming", "debugging",
    "enamelling", "flensing", "grouting", "honing",
]


def make_skill(i: int, category: str = "general", alt_labels: tuple[str, ...] = ()) -> Skill:
    word = _WORDS[i % len(_WORDS)]
    suffix = "" if i < len(_WORDS) else f" {i // len(_WORDS)}"
    return Skill(
        id=f"urn:skill:{i:04d}",
        preferred_label=f"{word} practice{suffix}",
        alt_labels=alt_labels,
        description=f"Applied {word} in professional settings.",
        category=category,
    )


def make_taxonomy(n: int = 10) -> Taxonomy:
    return _build_taxonomy([make_skill(i) for i in range(n)])


@pytest.fixture
def toy_taxonomy() -> Taxonomy:
    return make_taxonomy(10)


@pytest.fixture
def embedder() -> MockEmbedder:
    return MockEmbedder(dimension=64, seed=0)


class GoldFirstChatProvider:
    """Mock reranker that ranks gold labels first whenever they are offered.

    Drives the candidate-recall ceiling check: its RP@10 is exactly the best
    any reranker could do given the candidate sets.
    """

    def __init__(self, gold_labels_by_span: dict[str, list[str]]):
        self.gold_labels_by_span = gold_labels_by_span

    def complete_chat(self, request: ChatRequest) -> str:
        query = request.messages[-1].content
        span = query.split("Extract: ", 1)[1].split("\n\nProvide", 1)[0]
        candidates = extract_candidate_labels(query)
        gold = {label.casefold() for label in self.gold_labels_by_span[span]}
        ordered = [c for c in candidates if c.casefold() in gold]
        ordered += [c for c in candidates if c.casefold() not in gold]
        return "\n".join(f"{i + 1}. {label}" for i, label in enumerate(ordered[:10]))


def corpus_response(label: str, n: int = 40) -> str:
    """A deterministic numbered-list generation response for one skill."""
    lines = [f"{i + 1}. Sentence {i + 1} about {label} in a job posting." for i in range(n)]
    return "\n".join(lines)


def write_jsonl(path, records) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for record in records:
            f.write(json.dumps(record, ensure_ascii=False) + "\n")
