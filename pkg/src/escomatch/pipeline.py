"""End-to-end wiring: span -> candidates -> rerank -> metrics.

Spans embed as queries; labels and synthetic sentences embed as passages.
Candidate sources are selectable (classifier, similarity, or both) so every
ablation row of the results grid is one configuration.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .candidates import (
    Candidate,
    CandidateSet,
    ClassifierModel,
    classifier_candidates,
    label_similarity_candidates,
    merge_candidates,
    sentence_similarity_candidates,
)
from .datagen import SyntheticExample
from .evaluation import EvalExample, EvalReport, evaluate
from .index import VectorIndex, build_index
from .providers import ChatProvider, EmbeddingProvider, cache_key
from .reranker import MAX_RANKED, RankedPrediction, rerank
from .taxonomy import Taxonomy
from .templates import template_version

SOURCES = ("classifier", "similarity", "both")


def build_label_index(
    taxonomy: Taxonomy,
    embedder: EmbeddingProvider,
    include_descriptions: bool = False,
) -> VectorIndex:
    items = []
    for skill in sorted(taxonomy.skills, key=lambda s: s.id):
        text = skill.preferred_label
        if include_descriptions and skill.description:
            text = f"{text}. {skill.description}"
        items.append((skill.id, text, skill.id))
    return build_index(items, embedder, kind="labels", embed_kind="passage")


def build_sentence_index(
    corpus: Sequence[SyntheticExample], embedder: EmbeddingProvider
) -> VectorIndex:
    items = [(e.key, e.text, e.skill_id) for e in sorted(corpus, key=lambda e: e.key)]
    return build_index(items, embedder, kind="sentences", embed_kind="passage")


def candidate_set_for_span(
    span: str,
    embedder: EmbeddingProvider,
    models: Sequence[ClassifierModel],
    labels_index: VectorIndex | None,
    sentence_index: VectorIndex | None,
    sources: str = "both",
) -> CandidateSet:
    if sources not in SOURCES:
        raise ValueError(f"unknown candidate sources: {sources!r}")
    span_vector = embedder.embed_text(span, kind="query")
    from_classifier: list[Candidate] = []
    from_labels: list[Candidate] = []
    from_sentences: list[Candidate] = []
    if sources in ("classifier", "both"):
        from_classifier = classifier_candidates(span_vector, models)
    if sources in ("similarity", "both"):
        if labels_index is not None:
            from_labels = label_similarity_candidates(span_vector, labels_index)
        if sentence_index is not None:
            from_sentences = sentence_similarity_candidates(span_vector, sentence_index)
    return merge_candidates(span, from_classifier, from_labels, from_sentences)


def predict_span(
    span: str,
    embedder: EmbeddingProvider,
    models: Sequence[ClassifierModel],
    labels_index: VectorIndex | None,
    sentence_index: VectorIndex | None,
    chat_provider: ChatProvider | None,
    taxonomy: Taxonomy,
    variant: str = "natural",
    sources: str = "both",
    model_id: str = "gpt-4-0314",
) -> tuple[CandidateSet, RankedPrediction]:
    """Candidates plus ranked prediction for one span.

    With no chat provider the candidate order itself is the ranking (the
    no-rerank baselines), truncated to ten.
    """
    candidate_set = candidate_set_for_span(
        span, embedder, models, labels_index, sentence_index, sources
    )
    if chat_provider is None or not candidate_set.candidates:
        ranked = tuple(candidate_set.skill_ids()[:MAX_RANKED])
        return candidate_set, RankedPrediction(ranked=ranked)
    prediction = rerank(
        span, candidate_set, chat_provider, variant, taxonomy, model_id=model_id
    )
    return candidate_set, prediction


def run_eval(
    dataset: Sequence[EvalExample],
    taxonomy: Taxonomy,
    embedder: EmbeddingProvider,
    models: Sequence[ClassifierModel],
    labels_index: VectorIndex | None,
    sentence_index: VectorIndex | None,
    chat_provider: ChatProvider | None,
    variant: str = "natural",
    sources: str = "both",
    model_id: str = "gpt-4-0314",
    seed: int = 0,
) -> tuple[EvalReport, dict[str, RankedPrediction]]:
    """Full pipeline over an evaluation dataset."""
    predictions: dict[str, RankedPrediction] = {}
    for example in dataset:
        _, prediction = predict_span(
            example.span,
            embedder,
            models,
            labels_index,
            sentence_index,
            chat_provider,
            taxonomy,
            variant=variant,
            sources=sources,
            model_id=model_id,
        )
        predictions[example.key] = prediction
    config = {
        "variant": variant,
        "sources": sources,
        "model_id": model_id,
        "seed": seed,
        "reranked": chat_provider is not None,
        "template_version": template_version(),
    }
    metadata = dict(config)
    metadata["config_hash"] = cache_key(config)
    report = evaluate(
        {key: list(p.ranked) for key, p in predictions.items()}, dataset, metadata
    )
    return report, predictions


def candidate_recall_ceiling(
    dataset: Sequence[EvalExample],
    candidate_sets: dict[str, CandidateSet],
    k: int = MAX_RANKED,
) -> dict[str, float]:
    """Best achievable macro RP@k per subset given the candidate sets:
    the score of an oracle reranker that places every recalled gold label
    first."""
    per_subset: dict[str, list[float]] = {}
    for example in dataset:
        recalled = [
            skill_id
            for skill_id in candidate_sets[example.key].skill_ids()
            if skill_id in example.gold
        ]
        score = min(len(recalled), k) / min(k, len(example.gold))
        per_subset.setdefault(example.subset, []).append(score)
    return {subset: float(np.mean(scores)) for subset, scores in per_subset.items()}
