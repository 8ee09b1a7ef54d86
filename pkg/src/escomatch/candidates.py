"""Candidate-skill generation for a text span.

Two routes feed the reranker: a bank of one-vs-all weighted L2-regularized
logistic classifiers trained on frozen embeddings of the synthetic corpus
(with partial hard-negative sampling), and label / sentence cosine-similarity
retrieval. ``merge_candidates`` combines them: every classifier hit plus up
to 60 similarity hits.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from scipy.optimize import minimize
from scipy.special import expit

from .datagen import SyntheticExample
from .index import VectorIndex, top_k

SIMILARITY_CAP = 60  # max similarity-sourced candidates passed to the reranker
LABEL_SIM_K = 40
SENTENCE_SIM_K = 40
SENTENCE_MIN_VOTES = 2


@dataclass(frozen=True)
class TrainingConfig:
    neg_ratio: float = 2.0
    hard_neg_fraction: float = 0.1
    hard_pool_labels: int = 20
    inverse_reg_c: float = 0.1
    max_iterations: int = 10_000
    tolerance: float = 1e-5
    positive_weight: float = 2.0
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0.0 <= self.hard_neg_fraction <= 1.0:
            raise ValueError("hard_neg_fraction must be in [0, 1]")
        for name in ("neg_ratio", "hard_pool_labels", "inverse_reg_c", "max_iterations", "tolerance", "positive_weight"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")

    def to_json(self) -> dict:
        return {
            "neg_ratio": self.neg_ratio,
            "hard_neg_fraction": self.hard_neg_fraction,
            "hard_pool_labels": self.hard_pool_labels,
            "inverse_reg_c": self.inverse_reg_c,
            "max_iterations": self.max_iterations,
            "tolerance": self.tolerance,
            "positive_weight": self.positive_weight,
            "seed": self.seed,
        }


@dataclass
class ClassifierModel:
    skill_id: str
    weights: np.ndarray
    bias: float
    threshold: float = 0.5
    converged: bool = False
    iterations_used: int = 0

    def __post_init__(self) -> None:
        if not 0.0 < self.threshold < 1.0:
            raise ValueError("threshold must be in (0, 1)")

    def probability(self, x: np.ndarray) -> float:
        return float(expit(float(self.weights @ x) + self.bias))


@dataclass(frozen=True)
class Candidate:
    skill_id: str
    source: str  # classifier | label_sim | sentence_sim
    score: float


@dataclass(frozen=True)
class CandidateSet:
    span_text: str
    candidates: tuple[Candidate, ...]

    def __post_init__(self) -> None:
        ids = [c.skill_id for c in self.candidates]
        if len(ids) != len(set(ids)):
            raise ValueError("candidate set contains duplicate skill ids")

    def skill_ids(self) -> list[str]:
        return [c.skill_id for c in self.candidates]


# --------------------------------------------------------------------------
# Negative sampling


def sample_negatives(
    skill_id: str,
    corpus: Sequence[SyntheticExample],
    sentence_index: VectorIndex,
    config: TrainingConfig,
    rng: np.random.Generator,
) -> list[SyntheticExample]:
    """Negatives for one skill: round(neg_ratio * n_pos) examples from other
    skills, of which exactly round(hard_neg_fraction * n_neg) are hard
    negatives drawn from the labels whose sentences sit closest to the
    positives; the remainder is sampled uniformly.
    """
    positives = sorted((e for e in corpus if e.skill_id == skill_id), key=lambda e: e.key)
    others = sorted((e for e in corpus if e.skill_id != skill_id), key=lambda e: e.key)
    if not positives:
        raise ValueError(f"corpus has no positives for {skill_id}")
    n_neg = round(config.neg_ratio * len(positives))
    n_hard = round(config.hard_neg_fraction * n_neg)
    if len(others) < n_neg:
        raise ValueError(f"corpus too small: need {n_neg} negatives, have {len(others)}")

    hard: list[SyntheticExample] = []
    if n_hard > 0:
        pool_labels = _hard_negative_pool(positives, others, sentence_index, config.hard_pool_labels)
        pool = [e for e in others if e.skill_id in pool_labels]
        if len(pool) < n_hard:
            raise ValueError(f"hard-negative pool too small: need {n_hard}, have {len(pool)}")
        hard = [pool[i] for i in rng.choice(len(pool), size=n_hard, replace=False)]

    chosen_keys = {e.key for e in hard}
    easy_pool = [e for e in others if e.key not in chosen_keys]
    n_easy = n_neg - n_hard
    if len(easy_pool) < n_easy:
        raise ValueError(f"corpus too small: need {n_easy} uniform negatives, have {len(easy_pool)}")
    easy = [easy_pool[i] for i in rng.choice(len(easy_pool), size=n_easy, replace=False)]
    return hard + easy


def _hard_negative_pool(
    positives: list[SyntheticExample],
    others: list[SyntheticExample],
    sentence_index: VectorIndex,
    pool_size: int,
) -> set[str]:
    """Top labels ranked by their best sentence's cosine to any positive."""
    row = {key: i for i, key in enumerate(sentence_index.keys)}
    pos_matrix = sentence_index.vectors[[row[e.key] for e in positives]]
    other_rows = [row[e.key] for e in others]
    other_matrix = sentence_index.vectors[other_rows]
    best_sim = (other_matrix @ pos_matrix.T).max(axis=1)
    best_by_label: dict[str, float] = {}
    for example, sim in zip(others, best_sim):
        current = best_by_label.get(example.skill_id)
        if current is None or sim > current:
            best_by_label[example.skill_id] = float(sim)
    ranked = sorted(best_by_label.items(), key=lambda kv: (-kv[1], kv[0]))
    return {label for label, _ in ranked[:pool_size]}


# --------------------------------------------------------------------------
# Classifier training


def loss_and_grad(
    weights: np.ndarray,
    bias: float,
    X: np.ndarray,
    y: np.ndarray,
    sample_weights: np.ndarray,
    inverse_reg_c: float,
) -> tuple[float, np.ndarray, float]:
    """Weighted L2-regularized logistic loss and its analytic gradient.

    loss = ||w||^2 / (2C) + sum_i c_i * log(1 + exp(-y_i (w.x_i + b)))
    with y in {-1, +1}; the bias is unregularized.
    """
    margins = y * (X @ weights + bias)
    loss = float(weights @ weights) / (2.0 * inverse_reg_c) + float(
        np.sum(sample_weights * np.logaddexp(0.0, -margins))
    )
    # d/dz log(1+exp(-z)) = -sigmoid(-z)
    coeff = sample_weights * (-y) * expit(-margins)
    grad_w = weights / inverse_reg_c + X.T @ coeff
    grad_b = float(np.sum(coeff))
    return loss, grad_w, grad_b


def train_classifier(
    skill_id: str,
    positives: Sequence[SyntheticExample],
    negatives: Sequence[SyntheticExample],
    embeddings: Mapping[str, np.ndarray],
    config: TrainingConfig,
) -> ClassifierModel:
    """Fit one one-vs-all logistic classifier on frozen embeddings.

    Deterministic L-BFGS minimization of the convex objective from a zero
    start; halts on gradient norm <= tolerance or the iteration cap, with
    ``converged`` reflecting which.
    """
    X = np.vstack([embeddings[e.key] for e in positives] + [embeddings[e.key] for e in negatives]).astype(np.float64)
    y = np.concatenate([np.ones(len(positives)), -np.ones(len(negatives))])
    c = np.concatenate(
        [np.full(len(positives), config.positive_weight), np.ones(len(negatives))]
    )
    d = X.shape[1]

    def objective(theta: np.ndarray) -> tuple[float, np.ndarray]:
        loss, grad_w, grad_b = loss_and_grad(theta[:d], theta[d], X, y, c, config.inverse_reg_c)
        if not np.isfinite(loss) or not np.all(np.isfinite(grad_w)) or not np.isfinite(grad_b):
            raise FloatingPointError(
                f"non-finite loss/gradient while training {skill_id}: loss={loss}"
            )
        return loss, np.append(grad_w, grad_b)

    result = minimize(
        objective,
        x0=np.zeros(d + 1),
        jac=True,
        method="L-BFGS-B",
        options={"maxiter": config.max_iterations, "gtol": config.tolerance, "ftol": 1e-16},
    )
    weights, bias = result.x[:d], float(result.x[d])
    _, grad_w, grad_b = loss_and_grad(weights, bias, X, y, c, config.inverse_reg_c)
    grad_norm = max(float(np.max(np.abs(grad_w))), abs(grad_b))
    return ClassifierModel(
        skill_id=skill_id,
        weights=weights.astype(np.float32),
        bias=bias,
        converged=grad_norm <= config.tolerance or bool(result.success),
        iterations_used=int(result.nit),
    )


def train_classifier_bank(
    corpus: Sequence[SyntheticExample],
    sentence_index: VectorIndex,
    config: TrainingConfig,
) -> list[ClassifierModel]:
    """Train one classifier per skill present in the corpus.

    Each skill gets its own deterministic sampling stream derived from the
    run seed, so per-skill results are independent of training order.
    """
    embeddings = {key: sentence_index.vectors[i] for i, key in enumerate(sentence_index.keys)}
    by_skill: dict[str, list[SyntheticExample]] = {}
    for example in corpus:
        by_skill.setdefault(example.skill_id, []).append(example)
    models = []
    for skill_id in sorted(by_skill):
        rng = np.random.default_rng([config.seed, _stable_hash(skill_id)])
        negatives = sample_negatives(skill_id, corpus, sentence_index, config, rng)
        models.append(train_classifier(skill_id, by_skill[skill_id], negatives, embeddings, config))
    return models


def _stable_hash(text: str) -> int:
    import hashlib

    return int.from_bytes(hashlib.blake2b(text.encode("utf-8"), digest_size=8).digest(), "little")


# --------------------------------------------------------------------------
# Candidate generators


def classifier_candidates(span_vector: np.ndarray, models: Sequence[ClassifierModel]) -> list[Candidate]:
    """Every model whose probability clears its threshold, best first."""
    hits = []
    for model in models:
        p = model.probability(span_vector)
        if p >= model.threshold:
            hits.append(Candidate(skill_id=model.skill_id, source="classifier", score=p))
    hits.sort(key=lambda c: (-c.score, c.skill_id))
    return hits


def label_similarity_candidates(span_vector: np.ndarray, labels_index: VectorIndex) -> list[Candidate]:
    """The 40 most similar labels, no score cutoff."""
    return [
        Candidate(skill_id=skill_id, source="label_sim", score=score)
        for _, skill_id, score in top_k(labels_index, span_vector, LABEL_SIM_K)
    ]


def sentence_similarity_candidates(span_vector: np.ndarray, sentence_index: VectorIndex) -> list[Candidate]:
    """Labels with at least two sentences in the span's top-40 sentences.

    Score is the best member cosine; nearest-neighbour voting in miniature.
    """
    votes: dict[str, int] = {}
    best: dict[str, float] = {}
    for _, skill_id, score in top_k(sentence_index, span_vector, SENTENCE_SIM_K):
        votes[skill_id] = votes.get(skill_id, 0) + 1
        if skill_id not in best or score > best[skill_id]:
            best[skill_id] = score
    hits = [
        Candidate(skill_id=skill_id, source="sentence_sim", score=best[skill_id])
        for skill_id, n in votes.items()
        if n >= SENTENCE_MIN_VOTES
    ]
    hits.sort(key=lambda c: (-c.score, c.skill_id))
    return hits


def merge_candidates(
    span_text: str,
    classifier_list: Sequence[Candidate],
    label_sim_list: Sequence[Candidate],
    sentence_sim_list: Sequence[Candidate],
) -> CandidateSet:
    """All classifier candidates plus up to 60 similarity candidates.

    The two similarity sources are unioned keeping the higher-scoring entry,
    capped at 60; a skill seen by both a classifier and similarity keeps the
    classifier entry. Ordering: classifier block, then similarity block, each
    score-descending.
    """
    sim_best: dict[str, Candidate] = {}
    for candidate in list(label_sim_list) + list(sentence_sim_list):
        current = sim_best.get(candidate.skill_id)
        if current is None or candidate.score > current.score:
            sim_best[candidate.skill_id] = candidate
    sim_merged = sorted(sim_best.values(), key=lambda c: (-c.score, c.skill_id))[:SIMILARITY_CAP]

    classifier_ids = {c.skill_id for c in classifier_list}
    ordered = sorted(classifier_list, key=lambda c: (-c.score, c.skill_id)) + [
        c for c in sim_merged if c.skill_id not in classifier_ids
    ]
    return CandidateSet(span_text=span_text, candidates=tuple(ordered))


# --------------------------------------------------------------------------
# Classifier bank persistence

_BANK_MAGIC = b"ESCOBNK1\n"


def save_bank(models: Sequence[ClassifierModel], config: TrainingConfig, path: str | Path) -> None:
    if not models:
        raise ValueError("refusing to save an empty classifier bank")
    dimension = models[0].weights.shape[0]
    meta = [
        {
            "skill_id": m.skill_id,
            "bias": m.bias,
            "threshold": m.threshold,
            "converged": m.converged,
            "iterations_used": m.iterations_used,
        }
        for m in models
    ]
    meta_bytes = json.dumps(meta, ensure_ascii=False).encode("utf-8")
    header = json.dumps(
        {"dimension": int(dimension), "count": len(models), "config": config.to_json(), "meta_bytes": len(meta_bytes)}
    ).encode("utf-8")
    with open(path, "wb") as f:
        f.write(_BANK_MAGIC)
        f.write(struct.pack("<I", len(header)))
        f.write(header)
        f.write(meta_bytes)
        for model in models:
            f.write(np.ascontiguousarray(model.weights, dtype="<f4").tobytes())


def load_bank(path: str | Path) -> tuple[list[ClassifierModel], TrainingConfig]:
    with open(path, "rb") as f:
        if f.read(len(_BANK_MAGIC)) != _BANK_MAGIC:
            raise ValueError(f"{path}: not a classifier bank file")
        (header_len,) = struct.unpack("<I", f.read(4))
        header = json.loads(f.read(header_len).decode("utf-8"))
        meta = json.loads(f.read(header["meta_bytes"]).decode("utf-8"))
        dimension = header["dimension"]
        models = []
        for entry in meta:
            weights = np.frombuffer(f.read(dimension * 4), dtype="<f4").copy()
            models.append(
                ClassifierModel(
                    skill_id=entry["skill_id"],
                    weights=weights,
                    bias=entry["bias"],
                    threshold=entry["threshold"],
                    converged=entry["converged"],
                    iterations_used=entry["iterations_used"],
                )
            )
    return models, TrainingConfig(**header["config"])


def convergence_summary(models: Sequence[ClassifierModel]) -> str:
    if not models:
        return "no models"
    converged = sum(1 for m in models if m.converged)
    iterations = sorted(m.iterations_used for m in models)
    return (
        f"models: {len(models)}  converged: {converged / len(models):.1%}  "
        f"iterations min/median/max: {iterations[0]}/{iterations[len(iterations) // 2]}/{iterations[-1]}"
    )
