"""Evaluation: macro-averaged RP@k and MRR over the House / Tech subsets.

RP@k uses the R-Precision@k convention: |top-k intersect gold| / min(k, |gold|).
MRR is the reciprocal rank of the first correct label, 0 when none appears.
Both are macro-averaged per subset (unweighted mean over examples).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

from .taxonomy import Taxonomy

SUBSETS = ("house", "tech")
RP_KS = (1, 5, 10)


@dataclass(frozen=True)
class EvalExample:
    span: str
    gold: frozenset[str]
    subset: str

    def __post_init__(self) -> None:
        if not self.span:
            raise ValueError("eval example span must be non-empty")
        if not self.gold:
            raise ValueError("eval example gold set must be non-empty")
        if self.subset not in SUBSETS:
            raise ValueError(f"unknown eval subset: {self.subset!r}")

    @property
    def key(self) -> str:
        return f"{self.subset}:{self.span}"


@dataclass(frozen=True)
class SubsetMetrics:
    mrr: float
    rp: dict[int, float]
    example_count: int


@dataclass(frozen=True)
class EvalReport:
    subsets: dict[str, SubsetMetrics]
    metadata: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "subsets": {
                name: {
                    "mrr": m.mrr,
                    "rp": {str(k): v for k, v in sorted(m.rp.items())},
                    "n": m.example_count,
                }
                for name, m in sorted(self.subsets.items())
            },
            "metadata": dict(sorted(self.metadata.items())),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "EvalReport":
        return cls(
            subsets={
                name: SubsetMetrics(
                    mrr=entry["mrr"],
                    rp={int(k): v for k, v in entry["rp"].items()},
                    example_count=entry["n"],
                )
                for name, entry in obj["subsets"].items()
            },
            metadata=obj.get("metadata", {}),
        )


def rp_at_k(ranked: Sequence[str], gold: frozenset[str] | set[str], k: int) -> float:
    """R-Precision@k: |top-k(ranked) ∩ gold| / min(k, |gold|)."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if not gold:
        raise ValueError("gold set must be non-empty")
    hits = sum(1 for skill_id in ranked[:k] if skill_id in gold)
    return hits / min(k, len(gold))


def mrr_single(ranked: Sequence[str], gold: frozenset[str] | set[str]) -> float:
    """Reciprocal rank of the first gold member; 0 when none is ranked."""
    if not gold:
        raise ValueError("gold set must be non-empty")
    for position, skill_id in enumerate(ranked, start=1):
        if skill_id in gold:
            return 1.0 / position
    return 0.0


def evaluate(
    predictions: Mapping[str, Sequence[str]],
    dataset: Sequence[EvalExample],
    metadata: dict | None = None,
) -> EvalReport:
    """Per-subset unweighted means of rp_at_k and mrr_single.

    ``predictions`` maps ``example.key`` to the ranked skill-id list; a
    parse-failed prediction must be present as an empty list (scored zero),
    never omitted.
    """
    missing = [example.key for example in dataset if example.key not in predictions]
    if missing:
        raise ValueError(f"missing predictions for examples: {missing}")
    grouped: dict[str, list[EvalExample]] = {}
    for example in dataset:
        grouped.setdefault(example.subset, []).append(example)
    subsets = {}
    for subset, examples in grouped.items():
        n = len(examples)
        subsets[subset] = SubsetMetrics(
            mrr=sum(mrr_single(predictions[e.key], e.gold) for e in examples) / n,
            rp={
                k: sum(rp_at_k(predictions[e.key], e.gold, k) for e in examples) / n
                for k in RP_KS
            },
            example_count=n,
        )
    return EvalReport(subsets=subsets, metadata=metadata or {})


def load_eval_dataset(path: str | Path, taxonomy: Taxonomy) -> list[EvalExample]:
    """JSONL loader: one {span, gold: [uri...], subset} object per line."""
    examples = []
    with open(path, encoding="utf-8") as f:
        for line_num, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}: line {line_num}: invalid JSON: {exc}") from exc
            unknown = [uri for uri in obj.get("gold", []) if uri not in taxonomy.by_id]
            if unknown:
                raise ValueError(f"{path}: line {line_num}: unknown gold skill ids: {unknown}")
            try:
                examples.append(
                    EvalExample(
                        span=obj.get("span", ""),
                        gold=frozenset(obj.get("gold", [])),
                        subset=obj.get("subset", ""),
                    )
                )
            except ValueError as exc:
                raise ValueError(f"{path}: line {line_num}: {exc}") from exc
    return examples


def render_report(report: EvalReport) -> str:
    """Fixed-width table mirroring the usual results layout: MRR to three
    decimals, RP columns as percentages; House before Tech."""
    ordered = [s for s in SUBSETS if s in report.subsets] + sorted(
        s for s in report.subsets if s not in SUBSETS
    )
    header_groups = "          " + "   ".join(f"{s.capitalize():^28}" for s in ordered)
    header_cols = "          " + "   ".join("  MRR   RP@1   RP@5  RP@10 " for _ in ordered)
    cells = []
    for subset in ordered:
        m = report.subsets[subset]
        cells.append(
            f"{m.mrr:.3f}  {m.rp[1] * 100:5.2f}  {m.rp[5] * 100:5.2f}  {m.rp[10] * 100:5.2f} "
        )
    row = "pipeline  " + "   ".join(cells)
    counts = "n         " + "   ".join(
        f"{report.subsets[s].example_count:<28}" for s in ordered
    )
    return "\n".join([header_groups, header_cols, row, counts.rstrip()])
