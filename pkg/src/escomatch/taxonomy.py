"""ESCO skill taxonomy: loading, validation, and lookup.

The taxonomy is the flat list of ESCO skills (URI, preferred label, alternative
labels, description). Each skill carries a category (tech / language / general)
that selects the data-generation prompt variant; category membership comes from
an explicit sidecar table with ``general`` as the fallback.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

CATEGORIES = ("tech", "language", "general")

# Pinned ESCO CSV column names; format drift fails loudly.
ESCO_CSV_COLUMNS = {
    "id": "conceptUri",
    "preferred_label": "preferredLabel",
    "alt_labels": "altLabels",
    "description": "description",
}


class TaxonomyError(ValueError):
    """Raised when a taxonomy file violates the load invariants."""


@dataclass(frozen=True)
class Skill:
    id: str
    preferred_label: str
    alt_labels: tuple[str, ...] = ()
    description: str | None = None
    category: str = "general"

    def __post_init__(self) -> None:
        if not self.id:
            raise TaxonomyError("skill id must be non-empty")
        if not self.preferred_label:
            raise TaxonomyError(f"skill {self.id!r} has empty preferred_label")
        if self.category not in CATEGORIES:
            raise TaxonomyError(f"skill {self.id!r} has unknown category {self.category!r}")


@dataclass(frozen=True)
class Taxonomy:
    skills: tuple[Skill, ...]
    by_id: dict[str, Skill] = field(repr=False)
    by_label: dict[str, Skill] = field(repr=False)

    def __len__(self) -> int:
        return len(self.skills)


def _build_taxonomy(skills: list[Skill]) -> Taxonomy:
    if not skills:
        raise TaxonomyError("no skills loaded")
    by_id: dict[str, Skill] = {}
    by_label: dict[str, Skill] = {}
    for skill in skills:
        if skill.id in by_id:
            raise TaxonomyError(f"duplicate skill id: {skill.id}")
        folded = skill.preferred_label.casefold()
        if folded in by_label:
            raise TaxonomyError(
                f"preferred label collision after case-folding: {skill.preferred_label!r} "
                f"({by_label[folded].id} vs {skill.id})"
            )
        by_id[skill.id] = skill
        by_label[folded] = skill
    return Taxonomy(skills=tuple(skills), by_id=by_id, by_label=by_label)


def load_category_table(path: str | Path) -> dict[str, str]:
    """Load the sidecar JSON map from skill URI to category."""
    with open(path, encoding="utf-8") as f:
        table = json.load(f)
    if not isinstance(table, dict):
        raise TaxonomyError(f"category table {path} must be a JSON object")
    for uri, category in table.items():
        if category not in CATEGORIES:
            raise TaxonomyError(f"category table entry {uri!r} has unknown category {category!r}")
    return table


def categorize_skill(skill_id: str, category_table: dict[str, str]) -> str:
    """Category for a skill id; ``general`` when the table has no entry."""
    return category_table.get(skill_id, "general")


def load_taxonomy(
    path: str | Path,
    format: str = "esco-csv",
    category_table: dict[str, str] | None = None,
) -> Taxonomy:
    """Load a skill taxonomy from an ESCO CSV dump or a JSONL file.

    Duplicate ids and missing preferred labels are hard errors. Categories are
    assigned from ``category_table`` (fallback ``general``).
    """
    table = category_table or {}
    if format == "esco-csv":
        skills = _load_esco_csv(path, table)
    elif format == "jsonl":
        skills = _load_jsonl(path, table)
    else:
        raise TaxonomyError(f"unknown taxonomy format: {format!r}")
    return _build_taxonomy(skills)


def _load_esco_csv(path: str | Path, table: dict[str, str]) -> list[Skill]:
    skills = []
    with open(path, encoding="utf-8", newline="") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames is None:
            raise TaxonomyError(f"{path}: empty file, no header row")
        missing = [c for c in (ESCO_CSV_COLUMNS["id"], ESCO_CSV_COLUMNS["preferred_label"]) if c not in reader.fieldnames]
        if missing:
            raise TaxonomyError(f"{path}: missing expected ESCO columns {missing}")
        for row_num, row in enumerate(reader, start=2):
            uri = (row.get(ESCO_CSV_COLUMNS["id"]) or "").strip()
            label = (row.get(ESCO_CSV_COLUMNS["preferred_label"]) or "").strip()
            if not uri:
                raise TaxonomyError(f"{path}: row {row_num}: missing {ESCO_CSV_COLUMNS['id']}")
            if not label:
                raise TaxonomyError(f"{path}: row {row_num}: missing preferredLabel for {uri}")
            # ESCO packs multiple alternative labels into one newline-delimited field.
            raw_alts = row.get(ESCO_CSV_COLUMNS["alt_labels"]) or ""
            alts = tuple(a.strip() for a in raw_alts.split("\n") if a.strip())
            description = (row.get(ESCO_CSV_COLUMNS["description"]) or "").strip() or None
            skills.append(
                Skill(
                    id=uri,
                    preferred_label=label,
                    alt_labels=alts,
                    description=description,
                    category=categorize_skill(uri, table),
                )
            )
    return skills


def _load_jsonl(path: str | Path, table: dict[str, str]) -> list[Skill]:
    skills = []
    with open(path, encoding="utf-8") as f:
        for line_num, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise TaxonomyError(f"{path}: line {line_num}: invalid JSON: {exc}") from exc
            uri = obj.get("id") or ""
            label = obj.get("preferred_label") or ""
            if not uri:
                raise TaxonomyError(f"{path}: line {line_num}: missing id")
            if not label:
                raise TaxonomyError(f"{path}: line {line_num}: missing preferred_label for {uri}")
            skills.append(
                Skill(
                    id=uri,
                    preferred_label=label,
                    alt_labels=tuple(obj.get("alt_labels") or ()),
                    description=obj.get("description"),
                    category=categorize_skill(uri, table),
                )
            )
    return skills


def skill_by_label(taxonomy: Taxonomy, label: str) -> Skill | None:
    """Case-insensitive exact lookup by preferred label; None when absent."""
    return taxonomy.by_label.get(label.strip().casefold())
