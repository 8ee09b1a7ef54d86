"""Versioned prompt-template assets."""

from __future__ import annotations

import hashlib
from functools import lru_cache
from importlib.resources import files

_TEMPLATE_NAMES = (
    "datagen_system.txt",
    "datagen_user.txt",
    "rerank_natural.txt",
    "rerank_code.txt",
)


@lru_cache(maxsize=None)
def load_template(name: str) -> str:
    return files(__package__).joinpath(name).read_text(encoding="utf-8")


@lru_cache(maxsize=1)
def template_version() -> str:
    """Short content hash over all template assets; recorded in run metadata."""
    digest = hashlib.sha256()
    for name in _TEMPLATE_NAMES:
        digest.update(name.encode("utf-8"))
        digest.update(load_template(name).encode("utf-8"))
    return digest.hexdigest()[:12]
