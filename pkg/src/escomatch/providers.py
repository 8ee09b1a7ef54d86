"""Chat-completion and text-embedding providers.

Three flavours of each: a remote HTTP implementation speaking the de-facto
chat-completions JSON wire shape, deterministic offline mocks that make the
whole pipeline runnable with zero network access, and a disk-backed response
cache that wraps any chat provider.
"""

from __future__ import annotations

import hashlib
import json
import os
import re
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Protocol

import numpy as np

ROLES = ("system", "user", "assistant")

DEFAULT_DATAGEN_TEMPERATURE = 1.0  # diversity is explicitly requested of the generator
DEFAULT_RERANK_TEMPERATURE = 0.0


class ProviderError(Exception):
    """Base class for provider failures."""


class TransportError(ProviderError):
    """Network / HTTP failure after retries were exhausted."""


class ContentFilteredError(ProviderError):
    """The provider refused the request via its content filter."""


class MalformedResponseError(ProviderError):
    """The provider replied with a payload we cannot interpret."""


@dataclass(frozen=True)
class ChatMessage:
    role: str
    content: str

    def __post_init__(self) -> None:
        if self.role not in ROLES:
            raise ValueError(f"invalid chat role: {self.role!r}")
        if not self.content:
            raise ValueError("chat message content must be non-empty")


@dataclass(frozen=True)
class ChatRequest:
    model_id: str
    messages: tuple[ChatMessage, ...]
    temperature: float = 0.0
    max_tokens: int = 2048

    def __post_init__(self) -> None:
        if not self.messages:
            raise ValueError("chat request needs at least one message")
        if self.messages[0].role != "system":
            raise ValueError("first chat message must have role 'system'")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.max_tokens <= 0:
            raise ValueError("max_tokens must be positive")

    def payload(self) -> dict:
        """Wire-format dict; also the canonical form used for cache keys."""
        return {
            "model": self.model_id,
            "messages": [{"role": m.role, "content": m.content} for m in self.messages],
            "temperature": self.temperature,
            "max_tokens": self.max_tokens,
        }


def cache_key(payload: Mapping) -> str:
    """Stable content hash of a canonically serialized provider request."""
    canonical = json.dumps(payload, sort_keys=True, ensure_ascii=False, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


class ChatProvider(Protocol):
    def complete_chat(self, request: ChatRequest) -> str: ...


class EmbeddingProvider(Protocol):
    dimension: int

    def embed_text(self, text: str, kind: str = "query") -> np.ndarray: ...


# --------------------------------------------------------------------------
# Remote HTTP providers


class HttpChatProvider:
    """Chat completions over HTTPS with bounded exponential-backoff retries."""

    def __init__(
        self,
        endpoint: str,
        api_key: str | None = None,
        max_retries: int = 3,
        backoff_base: float = 0.5,
        timeout: float = 120.0,
        max_concurrency: int = 4,
    ):
        self.endpoint = endpoint
        self.api_key = api_key if api_key is not None else os.environ.get("ESCOMATCH_API_KEY")
        self.max_retries = max_retries
        self.backoff_base = backoff_base
        self.timeout = timeout
        self._semaphore = threading.Semaphore(max_concurrency)

    def _headers(self) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        return headers

    def complete_chat(self, request: ChatRequest) -> str:
        import httpx

        last_error: Exception | None = None
        for attempt in range(self.max_retries + 1):
            try:
                with self._semaphore:
                    response = httpx.post(
                        self.endpoint,
                        json=request.payload(),
                        headers=self._headers(),
                        timeout=self.timeout,
                    )
                if response.status_code >= 500 or response.status_code == 429:
                    raise httpx.HTTPStatusError(
                        f"retryable status {response.status_code}",
                        request=response.request,
                        response=response,
                    )
                if response.status_code >= 400:
                    raise TransportError(f"HTTP {response.status_code}: {response.text[:500]}")
                return _extract_chat_content(response.json())
            except (TransportError, ContentFilteredError, MalformedResponseError):
                raise
            except Exception as exc:  # noqa: BLE001 - transport errors vary by backend
                last_error = exc
                if attempt < self.max_retries:
                    time.sleep(min(self.backoff_base * 2**attempt, 30.0))
        raise TransportError(f"chat request failed after {self.max_retries + 1} attempts: {last_error}")


def _extract_chat_content(body: dict) -> str:
    try:
        choice = body["choices"][0]
    except (KeyError, IndexError, TypeError) as exc:
        raise MalformedResponseError(f"no choices in provider reply: {body!r:.500}") from exc
    if choice.get("finish_reason") == "content_filter":
        raise ContentFilteredError("provider content filter rejected the request")
    try:
        content = choice["message"]["content"]
    except (KeyError, TypeError) as exc:
        raise MalformedResponseError(f"choice has no message content: {choice!r:.500}") from exc
    if not isinstance(content, str):
        raise MalformedResponseError(f"message content is not a string: {content!r:.200}")
    return content


class HttpEmbeddingProvider:
    """Text embeddings over HTTPS; vectors are unit-normalized on receipt.

    ``use_e5_prefixes`` prepends the e5-family ``query: `` / ``passage: ``
    markers before sending.
    """

    def __init__(
        self,
        endpoint: str,
        model_id: str,
        api_key: str | None = None,
        dimension: int | None = None,
        use_e5_prefixes: bool = True,
        max_retries: int = 3,
        backoff_base: float = 0.5,
        timeout: float = 60.0,
    ):
        self.endpoint = endpoint
        self.model_id = model_id
        self.api_key = api_key if api_key is not None else os.environ.get("ESCOMATCH_API_KEY")
        self.dimension = dimension or 0  # pinned on first response
        self.use_e5_prefixes = use_e5_prefixes
        self.max_retries = max_retries
        self.backoff_base = backoff_base
        self.timeout = timeout

    def embed_text(self, text: str, kind: str = "query") -> np.ndarray:
        import httpx

        if not text:
            raise ValueError("cannot embed empty text")
        if kind not in ("query", "passage"):
            raise ValueError(f"invalid embedding kind: {kind!r}")
        payload_text = f"{kind}: {text}" if self.use_e5_prefixes else text
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        last_error: Exception | None = None
        for attempt in range(self.max_retries + 1):
            try:
                response = httpx.post(
                    self.endpoint,
                    json={"model": self.model_id, "input": [payload_text]},
                    headers=headers,
                    timeout=self.timeout,
                )
                response.raise_for_status()
                values = response.json()["data"][0]["embedding"]
                break
            except Exception as exc:  # noqa: BLE001
                last_error = exc
                if attempt < self.max_retries:
                    time.sleep(min(self.backoff_base * 2**attempt, 30.0))
        else:
            raise TransportError(f"embedding request failed after {self.max_retries + 1} attempts: {last_error}")
        vector = np.asarray(values, dtype=np.float32)
        if self.dimension == 0:
            self.dimension = vector.shape[0]
        elif vector.shape[0] != self.dimension:
            raise MalformedResponseError(
                f"embedding dimension drift: got {vector.shape[0]}, expected {self.dimension}"
            )
        return unit_normalize(vector)


def unit_normalize(vector: np.ndarray) -> np.ndarray:
    norm = float(np.linalg.norm(vector))
    if norm == 0.0 or not np.isfinite(norm):
        raise ValueError("cannot normalize zero or non-finite vector")
    return (vector / norm).astype(np.float32)


# --------------------------------------------------------------------------
# Deterministic offline mocks

_TOKEN_RE = re.compile(r"[a-z0-9]+")


class MockEmbedder:
    """Deterministic hash-projection embedder.

    Each token maps to a pseudo-random unit-scale vector seeded from its hash;
    the text embedding is the normalized token-vector sum, so texts sharing
    tokens get nontrivially high cosines. The query/passage kind does not
    perturb the vector: identical text must embed identically from either
    side so self-similarity fixtures score exactly 1.
    """

    def __init__(self, dimension: int = 64, seed: int = 0):
        self.dimension = dimension
        self.seed = seed
        self._token_vectors: dict[str, np.ndarray] = {}
        self._lock = threading.Lock()

    def _token_vector(self, token: str) -> np.ndarray:
        with self._lock:
            cached = self._token_vectors.get(token)
            if cached is not None:
                return cached
            digest = hashlib.blake2b(f"{self.seed}:{token}".encode("utf-8"), digest_size=8).digest()
            rng = np.random.default_rng(int.from_bytes(digest, "little"))
            vector = rng.standard_normal(self.dimension).astype(np.float32)
            self._token_vectors[token] = vector
            return vector

    def embed_text(self, text: str, kind: str = "query") -> np.ndarray:
        if not text:
            raise ValueError("cannot embed empty text")
        if kind not in ("query", "passage"):
            raise ValueError(f"invalid embedding kind: {kind!r}")
        tokens = _TOKEN_RE.findall(text.lower())
        if not tokens:
            tokens = [text]
        total = np.zeros(self.dimension, dtype=np.float64)
        for token in tokens:
            total += self._token_vector(token)
        if float(np.linalg.norm(total)) < 1e-12:
            total = self._token_vector("\x00" + text).astype(np.float64)
        return unit_normalize(total.astype(np.float32))


CONTENT_FILTERED = object()  # fixture sentinel: raise ContentFilteredError for this key


class FixtureChatProvider:
    """Chat provider backed by a fixture table and/or a responder callable.

    ``responses`` maps ``cache_key(request.payload())`` to a response string or
    the CONTENT_FILTERED sentinel; unmatched requests fall through to
    ``responder`` when given, else raise TransportError.
    """

    def __init__(
        self,
        responses: Mapping[str, object] | None = None,
        responder: Callable[[ChatRequest], str] | None = None,
    ):
        self.responses = dict(responses or {})
        self.responder = responder
        self.calls = 0

    def complete_chat(self, request: ChatRequest) -> str:
        self.calls += 1
        key = cache_key(request.payload())
        if key in self.responses:
            value = self.responses[key]
            if value is CONTENT_FILTERED:
                raise ContentFilteredError(f"fixture flagged content_filter for key {key[:12]}")
            return str(value)
        if self.responder is not None:
            return self.responder(request)
        raise TransportError(f"no fixture for request key {key[:12]}")


class OfflineChatProvider:
    """Deterministic stand-in for a real chat model.

    Recognizes the two prompt families the pipeline emits: data-generation
    prompts (answers with a numbered list of synthetic sentences built from
    the skill name) and reranking prompts (echoes the first ten candidate
    labels, as a numbered list or as a ``rank_skills`` function for the code
    variant).
    """

    def __init__(self, examples_per_skill: int = 40, filtered_skills: frozenset[str] = frozenset()):
        self.examples_per_skill = examples_per_skill
        self.filtered_skills = filtered_skills
        self.calls = 0

    _SENTENCE_SHAPES = (
        "Experience with {name} is required for this role.",
        "You will use {name} on a daily basis.",
        "Strong background in {name} preferred.",
        "Our team values expertise in {name}.",
        "Familiarity with {name} would be a plus.",
        "We expect solid working knowledge of {name}.",
        "Hands-on {name} practice is part of the job.",
        "The ideal candidate demonstrates {name} proficiency.",
    )

    def complete_chat(self, request: ChatRequest) -> str:
        self.calls += 1
        last = request.messages[-1].content
        if "Skill:" in last and "Potential skills:" not in last:
            return self._generate_examples(last)
        if "Potential skills:" in last:
            return self._rerank(last)
        raise TransportError("offline provider does not recognize this prompt")

    def _generate_examples(self, prompt: str) -> str:
        name = prompt.rsplit("Skill:", 1)[1].strip()
        if name in self.filtered_skills:
            raise ContentFilteredError(f"offline fixture filters skill {name!r}")
        lines = []
        for i in range(self.examples_per_skill):
            shape = self._SENTENCE_SHAPES[i % len(self._SENTENCE_SHAPES)]
            lines.append(f"{i + 1}. {shape.format(name=name)} (variant {i + 1})")
        return "\n".join(lines)

    def _rerank(self, prompt: str) -> str:
        labels = extract_candidate_labels(prompt)[:10]
        is_code = "rank_skills" in prompt
        if is_code:
            body = ",\n        ".join(json.dumps(label) for label in labels)
            return (
                "```python\ndef rank_skills():\n    return [\n        " + body + "\n    ]\n```"
            )
        return "\n".join(f"{i + 1}. {label}" for i, label in enumerate(labels))


def extract_candidate_labels(query_message: str) -> list[str]:
    """Pull the candidate-label block out of a rendered reranking query."""
    if "Potential skills:" not in query_message:
        return []
    block = query_message.split("Potential skills:", 1)[1]
    block = block.split("\nExtract:", 1)[0]
    return [line.strip() for line in block.splitlines() if line.strip()]


# --------------------------------------------------------------------------
# Disk cache


class CachedChatProvider:
    """Disk cache over any chat provider; one JSON file per request hash.

    Layout: ``{cache_dir}/{key[:2]}/{key}.json``. Content-filter outcomes are
    cached too so resumed runs skip the same skills without network traffic.
    """

    def __init__(self, inner: ChatProvider, cache_dir: str | Path):
        self.inner = inner
        self.cache_dir = Path(cache_dir)
        self.hits = 0
        self.misses = 0
        self._lock = threading.Lock()

    def _path(self, key: str) -> Path:
        return self.cache_dir / key[:2] / f"{key}.json"

    def complete_chat(self, request: ChatRequest) -> str:
        key = cache_key(request.payload())
        path = self._path(key)
        if path.exists():
            with self._lock:
                self.hits += 1
            entry = json.loads(path.read_text(encoding="utf-8"))
            if entry.get("content_filtered"):
                raise ContentFilteredError("cached content-filter outcome")
            return entry["response"]
        try:
            response = self.inner.complete_chat(request)
        except ContentFilteredError:
            self._store(path, {"key": key, "content_filtered": True, "created_at": time.time()})
            with self._lock:
                self.misses += 1
            raise
        self._store(path, {"key": key, "response": response, "created_at": time.time()})
        with self._lock:
            self.misses += 1
        return response

    def _store(self, path: Path, entry: dict) -> None:
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_suffix(".tmp")
        tmp.write_text(json.dumps(entry, ensure_ascii=False), encoding="utf-8")
        os.replace(tmp, path)


def cache_stats(cache_dir: str | Path) -> dict:
    """Entry count and total size of a response cache directory."""
    root = Path(cache_dir)
    files = list(root.glob("*/*.json")) if root.exists() else []
    return {"entries": len(files), "bytes": sum(f.stat().st_size for f in files)}


def clear_cache(cache_dir: str | Path) -> int:
    """Delete all cached responses; returns the number of entries removed."""
    root = Path(cache_dir)
    removed = 0
    if not root.exists():
        return 0
    for f in root.glob("*/*.json"):
        f.unlink()
        removed += 1
    for sub in root.iterdir():
        if sub.is_dir() and not any(sub.iterdir()):
            sub.rmdir()
    return removed
