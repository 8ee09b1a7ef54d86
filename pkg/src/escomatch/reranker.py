"""Zero-shot LLM reranking of a span's candidate skills.

Renders the four-message chat transcript (system persona, task instructions,
mocked acknowledgment, query) for either the natural-language or the
mock-Python prompt variant, and parses the response into a validated ranked
prediction. Model output is matched against the candidate labels; anything
else is a hallucination, dropped and counted. The code variant's function is
parsed statically via the ast module and is never executed.
"""

from __future__ import annotations

import ast
import re
from dataclasses import dataclass

from .candidates import CandidateSet
from .providers import (
    DEFAULT_RERANK_TEMPERATURE,
    ChatMessage,
    ChatProvider,
    ChatRequest,
)
from .taxonomy import Taxonomy
from .templates import load_template

VARIANTS = ("natural", "code")
NO_LABEL = "NO_LABEL"
MAX_RANKED = 10

_TEMPLATE_FILES = {"natural": "rerank_natural.txt", "code": "rerank_code.txt"}

_CORRECTIVE_MESSAGES = {
    "natural": (
        "Your previous answer could not be parsed. Please answer again with only a "
        "numbered list of your 10 most likely labels, one label per line."
    ),
    "code": (
        "Your previous answer could not be parsed. Please answer again with a python "
        "codeblock containing a function named `rank_skills` that returns a plain list "
        "of label strings."
    ),
}


class RerankParseFailure(ValueError):
    """The model response could not be turned into a ranked list."""

    def __init__(self, message: str, raw: str):
        super().__init__(message)
        self.raw = raw


class NoCodeBlock(RerankParseFailure):
    """Code-variant response has no fenced code block."""


class NoRankFunction(RerankParseFailure):
    """Fenced block has no parseable ``rank_skills`` function."""


class NoLiteralList(RerankParseFailure):
    """``rank_skills`` does not return a statically extractable string list."""


@dataclass(frozen=True)
class RankedPrediction:
    ranked: tuple[str, ...]  # skill ids, best first, <= 10
    justification: str = ""
    hallucinated_count: int = 0
    terminated_by_no_label: bool = False
    parse_failed: bool = False

    def __post_init__(self) -> None:
        if len(self.ranked) > MAX_RANKED:
            raise ValueError("ranked list exceeds 10 entries")
        if len(set(self.ranked)) != len(self.ranked):
            raise ValueError("ranked list contains duplicates")
        if self.hallucinated_count < 0:
            raise ValueError("hallucinated_count must be >= 0")


def _parse_transcript_template(name: str) -> list[tuple[str, str]]:
    blocks: list[tuple[str, list[str]]] = []
    for line in load_template(name).splitlines():
        if line in ("[system]", "[user]", "[assistant]"):
            blocks.append((line[1:-1], []))
        else:
            blocks[-1][1].append(line)
    return [(role, "\n".join(lines)) for role, lines in blocks]


def build_rerank_prompt(
    span: str,
    candidate_set: CandidateSet,
    variant: str,
    taxonomy: Taxonomy,
    model_id: str = "gpt-4-0314",
    temperature: float = DEFAULT_RERANK_TEMPERATURE,
) -> ChatRequest:
    """Render the reranking transcript for one span.

    Candidate preferred labels appear one per line in merged order; scores and
    sources stay internal and are never shown to the model.
    """
    if variant not in VARIANTS:
        raise ValueError(f"unknown prompt variant: {variant!r}")
    if not candidate_set.candidates:
        raise ValueError("cannot rerank an empty candidate set")
    labels = "\n".join(
        taxonomy.by_id[c.skill_id].preferred_label for c in candidate_set.candidates
    )
    messages = []
    for role, text in _parse_transcript_template(_TEMPLATE_FILES[variant]):
        text = text.replace("{{potential_skills}}", labels).replace("{{text_extract}}", span)
        messages.append(ChatMessage(role, text))
    assert [m.role for m in messages] == ["system", "user", "assistant", "user"]
    return ChatRequest(
        model_id=model_id, messages=tuple(messages), temperature=temperature
    )


# --------------------------------------------------------------------------
# Response parsing

_NUMBERED_RE = re.compile(r"^\s*\d+\s*[.):]\s*(.*)$")
_TRAILING_SPLITTERS = (" - ", " – ", " — ", ": ", " (")


def _label_lookup(candidate_set: CandidateSet, taxonomy: Taxonomy) -> dict[str, str]:
    return {
        taxonomy.by_id[c.skill_id].preferred_label.casefold(): c.skill_id
        for c in candidate_set.candidates
    }


def _normalize_item(item: str) -> str:
    item = item.strip()
    item = item.strip("*_`\"'“”‘’")  # markdown emphasis and quotes
    return item.strip().strip(".,;").strip()


def _match_items(
    items: list[str], candidate_set: CandidateSet, taxonomy: Taxonomy, justification: str
) -> RankedPrediction:
    """Shared validation: label matching, NO_LABEL truncation, dedup, cap."""
    lookup = _label_lookup(candidate_set, taxonomy)
    ranked: list[str] = []
    hallucinated = 0
    no_label = False
    for raw_item in items:
        item = _normalize_item(raw_item)
        if not item:
            continue
        if item.upper().startswith(NO_LABEL):
            no_label = True
            break
        skill_id = lookup.get(item.casefold())
        if skill_id is None:
            # Retry once with trailing commentary stripped.
            for splitter in _TRAILING_SPLITTERS:
                if splitter in item:
                    head = _normalize_item(item.split(splitter, 1)[0])
                    skill_id = lookup.get(head.casefold())
                    if skill_id is not None:
                        break
        if skill_id is None:
            hallucinated += 1
            continue
        if skill_id in ranked:
            continue
        ranked.append(skill_id)
        if len(ranked) == MAX_RANKED:
            break
    return RankedPrediction(
        ranked=tuple(ranked),
        justification=justification,
        hallucinated_count=hallucinated,
        terminated_by_no_label=no_label,
    )


def parse_natural_response(
    text: str, candidate_set: CandidateSet, taxonomy: Taxonomy
) -> RankedPrediction:
    """Extract the first numbered list from a natural-language response."""
    items: list[str] = []
    in_list = False
    for line in text.splitlines():
        match = _NUMBERED_RE.match(line)
        if match:
            items.append(match.group(1))
            in_list = True
        elif in_list and line.strip():
            break  # first list ended
    if not items:
        raise RerankParseFailure("no numbered list found in response", raw=text)
    return _match_items(items, candidate_set, taxonomy, justification=text)


_FENCE_RE = re.compile(r"```(?:[a-zA-Z0-9_+-]*)\n(.*?)```", re.DOTALL)


def parse_code_response(
    text: str, candidate_set: CandidateSet, taxonomy: Taxonomy
) -> RankedPrediction:
    """Statically extract the list returned by ``rank_skills``.

    Supported shapes: a direct ``return [literals...]``, or one straight-line
    assignment of a list literal to a name later returned. The model's code
    is never executed.
    """
    fence = _FENCE_RE.search(text)
    if fence is None:
        raise NoCodeBlock("no fenced code block in response", raw=text)
    try:
        tree = ast.parse(fence.group(1))
    except SyntaxError as exc:
        raise NoRankFunction(f"code block does not parse: {exc}", raw=text) from exc
    func = next(
        (
            node
            for node in ast.walk(tree)
            if isinstance(node, ast.FunctionDef) and node.name == "rank_skills"
        ),
        None,
    )
    if func is None:
        raise NoRankFunction("no rank_skills function in code block", raw=text)
    items = _extract_returned_strings(func)
    if items is None:
        raise NoLiteralList("rank_skills does not return a literal string list", raw=text)
    return _match_items(items, candidate_set, taxonomy, justification=text)


def _extract_returned_strings(func: ast.FunctionDef) -> list[str] | None:
    returns = [node for node in func.body if isinstance(node, ast.Return)]
    if not returns:
        return None
    value = returns[-1].value
    if isinstance(value, ast.Name):
        # Resolve through straight-line assignments in the function body;
        # the last list-literal binding of the name wins.
        resolved = None
        for node in func.body:
            if (
                isinstance(node, ast.Assign)
                and len(node.targets) == 1
                and isinstance(node.targets[0], ast.Name)
                and node.targets[0].id == value.id
            ):
                resolved = node.value
        value = resolved
    if not isinstance(value, ast.List):
        return None
    items = []
    for element in value.elts:
        if not (isinstance(element, ast.Constant) and isinstance(element.value, str)):
            return None
        items.append(element.value)
    return items


# --------------------------------------------------------------------------
# Orchestration


def rerank(
    span: str,
    candidate_set: CandidateSet,
    provider: ChatProvider,
    variant: str,
    taxonomy: Taxonomy,
    model_id: str = "gpt-4-0314",
    temperature: float = DEFAULT_RERANK_TEMPERATURE,
) -> RankedPrediction:
    """Build the prompt, call the model, parse; one corrective retry.

    A second parse failure yields an empty prediction flagged
    ``parse_failed`` so evaluation scores it as zero instead of dropping it.
    """
    request = build_rerank_prompt(span, candidate_set, variant, taxonomy, model_id, temperature)
    parse = parse_natural_response if variant == "natural" else parse_code_response
    response = provider.complete_chat(request)
    try:
        return parse(response, candidate_set, taxonomy)
    except RerankParseFailure:
        retry_request = ChatRequest(
            model_id=request.model_id,
            messages=request.messages
            + (
                ChatMessage("assistant", response),
                ChatMessage("user", _CORRECTIVE_MESSAGES[variant]),
            ),
            temperature=request.temperature,
            max_tokens=request.max_tokens,
        )
        retry_response = provider.complete_chat(retry_request)
        try:
            return parse(retry_response, candidate_set, taxonomy)
        except RerankParseFailure:
            return RankedPrediction(
                ranked=(), justification=retry_response, parse_failed=True
            )
