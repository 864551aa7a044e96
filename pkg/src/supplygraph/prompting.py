"""Prompt construction, token budgeting, segmentation, and response parsing.

The two prompt templates ship as data assets and are rendered by pure
placeholder substitution; nothing else in the template text is touched.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from importlib import resources
from typing import Callable

from .errors import AmbiguousAnswer, EmptyParse, OversizeAtom

TOKEN_SAFETY_FACTOR = 1.3
REASONING_PREAMBLE = "Think step by step before answering."

_PLACEHOLDER_RE = re.compile(r"\{(news|industry|company_name|company_description|company_category)\}")
_SECTION_RE = re.compile(r"^\[(system|user|question)\]$", re.MULTILINE)
_ENTITY_LINE_RE = re.compile(r"^\s*(?P<num>\d+\.\s*)?(?P<name>[^:]+):(?P<desc>.*)$")
_ALPHA_RE = re.compile(r"[A-Za-z]+")
_SENTENCE_END_RE = re.compile(r"[.!?]+(?:\s+|$)")
_WORD_SPAN_RE = re.compile(r"\s*\S+\s*")

TokenEstimator = Callable[[str], int]


@dataclass(frozen=True)
class PromptTriple:
    """A fully rendered prompt: system, user, and question parts."""

    system: str
    user: str
    question: str

    def __post_init__(self) -> None:
        for part in ("system", "user", "question"):
            if not getattr(self, part):
                raise ValueError(f"prompt {part} part is empty")


@dataclass(frozen=True)
class PromptTemplate:
    system: str
    user: str
    question: str

    def render(self, values: dict[str, str], reasoning: bool = False) -> PromptTriple:
        question = self.question
        if reasoning:
            question = REASONING_PREAMBLE + " " + question
        return PromptTriple(
            system=_substitute(self.system, values),
            user=_substitute(self.user, values),
            question=_substitute(question, values),
        )


def _substitute(text: str, values: dict[str, str]) -> str:
    # Single pass so placeholder-looking text inside a payload is left alone.
    return _PLACEHOLDER_RE.sub(
        lambda m: values[m.group(1)] if m.group(1) in values else m.group(0), text
    )


def _load_template(name: str) -> PromptTemplate:
    text = resources.files("supplygraph").joinpath("data").joinpath(name).read_text(encoding="utf-8")
    sections: dict[str, str] = {}
    marks = list(_SECTION_RE.finditer(text))
    for i, m in enumerate(marks):
        end = marks[i + 1].start() if i + 1 < len(marks) else len(text)
        sections[m.group(1)] = text[m.end():end].strip()
    missing = {"system", "user", "question"} - sections.keys()
    if missing:
        raise ValueError(f"template {name} missing sections {sorted(missing)}")
    return PromptTemplate(**sections)


EXTRACTION_TEMPLATE = _load_template("extraction_prompt.txt")
CLASSIFICATION_TEMPLATE = _load_template("classification_prompt.txt")

# Literal prefixes of the rendered user parts; deterministic backends use
# these to recognize which template produced a request.
EXTRACTION_USER_PREFIX = EXTRACTION_TEMPLATE.user.split("{news}")[0]
CLASSIFICATION_USER_PREFIX = CLASSIFICATION_TEMPLATE.user.split("{company_name}")[0]


def build_extraction_prompt(news: str, industry: str, reasoning: bool = False) -> PromptTriple:
    """Render the entity-extraction prompt for one article (or segment)."""
    if not news or not news.strip():
        raise ValueError("news text must be non-empty")
    if not industry or not industry.strip():
        raise ValueError("industry must be non-empty")
    return EXTRACTION_TEMPLATE.render({"news": news, "industry": industry}, reasoning=reasoning)


def build_classification_prompt(
    company_name: str,
    company_description: str,
    company_category: str,
    reasoning: bool = False,
) -> PromptTriple:
    """Render the yes/no category-membership prompt for one entity."""
    for label, value in (
        ("company_name", company_name),
        ("company_description", company_description),
        ("company_category", company_category),
    ):
        if not value or not value.strip():
            raise ValueError(f"{label} must be non-empty")
    return CLASSIFICATION_TEMPLATE.render(
        {
            "company_name": company_name,
            "company_description": company_description,
            "company_category": company_category,
        },
        reasoning=reasoning,
    )


def estimate_tokens(text: str) -> int:
    """Whitespace token count scaled by the 1.3 safety factor (truncated)."""
    return int(len(text.split()) * TOKEN_SAFETY_FACTOR)


def truncate_to_budget(text: str, budget: int, estimator: TokenEstimator = estimate_tokens) -> str:
    """Largest whitespace-token prefix of text whose estimate fits the budget."""
    if estimator(text) <= budget:
        return text
    words = text.split()
    lo, hi = 0, len(words)
    while lo < hi:
        mid = (lo + hi + 1) // 2
        if estimator(" ".join(words[:mid])) <= budget:
            lo = mid
        else:
            hi = mid - 1
    return " ".join(words[:lo])


@dataclass(frozen=True)
class SegmentPlan:
    """Ordered text segments whose concatenation equals the source exactly."""

    segments: tuple[str, ...]
    budget: int

    @property
    def text(self) -> str:
        return "".join(self.segments)


def _sentence_spans(text: str) -> list[str]:
    spans = []
    start = 0
    for m in _SENTENCE_END_RE.finditer(text):
        spans.append(text[start:m.end()])
        start = m.end()
    if start < len(text):
        spans.append(text[start:])
    return spans


def _word_spans(span: str) -> list[str]:
    parts = _WORD_SPAN_RE.findall(span)
    if not parts:
        return [span] if span else []
    return parts


def segment_text(text: str, budget: int, estimator: TokenEstimator = estimate_tokens) -> SegmentPlan:
    """Split text into segments that each fit the token budget.

    Splits at sentence boundaries first and falls back to whitespace inside a
    sentence that alone exceeds the budget. Concatenating the segments
    restores the input byte for byte. Raises OversizeAtom when one unbreakable
    token is over budget.
    """
    if budget < 1:
        raise ValueError("budget must be at least 1")
    if not text:
        return SegmentPlan(segments=(), budget=budget)

    units: list[str] = []
    for sentence in _sentence_spans(text):
        if estimator(sentence) <= budget:
            units.append(sentence)
        else:
            units.extend(_word_spans(sentence))

    segments: list[str] = []
    current = ""
    for unit in units:
        if estimator(unit) > budget:
            raise OversizeAtom(
                f"token of estimated size {estimator(unit)} exceeds budget {budget}"
            )
        if current and estimator(current + unit) > budget:
            segments.append(current)
            current = unit
        else:
            current += unit
    if current:
        segments.append(current)
    return SegmentPlan(segments=tuple(segments), budget=budget)


@dataclass(frozen=True)
class ExtractedEntity:
    """One parsed (name, description) pair from an extraction response."""

    name: str
    description: str


@dataclass
class ParseDiagnostics:
    """Counters for extraction-response parsing across a run."""

    lines_parsed: int = 0
    lines_skipped: int = 0
    empty_parses: int = 0

    def as_dict(self) -> dict[str, int]:
        return {
            "lines_parsed": self.lines_parsed,
            "lines_skipped": self.lines_skipped,
            "empty_parses": self.empty_parses,
        }


def parse_entity_list(
    response: str, diagnostics: ParseDiagnostics | None = None
) -> list[ExtractedEntity]:
    """Parse a numbered "name: description" list out of a response.

    A line counts as an entity when it has a numeric "N." prefix or a
    non-empty description after the first colon; anything else is skipped and
    tallied. An empty response parses to an empty list; a non-empty response
    with zero entities raises EmptyParse.
    """
    entities: list[ExtractedEntity] = []
    skipped = 0
    for line in response.splitlines():
        if not line.strip():
            continue
        m = _ENTITY_LINE_RE.match(line)
        if m:
            name = m.group("name").strip()
            desc = m.group("desc").strip()
            if name and (m.group("num") or desc):
                entities.append(ExtractedEntity(name=name, description=desc))
                continue
        skipped += 1
    if diagnostics is not None:
        diagnostics.lines_parsed += len(entities)
        diagnostics.lines_skipped += skipped
    if not entities and response.strip():
        if diagnostics is not None:
            diagnostics.empty_parses += 1
        raise EmptyParse(f"no entities in non-empty response ({skipped} lines skipped)")
    return entities


def render_entity_list(entities: list[ExtractedEntity]) -> str:
    """Render entities back into the numbered list format."""
    lines = []
    for i, entity in enumerate(entities, 1):
        if entity.description:
            lines.append(f"{i}. {entity.name}: {entity.description}")
        else:
            lines.append(f"{i}. {entity.name}:")
    return "\n".join(lines)


def parse_yes_no(response: str) -> bool:
    """Read the first alphabetic word of a response as yes/no (case-folded).

    Raises AmbiguousAnswer when that word is anything else or absent.
    """
    m = _ALPHA_RE.search(response)
    if m:
        word = m.group(0).casefold()
        if word == "yes":
            return True
        if word == "no":
            return False
    raise AmbiguousAnswer(f"not a yes/no answer: {response[:80]!r}")
