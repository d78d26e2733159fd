"""Parse free-form model completions into structured verdicts.

Completions were requested in a brace template::

    {good}
    {0.9}
    {short explanation}

but models drift, so parsing is layered: the brace template first, then
a line-oriented scan, then a bare keyword search. The first label found
on the earliest route wins, and the route taken is recorded so the
strict path stays auditable. Parsing is total: every string yields a
verdict or an UnparseableResponseError, never a crash.
"""

from __future__ import annotations

import csv
import re
from dataclasses import dataclass
from typing import Iterable, Mapping

from .errors import UnparseableResponseError

HEADLINE_LABELS: Mapping[str, float] = {"good": 1.0, "bad": -1.0, "neutral": 0.0}

CAPEX_LABELS: Mapping[str, float] = {
    "significantly_increase": 1.0,
    "slightly_increase": 0.5,
    "no_change": 0.0,
    "slightly_decrease": -0.5,
    "significantly_decrease": -1.0,
}

_BRACE = re.compile(r"\{([^{}]*)\}", re.DOTALL)
_NUMBER = re.compile(r"^[+-]?(?:\d+\.?\d*|\.\d+)\s*%?$")
_CONFIDENCE_PREFIX = re.compile(
    r"^\s*confidence\s*(?:\(\s*0\s*[-‐-―−]\s*1\s*\))?\s*[:=]?\s*",
    re.IGNORECASE,
)
_CONFIDENCE_NEARBY = re.compile(
    # the optional group swallows the "(0-1)" scale annotation; "(" is
    # excluded from the gap so backtracking cannot re-enter it for digits
    r"confidence\b\s*(?:\(\s*0\s*[-‐-―−]\s*1\s*\))?"
    r"[^0-9%+\-(]{0,20}([+-]?(?:\d+\.?\d*|\.\d+)\s*%?)",
    re.IGNORECASE,
)
_PUNCT_EDGES = re.compile(r"^[\s\.,;:!\?\*\"'`]+|[\s\.,;:!\?\*\"'`]+$")


@dataclass(frozen=True)
class HeadlineVerdict:
    """Direction call on a news headline: good=+1, neutral=0, bad=-1."""

    score: float
    confidence: float | None = None
    explanation: str | None = None
    method: str = "template"
    warnings: tuple[str, ...] = ()


@dataclass(frozen=True)
class CapexVerdict:
    """Capital-expenditure direction call on the +1 .. -1 five-point scale."""

    score: float
    confidence: float | None = None
    explanation: str | None = None
    method: str = "template"
    warnings: tuple[str, ...] = ()


def _normalize_headline(text: str) -> str:
    return _PUNCT_EDGES.sub("", text).strip().lower()


def _normalize_capex(text: str) -> str:
    cleaned = _PUNCT_EDGES.sub("", text).strip().lower()
    return re.sub(r"[\s_-]+", "_", cleaned)


def _keyword_pattern(labels: Mapping[str, float]) -> re.Pattern[str]:
    # allow space, underscore, or hyphen between label words
    alts = sorted(labels, key=len, reverse=True)
    parts = [re.escape(lab).replace("_", r"[\s_-]+") for lab in alts]
    return re.compile(r"\b(" + "|".join(parts) + r")\b", re.IGNORECASE)


_HEADLINE_KEYWORDS = _keyword_pattern(HEADLINE_LABELS)
_CAPEX_KEYWORDS = _keyword_pattern(CAPEX_LABELS)


def _parse_number(text: str) -> float | None:
    """Parse a bare numeric string, honouring a trailing percent sign."""
    text = text.strip()
    if not _NUMBER.match(text):
        return None
    if text.endswith("%"):
        return float(text[:-1].strip()) / 100.0
    return float(text)


def _confidence_from_block(block: str) -> float | None:
    """A confidence block is a bare number, optionally prefixed 'confidence:'."""
    return _parse_number(_CONFIDENCE_PREFIX.sub("", block))


def _parse(
    text: str,
    labels: Mapping[str, float],
    normalize,
    keywords: re.Pattern[str],
    cls,
):
    if not isinstance(text, str):
        raise UnparseableResponseError("response is not text", raw_text=repr(text))

    blocks = _BRACE.findall(text)
    score = None
    method = "template"
    label_block_idx = -1

    for i, block in enumerate(blocks):
        candidate = normalize(block)
        if candidate in labels:
            score = labels[candidate]
            label_block_idx = i
            break

    if score is None:
        method = "line"
        for line in text.splitlines():
            candidate = normalize(line)
            if candidate in labels:
                score = labels[candidate]
                break

    if score is None:
        method = "keyword"
        match = keywords.search(text)
        if match is not None:
            score = labels[normalize(match.group(1))]

    if score is None:
        raise UnparseableResponseError(
            "no recognizable label in response", raw_text=text
        )

    confidence = None
    confidence_block_idx = -1
    warnings: tuple[str, ...] = ()
    if method == "template":
        for i in range(label_block_idx + 1, len(blocks)):
            value = _confidence_from_block(blocks[i])
            if value is not None:
                confidence = value
                confidence_block_idx = i
                break
    if confidence is None:
        near = _CONFIDENCE_NEARBY.search(text)
        if near is not None:
            confidence = _parse_number(near.group(1))
    if confidence is not None and not 0.0 <= confidence <= 1.0:
        confidence = None
        warnings = ("confidence_out_of_range",)

    explanation = None
    if method == "template":
        for i in range(label_block_idx + 1, len(blocks)):
            if i == confidence_block_idx:
                continue
            block = blocks[i].strip()
            if not block or _CONFIDENCE_PREFIX.match(block):
                # empty or a confidence field (parsed or not): not prose
                continue
            explanation = block
            break

    return cls(
        score=score,
        confidence=confidence,
        explanation=explanation,
        method=method,
        warnings=warnings,
    )


def parse_headline_response(text: str) -> HeadlineVerdict:
    """Parse a good/bad/neutral headline completion."""
    return _parse(
        text, HEADLINE_LABELS, _normalize_headline, _HEADLINE_KEYWORDS, HeadlineVerdict
    )


def parse_capex_response(text: str) -> CapexVerdict:
    """Parse a five-point capital-expenditure completion."""
    return _parse(text, CAPEX_LABELS, _normalize_capex, _CAPEX_KEYWORDS, CapexVerdict)


def headline_label(score: float) -> str:
    """Canonical label for a headline score (inverse of the parser mapping)."""
    for label, value in HEADLINE_LABELS.items():
        if value == score:
            return label
    raise ValueError(f"no headline label for score {score!r}")


def capex_label(score: float) -> str:
    """Canonical label for a capex score (inverse of the parser mapping)."""
    for label, value in CAPEX_LABELS.items():
        if value == score:
            return label
    raise ValueError(f"no capex label for score {score!r}")


# ---------------------------------------------------------------------------
# wire format


def write_verdict_csv(rows: Iterable[tuple[str, object]], path: str, task: str) -> None:
    """Write parse results as CSV: prompt_id,score,confidence,parse_status.

    ``rows`` pairs each prompt_id with either a verdict or an
    UnparseableResponseError; unparseable rows keep empty score and
    confidence cells so nothing is silently lost.
    """
    if task not in ("headline", "capex"):
        raise ValueError(f"unknown task {task!r}")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["prompt_id", "score", "confidence", "parse_status"])
        for prompt_id, result in rows:
            if isinstance(result, UnparseableResponseError):
                writer.writerow([prompt_id, "", "", "unparseable"])
            else:
                writer.writerow(
                    [
                        prompt_id,
                        repr(result.score),
                        "" if result.confidence is None else repr(result.confidence),
                        result.method,
                    ]
                )
