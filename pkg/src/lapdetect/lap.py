"""Low-probability token statistics for scored prompts.

The central quantity is the geometric mean of the lowest-K% conditional
token probabilities of a text under a causal language model,

    lap(w, K) = exp( mean_{t in S_K} log P(w_t | w_<t) ),

where S_K holds the floor(K/100 * N) tokens (at least one) with the
smallest conditional log-probabilities. A high value means the model
found even its worst-explained tokens easy to predict, which for dated
text it should not have seen is evidence of memorization.

Conventions:

* log-probabilities are natural logs, finite and <= 0;
* ties on logprob are broken by token position (earlier wins), so the
  selected subset is deterministic;
* K = 100 uses every token, making the statistic the inverse perplexity.
"""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Iterable, Sequence

from .errors import DuplicateIdError, EmptyPromptError, MalformedScoreError

DEFAULT_K_PERCENT = 20.0

#: multipliers for the rescaled reporting units
_UNIT_FACTORS = {"raw": 1.0, "percent": 100.0, "e4": 10_000.0}


@dataclass(frozen=True)
class TokenScore:
    """One prompt token with its conditional natural-log probability."""

    position: int
    text: str
    logprob: float
    special: bool = False


@dataclass(frozen=True)
class ScoredPrompt:
    """A prompt with per-token scores and the model's completion.

    ``tokens`` holds prompt tokens only; ``first_token_logprob`` is the
    log-probability of the first *generated* token and feeds the
    first-token-probability covariate downstream.
    """

    prompt_id: str
    model_id: str
    tokens: tuple[TokenScore, ...]
    response_text: str = ""
    first_token_logprob: float | None = None


@dataclass(frozen=True)
class LapScore:
    """The statistic plus enough detail to audit the selection.

    ``selected_positions`` lists the chosen token positions in ascending
    order, so a score can be traced back to the tokens that produced it.
    """

    prompt_id: str
    value: float
    k_percent: float
    n_selected: int
    n_tokens: int
    selected_positions: tuple[int, ...] = ()


def n_selected_for(k_percent: float, n_tokens: int) -> int:
    """Size of the selected subset: max(1, floor(K/100 * N)).

    The product is computed before the division so that an integral
    K never loses a token to float rounding (e.g. K=30, N=10 -> 3).
    """
    if not 0.0 < k_percent <= 100.0:
        raise ValueError(f"k_percent must be in (0, 100], got {k_percent}")
    return max(1, math.floor(k_percent * n_tokens / 100.0))


def compute_lap(prompt: ScoredPrompt, k_percent: float = DEFAULT_K_PERCENT) -> LapScore:
    """Geometric mean probability of the lowest-K% tokens of ``prompt``.

    Raises
    ------
    EmptyPromptError
        if the prompt has no tokens.
    MalformedScoreError
        if any log-probability is positive, NaN, or infinite, naming
        the offending position.
    """
    tokens = prompt.tokens
    if not tokens:
        raise EmptyPromptError(
            f"prompt {prompt.prompt_id!r} has no scoreable tokens",
            prompt_id=prompt.prompt_id,
        )
    last_pos = 0
    for tok in tokens:
        if not math.isfinite(tok.logprob) or tok.logprob > 0.0:
            raise MalformedScoreError(
                f"prompt {prompt.prompt_id!r}: bad logprob {tok.logprob!r} "
                f"at position {tok.position}",
                prompt_id=prompt.prompt_id,
                position=tok.position,
            )
        if tok.position <= last_pos:
            raise MalformedScoreError(
                f"prompt {prompt.prompt_id!r}: positions not strictly "
                f"increasing at position {tok.position}",
                prompt_id=prompt.prompt_id,
                position=tok.position,
            )
        last_pos = tok.position

    n = len(tokens)
    n_sel = n_selected_for(k_percent, n)
    ranked = sorted(tokens, key=lambda t: (t.logprob, t.position))
    selected = ranked[:n_sel]
    scores = [t.logprob for t in selected]
    if scores.count(scores[0]) == n_sel:
        # the mean of identical values is that value; fsum/n can be off
        # by an ulp here, which would break the uniform-sequence identity
        mean_log = scores[0]
    else:
        mean_log = math.fsum(scores) / n_sel
    return LapScore(
        prompt_id=prompt.prompt_id,
        value=math.exp(mean_log),
        k_percent=k_percent,
        n_selected=n_sel,
        n_tokens=n,
        selected_positions=tuple(sorted(t.position for t in selected)),
    )


def batch_lap(
    prompts: Sequence[ScoredPrompt],
    k_percent: float = DEFAULT_K_PERCENT,
    threads: int = 1,
) -> list[LapScore]:
    """Score many prompts, preserving input order.

    Duplicate prompt_ids fail the whole batch before any scoring, and a
    malformed prompt aborts with no partial output. Scoring is pure per
    prompt, so the result is independent of ``threads``.
    """
    seen: set[str] = set()
    for p in prompts:
        if p.prompt_id in seen:
            raise DuplicateIdError(
                f"duplicate prompt_id {p.prompt_id!r} in batch", prompt_id=p.prompt_id
            )
        seen.add(p.prompt_id)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(lambda p: compute_lap(p, k_percent), prompts))
    return [compute_lap(p, k_percent) for p in prompts]


def rescale_lap(value: float, unit: str) -> float:
    """Rescale a raw LAP value for reporting: raw, percent, or e4 (x10^4)."""
    try:
        return value * _UNIT_FACTORS[unit]
    except KeyError:
        raise ValueError(f"unknown unit {unit!r}; expected one of {sorted(_UNIT_FACTORS)}")


# ---------------------------------------------------------------------------
# wire formats


def read_scored_prompts(path: str, include_special: bool = False) -> list[ScoredPrompt]:
    """Read ScoredPrompt records from a JSONL file.

    Tokens flagged ``special`` are excluded unless ``include_special`` is
    set; tokens with a null logprob (the context-free first position)
    are always omitted.
    """
    prompts: list[ScoredPrompt] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise MalformedScoreError(
                    f"{path}:{lineno}: invalid JSON: {exc}", line=lineno
                ) from exc
            tokens = []
            for t in rec.get("tokens", []):
                if t.get("logprob") is None:
                    continue
                if t.get("special", False) and not include_special:
                    continue
                tokens.append(
                    TokenScore(
                        position=int(t["position"]),
                        text=str(t.get("text", "")),
                        logprob=float(t["logprob"]),
                        special=bool(t.get("special", False)),
                    )
                )
            ftl = rec.get("first_token_logprob")
            prompts.append(
                ScoredPrompt(
                    prompt_id=str(rec["prompt_id"]),
                    model_id=str(rec.get("model_id", "")),
                    tokens=tuple(tokens),
                    response_text=str(rec.get("response_text", "")),
                    first_token_logprob=None if ftl is None else float(ftl),
                )
            )
    return prompts


def write_lap_csv(scores: Iterable[LapScore], path: str) -> None:
    """Write scores as CSV: prompt_id,lap_raw,lap_percent,lap_e4,n_tokens,n_selected."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["prompt_id", "lap_raw", "lap_percent", "lap_e4", "n_tokens", "n_selected"]
        )
        for s in scores:
            writer.writerow(
                [
                    s.prompt_id,
                    repr(s.value),
                    repr(rescale_lap(s.value, "percent")),
                    repr(rescale_lap(s.value, "e4")),
                    s.n_tokens,
                    s.n_selected,
                ]
            )
