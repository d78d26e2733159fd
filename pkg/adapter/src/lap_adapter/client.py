"""Client for OpenAI-compatible completion runtimes.

Each prompt is submitted once with echo enabled, so the runtime returns
log-probabilities for the prompt tokens themselves alongside the greedy
completion. The result is written as ScoredPrompt JSONL, one line per
prompt, matching the schema shipped in the repository.

Decoding is pinned to temperature zero: sampled completions would make
reruns irreproducible, and DecodingConfig refuses anything else.

Failure handling is split by blast radius. A runtime that cannot return
prompt-token log-probabilities at all is useless for scoring, so that
raises CapabilityError and aborts the batch. A single malformed response
or an exhausted retry budget only fails that job: the record goes to a
``<out>.failures.jsonl`` sidecar and the batch continues.

Runs checkpoint line by line and resume by prompt_id: re-running the same
batch skips ids already present in the output file and never duplicates
them. A torn final line left by a killed run is dropped on resume.
"""

from __future__ import annotations

import json
import math
import re
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import requests

from .templates import DEFAULT_MAX_WORDS, PromptJob, render_prompt

COMPLETIONS_PATH = "/v1/completions"

RETRY_STATUSES = (429, 500, 502, 503, 504)

# Tokenizer metadata rarely survives the completions wire format, so
# control tokens are recognized by shape; the pattern is recorded in the
# run manifest.
SPECIAL_TOKEN_PATTERN = r"^(<\|[^|]+\|>|</?s>|<pad>|<unk>|<bos>|<eos>|\[/?INST\])$"

_SPECIAL = re.compile(SPECIAL_TOKEN_PATTERN)


class CapabilityError(RuntimeError):
    """The runtime cannot return prompt-token log-probabilities."""


class _JobFailure(Exception):
    def __init__(self, reason: str, detail: str):
        super().__init__(f"{reason}: {detail}")
        self.reason = reason
        self.detail = detail


@dataclass(frozen=True)
class DecodingConfig:
    """Completion settings. Greedy decoding is not negotiable."""

    max_tokens: int = 64
    temperature: float = 0.0

    def __post_init__(self) -> None:
        if self.temperature != 0.0:
            raise ValueError(
                "completions must be reproducible: temperature is pinned to 0, "
                f"got {self.temperature}"
            )
        if self.max_tokens < 1:
            raise ValueError(f"max_tokens must be positive, got {self.max_tokens}")


@dataclass(frozen=True)
class ScoreSummary:
    """Outcome of one score_prompts run."""

    written: int
    skipped: int
    failed: int


def _existing_ids(out_path: Path) -> set[str]:
    """Collect prompt_ids already checkpointed, repairing a torn tail.

    A run killed mid-write can leave a final line that is not valid JSON;
    that line is discarded (the job will be rescored) and the file is
    rewritten without it.
    """
    if not out_path.exists():
        return set()
    good: list[str] = []
    ids: set[str] = set()
    torn = False
    with open(out_path, encoding="utf-8") as handle:
        for line in handle:
            if not line.strip():
                continue
            try:
                record = json.loads(line)
                ids.add(record["prompt_id"])
            except (json.JSONDecodeError, KeyError, TypeError):
                torn = True
                break
            good.append(line.rstrip("\n"))
    if torn:
        out_path.write_text("".join(f"{line}\n" for line in good), encoding="utf-8")
    return ids


def _post_with_retries(
    session: requests.Session,
    url: str,
    payload: dict,
    retries: int,
    backoff: float,
    timeout: float,
) -> requests.Response:
    last = "no attempt made"
    for attempt in range(retries + 1):
        try:
            response = session.post(url, json=payload, timeout=timeout)
        except requests.RequestException as exc:
            last = f"connection failed: {exc}"
        else:
            if response.status_code not in RETRY_STATUSES:
                return response
            last = f"status {response.status_code}"
        if attempt < retries:
            time.sleep(backoff * (2**attempt))
    raise _JobFailure("transient", f"{last} after {retries + 1} attempts")


def _checked_logprob(value, where: str) -> float:
    if not isinstance(value, (int, float)) or not math.isfinite(value) or value > 0:
        raise _JobFailure("malformed_response", f"bad logprob {value!r} {where}")
    return float(value)


def _parse_completion(prompt: str, body: dict) -> tuple[list[dict], str, float | None]:
    """Split an echoed completion into prompt tokens and response text."""
    try:
        choice = body["choices"][0]
    except (KeyError, IndexError, TypeError):
        raise _JobFailure("malformed_response", "no choices in response")
    logprobs = choice.get("logprobs") if isinstance(choice, dict) else None
    if logprobs is None:
        raise CapabilityError(
            "runtime returned no logprobs block; it cannot score prompt tokens"
        )
    try:
        texts = logprobs["tokens"]
        values = logprobs["token_logprobs"]
        offsets = logprobs["text_offset"]
    except (KeyError, TypeError):
        raise _JobFailure("malformed_response", "incomplete logprobs block")
    if not (len(texts) == len(values) == len(offsets)):
        raise _JobFailure("malformed_response", "ragged logprobs arrays")

    boundary = len(prompt)
    tokens: list[dict] = []
    response_parts: list[str] = []
    first_token_logprob: float | None = None
    for text, value, offset in zip(texts, values, offsets):
        if not isinstance(offset, int):
            raise _JobFailure("malformed_response", f"bad text offset {offset!r}")
        if offset < boundary:
            position = len(tokens) + 1
            if value is None:
                if position > 1:
                    raise _JobFailure(
                        "malformed_response", f"missing logprob at position {position}"
                    )
                logprob = None
            else:
                logprob = _checked_logprob(value, f"at position {position}")
            tokens.append(
                {
                    "position": position,
                    "text": str(text),
                    "logprob": logprob,
                    "special": bool(_SPECIAL.match(str(text))),
                }
            )
        else:
            if not response_parts and value is not None:
                first_token_logprob = _checked_logprob(value, "for first completion token")
            response_parts.append(str(text))
    if not tokens:
        raise _JobFailure("malformed_response", "no prompt tokens in echo")
    return tokens, "".join(response_parts), first_token_logprob


def _score_one(
    session: requests.Session,
    url: str,
    model: str,
    decoding: DecodingConfig,
    job: PromptJob,
    prompt: str,
    retries: int,
    backoff: float,
    timeout: float,
) -> tuple[str, dict]:
    payload = {
        "model": model,
        "prompt": prompt,
        "temperature": 0.0,
        "max_tokens": decoding.max_tokens,
        "logprobs": 0,
        "echo": True,
    }
    try:
        response = _post_with_retries(session, url, payload, retries, backoff, timeout)
        if response.status_code != 200:
            raise _JobFailure("malformed_response", f"status {response.status_code}")
        try:
            body = response.json()
        except ValueError:
            raise _JobFailure("malformed_response", "body is not JSON")
        tokens, response_text, first_token_logprob = _parse_completion(prompt, body)
    except _JobFailure as exc:
        return "failed", {
            "prompt_id": job.prompt_id,
            "reason": exc.reason,
            "detail": exc.detail,
        }
    return "ok", {
        "prompt_id": job.prompt_id,
        "model_id": model,
        "response_text": response_text,
        "first_token_logprob": first_token_logprob,
        "tokens": tokens,
    }


def _write_manifest(
    out_path: Path,
    endpoint: str,
    model: str,
    decoding: DecodingConfig,
    max_words: int,
    summary: ScoreSummary,
    n_jobs: int,
) -> None:
    manifest = {
        "command": "score",
        "endpoint": endpoint,
        "model": model,
        "temperature": decoding.temperature,
        "max_tokens": decoding.max_tokens,
        "max_words": max_words,
        "special_token_pattern": SPECIAL_TOKEN_PATTERN,
        "jobs": n_jobs,
        "written": summary.written,
        "skipped_existing": summary.skipped,
        "failed": summary.failed,
    }
    path = Path(f"{out_path}.manifest.json")
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def score_prompts(
    jobs: list[PromptJob],
    endpoint: str,
    model: str,
    out_path: str | Path,
    *,
    decoding: DecodingConfig | None = None,
    max_words: int = DEFAULT_MAX_WORDS,
    workers: int = 4,
    retries: int = 3,
    backoff: float = 0.5,
    timeout: float = 30.0,
) -> ScoreSummary:
    """Render, submit, and checkpoint a batch of prompt jobs.

    Appends one ScoredPrompt JSON line per job to ``out_path``, skipping
    ids already present. Per-job failures go to ``<out>.failures.jsonl``;
    a run with no failures removes any stale sidecar. Raises
    CapabilityError if the runtime cannot score prompt tokens.
    """
    decoding = decoding or DecodingConfig()
    if workers < 1:
        raise ValueError(f"workers must be positive, got {workers}")
    out_path = Path(out_path)
    url = endpoint.rstrip("/") + COMPLETIONS_PATH

    seen: set[str] = set()
    rendered: list[tuple[PromptJob, str]] = []
    for job in jobs:
        if job.prompt_id in seen:
            raise ValueError(f"duplicate prompt_id {job.prompt_id!r} in batch")
        seen.add(job.prompt_id)
        rendered.append((job, render_prompt(job, max_words)))

    done = _existing_ids(out_path)
    pending = [(job, prompt) for job, prompt in rendered if job.prompt_id not in done]
    skipped = len(rendered) - len(pending)

    failures: list[dict] = []
    written = 0
    with requests.Session() as session:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = pool.map(
                lambda item: _score_one(
                    session, url, model, decoding, item[0], item[1], retries, backoff, timeout
                ),
                pending,
            )
            with open(out_path, "a", encoding="utf-8") as sink:
                for status, record in results:
                    if status == "failed":
                        failures.append(record)
                        continue
                    sink.write(json.dumps(record, sort_keys=True) + "\n")
                    sink.flush()
                    written += 1

    failures_path = Path(f"{out_path}.failures.jsonl")
    if failures:
        with open(failures_path, "w", encoding="utf-8") as sink:
            for record in failures:
                sink.write(json.dumps(record, sort_keys=True) + "\n")
    elif failures_path.exists():
        failures_path.unlink()

    summary = ScoreSummary(written=written, skipped=skipped, failed=len(failures))
    _write_manifest(out_path, endpoint, model, decoding, max_words, summary, len(jobs))
    return summary
