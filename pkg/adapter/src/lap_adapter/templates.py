"""Prompt construction for the two forecasting tasks.

Token-level scores are only comparable across prompts when every prompt
shares exactly the same boilerplate, so the two templates here are frozen
and golden-file tested byte for byte. The fill-ins (identifier, date or
quarter label, text, company, ticker) are the only variable parts.

Transcript excerpts are truncated to a word budget before rendering;
headlines are used verbatim.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

TEMPLATES = ("headline", "earnings_call")

DEFAULT_MAX_WORDS = 500

_FILL_INS = ("prompt_id", "date", "text", "company", "ticker")

JOBS_COLUMNS = ("prompt_id", "template") + _FILL_INS[1:]


class TemplateError(ValueError):
    """A prompt job names an unknown template or lacks a required fill-in."""


@dataclass(frozen=True)
class PromptJob:
    """One prompt to render and score.

    ``date`` is a calendar date for the headline task and a quarter label
    (for example "Q1 2020") for the earnings-call task. ``text`` carries
    the headline or the transcript excerpt.
    """

    prompt_id: str
    template: str
    date: str
    text: str
    company: str
    ticker: str


def truncate_words(text: str, max_words: int) -> str:
    """Keep the first ``max_words`` whitespace-separated words.

    Runs of whitespace (including newlines) collapse to single spaces, so
    a multi-paragraph transcript renders as one flowing excerpt.
    """
    if max_words < 1:
        raise ValueError(f"max_words must be positive, got {max_words}")
    return " ".join(text.split()[:max_words])


def _check_fill_ins(job: PromptJob) -> None:
    if job.template not in TEMPLATES:
        raise TemplateError(
            f"unknown template {job.template!r}; expected one of {', '.join(TEMPLATES)}"
        )
    for name in _FILL_INS:
        value = getattr(job, name)
        if not isinstance(value, str) or not value.strip():
            raise TemplateError(f"job {job.prompt_id!r} is missing fill-in {name!r}")


def render_prompt(job: PromptJob, max_words: int = DEFAULT_MAX_WORDS) -> str:
    """Instantiate the task template for one job.

    Deterministic: the same job always yields the same bytes. Raises
    TemplateError when a fill-in is empty or the template name is unknown.
    """
    _check_fill_ins(job)
    if job.template == "headline":
        return (
            f'Here is a piece of news: "({job.date}) {job.text}."\n'
            "\n"
            "Do you think this news is good, bad, or neutral for the stock price of "
            f"{job.company} ({job.ticker}) in the short term?\n"
            "\n"
            "Write your answer as:\n"
            "{good/ bad / neutral}\n"
            "{confidence (0-1):}\n"
            "{explanation (less than 25 words)}"
        )
    excerpt = truncate_words(job.text, max_words)
    return (
        f"Here is an excerpt from the earnings call transcript of {job.company} ({job.ticker}):\n"
        "\n"
        f"{job.date} {job.company} Earnings Call\n"
        f'"...{excerpt}..."\n'
        "\n"
        f"Do you think the company {job.company} ({job.ticker}) plans to increase or "
        "decrease its capital expenditures over the next year?\n"
        "\n"
        "Write your answer as:\n"
        "{significantly_increase / slightly_increase / no_change / slightly_decrease / significantly_decrease}\n"
        "{confidence (0-1):}\n"
        "{explanation (less than 25 words):}"
    )


def read_jobs_csv(path: str | Path) -> list[PromptJob]:
    """Load prompt jobs from a CSV with columns prompt_id, template, date, text, company, ticker."""
    jobs: list[PromptJob] = []
    seen: set[str] = set()
    with open(path, newline="", encoding="utf-8") as handle:
        reader = csv.DictReader(handle)
        header = set(reader.fieldnames or ())
        missing = [col for col in JOBS_COLUMNS if col not in header]
        if missing:
            raise TemplateError(f"jobs file {path} lacks columns: {', '.join(missing)}")
        for row in reader:
            job = PromptJob(
                prompt_id=row["prompt_id"],
                template=row["template"],
                date=row["date"],
                text=row["text"],
                company=row["company"],
                ticker=row["ticker"],
            )
            if job.prompt_id in seen:
                raise TemplateError(f"duplicate prompt_id {job.prompt_id!r} in {path}")
            seen.add(job.prompt_id)
            jobs.append(job)
    return jobs
