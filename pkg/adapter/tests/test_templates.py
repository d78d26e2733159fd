import csv
from dataclasses import replace
from pathlib import Path

import pytest

from lap_adapter import PromptJob, TemplateError, read_jobs_csv, render_prompt, truncate_words

FIXTURES = Path(__file__).parent / "fixtures"

KODAK = PromptJob(
    prompt_id="fig-kodak",
    template="headline",
    date="2020-07-28",
    text="Kodak Triples on Loan to Make Covid-19 Drug Ingredients",
    company="Eastman Kodak Company",
    ticker="KODK",
)

OCEANEERING = PromptJob(
    prompt_id="fig-oii",
    template="earnings_call",
    date="Q1 2020",
    text=(
        "We began 2020 with the expectation of marginal growth and improving business "
        "fundamentals across all of our segments. And then the COVID-19 pandemic erupted "
        "and fueled the further deterioration of the crude oil market fundamentals"
    ),
    company="Oceaneering International Inc.",
    ticker="OII",
)


class TestGoldenPrompts:
    def test_kodak_prompt_matches_golden_file(self):
        golden = (FIXTURES / "kodak_prompt.txt").read_bytes()
        assert render_prompt(KODAK).encode("utf-8") == golden

    def test_earnings_call_prompt_matches_golden_file(self):
        golden = (FIXTURES / "oceaneering_prompt.txt").read_bytes()
        assert render_prompt(OCEANEERING).encode("utf-8") == golden

    def test_rendering_is_deterministic(self):
        assert render_prompt(KODAK) == render_prompt(KODAK)


class TestFillInValidation:
    def test_empty_headline_rejected(self):
        with pytest.raises(TemplateError):
            render_prompt(replace(KODAK, text=""))

    def test_whitespace_company_rejected(self):
        with pytest.raises(TemplateError):
            render_prompt(replace(OCEANEERING, company="   "))

    def test_unknown_template_rejected(self):
        with pytest.raises(TemplateError, match="unknown template"):
            render_prompt(replace(KODAK, template="press_release"))


class TestTruncation:
    def test_long_transcript_keeps_first_words(self):
        words = [f"w{i}" for i in range(600)]
        kept = truncate_words(" ".join(words), 500)
        assert kept.split() == words[:500]

    def test_short_transcript_unchanged(self):
        assert truncate_words("alpha beta gamma", 500) == "alpha beta gamma"

    def test_whitespace_runs_collapse(self):
        assert truncate_words("alpha\n\n  beta\tgamma", 500) == "alpha beta gamma"

    def test_nonpositive_budget_rejected(self):
        with pytest.raises(ValueError):
            truncate_words("alpha", 0)

    def test_render_applies_budget_to_transcripts(self):
        long_job = replace(OCEANEERING, text=" ".join(f"w{i}" for i in range(600)))
        prompt = render_prompt(long_job, max_words=500)
        assert "w499" in prompt
        assert "w500" not in prompt


class TestJobsCsv:
    def write_jobs(self, path, rows):
        with open(path, "w", newline="", encoding="utf-8") as handle:
            writer = csv.writer(handle)
            writer.writerow(["prompt_id", "template", "date", "text", "company", "ticker"])
            writer.writerows(rows)

    def test_round_trip(self, tmp_path):
        path = tmp_path / "jobs.csv"
        self.write_jobs(
            path,
            [
                ["h1", "headline", "2020-07-28", "Acme wins contract", "Acme Corp", "ACME"],
                ["c1", "earnings_call", "Q1 2020", "We began 2020", "Acme Corp", "ACME"],
            ],
        )
        jobs = read_jobs_csv(path)
        assert [job.prompt_id for job in jobs] == ["h1", "c1"]
        assert jobs[0].template == "headline"
        assert jobs[1].date == "Q1 2020"

    def test_duplicate_prompt_id_rejected(self, tmp_path):
        path = tmp_path / "jobs.csv"
        row = ["h1", "headline", "2020-07-28", "Acme wins contract", "Acme Corp", "ACME"]
        self.write_jobs(path, [row, row])
        with pytest.raises(TemplateError, match="duplicate"):
            read_jobs_csv(path)

    def test_missing_column_rejected(self, tmp_path):
        path = tmp_path / "jobs.csv"
        with open(path, "w", newline="", encoding="utf-8") as handle:
            writer = csv.writer(handle)
            writer.writerow(["prompt_id", "template", "date", "text", "company"])
            writer.writerow(["h1", "headline", "2020-07-28", "Acme wins contract", "Acme Corp"])
        with pytest.raises(TemplateError, match="ticker"):
            read_jobs_csv(path)
