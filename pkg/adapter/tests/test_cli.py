import csv
import json
from pathlib import Path

import jsonschema
import pytest

from lap_adapter.cli import main

SCHEMA_PATH = Path(__file__).resolve().parents[2] / "schemas" / "scored_prompt.schema.json"

VALIDATOR = jsonschema.Draft7Validator(json.loads(SCHEMA_PATH.read_text()))

ROWS = [
    ["h-001", "headline", "2020-07-28", "Acme wins defense contract", "Acme Corp", "ACME"],
    ["h-002", "headline", "2020-07-29", "Acme recalls flagship product", "Acme Corp", "ACME"],
    ["c-001", "earnings_call", "Q1 2020", "We began 2020 with real momentum", "Acme Corp", "ACME"],
]


def write_jobs(path, rows=ROWS):
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(["prompt_id", "template", "date", "text", "company", "ticker"])
        writer.writerows(rows)


def score_args(stub, jobs, out, *extra):
    return [
        "score",
        "--jobs", str(jobs),
        "--endpoint", stub.endpoint,
        "--model", "stub-lm",
        "--out", str(out),
        "--backoff", "0.01",
        *extra,
    ]


def test_score_end_to_end(stub, tmp_path, capsys):
    jobs = tmp_path / "jobs.csv"
    out = tmp_path / "scored.jsonl"
    write_jobs(jobs)
    assert main(score_args(stub, jobs, out)) == 0
    lines = out.read_text().splitlines()
    assert len(lines) == 3
    for line in lines:
        VALIDATOR.validate(json.loads(line))
    assert Path(f"{out}.manifest.json").exists()
    assert "3 scored" in capsys.readouterr().out


def test_rerun_skips_scored_prompts(stub, tmp_path, capsys):
    jobs = tmp_path / "jobs.csv"
    out = tmp_path / "scored.jsonl"
    write_jobs(jobs)
    assert main(score_args(stub, jobs, out)) == 0
    assert main(score_args(stub, jobs, out)) == 0
    assert "0 scored, 3 already present" in capsys.readouterr().out
    assert len(out.read_text().splitlines()) == 3


def test_missing_jobs_file_exits_2(stub, tmp_path, capsys):
    rc = main(score_args(stub, tmp_path / "absent.csv", tmp_path / "scored.jsonl"))
    assert rc == 2
    assert "error" in capsys.readouterr().err


def test_failed_jobs_exit_1_with_sidecar(stub, tmp_path, capsys):
    jobs = tmp_path / "jobs.csv"
    out = tmp_path / "scored.jsonl"
    rows = ROWS + [
        ["h-bad", "headline", "2020-07-30", "[[MALFORMED]] Acme files suit", "Acme Corp", "ACME"]
    ]
    write_jobs(jobs, rows)
    assert main(score_args(stub, jobs, out)) == 1
    assert "failures" in capsys.readouterr().err
    assert len(out.read_text().splitlines()) == 3
    (failure,) = [json.loads(line) for line in Path(f"{out}.failures.jsonl").read_text().splitlines()]
    assert failure["prompt_id"] == "h-bad"


def test_capability_gap_exits_1(stub, tmp_path, capsys):
    stub.no_logprobs = True
    jobs = tmp_path / "jobs.csv"
    write_jobs(jobs)
    rc = main(score_args(stub, jobs, tmp_path / "scored.jsonl"))
    assert rc == 1
    assert "logprobs" in capsys.readouterr().err


def test_version_flag(capsys):
    with pytest.raises(SystemExit) as excinfo:
        main(["--version"])
    assert excinfo.value.code == 0
    assert "lapadapter 0.1.0" in capsys.readouterr().out
