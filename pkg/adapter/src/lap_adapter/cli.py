"""Command line entry point.

One subcommand, ``score``: read a jobs CSV, render each prompt, submit it
to the runtime, and append ScoredPrompt JSONL to the output file. Exits 0
when every pending job was scored, 1 when some failed (details in the
failures sidecar) or the inputs were unusable, 2 when the jobs file is
missing.
"""

from __future__ import annotations

import argparse
import sys

from . import __version__
from .client import CapabilityError, DecodingConfig, score_prompts
from .templates import DEFAULT_MAX_WORDS, TemplateError, read_jobs_csv


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lapadapter",
        description="Collect prompt-token log-probabilities from an inference runtime.",
    )
    parser.add_argument(
        "--version", action="version", version=f"lapadapter {__version__}"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    score = sub.add_parser("score", help="score a batch of prompt jobs")
    score.add_argument("--jobs", required=True, help="CSV of prompt jobs")
    score.add_argument("--endpoint", required=True, help="runtime base URL")
    score.add_argument("--model", required=True, help="model identifier")
    score.add_argument("--out", required=True, help="output JSONL path")
    score.add_argument(
        "--max-words",
        type=int,
        default=DEFAULT_MAX_WORDS,
        help="word budget for transcript excerpts (default %(default)s)",
    )
    score.add_argument(
        "--max-tokens", type=int, default=64, help="completion length cap"
    )
    score.add_argument(
        "--workers", type=int, default=4, help="concurrent requests in flight"
    )
    score.add_argument(
        "--retries", type=int, default=3, help="retries per job on transient failures"
    )
    score.add_argument(
        "--backoff", type=float, default=0.5, help="base retry delay in seconds"
    )
    score.add_argument(
        "--timeout", type=float, default=30.0, help="per-request timeout in seconds"
    )
    return parser


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        jobs = read_jobs_csv(args.jobs)
        summary = score_prompts(
            jobs,
            args.endpoint,
            args.model,
            args.out,
            decoding=DecodingConfig(max_tokens=args.max_tokens),
            max_words=args.max_words,
            workers=args.workers,
            retries=args.retries,
            backoff=args.backoff,
            timeout=args.timeout,
        )
    except FileNotFoundError as exc:
        print(f"lapadapter: error: {exc}", file=sys.stderr)
        return 2
    except (TemplateError, CapabilityError, ValueError) as exc:
        print(f"lapadapter: error: {exc}", file=sys.stderr)
        return 1
    print(
        f"{summary.written} scored, {summary.skipped} already present, "
        f"{summary.failed} failed -> {args.out}"
    )
    if summary.failed:
        print(
            f"lapadapter: {summary.failed} job(s) failed, see {args.out}.failures.jsonl",
            file=sys.stderr,
        )
        return 1
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
