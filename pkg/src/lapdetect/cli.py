"""Command-line pipeline: score, parse, assemble, test, resample, report.

Every subcommand reads files, writes files, and drops a provenance
manifest next to its main output. Data outputs carry no timestamps, so a
rerun with the same inputs and seed is byte-identical. Errors surface as
one JSON object on stderr ({"error": code}) with exit status 2 for a
missing input and 1 for everything else.
"""

from __future__ import annotations

import argparse
import datetime as dt
import json
import math
import os
import sys

import pandas as pd

from . import __version__
from .detection import (
    BootstrapResult,
    DetectionConfig,
    histogram_export,
    pairs_bootstrap,
    run_detection,
    run_horserace,
    run_size_interaction,
    write_histogram_csv,
)
from .errors import InputNotFoundError, LapdetectError, UnparseableResponseError
from .lap import batch_lap, read_scored_prompts, write_lap_csv
from .manifest import build_manifest, write_manifest
from .panel import (
    EVENT_CUTOFF,
    build_panel,
    read_panel_csv,
    standardize,
    write_drop_log_csv,
    write_panel_csv,
)
from .parsing import parse_capex_response, parse_headline_response, write_verdict_csv
from .regression import RegressionSpec
from .report import render_detection, render_table
from .simulate import DgpConfig, generate, write_truth_csv


def _require(path: str | None):
    if path is not None and not os.path.exists(path):
        raise InputNotFoundError(f"input file not found: {path}", path=path)
    return path


def _threads(args) -> int:
    if args.threads is not None:
        return args.threads
    return int(os.environ.get("LAPDETECT_THREADS", "1"))


def _write_json(doc: dict, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _read_json(path: str):
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def _read_table(path: str) -> pd.DataFrame:
    return pd.read_csv(path, dtype={"prompt_id": str, "entity_id": str})


def cmd_lap(args) -> int:
    _require(args.infile)
    prompts = read_scored_prompts(args.infile, include_special=args.include_special)
    scores = batch_lap(prompts, args.k_percent, threads=_threads(args))
    write_lap_csv(scores, args.out)
    config = {"k_percent": args.k_percent, "include_special": args.include_special}
    write_manifest(build_manifest("lap", [args.infile], config), args.out)
    return 0


def cmd_parse(args) -> int:
    _require(args.infile)
    prompts = read_scored_prompts(args.infile)
    parser = parse_headline_response if args.task == "headline" else parse_capex_response
    rows = []
    for prompt in prompts:
        try:
            rows.append((prompt.prompt_id, parser(prompt.response_text)))
        except UnparseableResponseError as exc:
            rows.append((prompt.prompt_id, exc))
    write_verdict_csv(rows, args.out, args.task)
    write_manifest(build_manifest("parse", [args.infile], {"task": args.task}), args.out)
    return 0


def cmd_build_panel(args) -> int:
    for path in (args.events, args.lap, args.verdicts, args.outcomes,
                 args.marketcap, args.prompts):
        _require(path)
    cutoff = dt.time.fromisoformat(args.cutoff)
    first_token = None
    if args.prompts:
        first_token = {
            p.prompt_id: math.exp(p.first_token_logprob)
            for p in read_scored_prompts(args.prompts)
            if p.first_token_logprob is not None
        }
    marketcap = _read_table(args.marketcap) if args.marketcap else None
    panel, drop_log = build_panel(
        _read_table(args.events),
        _read_table(args.lap),
        _read_table(args.verdicts),
        _read_table(args.outcomes),
        marketcap,
        task=args.task,
        horizon=args.horizon,
        cutoff=cutoff,
        first_token_probs=first_token,
    )
    if args.standardize:
        panel = standardize(panel, args.standardize.split(","))
    write_panel_csv(panel, args.out)
    if args.drop_log:
        write_drop_log_csv(drop_log, args.drop_log)
    inputs = [args.events, args.lap, args.verdicts, args.outcomes,
              args.marketcap, args.prompts]
    config = {
        "task": args.task,
        "horizon": args.horizon,
        "cutoff": args.cutoff,
        "standardize": args.standardize,
    }
    write_manifest(build_manifest("build-panel", inputs, config), args.out)
    return 0


def _detection_config(args) -> DetectionConfig:
    if args.spec:
        _require(args.spec)
        spec = RegressionSpec.from_json(_read_json(args.spec))
        return DetectionConfig(
            level=args.level, fe=tuple(sorted(spec.fe)), cluster=spec.cluster
        )
    fe = tuple(args.fe.split(",")) if args.fe else ()
    return DetectionConfig(level=args.level, fe=fe, cluster=args.cluster)


def cmd_detect(args) -> int:
    _require(args.panel)
    panel = read_panel_csv(args.panel)
    config = _detection_config(args)
    if args.design == "main":
        doc = run_detection(panel, config).to_json()
    elif args.design == "size":
        doc = run_size_interaction(panel, config).to_json()
    else:
        if not args.covariate:
            raise ValueError("horserace design needs --covariate")
        doc = run_horserace(
            panel, args.covariate, include_lap=not args.no_lap, config=config
        ).to_json()
    _write_json(doc, args.out)
    config_doc = {
        "design": args.design,
        "covariate": args.covariate,
        "include_lap": not args.no_lap,
        **config.to_json(),
    }
    write_manifest(build_manifest("detect", [args.panel, args.spec], config_doc), args.out)
    return 0


def cmd_bootstrap(args) -> int:
    _require(args.panel)
    _require(args.spec)
    panel = read_panel_csv(args.panel)
    spec = RegressionSpec.from_json(_read_json(args.spec))
    result = pairs_bootstrap(
        panel,
        spec,
        args.focal,
        b=args.b,
        seed=args.seed,
        threads=_threads(args),
        cluster_resample=args.cluster_resample,
    )
    doc = result.to_json()
    doc["draws"] = [float(x) for x in result.draws]
    if args.reference is not None:
        doc["reference"] = args.reference
        doc["p_reference"] = result.p_one_sided(args.reference)
    _write_json(doc, args.out)
    config = {
        "focal": args.focal,
        "b": args.b,
        "cluster_resample": args.cluster_resample,
        "reference": args.reference,
        "spec": spec.to_json(),
    }
    write_manifest(
        build_manifest("bootstrap", [args.panel, args.spec], config, seed=args.seed),
        args.out,
    )
    return 0


def cmd_simulate(args) -> int:
    _require(args.config)
    config = DgpConfig.from_json(_read_json(args.config))
    result = generate(config)
    write_panel_csv(result.panel, args.out)
    if args.truth:
        write_truth_csv(result, args.truth)
    write_manifest(
        build_manifest("simulate", [args.config], config.to_json(), seed=config.seed),
        args.out,
    )
    return 0


def cmd_report(args) -> int:
    _require(args.infile)
    doc = _read_json(args.infile)
    if isinstance(doc, dict) and "verdict" in doc:
        text = render_detection(doc)
    elif isinstance(doc, list):
        text = render_table(doc)
    else:
        text = render_table([doc])
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write(text)

    outputs = {}
    if args.bootstrap:
        _require(args.bootstrap)
        bdoc = _read_json(args.bootstrap)
        import numpy as np

        result = BootstrapResult(
            draws=np.asarray(bdoc["draws"], dtype=float),
            seed=bdoc["seed"],
            focal=bdoc["focal"],
            full_estimate=bdoc["full_estimate"],
            n_redraws=bdoc["n_redraws"],
            unstable=bdoc["unstable"],
        )
        hist = histogram_export(result, args.bins)
        base, _ = os.path.splitext(args.out)
        hist_csv = f"{base}_hist.csv"
        hist_png = f"{base}_hist.png"
        write_histogram_csv(hist, hist_csv)
        from .figures import render_bootstrap_histogram

        render_bootstrap_histogram(hist, hist_png)
        outputs = {"histogram_csv": hist_csv, "histogram_png": hist_png}

    config = {"bins": args.bins, **outputs}
    write_manifest(
        build_manifest("report", [args.infile, args.bootstrap], config), args.out
    )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lapdetect",
        description="Detect lookahead bias in LLM forecasts from token log-probabilities.",
    )
    parser.add_argument(
        "--version", action="version", version=f"%(prog)s {__version__}"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("lap", help="score prompts: lowest-K% token statistic")
    p.add_argument("--in", dest="infile", required=True, help="scored-prompt JSONL")
    p.add_argument("--out", required=True, help="output CSV")
    p.add_argument("--k-percent", type=float, default=20.0)
    p.add_argument("--include-special", action="store_true")
    p.add_argument("--threads", type=int, default=None)
    p.set_defaults(func=cmd_lap)

    p = sub.add_parser("parse", help="extract verdicts from model completions")
    p.add_argument("--in", dest="infile", required=True, help="scored-prompt JSONL")
    p.add_argument("--out", required=True, help="verdict CSV")
    p.add_argument("--task", choices=("headline", "capex"), default="headline")
    p.set_defaults(func=cmd_parse)

    p = sub.add_parser("build-panel", help="join events, scores, and outcomes")
    p.add_argument("--events", required=True)
    p.add_argument("--lap", required=True)
    p.add_argument("--verdicts", required=True)
    p.add_argument("--outcomes", required=True)
    p.add_argument("--marketcap", default=None)
    p.add_argument("--prompts", default=None, help="JSONL for first-token probabilities")
    p.add_argument("--task", choices=("headline", "capex"), default="headline")
    p.add_argument("--horizon", type=int, default=2)
    p.add_argument("--cutoff", default=EVENT_CUTOFF.isoformat(timespec="minutes"))
    p.add_argument("--standardize", default=None, help="comma-separated columns")
    p.add_argument("--drop-log", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_build_panel)

    p = sub.add_parser("detect", help="run the interaction bias test")
    p.add_argument("--panel", required=True)
    p.add_argument("--spec", default=None, help="regression spec JSON for FE/cluster")
    p.add_argument("--fe", default=None, help="comma-separated: entity,time")
    p.add_argument("--cluster", default=None)
    p.add_argument("--level", type=float, default=0.05)
    p.add_argument("--design", choices=("main", "size", "horserace"), default="main")
    p.add_argument("--covariate", default=None)
    p.add_argument("--no-lap", action="store_true", help="horserace without LAP terms")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("bootstrap", help="pairs bootstrap of a focal coefficient")
    p.add_argument("--panel", required=True)
    p.add_argument("--spec", required=True, help="regression spec JSON")
    p.add_argument("--focal", required=True)
    p.add_argument("--b", "--B", dest="b", type=int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--reference", type=float, default=None)
    p.add_argument("--cluster-resample", action="store_true")
    p.add_argument("--threads", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_bootstrap)

    p = sub.add_parser("simulate", help="generate a synthetic contaminated panel")
    p.add_argument("--config", required=True, help="DGP config JSON")
    p.add_argument("--truth", default=None, help="also write hidden truth CSV")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("report", help="render fit JSON as an aligned text table")
    p.add_argument("--in", dest="infile", required=True, help="fit or detection JSON")
    p.add_argument("--bootstrap", default=None, help="bootstrap JSON for a histogram")
    p.add_argument("--bins", type=int, default=50)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except InputNotFoundError as exc:
        print(json.dumps({"error": exc.code}), file=sys.stderr)
        return 2
    except FileNotFoundError:
        print(json.dumps({"error": "InputNotFound"}), file=sys.stderr)
        return 2
    except LapdetectError as exc:
        print(json.dumps({"error": exc.code}), file=sys.stderr)
        return 1
    except (ValueError, KeyError) as exc:
        print(json.dumps({"error": type(exc).__name__}), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
