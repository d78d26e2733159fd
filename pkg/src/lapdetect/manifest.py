"""Provenance sidecars for CLI runs.

Every subcommand writes ``<output>.manifest.json`` recording the
subcommand, the sha256 of each input file, the fully resolved options,
the seed where one applies, the tool version, and a wall-clock
timestamp. Data outputs stay timestamp-free so reruns are byte
identical; the manifest is where the clock lives.
"""

from __future__ import annotations

import dataclasses
import datetime
import hashlib
import json
import os

from . import __version__


@dataclasses.dataclass(frozen=True)
class RunManifest:
    subcommand: str
    inputs: dict[str, str]
    config: dict
    seed: int | None
    version: str
    created_utc: str

    def to_json(self) -> dict:
        return dataclasses.asdict(self)


def sha256_file(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def build_manifest(
    subcommand: str,
    input_paths,
    config: dict,
    seed: int | None = None,
) -> RunManifest:
    inputs = {str(p): sha256_file(p) for p in input_paths if p is not None}
    return RunManifest(
        subcommand=subcommand,
        inputs=inputs,
        config=config,
        seed=seed,
        version=__version__,
        created_utc=datetime.datetime.now(datetime.timezone.utc).isoformat(),
    )


def manifest_path(output_path) -> str:
    return f"{output_path}.manifest.json"


def write_manifest(manifest: RunManifest, output_path) -> str:
    path = manifest_path(output_path)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest.to_json(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def verify_manifest(path) -> dict[str, str]:
    """Re-hash the recorded inputs: each maps to ok, changed, or missing."""
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    status = {}
    for input_path, recorded in doc.get("inputs", {}).items():
        if not os.path.exists(input_path):
            status[input_path] = "missing"
        elif sha256_file(input_path) == recorded:
            status[input_path] = "ok"
        else:
            status[input_path] = "changed"
    return status
