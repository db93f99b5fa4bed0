"""Deterministic JSON writing and file fingerprints for the pipeline."""

from __future__ import annotations

import hashlib
import json
from pathlib import Path


def write_json(path: str | Path, obj, compact: bool = False) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        if compact:
            json.dump(obj, fh, sort_keys=True, separators=(",", ":"))
        else:
            json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_json(path: str | Path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def sha256_file(path: str | Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def sha256_obj(obj) -> str:
    canonical = json.dumps(obj, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()
