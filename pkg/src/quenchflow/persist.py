"""Canonical JSON records, content hashes, and output manifests.

Every persisted document carries a format version and the hash of the run
configuration that produced it; rerunning with the same configuration and
seed must reproduce each file byte for byte.  Wall-clock timings therefore
never go into hashed outputs (they live in a sidecar log).
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def canonical_hash(obj) -> str:
    return hashlib.sha256(canonical_json(obj).encode()).hexdigest()


def file_sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_json(path: Path, payload: dict) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        json.dump(payload, f, sort_keys=True, indent=1)
        f.write("\n")


def read_json(path: Path) -> dict:
    with open(path) as f:
        return json.load(f)


def write_csv(path: Path, header: list[str], rows) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        f.write(",".join(header) + "\n")
        for row in rows:
            f.write(",".join(_csv_cell(v) for v in row) + "\n")


def _csv_cell(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_manifest(outdir: Path, config_hash: str, seed) -> Path:
    """Hash every output file in a directory into manifest.json."""
    outdir = Path(outdir)
    files = sorted(
        p for p in outdir.rglob("*")
        if p.is_file() and p.name not in ("manifest.json", "run_log.json")
    )
    manifest = {
        "format_version": 1,
        "config_hash": config_hash,
        "seed": seed,
        "files": {str(p.relative_to(outdir)): file_sha256(p) for p in files},
    }
    write_json(outdir / "manifest.json", manifest)
    return outdir / "manifest.json"


def verify_manifest(outdir: Path) -> list[str]:
    """Return a list of problems (empty when everything checks out)."""
    outdir = Path(outdir)
    problems = []
    mpath = outdir / "manifest.json"
    if not mpath.exists():
        return [f"missing manifest: {mpath}"]
    manifest = read_json(mpath)
    for rel, digest in manifest.get("files", {}).items():
        p = outdir / rel
        if not p.exists():
            problems.append(f"missing file: {rel}")
        elif file_sha256(p) != digest:
            problems.append(f"hash mismatch: {rel}")
    return problems
