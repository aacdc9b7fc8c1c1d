"""Adapter run manifest: which backends ran, with what settings, producing
which files (sha256-checksummed)."""
from __future__ import annotations

import hashlib
import json
from pathlib import Path


def sha256_file(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def write_manifest(
    path,
    episode_dir,
    backends: dict,
    settings: dict,
    outputs: list,
) -> dict:
    """Write the manifest JSON next to the outputs; returns the payload."""
    episode_dir = Path(episode_dir)
    payload = {
        "episode": str(episode_dir),
        "backends": backends,
        "settings": settings,
        "outputs": [str(Path(p)) for p in outputs],
        "checksums": {
            str(Path(p).relative_to(episode_dir)): sha256_file(p) for p in outputs
        },
    }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f, indent=2)
        f.write("\n")
    return payload
