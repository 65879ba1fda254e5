"""Versioned JSON checkpoints written atomically."""
from __future__ import annotations

import json
import os
import tempfile
from pathlib import Path

from auxilearn.errors import ConfigurationError

FORMAT = "auxilearn-checkpoint"
VERSION = 1


def atomic_write_text(path: str | os.PathLike, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_checkpoint(path, state: dict) -> None:
    payload = {"format": FORMAT, "version": VERSION, **state}
    atomic_write_text(path, json.dumps(payload, sort_keys=True))


def load_checkpoint(path) -> dict:
    with open(path) as fh:
        payload = json.load(fh)
    if payload.get("format") != FORMAT:
        raise ConfigurationError(f"{path} is not an auxilearn checkpoint")
    if payload.get("version") != VERSION:
        raise ConfigurationError(f"unsupported checkpoint version {payload.get('version')}")
    return payload
