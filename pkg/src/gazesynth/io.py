"""Atomic file writes, canonical JSON and checksummed payloads."""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
from pathlib import Path


class IntegrityError(ValueError):
    """A checksummed file does not match its recorded digest."""


def atomic_write_text(path, text):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def canonical_json(obj):
    # json emits repr() for floats, which round-trips float64 exactly
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def digest(obj):
    return hashlib.sha256(canonical_json(obj).encode("utf-8")).hexdigest()


def write_json(path, obj):
    atomic_write_text(path, json.dumps(obj, sort_keys=True, indent=2, allow_nan=False) + "\n")


def write_checksummed(path, payload):
    write_json(path, {"payload": payload, "sha256": digest(payload)})


def read_checksummed(path):
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        payload, recorded = doc["payload"], doc["sha256"]
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise IntegrityError(f"{path}: malformed checksummed file ({exc})") from None
    if digest(payload) != recorded:
        raise IntegrityError(f"{path}: checksum mismatch")
    return payload
