"""Versioned checkpoint archives: named parameter tensors plus network
configuration, stored through torch.save."""
from __future__ import annotations

from pathlib import Path

import torch

SCHEMA_VERSION = 1


def save_checkpoint(path: str | Path, payload: dict) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = dict(payload)
    payload["schema"] = SCHEMA_VERSION
    torch.save(payload, path)
    return path


def load_checkpoint(path: str | Path) -> dict:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    payload = torch.load(path, map_location="cpu", weights_only=False)
    schema = payload.get("schema")
    if schema != SCHEMA_VERSION:
        raise ValueError(
            f"unsupported checkpoint schema {schema!r} (expected {SCHEMA_VERSION})"
        )
    return payload
