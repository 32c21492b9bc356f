"""Shared helpers: name normalization, canonical JSON, fingerprints."""

from __future__ import annotations

import hashlib
import json
import re

_WS = re.compile(r"\s+")


def normalize_name(name: str) -> str:
    """Canonical medicine key: trim, collapse internal whitespace, uppercase."""
    return _WS.sub(" ", name.strip()).upper()


def canonical_dumps(obj) -> str:
    """Deterministic JSON encoding (sorted keys, no whitespace)."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def fingerprint(obj) -> str:
    """sha256 hex digest of the canonical JSON encoding of ``obj``."""
    return hashlib.sha256(canonical_dumps(obj).encode("utf-8")).hexdigest()
