"""Canonical JSON form shared by every wire format and content hash.

Canonical form: object keys sorted by UTF-8 byte order, no insignificant
whitespace, floats in shortest round-trip form, NaN and infinities rejected.
Two equal JSON values always canonicalize to identical bytes, which is what
makes byte-exact round-trip tests and content-hash pinning possible.
"""

from __future__ import annotations

import hashlib
import json
from typing import Any


def canonical_json(value: Any) -> str:
    """Render a JSON value as canonical text.

    Sorting str keys by code point is identical to sorting their UTF-8
    encodings bytewise, so ``sort_keys`` gives byte-order key sorting.
    """
    return json.dumps(
        value,
        sort_keys=True,
        separators=(",", ":"),
        ensure_ascii=False,
        allow_nan=False,
    )


def canonical_bytes(value: Any) -> bytes:
    """Canonical text encoded as UTF-8."""
    return canonical_json(value).encode("utf-8")


def content_digest(value: Any) -> str:
    """Lowercase hex SHA-256 of the canonical byte form of ``value``."""
    return hashlib.sha256(canonical_bytes(value)).hexdigest()
