"""Server-Sent Events framing.

The emitter writes exactly one ``event:`` line, one ``data:`` line holding
single-line canonical JSON, and a blank line. The parser is incremental so
it can consume a stream in arbitrary chunk boundaries.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any

from .canonical import canonical_json


class InvalidEventNameError(ValueError):
    """Event name would break line framing."""


@dataclass(frozen=True)
class SseEvent:
    name: str
    data: str

    def json(self) -> Any:
        import json

        return json.loads(self.data)


def encode_sse_event(name: str, payload: Any) -> bytes:
    """Encode one event. ``payload`` is a JSON value; canonical form keeps
    the data line free of raw newlines."""
    if "\n" in name or "\r" in name:
        raise InvalidEventNameError(f"event name contains a line break: {name!r}")
    data = canonical_json(payload)
    return f"event: {name}\ndata: {data}\n\n".encode("utf-8")


class SseParser:
    """Incremental text/event-stream parser."""

    def __init__(self) -> None:
        self._buffer = b""
        self._name: str | None = None
        self._data: list[str] = []

    def feed(self, chunk: bytes) -> list[SseEvent]:
        """Consume a chunk, return every event completed by it."""
        self._buffer += chunk
        events: list[SseEvent] = []
        while True:
            idx = self._buffer.find(b"\n")
            if idx < 0:
                break
            line = self._buffer[:idx].decode("utf-8")
            self._buffer = self._buffer[idx + 1 :]
            if line.endswith("\r"):
                line = line[:-1]
            if line == "":
                if self._name is not None or self._data:
                    events.append(SseEvent(name=self._name or "", data="\n".join(self._data)))
                self._name = None
                self._data = []
            elif line.startswith(":"):
                continue  # comment / heartbeat
            elif line.startswith("event:"):
                self._name = line[6:].removeprefix(" ")
            elif line.startswith("data:"):
                self._data.append(line[5:].removeprefix(" "))
            # other field names (id:, retry:) are ignored

        return events

    @property
    def pending(self) -> bool:
        return bool(self._buffer or self._data or self._name is not None)


def parse_sse_bytes(data: bytes) -> list[SseEvent]:
    """Parse a complete byte stream into events."""
    parser = SseParser()
    return parser.feed(data)
