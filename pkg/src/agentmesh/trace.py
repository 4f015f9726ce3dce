"""Cross-protocol tracing: spans over agent tasks and tool calls.

Spans use logical timestamps (a per-trace counter), so identical runs
produce identical traces regardless of transport or wall clock. Parentage
crosses the protocol boundary: a tool-call span opened while serving an
agent task is a child of that task's span, which is what lets the failure
classifier name the layer a fault originated in.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass
from typing import Any, Iterable, Sequence

from .canonical import canonical_json

SPAN_KINDS = ("a2a-task", "a2a-message", "mcp-call", "mcp-resource", "policy-check", "mapping")

CLASS_A2A = "a2a-protocol-error"
CLASS_MAPPING = "mapping-error"
CLASS_TOOL = "mcp-tool-error"
CLASS_POLICY = "policy-denied"
CLASS_NONE = "none"

_KIND_CLASS = {
    "a2a-task": CLASS_A2A,
    "a2a-message": CLASS_A2A,
    "mcp-call": CLASS_TOOL,
    "mcp-resource": CLASS_TOOL,
    "policy-check": CLASS_POLICY,
    "mapping": CLASS_MAPPING,
}


@dataclass(frozen=True)
class SpanStatus:
    ok: bool
    code: str = ""
    detail: str = ""

    @staticmethod
    def error(code: str, detail: str = "") -> "SpanStatus":
        return SpanStatus(ok=False, code=code, detail=detail)


OK = SpanStatus(ok=True)


@dataclass(frozen=True)
class TraceSpan:
    span_id: str
    parent_id: str | None
    kind: str
    subject: str
    start: int
    end: int
    status: SpanStatus


class UnknownParentError(Exception):
    def __init__(self, parent_id: str) -> None:
        super().__init__(f"parent span {parent_id!r} is not in this trace")
        self.parent_id = parent_id


class DoubleCloseError(Exception):
    def __init__(self, span_id: str) -> None:
        super().__init__(f"span {span_id!r} already sealed")
        self.span_id = span_id


class MultipleRootsError(Exception):
    pass


class OrphanSpanError(Exception):
    def __init__(self, span_id: str) -> None:
        super().__init__(f"span {span_id!r} references a parent outside the trace")
        self.span_id = span_id


class CycleDetectedError(Exception):
    pass


class MalformedLineError(Exception):
    def __init__(self, line_no: int, reason: str) -> None:
        super().__init__(f"line {line_no}: {reason}")
        self.line_no = line_no


class SpanHandle:
    """An open span. Sealing it produces the immutable TraceSpan."""

    __slots__ = ("span_id", "parent_id", "kind", "subject", "start", "closed")

    def __init__(self, span_id: str, parent_id: str | None, kind: str, subject: str, start: int) -> None:
        self.span_id = span_id
        self.parent_id = parent_id
        self.kind = kind
        self.subject = subject
        self.start = start
        self.closed = False


class TraceCollector:
    """Accumulates spans for one trace.

    Thread-safe: timestamp assignment and sealing are serialized, so spans
    from concurrent connections still get a total per-trace order.
    """

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self._clock = 0
        self._seq = 0
        self._known: set[str] = set()
        self._sealed: list[TraceSpan] = []
        self._open: set[str] = set()

    def tick(self) -> int:
        with self._lock:
            self._clock += 1
            return self._clock

    def open_span(self, kind: str, subject: str, parent_id: str | None = None) -> SpanHandle:
        if kind not in SPAN_KINDS:
            raise ValueError(f"unknown span kind {kind!r}")
        with self._lock:
            if parent_id is not None and parent_id not in self._known:
                raise UnknownParentError(parent_id)
            self._seq += 1
            self._clock += 1
            span_id = f"sp-{self._seq:06d}"
            self._known.add(span_id)
            self._open.add(span_id)
            return SpanHandle(span_id, parent_id, kind, subject, self._clock)

    def close_span(self, handle: SpanHandle, status: SpanStatus = OK) -> TraceSpan:
        with self._lock:
            if handle.closed:
                raise DoubleCloseError(handle.span_id)
            handle.closed = True
            self._open.discard(handle.span_id)
            self._clock += 1
            span = TraceSpan(
                span_id=handle.span_id,
                parent_id=handle.parent_id,
                kind=handle.kind,
                subject=handle.subject,
                start=handle.start,
                end=self._clock,
                status=status,
            )
            self._sealed.append(span)
            return span

    def span(self, kind: str, subject: str, parent_id: str | None = None):
        """Context manager: seals ok on exit, error on exception."""
        return _SpanContext(self, kind, subject, parent_id)

    def spans(self) -> tuple[TraceSpan, ...]:
        """Sealed spans in seal order."""
        with self._lock:
            return tuple(self._sealed)

    @property
    def open_count(self) -> int:
        return len(self._open)


class _SpanContext:
    def __init__(self, collector: TraceCollector, kind: str, subject: str, parent_id: str | None) -> None:
        self._collector = collector
        self._args = (kind, subject, parent_id)
        self.handle: SpanHandle | None = None
        self.status: SpanStatus | None = None

    def __enter__(self) -> SpanHandle:
        self.handle = self._collector.open_span(*self._args)
        return self.handle

    def set_status(self, status: SpanStatus) -> None:
        self.status = status

    def __exit__(self, exc_type, exc, tb) -> bool:
        assert self.handle is not None
        if not self.handle.closed:
            if exc is not None:
                self._collector.close_span(self.handle, SpanStatus.error(type(exc).__name__, str(exc)))
            else:
                self._collector.close_span(self.handle, self.status or OK)
        return False


# ---------------------------------------------------------------------------
# Trees and classification
# ---------------------------------------------------------------------------


@dataclass
class TraceNode:
    span: TraceSpan
    children: list["TraceNode"]


def build_trace_tree(spans: Sequence[TraceSpan]) -> TraceNode:
    """Arrange one trace's spans into the single-rooted tree.

    Children are ordered by start timestamp. Dangling parents are orphans;
    nodes unreachable from the root imply a parent cycle.
    """
    if not spans:
        raise ValueError("cannot build a tree from zero spans")
    by_id = {s.span_id: s for s in spans}
    roots = [s for s in spans if s.parent_id is None]
    for span in spans:
        if span.parent_id is not None and span.parent_id not in by_id:
            raise OrphanSpanError(span.span_id)
    if len(roots) > 1:
        raise MultipleRootsError(f"{len(roots)} roots in one trace")
    if not roots:
        raise CycleDetectedError("no root span; parent references form a cycle")

    children: dict[str, list[TraceSpan]] = {s.span_id: [] for s in spans}
    for span in spans:
        if span.parent_id is not None:
            children[span.parent_id].append(span)

    def build(span: TraceSpan) -> TraceNode:
        kids = sorted(children[span.span_id], key=lambda s: s.start)
        return TraceNode(span=span, children=[build(k) for k in kids])

    root = build(roots[0])
    if _count(root) != len(spans):
        raise CycleDetectedError("spans unreachable from the root form a cycle")
    return root


def _count(node: TraceNode) -> int:
    return 1 + sum(_count(c) for c in node.children)


def iter_nodes(node: TraceNode, depth: int = 1):
    yield node, depth
    for child in node.children:
        yield from iter_nodes(child, depth + 1)


def classify_failure(tree: TraceNode) -> str:
    """Name the layer a failure originated in.

    Rule: among error spans, the deepest wins; ties break to the earliest
    start. Deeper errors sit closer to the causal origin in a call tree, so
    an agent task that failed because a tool call failed classifies as a
    tool error, not an agent error.
    """
    best: tuple[int, int] | None = None
    best_kind = ""
    for node, depth in iter_nodes(tree):
        if node.span.status.ok:
            continue
        key = (-depth, node.span.start)
        if best is None or key < best:
            best = key
            best_kind = node.span.kind
    if best is None:
        return CLASS_NONE
    return _KIND_CLASS[best_kind]


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------


def span_to_json(span: TraceSpan) -> dict[str, Any]:
    status: dict[str, Any] = {"ok": True} if span.status.ok else {
        "ok": False,
        "code": span.status.code,
        "detail": span.status.detail,
    }
    out: dict[str, Any] = {
        "spanId": span.span_id,
        "kind": span.kind,
        "subject": span.subject,
        "start": span.start,
        "end": span.end,
        "status": status,
    }
    if span.parent_id is not None:
        out["parentId"] = span.parent_id
    return out


def span_from_json(value: Any) -> TraceSpan:
    status = value["status"]
    return TraceSpan(
        span_id=value["spanId"],
        parent_id=value.get("parentId"),
        kind=value["kind"],
        subject=value["subject"],
        start=value["start"],
        end=value["end"],
        status=OK if status["ok"] else SpanStatus.error(status["code"], status["detail"]),
    )


def serialize_trace(spans: Iterable[TraceSpan]) -> str:
    """One canonical JSON span per line, in seal order."""
    return "".join(canonical_json(span_to_json(s)) + "\n" for s in spans)


def parse_trace(text: str) -> list[TraceSpan]:
    import json

    spans: list[TraceSpan] = []
    for line_no, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            spans.append(span_from_json(json.loads(line)))
        except (ValueError, KeyError, TypeError) as exc:
            raise MalformedLineError(line_no, str(exc)) from exc
    return spans


def render_trace_tree(tree: TraceNode) -> str:
    """Indented text view with status markers, one line per span."""
    lines: list[str] = []

    def emit(node: TraceNode, indent: int) -> None:
        span = node.span
        marker = "ok" if span.status.ok else f"error: {span.status.code}"
        lines.append(f"{'  ' * indent}{span.kind} {span.subject} [{marker}] ({span.start}..{span.end})")
        for child in node.children:
            emit(child, indent + 1)

    emit(tree, 0)
    return "\n".join(lines)
