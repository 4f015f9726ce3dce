"""MCP transports and method dispatch.

Framing for the byte transports is newline-delimited canonical JSON: one
envelope per line, which canonical form guarantees is newline-free. The
server itself is transport-agnostic; byte framing and HTTP mapping sit on
top of ``handle_envelope``.

Notification method names on the wire are exactly
``notifications/tools/list_changed`` and ``notifications/resources/updated``.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Mapping, Sequence

from .. import jsonrpc
from ..jsonrpc import (
    Envelope,
    EnvelopeError,
    RpcErrorResponse,
    RpcNotification,
    RpcRequest,
    RpcResult,
    encode_envelope,
    error_response,
    parse_envelope,
)
from .model import (
    DuplicateNameError,
    OutsideRootsError,
    PromptDef,
    ResourceContent,
    ResourceDef,
    ResourceNotFoundError,
    Root,
    SchemaValidationError,
    ToolDef,
    diff_capability_lists,
    prompt_def_to_json,
    render_prompt,
    resolve_resource,
    resource_content_to_json,
    resource_def_to_json,
    tool_def_to_json,
    validate_tool_arguments,
    MissingArgumentError,
    UnknownArgumentError,
)

NOTIFY_TOOLS_CHANGED = "notifications/tools/list_changed"
NOTIFY_RESOURCE_UPDATED = "notifications/resources/updated"

ToolHandler = Callable[[Mapping[str, Any]], Any]


class ToolExecutionError(Exception):
    """Raised by a tool handler to signal a tool-level failure."""


def slow_handler(fn: ToolHandler) -> ToolHandler:
    """Mark a handler as slow: over HTTP its response is deferred to the
    notification channel instead of the POST body."""
    fn.slow = True  # type: ignore[attr-defined]
    return fn


# ---------------------------------------------------------------------------
# stdio framing
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MalformedLine:
    offset: int  # byte offset of the line start within the fed stream
    reason: str


def frame_stdio_message(envelope: Envelope) -> bytes:
    """One canonical-JSON line terminated by a newline."""
    return encode_envelope(envelope).encode("utf-8") + b"\n"


class StdioDecoder:
    """Incremental newline-delimited envelope decoder.

    Malformed lines are reported, not fatal: the stream keeps going, which
    matches how a long-lived local pipe has to behave.
    """

    def __init__(self) -> None:
        self._buffer = b""
        self._consumed = 0

    def feed(self, data: bytes) -> tuple[list[Envelope], list[MalformedLine]]:
        self._buffer += data
        envelopes: list[Envelope] = []
        errors: list[MalformedLine] = []
        while True:
            idx = self._buffer.find(b"\n")
            if idx < 0:
                break
            line = self._buffer[:idx]
            self._buffer = self._buffer[idx + 1 :]
            offset = self._consumed
            self._consumed += idx + 1
            if not line.strip():
                continue
            try:
                envelopes.append(parse_envelope(line))
            except EnvelopeError as exc:
                errors.append(MalformedLine(offset=offset, reason=str(exc)))
        return envelopes, errors

    @property
    def remainder(self) -> bytes:
        return self._buffer


def parse_stdio_stream(data: bytes) -> tuple[list[Envelope], bytes, list[MalformedLine]]:
    """Split a byte stream into envelopes, the incomplete tail, and
    per-line errors."""
    decoder = StdioDecoder()
    envelopes, errors = decoder.feed(data)
    return envelopes, decoder.remainder, errors


# ---------------------------------------------------------------------------
# Server
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Subscription:
    uri: str
    subscriber_id: str


@dataclass
class McpServerDescriptor:
    """Static description of a server: identity plus advertised primitives."""

    server_name: str
    tools: tuple[ToolDef, ...] = ()
    resources: tuple[ResourceDef, ...] = ()
    prompts: tuple[PromptDef, ...] = ()


class McpSession:
    """One client connection: roots, subscriptions, outbound queue."""

    def __init__(self, session_id: str, roots: Sequence[Root] = ()) -> None:
        self.session_id = session_id
        self.roots = tuple(roots)
        self._queue: list[Envelope] = []
        self._lock = threading.Lock()
        self._ready = threading.Condition(self._lock)

    def push(self, envelope: Envelope) -> None:
        with self._ready:
            self._queue.append(envelope)
            self._ready.notify_all()

    def drain(self) -> list[Envelope]:
        with self._ready:
            items = self._queue
            self._queue = []
            return items

    def wait_for_item(self, timeout: float | None) -> bool:
        with self._ready:
            if self._queue:
                return True
            return self._ready.wait(timeout)


class McpServer:
    """Dispatches tools/resources/prompts methods over a descriptor.

    Handlers are deterministic in-process functions keyed by tool name.
    Argument validation always precedes handler execution, and
    ``invocation_counts`` counts only attempts that passed validation, so
    tests can prove the validation gate holds.
    """

    def __init__(
        self,
        descriptor: McpServerDescriptor,
        handlers: Mapping[str, ToolHandler] | None = None,
        resource_contents: Mapping[str, ResourceContent] | None = None,
        fault_hook=None,
    ) -> None:
        names = [t.name for t in descriptor.tools]
        if len(names) != len(set(names)):
            raise DuplicateNameError(next(n for n in names if names.count(n) > 1))
        self.descriptor = descriptor
        self._handlers = dict(handlers or {})
        self._contents: dict[str, ResourceContent] = dict(resource_contents or {})
        self._subscriptions: dict[tuple[str, str], Subscription] = {}
        self._sessions: dict[str, McpSession] = {}
        self._lock = threading.Lock()
        self.fault_hook = fault_hook
        self.invocation_counts: dict[str, int] = {}
        self.schema_reject_count = 0

    @property
    def server_name(self) -> str:
        return self.descriptor.server_name

    # -- session management ------------------------------------------------

    def open_session(self, session_id: str, roots: Sequence[Root] = ()) -> McpSession:
        session = McpSession(session_id, roots)
        with self._lock:
            self._sessions[session_id] = session
        return session

    def close_session(self, session_id: str) -> None:
        with self._lock:
            self._sessions.pop(session_id, None)
            for key in [k for k in self._subscriptions if k[1] == session_id]:
                del self._subscriptions[key]

    # -- state mutation with notifications ----------------------------------

    def update_resource(self, uri: str, content: ResourceContent) -> None:
        """Replace a resource body and notify every subscriber of that uri."""
        with self._lock:
            self._contents[uri] = content
            targets = [
                self._sessions[sid]
                for (sub_uri, sid) in self._subscriptions
                if sub_uri == uri and sid in self._sessions
            ]
        for session in targets:
            session.push(RpcNotification(method=NOTIFY_RESOURCE_UPDATED, params={"uri": uri}))

    def replace_tools(self, tools: Sequence[ToolDef]) -> None:
        """Swap the advertised tool list; a non-empty diff notifies all
        sessions with tools/list_changed."""
        diff = diff_capability_lists(self.descriptor.tools, tools)
        self.descriptor = McpServerDescriptor(
            server_name=self.descriptor.server_name,
            tools=tuple(tools),
            resources=self.descriptor.resources,
            prompts=self.descriptor.prompts,
        )
        if diff.empty:
            return
        with self._lock:
            sessions = list(self._sessions.values())
        for session in sessions:
            session.push(RpcNotification(method=NOTIFY_TOOLS_CHANGED, params={}))

    def tool(self, name: str) -> ToolDef | None:
        for tool in self.descriptor.tools:
            if tool.name == name:
                return tool
        return None

    def resource_content(self, uri: str) -> ResourceContent | None:
        return self._contents.get(uri)

    # -- dispatch ------------------------------------------------------------

    def handle_envelope(self, envelope: Envelope, session: McpSession) -> tuple[Envelope | None, bool]:
        """Dispatch one request; returns (response, deferred).

        Notifications from the client produce no response. ``deferred`` is
        only meaningful for HTTP, where a slow tool's response travels on
        the notification channel.
        """
        if isinstance(envelope, RpcNotification):
            return None, False
        if not isinstance(envelope, RpcRequest):
            return error_response(None, jsonrpc.INVALID_REQUEST, "expected a request"), False
        try:
            result, deferred = self._dispatch(envelope, session)
        except _DispatchError as exc:
            return error_response(envelope.id, exc.code, exc.message, exc.data), False
        return RpcResult(id=envelope.id, result=result), deferred

    def handle_bytes(self, data: bytes, session: McpSession, decoder: StdioDecoder | None = None) -> bytes:
        """Byte-framed dispatch: parse lines, answer each, then flush any
        notifications queued for the session.

        Malformed lines get a parse-error response without aborting the
        stream. A caller holding a long-lived pipe passes its own decoder
        so split lines across reads reassemble.
        """
        decoder = decoder or StdioDecoder()
        envelopes, errors = decoder.feed(data)
        out = bytearray()
        for err in errors:
            out += frame_stdio_message(error_response(None, jsonrpc.PARSE_ERROR, err.reason))
        for env in envelopes:
            response, _ = self.handle_envelope(env, session)
            if response is not None:
                out += frame_stdio_message(response)
        for pending in session.drain():
            out += frame_stdio_message(pending)
        return bytes(out)

    def _dispatch(self, request: RpcRequest, session: McpSession) -> tuple[Any, bool]:
        method = request.method
        params = request.params if isinstance(request.params, dict) else {}
        if method == "tools/list":
            return {"tools": [tool_def_to_json(t) for t in self.descriptor.tools]}, False
        if method == "tools/call":
            return self._call_tool(params)
        if method == "resources/list":
            return {"resources": [resource_def_to_json(r) for r in self.descriptor.resources]}, False
        if method == "resources/read":
            return self._read_resource(params, session), False
        if method == "resources/subscribe":
            uri = params.get("uri")
            if not isinstance(uri, str):
                raise _DispatchError(jsonrpc.INVALID_PARAMS, "resources/subscribe needs a string uri")
            self._subscriptions[(uri, session.session_id)] = Subscription(uri, session.session_id)
            return {}, False
        if method == "prompts/list":
            return {"prompts": [prompt_def_to_json(p) for p in self.descriptor.prompts]}, False
        if method == "prompts/get":
            return self._get_prompt(params), False
        raise _DispatchError(jsonrpc.METHOD_NOT_FOUND, f"unknown method {method!r}")

    def _call_tool(self, params: Mapping[str, Any]) -> tuple[Any, bool]:
        name = params.get("name")
        if not isinstance(name, str):
            raise _DispatchError(jsonrpc.INVALID_PARAMS, "tools/call needs a string tool name")
        tool = self.tool(name)
        if tool is None:
            raise _DispatchError(jsonrpc.INVALID_PARAMS, f"no tool named {name!r}")
        args = params.get("arguments", {})
        try:
            validate_tool_arguments(tool, args)
        except SchemaValidationError as exc:
            self.schema_reject_count += 1
            raise _DispatchError(
                jsonrpc.INVALID_PARAMS,
                f"arguments rejected for {name!r}",
                data={"issues": [i.describe() for i in exc.issues]},
            ) from exc
        handler = self._handlers.get(name)
        if handler is None:
            raise _DispatchError(jsonrpc.TOOL_EXECUTION_FAILED, f"no handler bound for {name!r}")
        self.invocation_counts[name] = self.invocation_counts.get(name, 0) + 1
        injected = self.fault_hook(f"mcp-tool:{name}") if self.fault_hook else None
        if injected is not None:
            raise _DispatchError(jsonrpc.TOOL_EXECUTION_FAILED, "injected-fault")
        try:
            output = handler(args)
        except ToolExecutionError as exc:
            raise _DispatchError(jsonrpc.TOOL_EXECUTION_FAILED, str(exc)) from exc
        except Exception as exc:  # handler bug: still a tool failure on the wire
            raise _DispatchError(jsonrpc.TOOL_EXECUTION_FAILED, f"{type(exc).__name__}: {exc}") from exc
        return {"output": output}, bool(getattr(handler, "slow", False))

    def _read_resource(self, params: Mapping[str, Any], session: McpSession) -> dict[str, Any]:
        uri = params.get("uri")
        if not isinstance(uri, str):
            raise _DispatchError(jsonrpc.INVALID_PARAMS, "resources/read needs a string uri")
        try:
            content = resolve_resource(uri, session.roots, self._contents)
        except OutsideRootsError as exc:
            raise _DispatchError(jsonrpc.RESOURCE_NOT_FOUND, str(exc), data={"reason": "outside-roots"}) from exc
        except ResourceNotFoundError as exc:
            raise _DispatchError(jsonrpc.RESOURCE_NOT_FOUND, str(exc), data={"reason": "not-found"}) from exc
        found = next((r for r in self.descriptor.resources if r.uri == uri), None)
        out: dict[str, Any] = {"uri": uri, "mimeType": found.mime_type if found else "text/plain"}
        out.update(resource_content_to_json(content))
        return out

    def _get_prompt(self, params: Mapping[str, Any]) -> dict[str, Any]:
        name = params.get("name")
        prompt = next((p for p in self.descriptor.prompts if p.name == name), None)
        if prompt is None:
            raise _DispatchError(jsonrpc.INVALID_PARAMS, f"no prompt named {name!r}")
        args = params.get("arguments", {})
        if not isinstance(args, dict):
            raise _DispatchError(jsonrpc.INVALID_PARAMS, "prompt arguments must be an object")
        try:
            messages = render_prompt(prompt, args)
        except (MissingArgumentError, UnknownArgumentError) as exc:
            raise _DispatchError(jsonrpc.INVALID_PARAMS, str(exc)) from exc
        return {"messages": [{"role": m.role, "text": m.text} for m in messages]}


class _DispatchError(Exception):
    def __init__(self, code: int, message: str, data: Any = None) -> None:
        super().__init__(message)
        self.code = code
        self.message = message
        self.data = data


# ---------------------------------------------------------------------------
# Descriptor serialization (external file format)
# ---------------------------------------------------------------------------


def descriptor_to_json(
    descriptor: McpServerDescriptor,
    contents: Mapping[str, ResourceContent] | None = None,
) -> dict[str, Any]:
    resources = []
    for res in descriptor.resources:
        entry = resource_def_to_json(res)
        if contents and res.uri in contents:
            entry["content"] = resource_content_to_json(contents[res.uri])
        resources.append(entry)
    return {
        "serverName": descriptor.server_name,
        "tools": [tool_def_to_json(t) for t in descriptor.tools],
        "resources": resources,
        "prompts": [prompt_def_to_json(p) for p in descriptor.prompts],
    }


def descriptor_from_json(value: Mapping[str, Any]) -> tuple[McpServerDescriptor, dict[str, ResourceContent]]:
    from .model import prompt_def_from_json, resource_content_from_json, tool_def_from_json

    tools = tuple(tool_def_from_json(t) for t in value.get("tools", []))
    resources = []
    contents: dict[str, ResourceContent] = {}
    for entry in value.get("resources", []):
        res = ResourceDef(
            uri=entry["uri"],
            name=entry.get("name", ""),
            description=entry.get("description", ""),
            mime_type=entry.get("mimeType", "text/plain"),
        )
        resources.append(res)
        if "content" in entry:
            contents[res.uri] = resource_content_from_json(entry["content"])
    prompts = tuple(prompt_def_from_json(p) for p in value.get("prompts", []))
    descriptor = McpServerDescriptor(
        server_name=value["serverName"],
        tools=tools,
        resources=tuple(resources),
        prompts=prompts,
    )
    return descriptor, contents
