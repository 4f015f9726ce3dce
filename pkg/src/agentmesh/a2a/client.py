"""A2A client side: send, get, cancel, subscribe over a pluggable transport.

A transport moves bytes; the client owns envelope ids, auth presentation,
task-id bookkeeping, and SSE decoding. The in-process transport lives with
the harness; the HTTP transport here talks to a real socket.
"""

from __future__ import annotations

from typing import Any, Iterator, Mapping, Protocol

from .. import jsonrpc
from ..jsonrpc import RpcErrorResponse, RpcRequest, RpcResult, encode_envelope, parse_envelope
from ..sse import SseParser
from .model import AgentCard, Message, PushNotificationConfig, message_to_json, parse_agent_card, push_config_to_json
from .wire import (
    METHOD_CANCEL,
    METHOD_GET,
    METHOD_PUSH_GET,
    METHOD_PUSH_SET,
    METHOD_SEND,
    METHOD_SEND_SUBSCRIBE,
    AuthContext,
    TaskStatusUpdateEvent,
    UpdateEvent,
    update_event_from_sse,
)


class TransportError(Exception):
    pass


class A2ARpcError(Exception):
    def __init__(self, code: int, message: str, data: Any = None) -> None:
        super().__init__(f"rpc error {code}: {message}")
        self.code = code
        self.message = message
        self.data = data


class UnauthorizedError(A2ARpcError):
    pass


class StreamClosedEarlyError(Exception):
    """The event stream ended without a final=true status event."""


class A2ATransport(Protocol):
    def fetch_card(self) -> bytes: ...

    def request(self, body: bytes, auth: AuthContext) -> bytes: ...

    def subscribe(self, body: bytes, auth: AuthContext) -> Iterator[bytes]: ...


class HttpA2ATransport:
    """JSON-RPC over HTTP POST; subscriptions read an SSE response body."""

    def __init__(self, host: str, port: int, timeout: float = 30.0) -> None:
        self._host = host
        self._port = port
        self._timeout = timeout

    def _headers(self, auth: AuthContext) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        if auth.scheme == "bearer" and auth.token:
            headers["Authorization"] = f"Bearer {auth.token}"
        return headers

    def fetch_card(self) -> bytes:
        import http.client

        conn = http.client.HTTPConnection(self._host, self._port, timeout=self._timeout)
        try:
            conn.request("GET", "/.well-known/agent.json")
            resp = conn.getresponse()
            body = resp.read()
            if resp.status != 200:
                raise TransportError(f"card fetch failed with status {resp.status}")
            return body
        except (ConnectionError, OSError) as exc:
            raise TransportError(str(exc)) from exc
        finally:
            conn.close()

    def request(self, body: bytes, auth: AuthContext) -> bytes:
        import http.client

        conn = http.client.HTTPConnection(self._host, self._port, timeout=self._timeout)
        try:
            conn.request("POST", "/", body=body, headers=self._headers(auth))
            resp = conn.getresponse()
            return resp.read()
        except (ConnectionError, OSError) as exc:
            raise TransportError(str(exc)) from exc
        finally:
            conn.close()

    def subscribe(self, body: bytes, auth: AuthContext) -> Iterator[bytes]:
        import http.client

        conn = http.client.HTTPConnection(self._host, self._port, timeout=self._timeout)
        try:
            conn.request("POST", "/", body=body, headers=self._headers(auth))
            resp = conn.getresponse()
        except (ConnectionError, OSError) as exc:
            conn.close()
            raise TransportError(str(exc)) from exc

        content_type = resp.getheader("Content-Type", "")
        if not content_type.startswith("text/event-stream"):
            # the request never became a stream: a JSON-RPC error body
            payload = resp.read()
            conn.close()
            yield payload
            return

        def chunks() -> Iterator[bytes]:
            try:
                while True:
                    chunk = resp.read1(65536)
                    if not chunk:
                        break
                    yield chunk
            finally:
                conn.close()

        yield from chunks()


class A2AClient:
    """Talks to one agent endpoint with fixed credentials."""

    def __init__(self, transport: A2ATransport, auth: AuthContext = AuthContext()) -> None:
        self.transport = transport
        self.auth = auth
        self._next_id = 0
        self.task_ids: list[str] = []

    # -- plumbing -------------------------------------------------------------

    def _call(self, method: str, params: Mapping[str, Any]) -> Any:
        self._next_id += 1
        body = encode_envelope(RpcRequest(id=self._next_id, method=method, params=dict(params))).encode("utf-8")
        raw = self.transport.request(body, self.auth)
        if not raw:
            raise TransportError("empty response")
        response = parse_envelope(raw)
        if isinstance(response, RpcErrorResponse):
            if response.error.code == jsonrpc.UNAUTHORIZED:
                raise UnauthorizedError(response.error.code, response.error.message, response.error.data)
            raise A2ARpcError(response.error.code, response.error.message, response.error.data)
        if not isinstance(response, RpcResult) or response.id != self._next_id:
            raise TransportError("response does not match the request id")
        return response.result

    # -- operations -----------------------------------------------------------

    def fetch_card(self) -> AgentCard:
        return parse_agent_card(self.transport.fetch_card())

    def send_task(
        self,
        skill_id: str,
        message: Message,
        session_id: str | None = None,
        push: PushNotificationConfig | None = None,
        trace_parent: str | None = None,
    ) -> dict[str, Any]:
        """Initiate a task; returns the server's snapshot and remembers the
        task id for follow-up calls."""
        params: dict[str, Any] = {"skillId": skill_id, "message": message_to_json(message)}
        if session_id is not None:
            params["sessionId"] = session_id
        if push is not None:
            params["pushNotification"] = push_config_to_json(push)
        if trace_parent is not None:
            params["traceParent"] = trace_parent
        snapshot = self._call(METHOD_SEND, params)
        self.task_ids.append(snapshot["id"])
        return snapshot

    def get_task(self, task_id: str) -> dict[str, Any]:
        return self._call(METHOD_GET, {"id": task_id})

    def cancel_task(self, task_id: str) -> dict[str, Any]:
        return self._call(METHOD_CANCEL, {"id": task_id})

    def set_push_config(self, task_id: str, config: PushNotificationConfig) -> dict[str, Any]:
        return self._call(METHOD_PUSH_SET, {"id": task_id, "pushNotificationConfig": push_config_to_json(config)})

    def get_push_config(self, task_id: str) -> dict[str, Any]:
        return self._call(METHOD_PUSH_GET, {"id": task_id})

    def send_subscribe(
        self,
        skill_id: str,
        message: Message,
        session_id: str | None = None,
        trace_parent: str | None = None,
    ) -> Iterator[UpdateEvent]:
        """Initiate and stream: yields update events in server emission
        order and stops after the final=true event. A stream that ends any
        other way raises StreamClosedEarly."""
        self._next_id += 1
        params: dict[str, Any] = {"skillId": skill_id, "message": message_to_json(message)}
        if session_id is not None:
            params["sessionId"] = session_id
        if trace_parent is not None:
            params["traceParent"] = trace_parent
        body = encode_envelope(RpcRequest(id=self._next_id, method=METHOD_SEND_SUBSCRIBE, params=params)).encode("utf-8")

        parser = SseParser()
        saw_final = False
        first_chunk = True
        for chunk in self.transport.subscribe(body, self.auth):
            if first_chunk and chunk.lstrip()[:1] == b"{":
                # not a stream: the endpoint answered with an error envelope
                response = parse_envelope(chunk)
                if isinstance(response, RpcErrorResponse):
                    if response.error.code == jsonrpc.UNAUTHORIZED:
                        raise UnauthorizedError(response.error.code, response.error.message, response.error.data)
                    raise A2ARpcError(response.error.code, response.error.message, response.error.data)
                raise TransportError("expected an event stream")
            first_chunk = False
            for sse in parser.feed(chunk):
                event = update_event_from_sse(sse.name, sse.json())
                if isinstance(event, TaskStatusUpdateEvent) and event.task_id not in self.task_ids:
                    self.task_ids.append(event.task_id)
                yield event
                if isinstance(event, TaskStatusUpdateEvent) and event.final:
                    saw_final = True
                    return
        if not saw_final:
            raise StreamClosedEarlyError("stream ended before a final status event")
