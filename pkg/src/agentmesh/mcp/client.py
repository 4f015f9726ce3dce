"""MCP client: request/response matching over a pluggable byte transport.

The same client drives an in-process server, a subprocess pipe, or an HTTP
endpoint with an SSE notification channel; only the transport changes.
Responses are matched to requests by id and may arrive out of order;
notifications are queued in arrival order as a feed.
"""

from __future__ import annotations

import threading
import time
from typing import Any, Mapping, Sequence

from ..jsonrpc import (
    Envelope,
    RpcErrorResponse,
    RpcNotification,
    RpcRequest,
    RpcResult,
)
from .model import Root
from .wire import McpServer, StdioDecoder, frame_stdio_message


class McpTransportError(Exception):
    pass


class RequestTimeoutError(McpTransportError):
    pass


class McpRpcError(Exception):
    def __init__(self, code: int, message: str, data: Any = None) -> None:
        super().__init__(f"rpc error {code}: {message}")
        self.code = code
        self.message = message
        self.data = data


class InProcessMcpTransport:
    """Directly couples a client to a server object, honoring the same
    newline-delimited byte framing as a real pipe."""

    live = False

    def __init__(self, server: McpServer, session_id: str = "main", roots: Sequence[Root] = ()) -> None:
        self.server = server
        self.session = server.open_session(session_id, roots)
        self._server_decoder = StdioDecoder()
        self._inbox = bytearray()

    def send(self, data: bytes) -> None:
        self._inbox += self.server.handle_bytes(data, self.session, self._server_decoder)

    def receive(self, timeout: float | None = None) -> bytes:
        out = bytes(self._inbox)
        self._inbox.clear()
        for envelope in self.session.drain():
            out += frame_stdio_message(envelope)
        return out

    def close(self) -> None:
        self.server.close_session(self.session.session_id)


class HttpMcpTransport:
    """HTTP mapping: requests as POST bodies, notifications and deferred
    responses on a per-session SSE channel."""

    live = True

    def __init__(self, host: str, port: int, session_id: str = "main", timeout: float = 30.0) -> None:
        import http.client

        self._host = host
        self._port = port
        self._session_id = session_id
        self._timeout = timeout
        self._queue: list[bytes] = []
        self._cond = threading.Condition()
        self._closed = False
        self._sse_conn = http.client.HTTPConnection(host, port, timeout=timeout)
        self._sse_conn.request("GET", f"/events?session={session_id}")
        self._sse_resp = self._sse_conn.getresponse()
        if self._sse_resp.status != 200:
            raise McpTransportError(f"event channel refused: {self._sse_resp.status}")
        self._reader = threading.Thread(target=self._read_events, daemon=True)
        self._reader.start()

    def _read_events(self) -> None:
        from ..sse import SseParser

        parser = SseParser()
        try:
            while not self._closed:
                chunk = self._sse_resp.read1(65536)
                if not chunk:
                    break
                for event in parser.feed(chunk):
                    with self._cond:
                        self._queue.append(event.data.encode("utf-8") + b"\n")
                        self._cond.notify_all()
        except Exception:
            pass  # connection torn down

    def send(self, data: bytes) -> None:
        import http.client

        conn = http.client.HTTPConnection(self._host, self._port, timeout=self._timeout)
        try:
            conn.request(
                "POST",
                f"/rpc?session={self._session_id}",
                body=data,
                headers={"Content-Type": "application/json"},
            )
            resp = conn.getresponse()
            body = resp.read()
            if resp.status not in (200, 202):
                raise McpTransportError(f"http status {resp.status}")
            if body:
                with self._cond:
                    self._queue.append(body)
                    self._cond.notify_all()
        except (ConnectionError, OSError) as exc:
            raise McpTransportError(str(exc)) from exc
        finally:
            conn.close()

    def receive(self, timeout: float | None = None) -> bytes:
        with self._cond:
            if not self._queue and timeout:
                self._cond.wait(timeout)
            out = b"".join(self._queue)
            self._queue.clear()
            return out

    def close(self) -> None:
        self._closed = True
        try:
            self._sse_conn.close()
        except Exception:
            pass


class McpClient:
    """Issues requests and exposes server notifications as an ordered feed."""

    def __init__(self, transport) -> None:
        self.transport = transport
        self._decoder = StdioDecoder()
        self._next_id = 0
        self._responses: dict[int | str, Envelope] = {}
        self._notifications: list[RpcNotification] = []

    def _pump(self, timeout: float | None = None) -> None:
        data = self.transport.receive(timeout)
        if not data:
            return
        envelopes, errors = self._decoder.feed(data)
        if errors:
            raise McpTransportError(f"malformed frames from server: {errors[0].reason}")
        for env in envelopes:
            if isinstance(env, (RpcResult, RpcErrorResponse)):
                if env.id is not None:
                    self._responses[env.id] = env
            elif isinstance(env, RpcNotification):
                self._notifications.append(env)

    def request(self, method: str, params: Mapping[str, Any] | None = None, timeout: float = 30.0) -> Any:
        """Send one request and wait for its matching-id response."""
        self._next_id += 1
        req_id = self._next_id
        self.transport.send(frame_stdio_message(RpcRequest(id=req_id, method=method, params=dict(params) if params else None)))
        deadline = time.monotonic() + timeout
        while req_id not in self._responses:
            remaining = deadline - time.monotonic()
            if getattr(self.transport, "live", False):
                if remaining <= 0:
                    raise RequestTimeoutError(f"no response to {method!r} within {timeout}s")
                self._pump(min(remaining, 0.5))
            else:
                self._pump()
                if req_id not in self._responses:
                    raise McpTransportError(f"no response to {method!r}")
        response = self._responses.pop(req_id)
        if isinstance(response, RpcErrorResponse):
            raise McpRpcError(response.error.code, response.error.message, response.error.data)
        assert isinstance(response, RpcResult)
        return response.result

    def drain_notifications(self) -> list[RpcNotification]:
        """Pull whatever has arrived; order is server emission order."""
        self._pump()
        out = self._notifications
        self._notifications = []
        return out

    def wait_notification(self, timeout: float = 5.0) -> RpcNotification:
        deadline = time.monotonic() + timeout
        while True:
            got = self.drain_notifications()
            if got:
                self._notifications = got[1:] + self._notifications
                return got[0]
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                raise RequestTimeoutError("no notification arrived")
            if getattr(self.transport, "live", False):
                self._pump(min(remaining, 0.2))
            else:
                raise McpTransportError("no notification pending")

    def close(self) -> None:
        self.transport.close()
