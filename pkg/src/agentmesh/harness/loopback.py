"""In-process transports honoring the same byte framing as real sockets.

The loopback agent transport hands the exact JSON-RPC bytes to the server
object and returns the exact response bytes; subscriptions yield the same
SSE-framed chunks a socket would carry. Faults are injected by wrapping
any transport, so loopback and HTTP runs share one injection point.
"""

from __future__ import annotations

from typing import Iterator

from ..a2a.client import TransportError
from ..a2a.wire import AgentServer, AuthContext
from ..trace import TraceCollector
from .faults import MODE_DELAY, MODE_DROP, FaultPlan, SITE_A2A_TRANSPORT


class LoopbackA2ATransport:
    """Directly couples a client to an AgentServer."""

    def __init__(self, server: AgentServer) -> None:
        self._server = server

    def fetch_card(self) -> bytes:
        return self._server.card_bytes()

    def request(self, body: bytes, auth: AuthContext) -> bytes:
        response = self._server.handle_rpc(body, auth)
        if response is None:
            return b""
        return response.encode("utf-8")

    def subscribe(self, body: bytes, auth: AuthContext) -> Iterator[bytes]:
        error, stream = self._server.handle_subscribe(body, auth)
        if error is not None:
            yield error.encode("utf-8")
            return
        assert stream is not None
        yield from stream


class FaultingA2ATransport:
    """Transport decorator that consults the fault plan on every operation.

    error and drop both surface as TransportError on the caller's side
    (an injected server error versus a vanished response look the same to
    the client); delay burns logical clock ticks and proceeds.
    """

    def __init__(self, inner, plan: FaultPlan, collector: TraceCollector) -> None:
        self._inner = inner
        self._plan = plan
        self._collector = collector

    def _gate(self) -> None:
        spec = self._plan.check(SITE_A2A_TRANSPORT)
        if spec is None:
            return
        if spec.mode == MODE_DELAY:
            for _ in range(spec.delay_steps):
                self._collector.tick()
            return
        if spec.mode == MODE_DROP:
            raise TransportError("injected-fault: response dropped")
        raise TransportError("injected-fault")

    def fetch_card(self) -> bytes:
        self._gate()
        return self._inner.fetch_card()

    def request(self, body: bytes, auth: AuthContext) -> bytes:
        self._gate()
        return self._inner.request(body, auth)

    def subscribe(self, body: bytes, auth: AuthContext) -> Iterator[bytes]:
        self._gate()
        return self._inner.subscribe(body, auth)


class LoopbackWebhookSink:
    """Records webhook bodies; poses as the push-notification receiver."""

    def __init__(self, fail_with: int | None = None) -> None:
        self.bodies: list[bytes] = []
        self.tokens: list[str | None] = []
        self.fail_with = fail_with

    def poster(self, url: str, body: bytes, token: str | None) -> int:
        if self.fail_with is not None:
            return self.fail_with
        self.bodies.append(body)
        self.tokens.append(token)
        return 200
