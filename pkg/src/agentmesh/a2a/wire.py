"""A2A wire layer: JSON-RPC dispatch, SSE update events, push delivery.

The server routes the five method families, owns the task store, and runs
scripted skill handlers to completion. Raw exceptions never cross the
boundary: every failure surfaces as a JSON-RPC error object or as a task
in the failed state. Streaming responses carry an initial status event as
the first frame, then one event per state change or artifact chunk, ending
with a final=true status event.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from random import Random
from typing import Any, Callable, Iterable, Iterator, Mapping, Union

from .. import jsonrpc
from ..canonical import canonical_bytes
from ..jsonrpc import (
    EnvelopeError,
    RpcNotification,
    RpcRequest,
    encode_envelope,
    error_response,
    extract_id,
    parse_envelope,
)
from ..sse import encode_sse_event
from .lifecycle import (
    Complete,
    Fail,
    IllegalTransition,
    LifecycleEvent,
    StartWork,
    Task,
    TaskState,
    apply_lifecycle_event,
    assemble_artifact_chunk,
    create_task,
    is_terminal,
    snapshot_task,
)
from .model import (
    AgentCard,
    Artifact,
    AuthScheme,
    Message,
    PartError,
    PushNotificationConfig,
    agent_card_to_json,
    artifact_to_json,
    message_from_json,
    push_config_from_json,
    push_config_to_json,
    AUTH_BEARER,
    AUTH_NONE,
)

STATUS_EVENT = "TaskStatusUpdateEvent"
ARTIFACT_EVENT = "TaskArtifactUpdateEvent"

METHOD_SEND = "tasks/send"
METHOD_SEND_SUBSCRIBE = "tasks/sendSubscribe"
METHOD_GET = "tasks/get"
METHOD_CANCEL = "tasks/cancel"
METHOD_PUSH_SET = "tasks/pushNotification/set"
METHOD_PUSH_GET = "tasks/pushNotification/get"


@dataclass(frozen=True)
class AuthContext:
    """Caller credentials: nothing, or a static bearer token."""

    scheme: str = AUTH_NONE
    token: str | None = None

    def __post_init__(self) -> None:
        if self.scheme not in (AUTH_NONE, AUTH_BEARER):
            raise ValueError(f"unsupported auth scheme {self.scheme!r}")
        if self.scheme == AUTH_BEARER and not self.token:
            raise ValueError("bearer auth requires a token")


@dataclass(frozen=True)
class TaskStatusUpdateEvent:
    task_id: str
    state: TaskState
    final: bool

    def __post_init__(self) -> None:
        if self.final and not is_terminal(self.state):
            raise ValueError("final=true only accompanies a terminal state")


@dataclass(frozen=True)
class TaskArtifactUpdateEvent:
    task_id: str
    artifact: Artifact
    final: bool = False


UpdateEvent = Union[TaskStatusUpdateEvent, TaskArtifactUpdateEvent]


def update_event_to_json(event: UpdateEvent) -> dict[str, Any]:
    if isinstance(event, TaskStatusUpdateEvent):
        return {"taskId": event.task_id, "state": event.state.value, "final": event.final}
    return {"taskId": event.task_id, "artifact": artifact_to_json(event.artifact), "final": event.final}


def update_event_from_sse(name: str, payload: Mapping[str, Any]) -> UpdateEvent:
    from .model import artifact_from_json

    if name == STATUS_EVENT:
        return TaskStatusUpdateEvent(
            task_id=payload["taskId"],
            state=TaskState(payload["state"]),
            final=bool(payload["final"]),
        )
    if name == ARTIFACT_EVENT:
        return TaskArtifactUpdateEvent(
            task_id=payload["taskId"],
            artifact=artifact_from_json(payload["artifact"]),
            final=bool(payload.get("final", False)),
        )
    raise PartError(f"unknown update event {name!r}")


def event_sse_name(event: UpdateEvent) -> str:
    return STATUS_EVENT if isinstance(event, TaskStatusUpdateEvent) else ARTIFACT_EVENT


# ---------------------------------------------------------------------------
# Push notifications
# ---------------------------------------------------------------------------

# poster(url, body, token) -> HTTP-ish status code
WebhookPoster = Callable[[str, bytes, str | None], int]


@dataclass(frozen=True)
class PushDelivery:
    url: str
    event: dict[str, Any]
    delivered: bool
    status: int


def deliver_push_notification(
    poster: WebhookPoster,
    config: PushNotificationConfig,
    event: TaskStatusUpdateEvent,
) -> PushDelivery:
    """POST one status event to the configured sink, at most once.

    Failures are recorded, never retried; callers keep the delivery record
    as their audit trail.
    """
    body = canonical_bytes(update_event_to_json(event))
    try:
        status = poster(config.url, body, config.token)
    except Exception:
        status = 0
    return PushDelivery(url=config.url, event=update_event_to_json(event), delivered=200 <= status < 300, status=status)


# ---------------------------------------------------------------------------
# Skill handlers
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TaskContext:
    """Per-request context handed to a skill handler."""

    trace_parent: str | None = None


# A handler drives one task while it is working: it yields artifact chunks
# and lifecycle events, ending with Complete or Fail.
SkillHandler = Callable[[Task, TaskContext], Iterator[Union[Artifact, LifecycleEvent]]]


class AgentServer:
    """One agent endpoint: a card, a task store, and scripted skill handlers.

    Tasks run to their terminal state synchronously inside the request that
    created them, which keeps every run replayable. The emission journal
    records the exact event sequence per task so streams can be audited.
    """

    def __init__(
        self,
        card: AgentCard,
        handlers: Mapping[str, SkillHandler],
        *,
        token: str | None = None,
        rng: Random | None = None,
        webhook_poster: WebhookPoster | None = None,
    ) -> None:
        if (card.auth.scheme == AUTH_BEARER) != (token is not None):
            raise ValueError("bearer cards need a server token, none cards must not have one")
        self.card = card
        self._handlers = dict(handlers)
        self._token = token
        self._rng = rng if rng is not None else Random()
        self._webhook_poster = webhook_poster
        self._tasks: dict[str, Task] = {}
        self.emission_journal: dict[str, list[dict[str, Any]]] = {}
        self.delivery_journal: list[PushDelivery] = []

    # -- public surface -----------------------------------------------------

    def card_bytes(self) -> bytes:
        return canonical_bytes(agent_card_to_json(self.card))

    def task(self, task_id: str) -> Task | None:
        return self._tasks.get(task_id)

    def handle_rpc(self, raw: str | bytes, auth: AuthContext) -> str | None:
        """Dispatch one non-streaming envelope; returns canonical response
        text, or None for client notifications."""
        try:
            envelope = parse_envelope(raw)
        except EnvelopeError as exc:
            return encode_envelope(error_response(extract_id(raw), exc.code, str(exc)))
        if isinstance(envelope, RpcNotification):
            return None
        if not isinstance(envelope, RpcRequest):
            return encode_envelope(error_response(None, jsonrpc.INVALID_REQUEST, "expected a request"))
        try:
            result = self._dispatch(envelope, auth)
        except _RpcFailure as exc:
            return encode_envelope(error_response(envelope.id, exc.code, exc.message, exc.data))
        except Exception as exc:  # never leak a raw exception across the wire
            return encode_envelope(error_response(envelope.id, jsonrpc.INTERNAL_ERROR, f"{type(exc).__name__}: {exc}"))
        return encode_envelope(jsonrpc.RpcResult(id=envelope.id, result=result))

    def handle_subscribe(self, raw: str | bytes, auth: AuthContext) -> tuple[str | None, Iterator[bytes] | None]:
        """Streaming path for tasks/sendSubscribe.

        Returns (error response text, None) when the request cannot start a
        stream, else (None, SSE byte chunk iterator).
        """
        try:
            envelope = parse_envelope(raw)
        except EnvelopeError as exc:
            return encode_envelope(error_response(extract_id(raw), exc.code, str(exc))), None
        if not isinstance(envelope, RpcRequest) or envelope.method != METHOD_SEND_SUBSCRIBE:
            return encode_envelope(error_response(getattr(envelope, "id", None), jsonrpc.INVALID_REQUEST, "expected tasks/sendSubscribe")), None
        try:
            self._check_auth(auth)
            task, context = self._create_from_params(envelope.params)
        except _RpcFailure as exc:
            return encode_envelope(error_response(envelope.id, exc.code, exc.message, exc.data)), None

        def stream() -> Iterator[bytes]:
            initial = TaskStatusUpdateEvent(task_id=task.id, state=TaskState.SUBMITTED, final=False)
            self._journal(task.id, initial)
            yield encode_sse_event(STATUS_EVENT, update_event_to_json(initial))
            for event in self._run(task.id, context):
                yield encode_sse_event(event_sse_name(event), update_event_to_json(event))

        return None, stream()

    # -- dispatch -------------------------------------------------------------

    def _dispatch(self, request: RpcRequest, auth: AuthContext) -> Any:
        method = request.method
        if method == METHOD_SEND_SUBSCRIBE:
            raise _RpcFailure(jsonrpc.STREAM_REQUIRED, "tasks/sendSubscribe requires the streaming path")
        if method not in (METHOD_SEND, METHOD_GET, METHOD_CANCEL, METHOD_PUSH_SET, METHOD_PUSH_GET):
            raise _RpcFailure(jsonrpc.METHOD_NOT_FOUND, f"unknown method {method!r}")
        self._check_auth(auth)
        params = request.params
        if not isinstance(params, dict):
            raise _RpcFailure(jsonrpc.INVALID_PARAMS, "params must be an object")

        if method == METHOD_SEND:
            task, context = self._create_from_params(params)
            snapshot = snapshot_task(task)
            for event in self._run(task.id, context):
                pass  # effects (journal, push) happen inside _run
            return snapshot
        if method == METHOD_GET:
            return snapshot_task(self._existing(params))
        if method == METHOD_CANCEL:
            task = self._existing(params)
            from .lifecycle import CancelRequested

            task = self._apply(task.id, CancelRequested())
            return snapshot_task(task)
        if method == METHOD_PUSH_SET:
            task = self._existing(params)
            raw_config = params.get("pushNotificationConfig")
            try:
                config = push_config_from_json(raw_config)
            except (PartError, ValueError) as exc:
                raise _RpcFailure(jsonrpc.INVALID_PARAMS, str(exc)) from exc
            self._tasks[task.id] = replace(task, push_config=config)
            return {"taskId": task.id, "pushNotificationConfig": push_config_to_json(config)}
        if method == METHOD_PUSH_GET:
            task = self._existing(params)
            config = push_config_to_json(task.push_config) if task.push_config else None
            return {"taskId": task.id, "pushNotificationConfig": config}
        raise AssertionError(method)

    def _check_auth(self, auth: AuthContext) -> None:
        if self._token is None:
            return
        if auth.scheme != AUTH_BEARER or auth.token != self._token:
            raise _RpcFailure(jsonrpc.UNAUTHORIZED, "missing or wrong bearer token")

    def _existing(self, params: Mapping[str, Any]) -> Task:
        task_id = params.get("id")
        if not isinstance(task_id, str):
            raise _RpcFailure(jsonrpc.INVALID_PARAMS, "params need a string task id")
        task = self._tasks.get(task_id)
        if task is None:
            raise _RpcFailure(jsonrpc.TASK_NOT_FOUND, f"no task {task_id!r}")
        return task

    def _create_from_params(self, params: Any) -> tuple[Task, TaskContext]:
        if not isinstance(params, dict):
            raise _RpcFailure(jsonrpc.INVALID_PARAMS, "params must be an object")
        skill_id = params.get("skillId")
        if not isinstance(skill_id, str) or self.card.skill(skill_id) is None:
            raise _RpcFailure(jsonrpc.INVALID_PARAMS, f"unknown skill {skill_id!r}")
        try:
            message = message_from_json(params.get("message"))
        except (PartError, ValueError) as exc:
            raise _RpcFailure(jsonrpc.INVALID_PARAMS, f"bad message: {exc}") from exc
        session_id = params.get("sessionId")
        if session_id is not None and not isinstance(session_id, str):
            raise _RpcFailure(jsonrpc.INVALID_PARAMS, "sessionId must be a string")
        task = create_task(skill_id, message, session_id, rng=self._rng)
        raw_push = params.get("pushNotification")
        if raw_push is not None:
            try:
                task = replace(task, push_config=push_config_from_json(raw_push))
            except (PartError, ValueError) as exc:
                raise _RpcFailure(jsonrpc.INVALID_PARAMS, str(exc)) from exc
        trace_parent = params.get("traceParent")
        if trace_parent is not None and not isinstance(trace_parent, str):
            raise _RpcFailure(jsonrpc.INVALID_PARAMS, "traceParent must be a string")
        self._tasks[task.id] = task
        self.emission_journal.setdefault(task.id, [])
        return task, TaskContext(trace_parent=trace_parent)

    # -- task execution -------------------------------------------------------

    def _apply(self, task_id: str, event: LifecycleEvent) -> Task:
        task = self._tasks[task_id]
        try:
            task = apply_lifecycle_event(task, event)
        except IllegalTransition as exc:
            raise _RpcFailure(jsonrpc.ILLEGAL_TRANSITION, str(exc)) from exc
        self._tasks[task_id] = task
        status = TaskStatusUpdateEvent(task_id=task_id, state=task.state, final=is_terminal(task.state))
        self._journal(task_id, status)
        self._push(task, status)
        return task

    def _run(self, task_id: str, context: TaskContext) -> Iterator[UpdateEvent]:
        """Drive the skill handler from submitted to a terminal state,
        yielding each update event as it happens."""
        task = self._apply(task_id, StartWork())
        yield TaskStatusUpdateEvent(task_id=task_id, state=task.state, final=False)
        handler = self._handlers.get(task.skill_id)
        terminal = False
        try:
            if handler is None:
                raise RuntimeError(f"no handler for skill {task.skill_id!r}")
            for item in handler(task, context):
                if isinstance(item, Artifact):
                    task = self._tasks[task_id]
                    task = assemble_artifact_chunk(task, item)
                    self._tasks[task_id] = task
                    event = TaskArtifactUpdateEvent(task_id=task_id, artifact=item)
                    self._journal(task_id, event)
                    yield event
                else:
                    task = self._apply(task_id, item)
                    yield TaskStatusUpdateEvent(task_id=task_id, state=task.state, final=is_terminal(task.state))
                    if is_terminal(task.state):
                        terminal = True
                        break
                    if task.state is TaskState.INPUT_REQUIRED:
                        break  # parked awaiting input; stream ends without final
        except Exception as exc:
            if not terminal and not is_terminal(self._tasks[task_id].state):
                task = self._apply(task_id, Fail(f"{type(exc).__name__}: {exc}"))
                yield TaskStatusUpdateEvent(task_id=task_id, state=task.state, final=True)
                terminal = True
        if not terminal and self._tasks[task_id].state is TaskState.WORKING:
            task = self._apply(task_id, Complete())
            yield TaskStatusUpdateEvent(task_id=task_id, state=task.state, final=True)

    def _journal(self, task_id: str, event: UpdateEvent) -> None:
        self.emission_journal.setdefault(task_id, []).append(
            {"event": event_sse_name(event), **update_event_to_json(event)}
        )

    def _push(self, task: Task, status: TaskStatusUpdateEvent) -> None:
        if task.push_config is None or self._webhook_poster is None:
            return
        delivery = deliver_push_notification(self._webhook_poster, task.push_config, status)
        self.delivery_journal.append(delivery)


class _RpcFailure(Exception):
    def __init__(self, code: int, message: str, data: Any = None) -> None:
        super().__init__(message)
        self.code = code
        self.message = message
        self.data = data


def dispatch_rpc(raw: str | bytes, server: AgentServer, auth: AuthContext) -> str | None:
    """Module-level alias for the non-streaming dispatch entry point."""
    return server.handle_rpc(raw, auth)
