"""Task lifecycle: the seven states, the transition table, chunk assembly.

Tasks are immutable; every operation returns a new Task. The transition
table is the single source of truth for which event is legal in which
state, and terminal states absorb nothing: any event against a completed,
failed, or canceled task raises IllegalTransition.
"""

from __future__ import annotations

import secrets
from dataclasses import dataclass, field, replace
from enum import Enum
from random import Random
from typing import Any, Union

from ..canonical import canonical_json
from .model import (
    Artifact,
    Message,
    PartError,
    PushNotificationConfig,
    artifact_from_json,
    artifact_to_json,
    message_from_json,
    message_to_json,
    push_config_from_json,
    push_config_to_json,
)


class TaskState(str, Enum):
    SUBMITTED = "submitted"
    WORKING = "working"
    INPUT_REQUIRED = "input-required"
    COMPLETED = "completed"
    FAILED = "failed"
    CANCELED = "canceled"
    UNKNOWN = "unknown"


TERMINAL_STATES = frozenset({TaskState.COMPLETED, TaskState.FAILED, TaskState.CANCELED})


def is_terminal(state: TaskState) -> bool:
    return state in TERMINAL_STATES


# --- lifecycle events ------------------------------------------------------


@dataclass(frozen=True)
class StartWork:
    pass


@dataclass(frozen=True)
class NeedInput:
    pass


@dataclass(frozen=True)
class ProvideInput:
    message: Message


@dataclass(frozen=True)
class Complete:
    pass


@dataclass(frozen=True)
class Fail:
    reason: str


@dataclass(frozen=True)
class CancelRequested:
    pass


@dataclass(frozen=True)
class MarkUnknown:
    pass


LifecycleEvent = Union[StartWork, NeedInput, ProvideInput, Complete, Fail, CancelRequested, MarkUnknown]

# (state, event type) -> next state. MarkUnknown rows exist for every
# non-terminal state, including unknown itself; recovery out of unknown is
# limited to resuming work, failing, or canceling.
TRANSITIONS: dict[tuple[TaskState, type], TaskState] = {
    (TaskState.SUBMITTED, StartWork): TaskState.WORKING,
    (TaskState.SUBMITTED, CancelRequested): TaskState.CANCELED,
    (TaskState.SUBMITTED, Fail): TaskState.FAILED,
    (TaskState.SUBMITTED, MarkUnknown): TaskState.UNKNOWN,
    (TaskState.WORKING, NeedInput): TaskState.INPUT_REQUIRED,
    (TaskState.WORKING, Complete): TaskState.COMPLETED,
    (TaskState.WORKING, Fail): TaskState.FAILED,
    (TaskState.WORKING, CancelRequested): TaskState.CANCELED,
    (TaskState.WORKING, MarkUnknown): TaskState.UNKNOWN,
    (TaskState.INPUT_REQUIRED, ProvideInput): TaskState.WORKING,
    (TaskState.INPUT_REQUIRED, CancelRequested): TaskState.CANCELED,
    (TaskState.INPUT_REQUIRED, Fail): TaskState.FAILED,
    (TaskState.INPUT_REQUIRED, MarkUnknown): TaskState.UNKNOWN,
    (TaskState.UNKNOWN, StartWork): TaskState.WORKING,
    (TaskState.UNKNOWN, CancelRequested): TaskState.CANCELED,
    (TaskState.UNKNOWN, Fail): TaskState.FAILED,
    (TaskState.UNKNOWN, MarkUnknown): TaskState.UNKNOWN,
}


class IllegalTransition(Exception):
    """The event is not legal in the task's current state."""

    def __init__(self, state: TaskState, event: LifecycleEvent) -> None:
        super().__init__(f"event {type(event).__name__} is illegal in state {state.value}")
        self.state = state
        self.event = event


class NotWorkingError(Exception):
    def __init__(self, state: TaskState) -> None:
        super().__init__(f"artifact chunks are only accepted while working, state is {state.value}")
        self.state = state


class IndexSealedError(Exception):
    def __init__(self, index: int) -> None:
        super().__init__(f"artifact index {index} is sealed")
        self.index = index


class AppendWithoutStartError(Exception):
    def __init__(self, index: int) -> None:
        super().__init__(f"append chunk for index {index} arrived before a start chunk")
        self.index = index


class IndexAlreadyStartedError(Exception):
    """A start chunk hit an index that is already open; artifacts are
    immutable outputs, so restarting an index is refused."""

    def __init__(self, index: int) -> None:
        super().__init__(f"artifact index {index} already started")
        self.index = index


# --- tasks -----------------------------------------------------------------


@dataclass(frozen=True)
class Task:
    """The unit of work: identity, lifecycle state, conversation, outputs."""

    id: str
    skill_id: str
    state: TaskState
    initial_message: Message
    history: tuple[Message, ...]
    artifacts: tuple[Artifact, ...] = ()
    session_id: str | None = None
    push_config: PushNotificationConfig | None = None


def new_task_id(rng: Random | None = None) -> str:
    """128-bit random id rendered as lowercase hex."""
    if rng is None:
        return secrets.token_hex(16)
    return f"{rng.getrandbits(128):032x}"


def create_task(
    skill_id: str,
    initial: Message,
    session_id: str | None = None,
    *,
    rng: Random | None = None,
) -> Task:
    """Create a task in ``submitted`` with the initial message as history."""
    return Task(
        id=new_task_id(rng),
        skill_id=skill_id,
        state=TaskState.SUBMITTED,
        initial_message=initial,
        history=(initial,),
    )


def apply_lifecycle_event(task: Task, event: LifecycleEvent) -> Task:
    """Advance the task per the transition table.

    Raises IllegalTransition for any pair the table does not cover; in
    particular every event aimed at a terminal state.
    """
    key = (task.state, type(event))
    next_state = TRANSITIONS.get(key)
    if next_state is None:
        raise IllegalTransition(task.state, event)
    history = task.history
    if isinstance(event, ProvideInput):
        history = history + (event.message,)
    return replace(task, state=next_state, history=history)


def assemble_artifact_chunk(task: Task, chunk: Artifact) -> Task:
    """Fold one streamed chunk into the task's artifact list.

    A start chunk (append=False) opens its index; append chunks concatenate
    parts onto the open artifact; last_chunk seals the index for good. The
    assembled artifact keeps the start chunk's name, description, and
    metadata, and records seal state in its own last_chunk flag.
    """
    if task.state is not TaskState.WORKING:
        raise NotWorkingError(task.state)
    existing = {a.index: a for a in task.artifacts}
    current = existing.get(chunk.index)
    if current is None:
        if chunk.append:
            raise AppendWithoutStartError(chunk.index)
        assembled = replace(chunk, append=False)
    else:
        if current.last_chunk:
            raise IndexSealedError(chunk.index)
        if not chunk.append:
            raise IndexAlreadyStartedError(chunk.index)
        assembled = replace(current, parts=current.parts + chunk.parts, last_chunk=chunk.last_chunk)
    existing[chunk.index] = assembled
    ordered = tuple(existing[i] for i in sorted(existing))
    return replace(task, artifacts=ordered)


# --- snapshots -------------------------------------------------------------


def snapshot_task(task: Task) -> dict[str, Any]:
    """Canonical-ready JSON value of the task; stable for an unchanged task."""
    out: dict[str, Any] = {
        "id": task.id,
        "skillId": task.skill_id,
        "state": task.state.value,
        "initialMessage": message_to_json(task.initial_message),
        "history": [message_to_json(m) for m in task.history],
        "artifacts": [artifact_to_json(a) for a in task.artifacts],
    }
    if task.session_id is not None:
        out["sessionId"] = task.session_id
    if task.push_config is not None:
        out["pushConfig"] = push_config_to_json(task.push_config)
    return out


def task_canonical(task: Task) -> str:
    return canonical_json(snapshot_task(task))


def task_from_json(value: Any) -> Task:
    if not isinstance(value, dict):
        raise PartError("task snapshot must be an object")
    try:
        state = TaskState(value["state"])
    except (KeyError, ValueError) as exc:
        raise PartError(f"bad task state: {exc}") from exc
    push = value.get("pushConfig")
    return Task(
        id=value["id"],
        skill_id=value["skillId"],
        state=state,
        initial_message=message_from_json(value["initialMessage"]),
        history=tuple(message_from_json(m) for m in value.get("history", [])),
        artifacts=tuple(artifact_from_json(a) for a in value.get("artifacts", [])),
        session_id=value.get("sessionId"),
        push_config=push_config_from_json(push) if push is not None else None,
    )
