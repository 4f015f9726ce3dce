"""The integration layer between the agent protocol and the tool protocol.

Three pieces:

* surfacing tool servers as agent skills, with a content-hash binding that
  ties each generated skill to the exact tool schema it was derived from;
* mapping an agent message onto schema-valid tool arguments, where the only
  accepted source of arguments is structured data in the message (no
  guessing from prose: an unmappable message is an explicit mismatch);
* orchestration: turning a goal into a plan over discovered cards, then
  executing the plan with dependency-aware failure containment.

The guarded tool client used by scripted agents also lives here, since it
is what stitches tool calls into an agent task's trace.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any, Callable, Iterator, Mapping, Sequence, Union

from .a2a.client import A2AClient, A2ARpcError, TransportError, UnauthorizedError
from .a2a.lifecycle import Complete, Fail, LifecycleEvent, Task, TaskState
from .a2a.model import (
    AgentCard,
    Artifact,
    DataPart,
    Message,
    Skill,
    TextPart,
    part_to_json,
    user_message,
)
from .a2a.wire import TaskArtifactUpdateEvent, TaskStatusUpdateEvent, TaskContext
from .canonical import canonical_json, content_digest
from .guard import ALLOW, ToolGate
from .mcp.client import McpClient, McpRpcError
from .mcp.model import SchemaIssue, ToolDef, schema_issues, tool_def_from_json
from .trace import SpanStatus, TraceCollector

BRIDGE_TAG = "mcp-bridged"
SKILL_PREFIX = "mcp."

MAPPED = "mapped"
MISMATCH = "mismatch"
NO_STRUCTURED_ARGUMENTS = "NoStructuredArguments"


class DuplicateToolNameError(ValueError):
    def __init__(self, name: str) -> None:
        super().__init__(f"duplicate tool name {name!r}")
        self.name = name


class DigestMismatchError(Exception):
    """The binding's pinned schema digest no longer matches the live tool,
    a drift or squat signal that callers escalate to the guard."""

    def __init__(self, binding: "SkillToolBinding", live_digest: str) -> None:
        super().__init__(
            f"binding for {binding.skill_id!r} pinned schema {binding.schema_digest[:12]}, live tool has {live_digest[:12]}"
        )
        self.binding = binding
        self.live_digest = live_digest


class NoAgentForStepError(Exception):
    def __init__(self, step_index: int, tags: Sequence[str]) -> None:
        super().__init__(f"no card advertises a skill with tags {list(tags)} (step {step_index})")
        self.step_index = step_index
        self.tags = tuple(tags)


# ---------------------------------------------------------------------------
# Pattern: tools surfaced as skills
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SkillToolBinding:
    skill_id: str
    server_name: str
    tool_name: str
    schema_digest: str


def schema_digest(input_schema: Mapping[str, Any]) -> str:
    return content_digest(dict(input_schema))


def derive_skills_from_tools(
    server_name: str,
    tools: Sequence[ToolDef],
) -> tuple[tuple[Skill, ...], tuple[SkillToolBinding, ...]]:
    """One skill per tool, named ``mcp.<server>.<tool>``.

    The generated skill embeds the tool's input schema as a data-part
    example so agent clients can see the required arguments, and the
    binding pins the schema by content hash. Server names must be dot-free
    to keep the naming scheme invertible.
    """
    if "." in server_name or not server_name:
        raise ValueError(f"server name must be non-empty and dot-free: {server_name!r}")
    seen: set[str] = set()
    skills: list[Skill] = []
    bindings: list[SkillToolBinding] = []
    for tool in tools:
        if tool.name in seen:
            raise DuplicateToolNameError(tool.name)
        seen.add(tool.name)
        skill_id = f"{SKILL_PREFIX}{server_name}.{tool.name}"
        example = canonical_json(part_to_json(DataPart(data=dict(tool.input_schema))))
        skills.append(
            Skill(
                id=skill_id,
                name=tool.name,
                description=tool.description,
                tags=(BRIDGE_TAG,),
                examples=(example,),
                input_modes=("application/json",),
                output_modes=("application/json",),
            )
        )
        bindings.append(
            SkillToolBinding(
                skill_id=skill_id,
                server_name=server_name,
                tool_name=tool.name,
                schema_digest=schema_digest(tool.input_schema),
            )
        )
    return tuple(skills), tuple(bindings)


def invert_bridged_skill_id(skill_id: str) -> tuple[str, str]:
    """Recover (server, tool) from a generated skill id."""
    if not skill_id.startswith(SKILL_PREFIX):
        raise ValueError(f"not a bridged skill id: {skill_id!r}")
    server_name, _, tool_name = skill_id[len(SKILL_PREFIX) :].partition(".")
    if not server_name or not tool_name:
        raise ValueError(f"not a bridged skill id: {skill_id!r}")
    return server_name, tool_name


@dataclass(frozen=True)
class MappingReport:
    outcome: str
    details: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if self.outcome == MAPPED and self.details:
            raise ValueError("a mapped report carries no details")


def map_message_to_tool_arguments(
    message: Message,
    binding: SkillToolBinding,
    tool: ToolDef,
) -> tuple[MappingReport, Any | None]:
    """Extract tool arguments from a message and validate them.

    The first data part is the argument object; text parts are never
    parsed. Every schema violation is reported, nothing is repaired. A
    stale binding digest raises instead of reporting: that is a security
    signal, not a mapping outcome.
    """
    live_digest = schema_digest(tool.input_schema)
    if live_digest != binding.schema_digest:
        raise DigestMismatchError(binding, live_digest)
    data_part = message.first_data_part()
    if data_part is None:
        return MappingReport(outcome=MISMATCH, details=(NO_STRUCTURED_ARGUMENTS,)), None
    issues = schema_issues(tool.input_schema, data_part.data)
    if issues:
        return MappingReport(outcome=MISMATCH, details=tuple(i.describe() for i in issues)), None
    return MappingReport(outcome=MAPPED), data_part.data


# ---------------------------------------------------------------------------
# Guarded tool access for scripted agents
# ---------------------------------------------------------------------------


class PolicyDeniedError(Exception):
    def __init__(self, decision: str, reason: str) -> None:
        super().__init__(f"{decision}: {reason}")
        self.decision = decision
        self.reason = reason


class ToolCallError(Exception):
    def __init__(self, code: int, message: str) -> None:
        super().__init__(f"tool call failed ({code}): {message}")
        self.code = code
        self.message = message


class ResourceReadError(Exception):
    def __init__(self, code: int, message: str) -> None:
        super().__init__(f"resource read failed ({code}): {message}")
        self.code = code
        self.message = message


class ConsentScript:
    """Scripted stand-in for a human consent prompt: an ordered list of
    booleans consumed one per gated invocation; exhausted means refused."""

    def __init__(self, values: Sequence[bool] = ()) -> None:
        self._values = list(values)
        self._cursor = 0

    def next(self) -> bool:
        if self._cursor < len(self._values):
            value = self._values[self._cursor]
            self._cursor += 1
            return value
        return False

    @property
    def consumed(self) -> int:
        return self._cursor


@dataclass
class CallJournal:
    """What a scripted policy actually did, for span-count oracles."""

    tool_calls: list[str] = field(default_factory=list)
    resource_reads: list[str] = field(default_factory=list)


class GuardedMcpClient:
    """Tool access for one task execution: every call passes the gate and
    is wrapped in a child span of the task's span.

    The live tool definition is re-fetched for every call so the gate
    always judges what the server advertises now, not what it advertised
    when the session opened; that is what makes post-pin swaps visible.
    """

    def __init__(
        self,
        client: McpClient,
        server_name: str,
        *,
        identity: str,
        gate: ToolGate,
        collector: TraceCollector,
        parent_span_id: str | None,
        consent: ConsentScript,
        journal: CallJournal | None = None,
    ) -> None:
        self._client = client
        self._server_name = server_name
        self._identity = identity
        self._gate = gate
        self._collector = collector
        self._parent = parent_span_id
        self._consent = consent
        self.journal = journal if journal is not None else CallJournal()

    def _live_tool(self, name: str) -> ToolDef | None:
        listing = self._client.request("tools/list")
        for entry in listing.get("tools", []):
            if entry.get("name") == name:
                return tool_def_from_json(entry)
        return None

    def call_tool(self, name: str, arguments: Mapping[str, Any]) -> Any:
        """Gate, then call. Denials raise before any wire traffic for the
        call itself, so a denied tool is never executed."""
        self.journal.tool_calls.append(name)
        live = self._live_tool(name)
        if live is None:
            handle = self._collector.open_span("policy-check", f"{self._server_name}/{name}", self._parent)
            self._collector.close_span(handle, SpanStatus.error("deny", f"tool {name!r} not advertised"))
            raise PolicyDeniedError("deny", f"tool {name!r} not advertised by {self._server_name}")
        verdict = self._gate.check(
            self._identity,
            live,
            self._server_name,
            consent_granted=self._consent.next(),
            parent_span_id=self._parent,
        )
        if verdict.decision != ALLOW:
            raise PolicyDeniedError(verdict.decision, verdict.reason)
        handle = self._collector.open_span("mcp-call", name, self._parent)
        try:
            result = self._client.request("tools/call", {"name": name, "arguments": dict(arguments)})
        except McpRpcError as exc:
            self._collector.close_span(handle, SpanStatus.error(str(exc.code), exc.message))
            raise ToolCallError(exc.code, exc.message) from exc
        self._collector.close_span(handle)
        return result["output"]

    def read_resource(self, uri: str) -> dict[str, Any]:
        self.journal.resource_reads.append(uri)
        handle = self._collector.open_span("mcp-resource", uri, self._parent)
        try:
            result = self._client.request("resources/read", {"uri": uri})
        except McpRpcError as exc:
            self._collector.close_span(handle, SpanStatus.error(str(exc.code), exc.message))
            raise ResourceReadError(exc.code, exc.message) from exc
        self._collector.close_span(handle)
        return result


# ---------------------------------------------------------------------------
# Pattern: agent using tools internally
# ---------------------------------------------------------------------------

# A policy scripts what the agent does with its internal tool access.
Pattern1Policy = Callable[[Task, TaskContext, Mapping[str, GuardedMcpClient]], Iterator[Union[Artifact, LifecycleEvent]]]


def run_pattern1_skill(
    task: Task,
    context: TaskContext,
    clients: Mapping[str, GuardedMcpClient],
    policy: Pattern1Policy,
) -> Iterator[Union[Artifact, LifecycleEvent]]:
    """Drive a scripted policy, converting any policy fault into a Fail
    event instead of letting it crash the serving agent."""
    terminal = False
    try:
        for item in policy(task, context, clients):
            if isinstance(item, (Complete, Fail)):
                terminal = True
                yield item
                return
            yield item
    except (PolicyDeniedError, ToolCallError, ResourceReadError) as exc:
        yield Fail(str(exc))
        return
    except Exception as exc:
        yield Fail(f"policy fault: {type(exc).__name__}: {exc}")
        return
    if not terminal:
        yield Complete()


def make_pattern1_handler(
    policy: Pattern1Policy,
    client_factory: Callable[[TaskContext, CallJournal], Mapping[str, GuardedMcpClient]],
    journal: CallJournal,
):
    """Bind a policy and its tool clients into a skill handler."""

    def handler(task: Task, context: TaskContext) -> Iterator[Union[Artifact, LifecycleEvent]]:
        clients = client_factory(context, journal)
        return run_pattern1_skill(task, context, clients, policy)

    return handler


# ---------------------------------------------------------------------------
# Pattern: bridged skill handler
# ---------------------------------------------------------------------------


def make_pattern2_handler(
    binding: SkillToolBinding,
    *,
    client: McpClient,
    gate: ToolGate,
    collector: TraceCollector,
    identity: str,
    consent: ConsentScript,
    fault_hook=None,
    rejection_counter: list[int] | None = None,
):
    """Skill handler that maps the incoming message onto the bound tool.

    Flow per task: mapping (with digest check) -> gate -> tool call. A
    mismatch fails the task without touching the tool; a digest change is
    escalated to the guard as drift and also never executes.
    """

    def _live_tool() -> ToolDef | None:
        listing = client.request("tools/list")
        for entry in listing.get("tools", []):
            if entry.get("name") == binding.tool_name:
                return tool_def_from_json(entry)
        return None

    def handler(task: Task, context: TaskContext) -> Iterator[Union[Artifact, LifecycleEvent]]:
        parent = context.trace_parent
        subject = f"{binding.server_name}/{binding.tool_name}"
        mapping_handle = collector.open_span("mapping", binding.skill_id, parent)

        live = _live_tool()
        if live is None:
            collector.close_span(mapping_handle, SpanStatus.error("tool-unavailable", subject))
            yield Fail(f"bound tool {subject} is not advertised")
            return

        injected = fault_hook("mapping") if fault_hook else None
        if injected is not None:
            collector.close_span(mapping_handle, SpanStatus.error("mapping-mismatch", "injected-fault"))
            yield Fail("mapping mismatch: injected-fault")
            return

        try:
            report, args = map_message_to_tool_arguments(task.initial_message, binding, live)
        except DigestMismatchError as exc:
            from .guard import Verdict

            check = collector.open_span("policy-check", subject, mapping_handle.span_id)
            gate.audit.append(
                actor=identity,
                action="binding-digest-check",
                subject=subject,
                verdict=Verdict.deny("definition-drift"),
                trace_span_id=check.span_id,
            )
            collector.close_span(check, SpanStatus.error("deny", "definition-drift"))
            collector.close_span(mapping_handle, SpanStatus.error("digest-mismatch", str(exc)))
            yield Fail(f"binding digest mismatch for {subject}")
            return

        if report.outcome == MISMATCH:
            collector.close_span(mapping_handle, SpanStatus.error("mapping-mismatch", "; ".join(report.details)))
            yield Fail("mapping mismatch: " + "; ".join(report.details))
            return
        collector.close_span(mapping_handle)

        verdict = gate.check(identity, live, binding.server_name, consent_granted=consent.next(), parent_span_id=parent)
        if verdict.decision != ALLOW:
            yield Fail(f"policy {verdict.decision}: {verdict.reason}")
            return

        call_handle = collector.open_span("mcp-call", binding.tool_name, parent)
        try:
            result = client.request("tools/call", {"name": binding.tool_name, "arguments": args})
        except McpRpcError as exc:
            if exc.code == -32602 and rejection_counter is not None:
                rejection_counter[0] += 1
            collector.close_span(call_handle, SpanStatus.error(str(exc.code), exc.message))
            yield Fail(f"tool call failed ({exc.code}): {exc.message}")
            return
        collector.close_span(call_handle)

        yield Artifact(
            name=f"{binding.tool_name}-result",
            description=f"output of {subject}",
            parts=(DataPart(data=result["output"]),),
            index=0,
            last_chunk=True,
        )
        yield Complete()

    return handler


# ---------------------------------------------------------------------------
# Orchestration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PlanStep:
    agent_url: str
    skill_id: str
    message: Message
    depends_on: tuple[int, ...] = ()


@dataclass(frozen=True)
class OrchestrationPlan:
    goal: str
    steps: tuple[PlanStep, ...]

    def __post_init__(self) -> None:
        for index, step in enumerate(self.steps):
            for dep in step.depends_on:
                if not 0 <= dep < index:
                    raise ValueError(f"step {index} depends on {dep}, which does not precede it")


def plan_goal(goal: str, cards: Sequence[AgentCard]) -> OrchestrationPlan:
    """Deterministic tag matcher from a goal document to a plan.

    The goal is a JSON document: ``{"goal": text, "steps": [{"tags": [...],
    "text"?: ..., "data"?: {...}, "dependsOn"?: [...]}]}``. Each step binds
    to the first card, in the given card order, advertising a skill that
    carries every required tag. Card order is the only tie-breaker, so a
    fixed card list gives a fixed plan.
    """
    document = json.loads(goal)
    steps: list[PlanStep] = []
    for index, spec in enumerate(document.get("steps", [])):
        tags = spec.get("tags", [])
        chosen: tuple[AgentCard, Skill] | None = None
        for card in cards:
            matches = card.skills_with_tags(tags)
            if matches:
                chosen = (card, matches[0])
                break
        if chosen is None:
            raise NoAgentForStepError(index, tags)
        card, skill = chosen
        parts: list[Any] = [TextPart(text=spec.get("text", document.get("goal", "")))]
        if "data" in spec:
            parts.append(DataPart(data=spec["data"]))
        steps.append(
            PlanStep(
                agent_url=card.url,
                skill_id=skill.id,
                message=user_message(*parts),
                depends_on=tuple(spec.get("dependsOn", [])),
            )
        )
    return OrchestrationPlan(goal=document.get("goal", ""), steps=tuple(steps))


def plan_to_json(plan: OrchestrationPlan) -> dict[str, Any]:
    from .a2a.model import message_to_json

    return {
        "goal": plan.goal,
        "steps": [
            {
                "agentUrl": step.agent_url,
                "skillId": step.skill_id,
                "message": message_to_json(step.message),
                "dependsOn": list(step.depends_on),
            }
            for step in plan.steps
        ],
    }


def plan_from_json(value: Mapping[str, Any]) -> OrchestrationPlan:
    from .a2a.model import message_from_json

    return OrchestrationPlan(
        goal=value.get("goal", ""),
        steps=tuple(
            PlanStep(
                agent_url=s["agentUrl"],
                skill_id=s["skillId"],
                message=message_from_json(s["message"]),
                depends_on=tuple(s.get("dependsOn", [])),
            )
            for s in value.get("steps", [])
        ),
    )


STEP_COMPLETED = "completed"
STEP_FAILED = "failed"
STEP_SKIPPED = "skipped"


@dataclass
class StepResult:
    index: int
    status: str
    task_id: str | None = None
    artifact_count: int = 0
    detail: str = ""


@dataclass
class ExecutionReport:
    steps: list[StepResult]
    artifacts: list[dict[str, Any]]  # snapshots, concatenated in step order

    @property
    def all_completed(self) -> bool:
        return all(s.status == STEP_COMPLETED for s in self.steps)


def execute_plan(
    plan: OrchestrationPlan,
    client_factory: Callable[[str], A2AClient],
    *,
    collector: TraceCollector | None = None,
    parent_span_id: str | None = None,
) -> ExecutionReport:
    """Run the plan's steps in order, respecting dependencies.

    A failed step marks every transitive dependent skipped; independent
    branches keep going. Failures land in the report, never as exceptions.
    """
    results: list[StepResult] = []
    artifacts: list[dict[str, Any]] = []
    bad: set[int] = set()  # failed or skipped step indices

    for index, step in enumerate(plan.steps):
        if any(dep in bad for dep in step.depends_on):
            results.append(StepResult(index=index, status=STEP_SKIPPED, detail="dependency failed"))
            bad.add(index)
            continue
        handle = collector.open_span("a2a-task", step.skill_id, parent_span_id) if collector else None
        try:
            client = client_factory(step.agent_url)
            snapshot = client.send_task(
                step.skill_id,
                step.message,
                trace_parent=handle.span_id if handle else None,
            )
            final = client.get_task(snapshot["id"])
        except (TransportError, UnauthorizedError, A2ARpcError) as exc:
            if handle and collector:
                collector.close_span(handle, SpanStatus.error(type(exc).__name__, str(exc)))
            results.append(StepResult(index=index, status=STEP_FAILED, detail=str(exc)))
            bad.add(index)
            continue
        state = final["state"]
        if state == TaskState.COMPLETED.value:
            if handle and collector:
                collector.close_span(handle)
            artifacts.extend(final["artifacts"])
            results.append(
                StepResult(
                    index=index,
                    status=STEP_COMPLETED,
                    task_id=final["id"],
                    artifact_count=len(final["artifacts"]),
                )
            )
        else:
            if handle and collector:
                collector.close_span(handle, SpanStatus.error("task-" + state, f"task ended {state}"))
            results.append(StepResult(index=index, status=STEP_FAILED, task_id=final["id"], detail=f"task ended {state}"))
            bad.add(index)

    return ExecutionReport(steps=results, artifacts=artifacts)
