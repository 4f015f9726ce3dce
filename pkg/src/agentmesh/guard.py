"""Zero-trust tool registry: content-hash pinning, invocation policy, audit.

A pin is the SHA-256 of a tool's entire canonical definition, description
and annotations included, so a squatted or silently mutated tool trips
drift detection even when only its description changed. Unpinned tools are
denied by default, and every decision lands in an append-only audit log.
"""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping

from .canonical import canonical_json, content_digest
from .mcp.model import ToolDef, tool_def_to_json
from .trace import SpanStatus, TraceCollector

ALLOW = "allow"
DENY = "deny"
NEEDS_CONSENT = "needs-consent"

REASON_DRIFT = "definition-drift"
REASON_UNPINNED = "unpinned-tool"


@dataclass(frozen=True)
class Verdict:
    decision: str
    reason: str

    def __post_init__(self) -> None:
        if self.decision in (DENY, NEEDS_CONSENT) and not self.reason:
            raise ValueError("deny and needs-consent verdicts need a reason")

    @staticmethod
    def allow(reason: str = "authorized") -> "Verdict":
        return Verdict(ALLOW, reason)

    @staticmethod
    def deny(reason: str) -> "Verdict":
        return Verdict(DENY, reason)

    @staticmethod
    def needs_consent(reason: str) -> "Verdict":
        return Verdict(NEEDS_CONSENT, reason)


def verdict_to_json(verdict: Verdict) -> dict[str, str]:
    return {"decision": verdict.decision, "reason": verdict.reason}


# ---------------------------------------------------------------------------
# Pins
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ToolPin:
    server_name: str
    tool_name: str
    digest: str  # 32 bytes as lowercase hex
    pinned_at: int = 0


def pin_tool_definition(tool: ToolDef, server_name: str, pinned_at: int = 0) -> ToolPin:
    """Pin a tool definition by content hash of its canonical JSON."""
    return ToolPin(
        server_name=server_name,
        tool_name=tool.name,
        digest=content_digest(tool_def_to_json(tool)),
        pinned_at=pinned_at,
    )


def pin_to_json(pin: ToolPin) -> dict[str, Any]:
    return {
        "serverName": pin.server_name,
        "toolName": pin.tool_name,
        "digest": pin.digest,
        "pinnedAt": pin.pinned_at,
    }


def pin_from_json(value: Mapping[str, Any]) -> ToolPin:
    return ToolPin(
        server_name=value["serverName"],
        tool_name=value["toolName"],
        digest=value["digest"],
        pinned_at=value.get("pinnedAt", 0),
    )


class PinRegistry:
    """Immutable-by-convention lookup of pins keyed by (server, tool)."""

    def __init__(self, pins: Iterable[ToolPin] = ()) -> None:
        self._pins: dict[tuple[str, str], ToolPin] = {}
        for pin in pins:
            self._pins[(pin.server_name, pin.tool_name)] = pin

    def get(self, server_name: str, tool_name: str) -> ToolPin | None:
        return self._pins.get((server_name, tool_name))

    def add(self, pin: ToolPin) -> None:
        self._pins[(pin.server_name, pin.tool_name)] = pin

    def __len__(self) -> int:
        return len(self._pins)

    def pins(self) -> tuple[ToolPin, ...]:
        return tuple(self._pins[k] for k in sorted(self._pins))

    def to_jsonl(self) -> str:
        return "".join(canonical_json(pin_to_json(p)) + "\n" for p in self.pins())

    @staticmethod
    def from_jsonl(text: str) -> "PinRegistry":
        registry = PinRegistry()
        for line in text.splitlines():
            if line.strip():
                registry.add(pin_from_json(json.loads(line)))
        return registry


def evaluate_tool_against_registry(
    tool: ToolDef,
    server_name: str,
    pins: PinRegistry,
    default_decision: str = DENY,
) -> Verdict:
    """Compare a live tool definition against its pin.

    A matching digest allows; a differing digest is definition drift, which
    is how both squatting and silent mutation present; a missing pin falls
    back to the policy default.
    """
    pin = pins.get(server_name, tool.name)
    if pin is None:
        if default_decision == ALLOW:
            return Verdict.allow("unpinned tool allowed by policy default")
        return Verdict.deny(REASON_UNPINNED)
    live = content_digest(tool_def_to_json(tool))
    if live != pin.digest:
        return Verdict.deny(REASON_DRIFT)
    return Verdict.allow("digest-match")


# ---------------------------------------------------------------------------
# Policy
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Policy:
    """Who may invoke what, and whether destructive calls need consent.

    ``allowed_agents`` maps (server, tool) to the identities allowed to
    call it. A missing entry falls back to ``default_decision``; an entry
    that exists is exhaustive.
    """

    allowed_agents: Mapping[tuple[str, str], frozenset[str]] = field(default_factory=dict)
    require_consent_for_destructive: bool = True
    default_decision: str = DENY


def authorize_invocation(
    identity: str,
    tool: ToolDef,
    server_name: str,
    policy: Policy,
    consent_granted: bool,
) -> Verdict:
    """Policy decision for one invocation attempt.

    Identity is checked first, then the destructive-consent gate. Callers
    compose this after a registry evaluation has already allowed the
    definition itself.
    """
    allowed = policy.allowed_agents.get((server_name, tool.name))
    if allowed is None:
        if policy.default_decision != ALLOW:
            return Verdict.deny(f"identity {identity!r} not allowed for {server_name}/{tool.name}")
    elif identity not in allowed:
        return Verdict.deny(f"identity {identity!r} not allowed for {server_name}/{tool.name}")
    if tool.annotations.destructive_hint and policy.require_consent_for_destructive and not consent_granted:
        return Verdict.needs_consent(f"{server_name}/{tool.name} is destructive and lacks consent")
    return Verdict.allow("authorized")


# ---------------------------------------------------------------------------
# Audit log
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AuditRecord:
    seq: int
    actor: str
    action: str
    subject: str
    verdict: Verdict
    trace_span_id: str = ""


def audit_record_to_json(record: AuditRecord) -> dict[str, Any]:
    return {
        "seq": record.seq,
        "actor": record.actor,
        "action": record.action,
        "subject": record.subject,
        "verdict": verdict_to_json(record.verdict),
        "traceSpanId": record.trace_span_id,
    }


def audit_record_from_json(value: Mapping[str, Any]) -> AuditRecord:
    verdict = value["verdict"]
    return AuditRecord(
        seq=value["seq"],
        actor=value["actor"],
        action=value["action"],
        subject=value["subject"],
        verdict=Verdict(verdict["decision"], verdict["reason"]),
        trace_span_id=value.get("traceSpanId", ""),
    )


class AuditLog:
    """Append-only decision log with strictly increasing sequence numbers."""

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self._records: list[AuditRecord] = []

    def append(self, *, actor: str, action: str, subject: str, verdict: Verdict, trace_span_id: str = "") -> AuditRecord:
        with self._lock:
            record = AuditRecord(
                seq=len(self._records) + 1,
                actor=actor,
                action=action,
                subject=subject,
                verdict=verdict,
                trace_span_id=trace_span_id,
            )
            self._records.append(record)
            return record

    def records(self) -> tuple[AuditRecord, ...]:
        with self._lock:
            return tuple(self._records)

    def to_jsonl(self) -> str:
        return "".join(canonical_json(audit_record_to_json(r)) + "\n" for r in self.records())

    @staticmethod
    def from_jsonl(text: str) -> "AuditLog":
        log = AuditLog()
        for line in text.splitlines():
            if line.strip():
                record = audit_record_from_json(json.loads(line))
                log._records.append(record)
        return log

    def summary(self) -> dict[str, int]:
        counts = {"records": 0, ALLOW: 0, DENY: 0, NEEDS_CONSENT: 0}
        for record in self.records():
            counts["records"] += 1
            counts[record.verdict.decision] += 1
        return counts


# ---------------------------------------------------------------------------
# Composed invocation gate
# ---------------------------------------------------------------------------


class ToolGate:
    """Registry evaluation composed with policy authorization.

    One ``check`` call covers one invocation attempt: it opens a single
    policy-check span, appends an audit record per stage reached, and
    returns the final verdict. Callers must treat anything but allow as
    a hard stop.
    """

    def __init__(
        self,
        pins: PinRegistry,
        policy: Policy,
        audit: AuditLog,
        collector: TraceCollector | None = None,
        fault_hook=None,
    ) -> None:
        self.pins = pins
        self.policy = policy
        self.audit = audit
        self.collector = collector
        self.fault_hook = fault_hook

    def check(
        self,
        identity: str,
        tool: ToolDef,
        server_name: str,
        consent_granted: bool,
        parent_span_id: str | None = None,
    ) -> Verdict:
        subject = f"{server_name}/{tool.name}"
        handle = None
        if self.collector is not None:
            handle = self.collector.open_span("policy-check", subject, parent_span_id)
        span_id = handle.span_id if handle else ""

        injected = self.fault_hook("policy") if self.fault_hook else None
        if injected is not None:
            verdict = Verdict.deny("injected-fault")
            self.audit.append(actor=identity, action="registry-check", subject=subject, verdict=verdict, trace_span_id=span_id)
        else:
            verdict = evaluate_tool_against_registry(tool, server_name, self.pins, self.policy.default_decision)
            self.audit.append(actor=identity, action="registry-check", subject=subject, verdict=verdict, trace_span_id=span_id)
            if verdict.decision == ALLOW:
                verdict = authorize_invocation(identity, tool, server_name, self.policy, consent_granted)
                self.audit.append(actor=identity, action="authorize", subject=subject, verdict=verdict, trace_span_id=span_id)

        if handle is not None:
            if verdict.decision == ALLOW:
                self.collector.close_span(handle)
            else:
                self.collector.close_span(handle, SpanStatus.error(verdict.decision, verdict.reason))
        return verdict
