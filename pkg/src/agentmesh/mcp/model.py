"""MCP primitives: tools, resources, prompts, roots, sampling.

Tool input schemas use a deliberately small JSON Schema subset: the types
object, string, number, integer, boolean, and array, plus properties,
required, items, and enum. Anything outside the subset is rejected when
the definition is registered, not when a call arrives, so a tool that
loads is a tool whose arguments can always be checked.
"""

from __future__ import annotations

import base64
import re
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping, Sequence

from ..canonical import canonical_json

SCHEMA_TYPES = ("object", "string", "number", "integer", "boolean", "array")
_SCHEMA_KEYS = {"type", "properties", "required", "items", "enum"}


# ---------------------------------------------------------------------------
# Schema definition checks
# ---------------------------------------------------------------------------


class SchemaDefinitionError(ValueError):
    """The schema document itself is invalid."""


class UnknownSchemaFeatureError(SchemaDefinitionError):
    def __init__(self, feature: str, path: str) -> None:
        super().__init__(f"unsupported schema feature {feature!r} at {path or '/'}")
        self.feature = feature
        self.path = path


def validate_schema_definition(schema: Any, path: str = "") -> None:
    """Check a schema document against the supported subset, recursively."""
    if not isinstance(schema, dict):
        raise SchemaDefinitionError(f"schema at {path or '/'} must be an object")
    for key in schema:
        if key not in _SCHEMA_KEYS:
            raise UnknownSchemaFeatureError(key, path)
    stype = schema.get("type")
    if stype not in SCHEMA_TYPES:
        raise SchemaDefinitionError(f"schema at {path or '/'} needs a type from {SCHEMA_TYPES}")
    if "properties" in schema or "required" in schema:
        if stype != "object":
            raise UnknownSchemaFeatureError("properties", path)
        props = schema.get("properties", {})
        if not isinstance(props, dict):
            raise SchemaDefinitionError(f"properties at {path or '/'} must be an object")
        for name, sub in props.items():
            validate_schema_definition(sub, f"{path}/{name}")
        required = schema.get("required", [])
        if not isinstance(required, list) or any(not isinstance(r, str) for r in required):
            raise SchemaDefinitionError(f"required at {path or '/'} must be a list of names")
        missing = [r for r in required if r not in props]
        if missing:
            raise SchemaDefinitionError(f"required names {missing} not among properties at {path or '/'}")
    if "items" in schema:
        if stype != "array":
            raise UnknownSchemaFeatureError("items", path)
        validate_schema_definition(schema["items"], f"{path}/items")
    if "enum" in schema:
        members = schema["enum"]
        if not isinstance(members, list) or not members:
            raise SchemaDefinitionError(f"enum at {path or '/'} must be a non-empty list")
        for member in members:
            if _json_type_of(member) != stype and not (stype == "number" and _json_type_of(member) == "integer"):
                raise SchemaDefinitionError(f"enum member {member!r} does not match type {stype} at {path or '/'}")


# ---------------------------------------------------------------------------
# Instance validation
# ---------------------------------------------------------------------------


def _json_type_of(value: Any) -> str:
    if isinstance(value, bool):
        return "boolean"
    if isinstance(value, int):
        return "integer"
    if isinstance(value, float):
        return "number"
    if isinstance(value, str):
        return "string"
    if isinstance(value, list):
        return "array"
    if isinstance(value, dict):
        return "object"
    return "null"


def _type_matches(expected: str, value: Any) -> bool:
    actual = _json_type_of(value)
    if expected == "number":
        return actual in ("number", "integer")
    return actual == expected


@dataclass(frozen=True)
class SchemaIssue:
    """One validation finding, addressed by a JSON-pointer-style path."""

    kind: str  # missing-required | type-mismatch | enum-violation
    path: str
    expected: str = ""
    actual: str = ""

    def describe(self) -> str:
        at = self.path or "/"
        if self.kind == "missing-required":
            return f"missing-required at {at}"
        if self.kind == "type-mismatch":
            return f"type-mismatch at {at}: expected {self.expected}, got {self.actual}"
        return f"enum-violation at {at}"


class SchemaValidationError(ValueError):
    def __init__(self, issues: Sequence[SchemaIssue]) -> None:
        super().__init__("; ".join(i.describe() for i in issues) or "invalid arguments")
        self.issues = tuple(issues)


def schema_issues(schema: Mapping[str, Any], value: Any, path: str = "") -> list[SchemaIssue]:
    """Collect every violation of ``schema`` by ``value``.

    The walk stops descending where the type is already wrong, so issue
    paths always point at real structure.
    """
    issues: list[SchemaIssue] = []
    stype = schema["type"]
    if not _type_matches(stype, value):
        return [SchemaIssue("type-mismatch", path, expected=stype, actual=_json_type_of(value))]
    if "enum" in schema:
        target = canonical_json(value)
        if not any(canonical_json(m) == target for m in schema["enum"]):
            issues.append(SchemaIssue("enum-violation", path))
    if stype == "object":
        props = schema.get("properties", {})
        for name in schema.get("required", []):
            if name not in value:
                issues.append(SchemaIssue("missing-required", f"{path}/{name}"))
        for name, sub in props.items():
            if name in value:
                issues.extend(schema_issues(sub, value[name], f"{path}/{name}"))
    elif stype == "array" and "items" in schema:
        for i, item in enumerate(value):
            issues.extend(schema_issues(schema["items"], item, f"{path}/{i}"))
    return issues


# ---------------------------------------------------------------------------
# Tools
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ToolAnnotations:
    destructive_hint: bool = False
    read_only_hint: bool = False


@dataclass(frozen=True)
class ToolDef:
    """An executable capability: name, description, argument schema, hints."""

    name: str
    description: str
    input_schema: Mapping[str, Any]
    annotations: ToolAnnotations = ToolAnnotations()

    def __post_init__(self) -> None:
        if not self.name:
            raise ValueError("tool name must be non-empty")
        validate_schema_definition(dict(self.input_schema))


def validate_tool_arguments(tool: ToolDef, args: Any) -> Any:
    """Return ``args`` unchanged iff it conforms to the tool's input schema."""
    issues = schema_issues(tool.input_schema, args)
    if issues:
        raise SchemaValidationError(issues)
    return args


def tool_def_to_json(tool: ToolDef) -> dict[str, Any]:
    return {
        "name": tool.name,
        "description": tool.description,
        "inputSchema": dict(tool.input_schema),
        "annotations": {
            "destructiveHint": tool.annotations.destructive_hint,
            "readOnlyHint": tool.annotations.read_only_hint,
        },
    }


def tool_def_from_json(value: Any) -> ToolDef:
    if not isinstance(value, dict):
        raise SchemaDefinitionError("tool definition must be an object")
    ann = value.get("annotations", {})
    return ToolDef(
        name=value.get("name", ""),
        description=value.get("description", ""),
        input_schema=value.get("inputSchema", {"type": "object"}),
        annotations=ToolAnnotations(
            destructive_hint=bool(ann.get("destructiveHint", False)),
            read_only_hint=bool(ann.get("readOnlyHint", False)),
        ),
    )


def tool_def_canonical(tool: ToolDef) -> str:
    return canonical_json(tool_def_to_json(tool))


class DuplicateNameError(ValueError):
    def __init__(self, name: str) -> None:
        super().__init__(f"duplicate name {name!r}")
        self.name = name


@dataclass(frozen=True)
class CapabilityDiff:
    """Name-level change report between two tool lists."""

    added: tuple[str, ...]
    removed: tuple[str, ...]
    modified: tuple[str, ...]

    @property
    def empty(self) -> bool:
        return not (self.added or self.removed or self.modified)


def _by_name(tools: Iterable[ToolDef]) -> dict[str, ToolDef]:
    table: dict[str, ToolDef] = {}
    for tool in tools:
        if tool.name in table:
            raise DuplicateNameError(tool.name)
        table[tool.name] = tool
    return table


def diff_capability_lists(old: Sequence[ToolDef], new: Sequence[ToolDef]) -> CapabilityDiff:
    """Diff two tool lists by name; modified means same name, different
    canonical definition. The report is empty iff the lists are canonically
    equal as sets."""
    old_map = _by_name(old)
    new_map = _by_name(new)
    added = sorted(set(new_map) - set(old_map))
    removed = sorted(set(old_map) - set(new_map))
    modified = sorted(
        name
        for name in set(old_map) & set(new_map)
        if tool_def_canonical(old_map[name]) != tool_def_canonical(new_map[name])
    )
    return CapabilityDiff(added=tuple(added), removed=tuple(removed), modified=tuple(modified))


# ---------------------------------------------------------------------------
# Resources and roots
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ResourceContent:
    """Text or binary body. Exactly one of ``text`` and ``blob`` is set."""

    text: str | None = None
    blob: bytes | None = None

    def __post_init__(self) -> None:
        if (self.text is None) == (self.blob is None):
            raise ValueError("resource content is exactly one of text or blob")


@dataclass(frozen=True)
class ResourceDef:
    uri: str
    name: str
    description: str = ""
    mime_type: str = "text/plain"

    def __post_init__(self) -> None:
        if not self.uri:
            raise ValueError("resource uri must be non-empty")


def resource_def_to_json(res: ResourceDef) -> dict[str, Any]:
    return {
        "uri": res.uri,
        "name": res.name,
        "description": res.description,
        "mimeType": res.mime_type,
    }


def resource_content_to_json(content: ResourceContent) -> dict[str, Any]:
    if content.text is not None:
        return {"text": content.text}
    return {"blob": base64.b64encode(content.blob or b"").decode("ascii")}


def resource_content_from_json(value: Mapping[str, Any]) -> ResourceContent:
    if "text" in value:
        return ResourceContent(text=value["text"])
    return ResourceContent(blob=base64.b64decode(value["blob"], validate=True))


@dataclass(frozen=True)
class Root:
    """A uri prefix the client grants the session access to."""

    prefix: str
    label: str = ""

    def __post_init__(self) -> None:
        if not self.prefix:
            raise ValueError("root prefix must be non-empty")


class ResourceNotFoundError(Exception):
    def __init__(self, uri: str) -> None:
        super().__init__(f"no resource at {uri!r}")
        self.uri = uri


class OutsideRootsError(Exception):
    def __init__(self, uri: str) -> None:
        super().__init__(f"uri {uri!r} is outside the declared roots")
        self.uri = uri


def resolve_resource(
    uri: str,
    roots: Sequence[Root],
    store: Mapping[str, ResourceContent],
) -> ResourceContent:
    """Read a resource, confined to the declared roots.

    An empty roots list means no confinement. Confinement is checked before
    existence so a confined miss never reveals whether the uri exists.
    """
    if roots and not any(uri.startswith(root.prefix) for root in roots):
        raise OutsideRootsError(uri)
    if uri not in store:
        raise ResourceNotFoundError(uri)
    return store[uri]


# ---------------------------------------------------------------------------
# Prompts
# ---------------------------------------------------------------------------

_PLACEHOLDER_RE = re.compile(r"\{([A-Za-z_][A-Za-z0-9_]*)\}")


@dataclass(frozen=True)
class PromptArgument:
    name: str
    description: str = ""
    required: bool = False


@dataclass(frozen=True)
class PromptMessage:
    role: str
    text: str


@dataclass(frozen=True)
class PromptDef:
    """A reusable message template with named ``{placeholder}`` slots."""

    name: str
    description: str
    arguments: tuple[PromptArgument, ...]
    template: tuple[PromptMessage, ...]

    def __post_init__(self) -> None:
        declared = {a.name for a in self.arguments}
        for message in self.template:
            for placeholder in _PLACEHOLDER_RE.findall(message.text):
                if placeholder not in declared:
                    raise ValueError(f"placeholder {{{placeholder}}} names no declared argument")


class MissingArgumentError(ValueError):
    def __init__(self, name: str) -> None:
        super().__init__(f"required prompt argument {name!r} missing")
        self.name = name


class UnknownArgumentError(ValueError):
    def __init__(self, name: str) -> None:
        super().__init__(f"prompt argument {name!r} is not declared")
        self.name = name


def render_prompt(prompt: PromptDef, args: Mapping[str, str]) -> tuple[PromptMessage, ...]:
    """Substitute every placeholder; optional arguments left unset render
    as the empty string."""
    declared = {a.name for a in prompt.arguments}
    for name in args:
        if name not in declared:
            raise UnknownArgumentError(name)
    for arg in prompt.arguments:
        if arg.required and arg.name not in args:
            raise MissingArgumentError(arg.name)

    def substitute(text: str) -> str:
        return _PLACEHOLDER_RE.sub(lambda m: str(args.get(m.group(1), "")), text)

    return tuple(PromptMessage(role=m.role, text=substitute(m.text)) for m in prompt.template)


def prompt_def_to_json(prompt: PromptDef) -> dict[str, Any]:
    return {
        "name": prompt.name,
        "description": prompt.description,
        "arguments": [
            {"name": a.name, "description": a.description, "required": a.required}
            for a in prompt.arguments
        ],
        "template": [{"role": m.role, "text": m.text} for m in prompt.template],
    }


def prompt_def_from_json(value: Mapping[str, Any]) -> PromptDef:
    return PromptDef(
        name=value.get("name", ""),
        description=value.get("description", ""),
        arguments=tuple(
            PromptArgument(
                name=a["name"],
                description=a.get("description", ""),
                required=bool(a.get("required", False)),
            )
            for a in value.get("arguments", [])
        ),
        template=tuple(PromptMessage(role=m["role"], text=m["text"]) for m in value.get("template", [])),
    )


# ---------------------------------------------------------------------------
# Sampling
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SamplingRequest:
    """A server-side request for host text generation; inert until approved."""

    prompt: str
    approved: bool = False


class SamplingNotApprovedError(Exception):
    def __init__(self) -> None:
        super().__init__("sampling request was not approved")


def run_sampling(request: SamplingRequest, *, audit=None, actor: str = "host", trace_span_id: str = "") -> str:
    """Execute an approved sampling request with the canned generator.

    When an audit log is supplied, the approval decision is recorded either
    way, so the log can prove no unapproved request ever ran.
    """
    if audit is not None:
        from ..guard import Verdict

        verdict = Verdict.allow("sampling approved") if request.approved else Verdict.deny("sampling not approved")
        audit.append(actor=actor, action="sampling", subject=request.prompt[:80], verdict=verdict, trace_span_id=trace_span_id)
    if not request.approved:
        raise SamplingNotApprovedError()
    return f"[generated] {request.prompt}"
