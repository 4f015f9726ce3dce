"""A2A domain model: agent cards, skills, messages, parts, artifacts.

All types are immutable values with an exact canonical JSON form. Field
names on the wire are camelCase (``skillId``, ``inputModes``, ``lastChunk``);
absent optional fields are omitted, never null, so serialization is
byte-stable.
"""

from __future__ import annotations

import base64
import json
import re
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping, Sequence, Union

from ..canonical import canonical_json

ROLE_USER = "user"
ROLE_AGENT = "agent"

# type/subtype tokens per the media-type grammar; parameters are out of scope
_MIME_RE = re.compile(r"^[-!#$%&'*+.^_`|~0-9A-Za-z]+/[-!#$%&'*+.^_`|~0-9A-Za-z]+$")


def is_valid_mime_type(value: str) -> bool:
    return bool(_MIME_RE.match(value))


# ---------------------------------------------------------------------------
# Errors
# ---------------------------------------------------------------------------


class AgentCardError(ValueError):
    """Base for agent card validation failures."""


class MalformedJsonError(AgentCardError):
    pass


class MissingFieldError(AgentCardError):
    def __init__(self, field_name: str, where: str = "") -> None:
        super().__init__(f"missing field {field_name!r}" + (f" in {where}" if where else ""))
        self.field_name = field_name


class EmptySkillsError(AgentCardError):
    def __init__(self) -> None:
        super().__init__("agent card must declare at least one skill")


class DuplicateSkillIdError(AgentCardError):
    def __init__(self, skill_id: str) -> None:
        super().__init__(f"duplicate skill id {skill_id!r}")
        self.skill_id = skill_id


class InvalidMimeTypeError(AgentCardError):
    def __init__(self, value: str) -> None:
        super().__init__(f"not a valid MIME type: {value!r}")
        self.value = value


class EmptyMessageError(ValueError):
    def __init__(self) -> None:
        super().__init__("a message needs at least one part")


class PartError(ValueError):
    """Invalid part construction or parse."""


# ---------------------------------------------------------------------------
# Parts and messages
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TextPart:
    text: str


@dataclass(frozen=True)
class FilePart:
    """Binary content carried inline (base64 on the wire) or by URI.

    Exactly one of ``data`` and ``uri`` must be set.
    """

    name: str
    mime_type: str
    data: bytes | None = None
    uri: str | None = None

    def __post_init__(self) -> None:
        if (self.data is None) == (self.uri is None):
            raise PartError("file part carries exactly one of payload bytes or uri")


@dataclass(frozen=True)
class DataPart:
    """Structured JSON content. ``data`` may be any JSON value."""

    data: Any


Part = Union[TextPart, FilePart, DataPart]


def part_to_json(part: Part) -> dict[str, Any]:
    if isinstance(part, TextPart):
        return {"type": "text", "text": part.text}
    if isinstance(part, FilePart):
        out: dict[str, Any] = {"type": "file", "name": part.name, "mimeType": part.mime_type}
        if part.data is not None:
            out["bytes"] = base64.b64encode(part.data).decode("ascii")
        else:
            out["uri"] = part.uri
        return out
    if isinstance(part, DataPart):
        return {"type": "data", "data": part.data}
    raise PartError(f"not a part: {part!r}")


def part_from_json(value: Any) -> Part:
    if not isinstance(value, dict):
        raise PartError(f"part must be an object, got {type(value).__name__}")
    kind = value.get("type")
    if kind == "text":
        text = value.get("text")
        if not isinstance(text, str):
            raise PartError("text part needs a string 'text'")
        return TextPart(text=text)
    if kind == "file":
        name = value.get("name")
        mime = value.get("mimeType")
        if not isinstance(name, str) or not isinstance(mime, str):
            raise PartError("file part needs string 'name' and 'mimeType'")
        has_bytes = "bytes" in value
        has_uri = "uri" in value
        if has_bytes == has_uri:
            raise PartError("file part carries exactly one of 'bytes' or 'uri'")
        if has_bytes:
            try:
                payload = base64.b64decode(value["bytes"], validate=True)
            except Exception as exc:
                raise PartError(f"file part bytes are not valid base64: {exc}") from exc
            return FilePart(name=name, mime_type=mime, data=payload)
        uri = value["uri"]
        if not isinstance(uri, str) or not uri:
            raise PartError("file part uri must be a non-empty string")
        return FilePart(name=name, mime_type=mime, uri=uri)
    if kind == "data":
        if "data" not in value:
            raise PartError("data part needs a 'data' value")
        return DataPart(data=value["data"])
    raise PartError(f"unknown part type: {kind!r}")


@dataclass(frozen=True)
class Message:
    """One conversation turn: a role plus one or more content parts."""

    role: str
    parts: tuple[Part, ...]

    def __post_init__(self) -> None:
        if self.role not in (ROLE_USER, ROLE_AGENT):
            raise ValueError(f"message role must be 'user' or 'agent', got {self.role!r}")
        if not self.parts:
            raise EmptyMessageError()

    def first_data_part(self) -> DataPart | None:
        for part in self.parts:
            if isinstance(part, DataPart):
                return part
        return None

    def text(self) -> str:
        return "\n".join(p.text for p in self.parts if isinstance(p, TextPart))


def message_to_json(message: Message) -> dict[str, Any]:
    return {"role": message.role, "parts": [part_to_json(p) for p in message.parts]}


def message_from_json(value: Any) -> Message:
    if not isinstance(value, dict):
        raise PartError("message must be an object")
    parts = value.get("parts")
    if not isinstance(parts, list):
        raise PartError("message needs a 'parts' array")
    return Message(role=value.get("role"), parts=tuple(part_from_json(p) for p in parts))


def user_message(*parts: Part) -> Message:
    return Message(role=ROLE_USER, parts=tuple(parts))


def agent_message(*parts: Part) -> Message:
    return Message(role=ROLE_AGENT, parts=tuple(parts))


# ---------------------------------------------------------------------------
# Artifacts
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Artifact:
    """An immutable task output, or one streamed chunk of one.

    ``index`` orders artifacts within a task. ``append`` marks a chunk that
    extends the open artifact at its index; ``last_chunk`` seals the index.
    """

    name: str
    parts: tuple[Part, ...]
    description: str = ""
    metadata: dict[str, Any] = field(default_factory=dict)
    index: int = 0
    append: bool = False
    last_chunk: bool = False

    def __post_init__(self) -> None:
        if self.index < 0:
            raise ValueError("artifact index must be non-negative")
        if not self.parts:
            raise ValueError("artifact needs at least one part")


def artifact_to_json(artifact: Artifact) -> dict[str, Any]:
    return {
        "name": artifact.name,
        "description": artifact.description,
        "parts": [part_to_json(p) for p in artifact.parts],
        "metadata": artifact.metadata,
        "index": artifact.index,
        "append": artifact.append,
        "lastChunk": artifact.last_chunk,
    }


def artifact_from_json(value: Any) -> Artifact:
    if not isinstance(value, dict):
        raise PartError("artifact must be an object")
    parts = value.get("parts")
    if not isinstance(parts, list):
        raise PartError("artifact needs a 'parts' array")
    return Artifact(
        name=value.get("name", ""),
        description=value.get("description", ""),
        parts=tuple(part_from_json(p) for p in parts),
        metadata=dict(value.get("metadata", {})),
        index=value.get("index", 0),
        append=bool(value.get("append", False)),
        last_chunk=bool(value.get("lastChunk", False)),
    )


# ---------------------------------------------------------------------------
# Cards, skills, auth
# ---------------------------------------------------------------------------

AUTH_NONE = "none"
AUTH_BEARER = "bearer"


@dataclass(frozen=True)
class AuthScheme:
    """Authentication requirement advertised on a card.

    Only ``none`` and static ``bearer`` tokens are modeled; the token itself
    is server configuration and never appears on the public card.
    """

    scheme: str = AUTH_NONE

    def __post_init__(self) -> None:
        if self.scheme not in (AUTH_NONE, AUTH_BEARER):
            raise ValueError(f"unsupported auth scheme: {self.scheme!r}")


@dataclass(frozen=True)
class PushNotificationConfig:
    url: str
    token: str | None = None

    def __post_init__(self) -> None:
        if not self.url:
            raise ValueError("push notification url must be non-empty")


def push_config_to_json(config: PushNotificationConfig) -> dict[str, Any]:
    out: dict[str, Any] = {"url": config.url}
    if config.token is not None:
        out["token"] = config.token
    return out


def push_config_from_json(value: Any) -> PushNotificationConfig:
    if not isinstance(value, dict) or not isinstance(value.get("url"), str):
        raise PartError("push notification config needs a string 'url'")
    return PushNotificationConfig(url=value["url"], token=value.get("token"))


@dataclass(frozen=True)
class Skill:
    """An advertised capability: id, name, description, tags, mode hints."""

    id: str
    name: str
    description: str = ""
    tags: tuple[str, ...] = ()
    examples: tuple[str, ...] | None = None
    input_modes: tuple[str, ...] | None = None
    output_modes: tuple[str, ...] | None = None

    def __post_init__(self) -> None:
        if not self.id:
            raise ValueError("skill id must be non-empty")


@dataclass(frozen=True)
class AgentCard:
    """An agent's self-description, served at /.well-known/agent.json."""

    name: str
    description: str
    url: str
    version: str
    auth: AuthScheme
    default_input_modes: tuple[str, ...]
    default_output_modes: tuple[str, ...]
    skills: tuple[Skill, ...]
    provider: str | None = None

    def skill(self, skill_id: str) -> Skill | None:
        for skill in self.skills:
            if skill.id == skill_id:
                return skill
        return None

    def skills_with_tags(self, tags: Iterable[str]) -> list[Skill]:
        wanted = set(tags)
        return [s for s in self.skills if wanted.issubset(set(s.tags))]


def skill_to_json(skill: Skill) -> dict[str, Any]:
    out: dict[str, Any] = {
        "id": skill.id,
        "name": skill.name,
        "description": skill.description,
        "tags": list(skill.tags),
    }
    if skill.examples is not None:
        out["examples"] = list(skill.examples)
    if skill.input_modes is not None:
        out["inputModes"] = list(skill.input_modes)
    if skill.output_modes is not None:
        out["outputModes"] = list(skill.output_modes)
    return out


def agent_card_to_json(card: AgentCard) -> dict[str, Any]:
    out: dict[str, Any] = {
        "name": card.name,
        "description": card.description,
        "url": card.url,
        "version": card.version,
        "auth": {"scheme": card.auth.scheme},
        "defaultInputModes": list(card.default_input_modes),
        "defaultOutputModes": list(card.default_output_modes),
        "skills": [skill_to_json(s) for s in card.skills],
    }
    if card.provider is not None:
        out["provider"] = card.provider
    return out


def agent_card_canonical(card: AgentCard) -> str:
    return canonical_json(agent_card_to_json(card))


def _require(value: Mapping[str, Any], name: str, where: str) -> Any:
    if name not in value:
        raise MissingFieldError(name, where)
    return value[name]


def _mode_list(values: Any, where: str) -> tuple[str, ...]:
    if not isinstance(values, list):
        raise MissingFieldError("modes", where)
    for mode in values:
        if not isinstance(mode, str) or not is_valid_mime_type(mode):
            raise InvalidMimeTypeError(str(mode))
    return tuple(values)


def _skill_from_json(value: Any) -> Skill:
    if not isinstance(value, dict):
        raise MalformedJsonError("skill must be an object")
    skill_id = _require(value, "id", "skill")
    if not isinstance(skill_id, str) or not skill_id:
        raise MissingFieldError("id", "skill")
    examples = value.get("examples")
    input_modes = value.get("inputModes")
    output_modes = value.get("outputModes")
    return Skill(
        id=skill_id,
        name=_require(value, "name", f"skill {skill_id!r}"),
        description=value.get("description", ""),
        tags=tuple(value.get("tags", [])),
        examples=tuple(examples) if examples is not None else None,
        input_modes=_mode_list(input_modes, f"skill {skill_id!r}") if input_modes is not None else None,
        output_modes=_mode_list(output_modes, f"skill {skill_id!r}") if output_modes is not None else None,
    )


def agent_card_from_json(value: Any) -> AgentCard:
    if not isinstance(value, dict):
        raise MalformedJsonError("agent card must be a JSON object")
    url = _require(value, "url", "agent card")
    if not isinstance(url, str) or not url:
        raise MissingFieldError("url", "agent card")
    raw_skills = _require(value, "skills", "agent card")
    if not isinstance(raw_skills, list) or not raw_skills:
        raise EmptySkillsError()
    skills = tuple(_skill_from_json(s) for s in raw_skills)
    seen: set[str] = set()
    for skill in skills:
        if skill.id in seen:
            raise DuplicateSkillIdError(skill.id)
        seen.add(skill.id)
    auth_value = value.get("auth", {"scheme": AUTH_NONE})
    if not isinstance(auth_value, dict) or "scheme" not in auth_value:
        raise MissingFieldError("auth.scheme", "agent card")
    try:
        auth = AuthScheme(scheme=auth_value["scheme"])
    except ValueError as exc:
        raise MalformedJsonError(str(exc)) from exc
    return AgentCard(
        name=_require(value, "name", "agent card"),
        description=value.get("description", ""),
        url=url,
        version=_require(value, "version", "agent card"),
        auth=auth,
        default_input_modes=_mode_list(_require(value, "defaultInputModes", "agent card"), "agent card"),
        default_output_modes=_mode_list(_require(value, "defaultOutputModes", "agent card"), "agent card"),
        skills=skills,
        provider=value.get("provider"),
    )


def parse_agent_card(document: str | bytes) -> AgentCard:
    """Parse and validate an agent card document.

    Every type invariant is checked: non-empty skills, unique skill ids,
    syntactically valid MIME modes, non-empty endpoint url.
    """
    try:
        value = json.loads(document)
    except (ValueError, UnicodeDecodeError) as exc:
        raise MalformedJsonError(f"agent card is not valid JSON: {exc}") from exc
    return agent_card_from_json(value)


def negotiate_output_mode(skill: Skill, card: AgentCard, client_modes: Sequence[str]) -> str | None:
    """Pick an output mode: intersect the skill's declared modes (falling
    back to card defaults) with the client's, keeping the skill's order."""
    declared = skill.output_modes if skill.output_modes is not None else card.default_output_modes
    accepted = set(client_modes)
    for mode in declared:
        if mode in accepted:
            return mode
    return None
