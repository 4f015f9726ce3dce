"""JSON-RPC 2.0 envelopes shared by both protocol stacks.

A wire message is exactly one of: request, notification, response with a
result, response with an error. The four dataclasses below make that split
structural instead of relying on field presence checks at call sites.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Mapping, Union

from .canonical import canonical_json

JSONRPC_VERSION = "2.0"

# Standard JSON-RPC 2.0 codes.
PARSE_ERROR = -32700
INVALID_REQUEST = -32600
METHOD_NOT_FOUND = -32601
INVALID_PARAMS = -32602
INTERNAL_ERROR = -32603

# Implementation-defined server range: agent endpoints.
TASK_NOT_FOUND = -32000
STREAM_REQUIRED = -32001
UNAUTHORIZED = -32002
ILLEGAL_TRANSITION = -32003

# Implementation-defined server range: tool endpoints.
TOOL_EXECUTION_FAILED = -32010
RESOURCE_NOT_FOUND = -32011


class EnvelopeError(ValueError):
    """Raised when bytes or a JSON value cannot be read as an envelope.

    ``code`` is the JSON-RPC error code a server should answer with
    (parse error for undecodable text, invalid request for bad shape).
    """

    def __init__(self, message: str, code: int) -> None:
        super().__init__(message)
        self.code = code


@dataclass(frozen=True)
class RpcError:
    code: int
    message: str
    data: Any = None


@dataclass(frozen=True)
class RpcRequest:
    id: int | str
    method: str
    params: Any = None


@dataclass(frozen=True)
class RpcNotification:
    method: str
    params: Any = None


@dataclass(frozen=True)
class RpcResult:
    id: int | str
    result: Any = None


@dataclass(frozen=True)
class RpcErrorResponse:
    # id is None only for errors answering an unparseable request.
    id: int | str | None
    error: RpcError


Envelope = Union[RpcRequest, RpcNotification, RpcResult, RpcErrorResponse]


def _valid_id(value: Any) -> bool:
    return (isinstance(value, str) or isinstance(value, int)) and not isinstance(value, bool)


def parse_envelope(raw: str | bytes | Mapping[str, Any]) -> Envelope:
    """Decode and validate one envelope.

    Raises EnvelopeError with PARSE_ERROR for undecodable input and
    INVALID_REQUEST for anything that decodes but is not exactly one of
    the four envelope shapes.
    """
    if isinstance(raw, (str, bytes)):
        import json

        try:
            value = json.loads(raw)
        except (ValueError, UnicodeDecodeError) as exc:
            raise EnvelopeError(f"undecodable JSON: {exc}", PARSE_ERROR) from exc
    else:
        value = raw
    if not isinstance(value, dict):
        raise EnvelopeError("envelope must be a JSON object", INVALID_REQUEST)
    if value.get("jsonrpc") != JSONRPC_VERSION:
        raise EnvelopeError("missing or wrong jsonrpc version", INVALID_REQUEST)

    keys = set(value) - {"jsonrpc"}
    has_id = "id" in value
    env_id = value.get("id")

    if "method" in value:
        if "result" in value or "error" in value:
            raise EnvelopeError("method combined with result/error", INVALID_REQUEST)
        method = value["method"]
        if not isinstance(method, str) or not method:
            raise EnvelopeError("method must be a non-empty string", INVALID_REQUEST)
        params = value.get("params")
        if params is not None and not isinstance(params, (dict, list)):
            raise EnvelopeError("params must be structured", INVALID_REQUEST)
        if keys - {"method", "params", "id"}:
            raise EnvelopeError("unexpected request fields", INVALID_REQUEST)
        if has_id:
            if not _valid_id(env_id):
                raise EnvelopeError("request id must be a string or number", INVALID_REQUEST)
            return RpcRequest(id=env_id, method=method, params=params)
        return RpcNotification(method=method, params=params)

    if "result" in value and "error" in value:
        raise EnvelopeError("result combined with error", INVALID_REQUEST)
    if "result" in value:
        if keys - {"result", "id"}:
            raise EnvelopeError("unexpected response fields", INVALID_REQUEST)
        if not has_id or not _valid_id(env_id):
            raise EnvelopeError("result response needs a string or number id", INVALID_REQUEST)
        return RpcResult(id=env_id, result=value["result"])
    if "error" in value:
        if keys - {"error", "id"}:
            raise EnvelopeError("unexpected response fields", INVALID_REQUEST)
        err = value["error"]
        if (
            not isinstance(err, dict)
            or not isinstance(err.get("code"), int)
            or isinstance(err.get("code"), bool)
            or not isinstance(err.get("message"), str)
            or set(err) - {"code", "message", "data"}
        ):
            raise EnvelopeError("malformed error object", INVALID_REQUEST)
        if not has_id or (env_id is not None and not _valid_id(env_id)):
            raise EnvelopeError("error response needs an id (null allowed)", INVALID_REQUEST)
        return RpcErrorResponse(id=env_id, error=RpcError(err["code"], err["message"], err.get("data")))

    raise EnvelopeError("not a request, notification, or response", INVALID_REQUEST)


def envelope_to_json(env: Envelope) -> dict[str, Any]:
    """JSON value form of an envelope; inverse of parse_envelope."""
    out: dict[str, Any] = {"jsonrpc": JSONRPC_VERSION}
    if isinstance(env, RpcRequest):
        out["id"] = env.id
        out["method"] = env.method
        if env.params is not None:
            out["params"] = env.params
    elif isinstance(env, RpcNotification):
        out["method"] = env.method
        if env.params is not None:
            out["params"] = env.params
    elif isinstance(env, RpcResult):
        out["id"] = env.id
        out["result"] = env.result
    elif isinstance(env, RpcErrorResponse):
        out["id"] = env.id
        err: dict[str, Any] = {"code": env.error.code, "message": env.error.message}
        if env.error.data is not None:
            err["data"] = env.error.data
        out["error"] = err
    else:  # pragma: no cover - exhaustive over the union
        raise TypeError(f"not an envelope: {env!r}")
    return out


def encode_envelope(env: Envelope) -> str:
    """Canonical text form of an envelope."""
    return canonical_json(envelope_to_json(env))


def error_response(env_id: int | str | None, code: int, message: str, data: Any = None) -> RpcErrorResponse:
    return RpcErrorResponse(id=env_id, error=RpcError(code, message, data))


def extract_id(raw: str | bytes | Mapping[str, Any]) -> int | str | None:
    """Best-effort id recovery from a malformed envelope, for error echoes."""
    value: Any = raw
    if isinstance(raw, (str, bytes)):
        import json

        try:
            value = json.loads(raw)
        except (ValueError, UnicodeDecodeError):
            return None
    if isinstance(value, dict) and _valid_id(value.get("id")):
        return value["id"]
    return None
