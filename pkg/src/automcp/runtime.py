"""Serve a compiled manifest over newline-delimited JSON-RPC 2.0 on stdio.

`tools/call` requests are translated into authenticated HTTP requests
against the upstream base URL. Upstream calls may overlap (a small worker
pool), but every write to the output stream goes through one lock, so
each emitted line is exactly one complete JSON-RPC message. Credential
values never appear on the stdio channel or in logs.
"""

from __future__ import annotations

import base64
import json
import logging
import sys
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from urllib.parse import quote

import requests

from ._version import __version__ as _version
from .compiler import ToolManifest, ToolSpec, tools_list_payload
from .envfile import EXTRA_HEADERS_VAR
from .errors import (
    ExtraHeadersParseError,
    MissingCredential,
    SchemaViolation,
    TransportError,
)
from .security import (
    EnvBinding,
    INJECT_BASIC_USERPASS,
    KIND_API_KEY,
    KIND_HTTP_BASIC,
    KIND_HTTP_BEARER,
    KIND_OAUTH2,
    SecurityScheme,
    build_env_map,
)

logger = logging.getLogger("automcp.runtime")

PROTOCOL_VERSIONS = ("2024-11-05", "2025-03-26", "2025-06-18")
DEFAULT_TIMEOUT_SECONDS = 30.0
REDACTED = "***"

_RPC_PARSE_ERROR = -32700
_RPC_INVALID_PARAMS = -32602
_RPC_METHOD_NOT_FOUND = -32601
_RPC_INTERNAL = -32603


@dataclass
class AuthPlan:
    headers: dict[str, str] = field(default_factory=dict)
    query: dict[str, str] = field(default_factory=dict)
    secret_values: set[str] = field(default_factory=set)


@dataclass
class InvocationResult:
    http_status: int
    body: object
    is_error: bool
    request_echo: dict


def resolve_auth(
    requirements: list[dict],
    schemes: list[SecurityScheme],
    env: dict[str, str],
    bindings: list[EnvBinding],
) -> AuthPlan:
    """Build the header/query injection plan for one endpoint.

    Requirement sets are alternatives; within a set every scheme applies.
    The first set whose bindings are all satisfied by `env` wins. Raises
    MissingCredential (naming the first unmet variable) when none is.
    """
    if not requirements:
        return AuthPlan()
    by_scheme: dict[str, list[EnvBinding]] = {}
    for binding in bindings:
        by_scheme.setdefault(binding.scheme_id, []).append(binding)
    scheme_map = {s.id: s for s in schemes}

    first_missing: str | None = None
    for requirement in requirements:
        plan = AuthPlan()
        missing: str | None = None
        for scheme_id in requirement:
            scheme = scheme_map.get(scheme_id)
            if scheme is None:
                missing = f"(undeclared scheme {scheme_id!r})"
                break
            missing = _apply_scheme(plan, scheme, by_scheme.get(scheme_id, []), env)
            if missing:
                break
        if missing is None:
            return plan
        if first_missing is None:
            first_missing = missing
    raise MissingCredential(first_missing or "(no satisfiable security requirement)")


def _apply_scheme(
    plan: AuthPlan,
    scheme: SecurityScheme,
    scheme_bindings: list[EnvBinding],
    env: dict[str, str],
) -> str | None:
    """Inject one scheme into the plan; returns the missing env var name
    (if any) instead of mutating further."""
    values = {}
    for binding in scheme_bindings:
        value = env.get(binding.env_var, "")
        if not value:
            return binding.env_var
        values[binding.role] = value
        plan.secret_values.add(value)
    if not scheme_bindings:
        return f"(no binding for scheme {scheme.id!r})"

    if scheme.kind == KIND_API_KEY:
        secret = next(iter(values.values()))
        if scheme.location == "header":
            plan.headers[scheme.parameter_name] = secret
        elif scheme.location == "query":
            plan.query[scheme.parameter_name] = secret
        else:  # cookie
            _append_cookie(plan, scheme.parameter_name, secret)
    elif scheme.kind == KIND_HTTP_BASIC:
        userpass = [b for b in scheme_bindings if b.injection == INJECT_BASIC_USERPASS]
        user = values.get(userpass[0].role, "") if userpass else ""
        password = values.get(userpass[1].role, "") if len(userpass) > 1 else ""
        token = base64.b64encode(f"{user}:{password}".encode()).decode()
        plan.headers["Authorization"] = f"Basic {token}"
        plan.secret_values.add(token)
    elif scheme.kind in (KIND_HTTP_BEARER, KIND_OAUTH2):
        plan.headers["Authorization"] = f"Bearer {next(iter(values.values()))}"
    return None


def _append_cookie(plan: AuthPlan, name: str, value: str) -> None:
    pair = f"{name}={value}"
    existing = plan.headers.get("Cookie")
    plan.headers["Cookie"] = f"{existing}; {pair}" if existing else pair


def merge_extra_headers(plan: AuthPlan, env: dict[str, str]) -> AuthPlan:
    """Merge the EXTRA_HEADERS JSON object into the plan's headers,
    overriding case-insensitively. A no-op when the variable is unset."""
    raw = env.get(EXTRA_HEADERS_VAR, "").strip()
    if not raw:
        return plan
    extra = parse_extra_headers(raw)
    lowered = {k.lower(): k for k in plan.headers}
    for name, value in extra.items():
        existing = lowered.get(name.lower())
        if existing is not None and existing != name:
            del plan.headers[existing]
        plan.headers[name] = value
        lowered[name.lower()] = name
    return plan


def parse_extra_headers(raw: str) -> dict[str, str]:
    try:
        parsed = json.loads(raw)
    except ValueError as exc:
        raise ExtraHeadersParseError(f"EXTRA_HEADERS is not valid JSON: {exc}") from exc
    if not isinstance(parsed, dict) or not all(
        isinstance(k, str) and isinstance(v, str) for k, v in parsed.items()
    ):
        raise ExtraHeadersParseError(
            "EXTRA_HEADERS must be a JSON object of string -> string"
        )
    return parsed


def validate_args(args: object, schema: dict) -> list[str]:
    """Check arguments against a closed input schema; returns problems."""
    problems: list[str] = []
    if not isinstance(args, dict):
        return [f"arguments must be an object, got {type(args).__name__}"]
    properties = schema.get("properties", {})
    for key in args:
        if key not in properties:
            problems.append(f"unexpected argument {key!r}")
    for key in schema.get("required", []):
        if key not in args:
            problems.append(f"missing required argument {key!r}")
    for key, value in args.items():
        declared = properties.get(key, {})
        expected = declared.get("type")
        if expected and not _type_ok(value, expected):
            problems.append(
                f"argument {key!r} should be of type {expected}, "
                f"got {type(value).__name__}"
            )
    return problems


def _type_ok(value, expected) -> bool:
    if isinstance(expected, list):
        return any(_type_ok(value, e) for e in expected)
    if expected == "string":
        return isinstance(value, str)
    if expected == "integer":
        return isinstance(value, int) and not isinstance(value, bool)
    if expected == "number":
        return isinstance(value, (int, float)) and not isinstance(value, bool)
    if expected == "boolean":
        return isinstance(value, bool)
    if expected == "array":
        return isinstance(value, list)
    if expected == "object":
        return isinstance(value, dict)
    if expected == "null":
        return value is None
    return True


def bindings_for(manifest: ToolManifest) -> list[EnvBinding]:
    """Bindings are a pure function of the schemes and title, so the
    runtime can rederive them instead of persisting them."""
    return build_env_map(manifest.schemes, manifest.api_title)[0]


def invoke_tool(
    tool: ToolSpec,
    args: dict,
    env: dict[str, str],
    base_url: str,
    schemes: list[SecurityScheme],
    bindings: list[EnvBinding],
    timeout: float = DEFAULT_TIMEOUT_SECONDS,
) -> InvocationResult:
    """Translate one tool call into an upstream HTTP request.

    Raises SchemaViolation / MissingCredential before any request is
    issued; network failures surface as TransportError.
    """
    problems = validate_args(args, tool.input_schema)
    if problems:
        raise SchemaViolation("; ".join(problems))
    ep = tool.endpoint

    path = ep.path_template
    query: dict[str, object] = {}
    headers: dict[str, str] = {}
    cookies: list[str] = []
    secret_values: set[str] = set()
    binding_by_scheme: dict[str, EnvBinding] = {}
    for binding in bindings:
        binding_by_scheme.setdefault(binding.scheme_id, binding)

    for param in ep.parameters:
        if param.is_credential:
            binding = binding_by_scheme.get(param.credential_scheme_id)
            value = env.get(binding.env_var, "") if binding else ""
            if not value:
                raise MissingCredential(
                    binding.env_var if binding else param.credential_scheme_id or ""
                )
            secret_values.add(value)
        elif param.sanitized_name in args:
            value = args[param.sanitized_name]
        elif param.location == "path":
            raise SchemaViolation(f"missing path parameter {param.name!r}")
        else:
            continue
        if param.location == "path":
            path = path.replace(
                "{%s}" % param.name, quote(_scalar(value), safe="")
            )
        elif param.location == "query":
            query[param.name] = value
        elif param.location == "header":
            headers[param.name] = _scalar(value)
        elif param.location == "cookie":
            cookies.append(f"{param.name}={_scalar(value)}")

    plan = resolve_auth(ep.security, schemes, env, bindings)
    plan = merge_extra_headers(plan, env)
    plan_cookie = plan.headers.pop("Cookie", None)
    if plan_cookie:
        cookies.append(plan_cookie)  # merge auth cookies with cookie params
    headers.update(plan.headers)
    if cookies:
        headers["Cookie"] = "; ".join(cookies)
    query.update(plan.query)
    secret_values |= plan.secret_values

    body_kwargs: dict = {}
    if ep.request_body_schema is not None and "body" in args:
        content_type = ep.request_content_type or "application/json"
        if content_type == "application/x-www-form-urlencoded" and isinstance(
            args["body"], dict
        ):
            body_kwargs["data"] = args["body"]
        elif "json" in content_type:
            body_kwargs["json"] = args["body"]
        else:
            body_kwargs["data"] = _scalar(args["body"])
            headers.setdefault("Content-Type", content_type)

    url = base_url.rstrip("/") + path
    try:
        response = requests.request(
            ep.method, url, params=query, headers=headers,
            timeout=timeout, **body_kwargs,
        )
    except requests.RequestException as exc:
        detail = _redact(f"{exc.__class__.__name__}: {exc}", secret_values)
        raise TransportError(
            f"{ep.method} {_redact(url, secret_values)}: {detail}"
        ) from exc

    body: object
    content_type = response.headers.get("Content-Type", "")
    if "json" in content_type:
        try:
            body = response.json()
        except ValueError:
            body = response.text
    else:
        body = response.text

    echo = {
        "method": ep.method,
        "url": _redact(response.url, secret_values),
        "header_names": sorted(headers),
    }
    logger.debug("%s %s -> %s", ep.method, echo["url"], response.status_code)
    return InvocationResult(
        http_status=response.status_code,
        body=body,
        is_error=not (200 <= response.status_code <= 299),
        request_echo=echo,
    )


def _scalar(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (dict, list)):
        return json.dumps(value)
    return str(value)


def _redact(text: str, secrets: set[str]) -> str:
    for secret in secrets:
        if secret:
            text = text.replace(secret, REDACTED)
            text = text.replace(quote(secret, safe=""), REDACTED)
    return text


# -- the stdio server ---------------------------------------------------------


class _Writer:
    def __init__(self, stream) -> None:
        self._stream = stream
        self._lock = threading.Lock()

    def send(self, message: dict) -> None:
        line = json.dumps(message, ensure_ascii=False)
        with self._lock:
            self._stream.write(line + "\n")
            self._stream.flush()


def serve(
    manifest: ToolManifest,
    env: dict[str, str],
    stdin=None,
    stdout=None,
    timeout: float = DEFAULT_TIMEOUT_SECONDS,
    max_workers: int = 4,
) -> None:
    """Run the JSON-RPC loop until the input stream closes.

    The env snapshot is taken once here; EXTRA_HEADERS is validated at
    startup so a malformed value fails fast rather than per call.
    """
    if env.get(EXTRA_HEADERS_VAR, "").strip():
        parse_extra_headers(env[EXTRA_HEADERS_VAR])
    stdin = stdin if stdin is not None else sys.stdin
    stdout = stdout if stdout is not None else sys.stdout
    writer = _Writer(stdout)
    bindings = bindings_for(manifest)
    pool = ThreadPoolExecutor(max_workers=max_workers)
    try:
        for line in stdin:
            line = line.strip()
            if not line:
                continue
            try:
                message = json.loads(line)
            except ValueError:
                writer.send(_error_response(None, _RPC_PARSE_ERROR, "parse error"))
                continue
            if not isinstance(message, dict) or "method" not in message:
                writer.send(
                    _error_response(
                        message.get("id") if isinstance(message, dict) else None,
                        _RPC_INVALID_PARAMS,
                        "not a JSON-RPC request",
                    )
                )
                continue
            _dispatch(message, manifest, env, bindings, writer, pool, timeout)
    finally:
        pool.shutdown(wait=True)


def _dispatch(message, manifest, env, bindings, writer, pool, timeout) -> None:
    method = message["method"]
    msg_id = message.get("id")
    is_notification = "id" not in message
    params = message.get("params") or {}

    if method == "initialize":
        requested = None
        if isinstance(params, dict):
            requested = params.get("protocolVersion")
        version = requested if requested in PROTOCOL_VERSIONS else PROTOCOL_VERSIONS[0]
        if not is_notification:
            writer.send(
                {
                    "jsonrpc": "2.0",
                    "id": msg_id,
                    "result": {
                        "protocolVersion": version,
                        "capabilities": {"tools": {}},
                        "serverInfo": {"name": manifest.api_title, "version": _version},
                    },
                }
            )
    elif method == "tools/list":
        if not is_notification:
            writer.send(
                {
                    "jsonrpc": "2.0",
                    "id": msg_id,
                    "result": {"tools": tools_list_payload(manifest)},
                }
            )
    elif method == "tools/call":
        if not isinstance(params, dict) or not isinstance(params.get("name"), str):
            if not is_notification:
                writer.send(
                    _error_response(
                        msg_id, _RPC_INVALID_PARAMS, "params must carry a tool `name`"
                    )
                )
            return
        tool = manifest.tool(params["name"])
        if tool is None:
            if not is_notification:
                writer.send(
                    _error_response(
                        msg_id, _RPC_INVALID_PARAMS, f"unknown tool {params['name']!r}"
                    )
                )
            return
        arguments = params.get("arguments") or {}
        pool.submit(
            _run_call, tool, arguments, manifest, env, bindings, writer,
            msg_id, is_notification, timeout,
        )
    elif method.startswith("notifications/"):
        pass
    else:
        if not is_notification:
            writer.send(
                _error_response(msg_id, _RPC_METHOD_NOT_FOUND, f"unknown method {method!r}")
            )


def _run_call(
    tool, arguments, manifest, env, bindings, writer, msg_id, is_notification, timeout
) -> None:
    try:
        result = invoke_tool(
            tool, arguments, env, manifest.base_url, manifest.schemes,
            bindings, timeout=timeout,
        )
        if result.is_error:
            payload = json.dumps(
                {"httpStatus": result.http_status, "body": result.body},
                ensure_ascii=False,
            )
        else:
            payload = json.dumps(result.body, ensure_ascii=False)
        response = {
            "content": [{"type": "text", "text": payload}],
            "isError": result.is_error,
        }
    except (SchemaViolation, MissingCredential, TransportError) as exc:
        response = {
            "content": [{"type": "text", "text": f"{exc.__class__.__name__}: {exc}"}],
            "isError": True,
        }
    except Exception as exc:  # noqa: BLE001 - surface as protocol error
        logger.exception("tool call failed unexpectedly")
        if not is_notification:
            writer.send(_error_response(msg_id, _RPC_INTERNAL, str(exc)))
        return
    if not is_notification:
        writer.send({"jsonrpc": "2.0", "id": msg_id, "result": response})


def _error_response(msg_id, code: int, message: str) -> dict:
    return {
        "jsonrpc": "2.0",
        "id": msg_id,
        "error": {"code": code, "message": message},
    }
