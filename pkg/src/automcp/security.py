"""Security scheme extraction and credential-to-environment binding."""

from __future__ import annotations

import re
from dataclasses import dataclass, field

from .errors import SchemeError
from .refs import FlattenedContract

KIND_API_KEY = "api_key"
KIND_HTTP_BASIC = "http_basic"
KIND_HTTP_BEARER = "http_bearer"
KIND_OAUTH2 = "oauth2"
KIND_NONE = "none"

INJECT_HEADER_API_KEY = "header_api_key"
INJECT_QUERY_API_KEY = "query_api_key"
INJECT_COOKIE_API_KEY = "cookie_api_key"
INJECT_BASIC_USERPASS = "basic_userpass"
INJECT_BEARER_TOKEN = "bearer_token"
INJECT_OAUTH2_ACCESS_TOKEN = "oauth2_access_token"

_API_KEY_INJECTIONS = {
    "header": INJECT_HEADER_API_KEY,
    "query": INJECT_QUERY_API_KEY,
    "cookie": INJECT_COOKIE_API_KEY,
}


@dataclass
class OAuth2Flows:
    authorization_url: str | None = None
    token_url: str | None = None
    scopes: dict[str, str] = field(default_factory=dict)

    @property
    def authorization_code_usable(self) -> bool:
        return bool(self.authorization_url) and bool(self.token_url)


@dataclass
class SecurityScheme:
    id: str
    kind: str
    location: str = ""        # api_key only: header / query / cookie
    parameter_name: str = ""  # api_key only
    flows: OAuth2Flows | None = None
    description: str = ""


@dataclass
class EnvBinding:
    env_var: str
    scheme_id: str
    injection: str
    role: str  # human-readable slot: API_KEY, USERNAME, PASSWORD, TOKEN, ...


def extract_security(contract: FlattenedContract) -> list[SecurityScheme]:
    """One SecurityScheme per entry in components.securitySchemes.

    Raises SchemeError (lint class A) for unrecognized scheme types and
    for oauth2 schemes with no flow capable of producing a token.
    """
    declared = (contract.tree.get("components") or {}).get("securitySchemes") or {}
    schemes = []
    for scheme_id, node in declared.items():
        schemes.append(_parse_scheme(scheme_id, node))
    return schemes


def _parse_scheme(scheme_id: str, node: dict) -> SecurityScheme:
    if not isinstance(node, dict):
        raise SchemeError(f"security scheme {scheme_id!r} is not a mapping")
    kind = node.get("type")
    description = node.get("description", "")

    if kind == "apiKey":
        location = node.get("in", "")
        name = node.get("name", "")
        if location not in _API_KEY_INJECTIONS or not name:
            raise SchemeError(
                f"apiKey scheme {scheme_id!r} needs `in` (header/query/cookie) "
                f"and `name`"
            )
        return SecurityScheme(
            id=scheme_id, kind=KIND_API_KEY, location=location,
            parameter_name=name, description=description,
        )

    if kind == "http":
        http_scheme = str(node.get("scheme", "")).lower()
        if http_scheme == "basic":
            return SecurityScheme(scheme_id, KIND_HTTP_BASIC, description=description)
        if http_scheme == "bearer":
            return SecurityScheme(scheme_id, KIND_HTTP_BEARER, description=description)
        raise SchemeError(
            f"http scheme {scheme_id!r} uses unsupported scheme {http_scheme!r}"
        )

    if kind == "oauth2":
        flows = _parse_flows(scheme_id, node.get("flows") or {})
        return SecurityScheme(
            scheme_id, KIND_OAUTH2, flows=flows, description=description
        )

    raise SchemeError(f"security scheme {scheme_id!r} has unrecognized type {kind!r}")


def _parse_flows(scheme_id: str, flows: dict) -> OAuth2Flows:
    """Pick a token-capable flow; implicit/password-only declarations are
    class-A defects (no token endpoint a client can exchange against)."""
    code_flow = flows.get("authorizationCode")
    if isinstance(code_flow, dict):
        if not code_flow.get("tokenUrl"):
            raise SchemeError(
                f"oauth2 scheme {scheme_id!r}: authorizationCode flow has no tokenUrl"
            )
        return OAuth2Flows(
            authorization_url=code_flow.get("authorizationUrl"),
            token_url=code_flow["tokenUrl"],
            scopes=dict(code_flow.get("scopes") or {}),
        )
    cc_flow = flows.get("clientCredentials")
    if isinstance(cc_flow, dict):
        if not cc_flow.get("tokenUrl"):
            raise SchemeError(
                f"oauth2 scheme {scheme_id!r}: clientCredentials flow has no tokenUrl"
            )
        return OAuth2Flows(
            token_url=cc_flow["tokenUrl"], scopes=dict(cc_flow.get("scopes") or {})
        )
    present = ", ".join(sorted(flows)) or "none"
    raise SchemeError(
        f"oauth2 scheme {scheme_id!r} declares no usable flow "
        f"(flows present: {present}; need authorizationCode or "
        f"clientCredentials with a tokenUrl)"
    )


def build_env_map(
    schemes: list[SecurityScheme], api_title: str
) -> tuple[list[EnvBinding], str]:
    """Bind every secret to an environment variable and render the .env
    template. Deterministic: same schemes + title give identical bytes."""
    prefix = sanitize_env_component(api_title) or "API"
    bindings: list[EnvBinding] = []
    taken: set[str] = set()

    def bind(scheme_id: str, role: str, injection: str) -> EnvBinding:
        var = _unique(f"{prefix}_{role}", taken)
        binding = EnvBinding(var, scheme_id, injection, role)
        bindings.append(binding)
        return binding

    lines = [f"# Credentials for {api_title or 'API'}".rstrip()]
    for scheme in schemes:
        if scheme.kind == KIND_API_KEY:
            role = sanitize_env_component(scheme.id) or "API_KEY"
            binding = bind(scheme.id, role, _API_KEY_INJECTIONS[scheme.location])
            lines.append(
                f"# {scheme.id}: API key sent in {scheme.location} "
                f"{scheme.parameter_name!r}"
            )
            lines.append(f"{binding.env_var}=")
        elif scheme.kind == KIND_HTTP_BASIC:
            user = bind(scheme.id, "USERNAME", INJECT_BASIC_USERPASS)
            password = bind(scheme.id, "PASSWORD", INJECT_BASIC_USERPASS)
            lines.append(f"# {scheme.id}: HTTP Basic credentials")
            lines.append(f"{user.env_var}=")
            lines.append(f"{password.env_var}=")
        elif scheme.kind == KIND_HTTP_BEARER:
            binding = bind(scheme.id, "TOKEN", INJECT_BEARER_TOKEN)
            lines.append(f"# {scheme.id}: HTTP Bearer token")
            lines.append(f"{binding.env_var}=")
        elif scheme.kind == KIND_OAUTH2:
            binding = bind(scheme.id, "ACCESS_TOKEN", INJECT_OAUTH2_ACCESS_TOKEN)
            lines.append(
                f"# {scheme.id}: OAuth2 access token "
                f"(fill manually or run the token acquisition helper)"
            )
            lines.append(f"{binding.env_var}=")
    lines.append("# Optional JSON object of headers merged into every request")
    lines.append("EXTRA_HEADERS=")
    return bindings, "\n".join(lines) + "\n"


def refresh_var_for(access_var: str) -> str:
    if access_var.endswith("_ACCESS_TOKEN"):
        return access_var[: -len("_ACCESS_TOKEN")] + "_REFRESH_TOKEN"
    return access_var + "_REFRESH"


def sanitize_env_component(text: str) -> str:
    """Uppercase identifier: camelCase boundaries become underscores,
    anything non-alphanumeric collapses to a single underscore."""
    text = re.sub(r"(?<=[a-z0-9])(?=[A-Z])", "_", text)
    text = re.sub(r"[^A-Za-z0-9]+", "_", text).strip("_").upper()
    if text and text[0].isdigit():
        text = "API_" + text
    return text


def _unique(candidate: str, taken: set[str]) -> str:
    name = candidate
    counter = 1
    while name in taken:
        counter += 1
        name = f"{candidate}_{counter}"
    taken.add(name)
    return name
