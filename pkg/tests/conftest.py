"""Shared fixtures and builders for the test suite."""

from __future__ import annotations

import itertools
import json
from pathlib import Path

import pytest
import yaml

from automcp.compiler import EndpointDescriptor, ParamSpec, ToolManifest, ToolSpec
from automcp.pipeline import CompiledApi, compile_file
from automcp.sampling import endpoint_axes
from automcp.security import (
    KIND_API_KEY,
    KIND_HTTP_BASIC,
    KIND_HTTP_BEARER,
    KIND_OAUTH2,
    SecurityScheme,
)

FIXTURES = Path(__file__).parent / "fixtures"
DEFECTS = FIXTURES / "defects"


def fixture_path(name: str) -> Path:
    return FIXTURES / name


@pytest.fixture(scope="session")
def petstore() -> CompiledApi:
    return compile_file(fixture_path("petstore.json"))


@pytest.fixture(scope="session")
def allauth() -> CompiledApi:
    return compile_file(fixture_path("allauth.yaml"))


def sentinel_credentials(compiled: CompiledApi, tag: str = "sek") -> tuple[dict, dict]:
    """Matching (env vars, mock credential config) with sentinel values."""
    env: dict[str, str] = {}
    creds: dict[str, object] = {}
    for scheme in compiled.manifest.schemes:
        bindings = [b for b in compiled.bindings if b.scheme_id == scheme.id]
        if scheme.kind == KIND_HTTP_BASIC:
            user = next(b for b in bindings if b.role == "USERNAME")
            password = next(b for b in bindings if b.role == "PASSWORD")
            env[user.env_var] = f"{tag}-user"
            env[password.env_var] = f"{tag}-pass-{scheme.id}"
            creds[scheme.id] = (f"{tag}-user", f"{tag}-pass-{scheme.id}")
        else:
            value = f"{tag}-{scheme.id}-secret"
            env[bindings[0].env_var] = value
            creds[scheme.id] = value
    return env, creds


def rebase_spec(src: Path, base_url: str, dst_dir: Path) -> Path:
    """Copy a spec with servers[0].url pointed at `base_url` (the mock)."""
    text = src.read_text(encoding="utf-8")
    tree = json.loads(text) if src.suffix == ".json" else yaml.safe_load(text)
    tree["servers"] = [{"url": base_url}]
    dst = dst_dir / src.name
    if src.suffix == ".json":
        dst.write_text(json.dumps(tree, indent=2) + "\n", encoding="utf-8")
    else:
        dst.write_text(yaml.safe_dump(tree, sort_keys=False), encoding="utf-8")
    return dst


# -- synthetic manifests for sampling tests ------------------------------------

_VERBS = ["GET", "POST", "PUT", "PATCH", "DELETE"]
_GROUPS = ["users", "repos", "orders", "items", "events", "boards"]
_SCHEME_POOL = [
    None,
    SecurityScheme(id="key1", kind=KIND_API_KEY, location="header", parameter_name="X-Key"),
    SecurityScheme(id="bear1", kind=KIND_HTTP_BEARER),
    SecurityScheme(id="basic1", kind=KIND_HTTP_BASIC),
    SecurityScheme(id="oauth1", kind=KIND_OAUTH2),
]


def random_manifest(rng, max_groups: int = 4, max_endpoints: int = 28) -> ToolManifest:
    """A synthetic manifest with random verbs, auth, and param shapes."""
    group_names = rng.sample(_GROUPS, rng.randint(1, max_groups))
    used_schemes: dict[str, SecurityScheme] = {}
    tools: list[ToolSpec] = []
    count = rng.randint(1, max_endpoints)
    for i in range(count):
        group = rng.choice(group_names)
        verb = rng.choice(_VERBS)
        scheme = rng.choice(_SCHEME_POOL)
        params: list[ParamSpec] = []
        path = f"/{group}"
        if rng.random() < 0.5:
            path += "/{item_id}"
            params.append(
                ParamSpec("item_id", "path", True, {"type": "string"}, "item_id")
            )
        for location in ("query", "header", "cookie"):
            if rng.random() < 0.35:
                name = f"{location[0]}{i}"
                params.append(
                    ParamSpec(name, location, False, {"type": "string"}, name)
                )
        has_body = verb in ("POST", "PUT", "PATCH") and rng.random() < 0.6
        security = []
        if scheme is not None:
            used_schemes[scheme.id] = scheme
            security = [{scheme.id: []}]
        ep = EndpointDescriptor(
            method=verb,
            path_template=path,
            operation_id=f"op{i}",
            summary=f"op {i}",
            description="",
            parameters=params,
            request_body_schema={"type": "object"} if has_body else None,
            request_body_required=has_body,
            request_content_type="application/json" if has_body else None,
            success_status=200,
            success_schema=None,
            security=security,
        )
        tools.append(
            ToolSpec(
                tool_name=f"op{i}",
                description=f"op {i}",
                input_schema={"type": "object", "properties": {}, "required": [],
                              "additionalProperties": False},
                output_schema={},
                endpoint=ep,
            )
        )
    return ToolManifest(
        tools=tools,
        api_title="Synthetic",
        base_url="https://synthetic.example",
        schemes=list(used_schemes.values()),
    )


def group_axis_universe(tools: list[ToolSpec], scheme_kinds: dict) -> set:
    universe = set()
    for tool in tools:
        verb, auth, modalities = endpoint_axes(tool, scheme_kinds)
        universe.add(("verb", verb))
        universe.update(("auth", a) for a in auth)
        universe.update(("mod", m) for m in modalities)
    return universe


def min_cover_size(tools: list[ToolSpec], scheme_kinds: dict) -> int:
    """Exhaustive minimum axis-cover size (groups <= 10 endpoints only)."""
    universe = group_axis_universe(tools, scheme_kinds)
    for size in range(1, len(tools) + 1):
        for combo in itertools.combinations(tools, size):
            if group_axis_universe(list(combo), scheme_kinds) == universe:
                return size
    return len(tools)
