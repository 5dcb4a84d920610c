"""Load OpenAPI documents and normalize 2.0 constructs into 3.x shape.

All functions here are pure with respect to their inputs: trees are deep
copied before rewriting, so a ``RawDocument`` can be reused (e.g. by the
linter, which patches the original tree) after normalization.
"""

from __future__ import annotations

import copy
import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from .errors import BaseUrlError, DialectError, ParseError

FORMAT_JSON = "json"
FORMAT_YAML = "yaml"
DIALECT_2_0 = "openapi_2_0"
DIALECT_3_X = "openapi_3_x"

HTTP_METHODS = ("get", "put", "post", "delete", "options", "head", "patch")

_PLACEHOLDER_RE = re.compile(r"\{[^}]*\}")
_PATH_VAR_RE = re.compile(r"\{([^}/]+)\}")

# 2.0 keys that must not survive normalization.
_SWAGGER_ONLY_KEYS = (
    "swagger",
    "definitions",
    "securityDefinitions",
    "schemes",
    "host",
    "basePath",
    "consumes",
    "produces",
    "parameters",
    "responses",
)


@dataclass
class RawDocument:
    """A parsed spec file plus everything needed to re-render it later."""

    source_path: Path
    format: str
    dialect: str
    tree: dict
    text: str = ""
    warnings: list[str] = field(default_factory=list)


def load_document(path: str | Path) -> RawDocument:
    """Read a spec file, detect its serialization format and dialect.

    A document that parses as JSON is treated as JSON even if it would
    also parse as YAML (every JSON document is valid YAML).
    """
    path = Path(path)
    text = path.read_text(encoding="utf-8")

    tree: Any = None
    fmt = None
    try:
        tree = json.loads(text)
        fmt = FORMAT_JSON
    except ValueError:
        try:
            tree = yaml.safe_load(text)
            fmt = FORMAT_YAML
        except yaml.YAMLError as exc:
            raise ParseError(f"{path}: not parseable as JSON or YAML: {exc}") from exc

    if not isinstance(tree, dict):
        raise ParseError(f"{path}: document root must be a mapping")

    warnings: list[str] = []
    if str(tree.get("swagger")) == "2.0":
        dialect = DIALECT_2_0
    elif str(tree.get("openapi", "")).startswith("3."):
        dialect = DIALECT_3_X
        if str(tree["openapi"]).startswith("3.1"):
            warnings.append(
                f"openapi {tree['openapi']} declared; treating as 3.x "
                "(3.1-specific schema keywords are not interpreted)"
            )
    else:
        raise DialectError(
            f"{path}: no `swagger: \"2.0\"` or `openapi: 3.x` marker found"
        )

    return RawDocument(
        source_path=path, format=fmt, dialect=dialect, tree=tree, text=text,
        warnings=warnings,
    )


def resolve_base_url(doc: RawDocument) -> str:
    """Compose the absolute upstream base URL for a document.

    For 2.0: scheme + host + basePath, preferring https when several
    schemes are listed. For 3.x: the first ``servers`` entry with every
    server variable replaced by its declared default.

    Raises BaseUrlError (lint class B) when the result is relative,
    empty, or still contains an unsubstitutable placeholder.
    """
    if doc.dialect == DIALECT_2_0:
        host = doc.tree.get("host", "")
        if not host:
            raise BaseUrlError("no `host` declared (2.0 document)")
        schemes = doc.tree.get("schemes") or ["https"]
        scheme = "https" if "https" in schemes else schemes[0]
        url = f"{scheme}://{host}{doc.tree.get('basePath', '')}"
    else:
        servers = doc.tree.get("servers") or []
        if not servers or not isinstance(servers[0], dict):
            raise BaseUrlError("no `servers` entry declared")
        url = str(servers[0].get("url", ""))
        variables = servers[0].get("variables") or {}
        for name, spec in variables.items():
            if isinstance(spec, dict) and "default" in spec:
                url = url.replace("{%s}" % name, str(spec["default"]))

    url = url.rstrip("/")
    if not url:
        raise BaseUrlError("server URL is empty")
    if _PLACEHOLDER_RE.search(url) or "{{" in url:
        raise BaseUrlError(f"server URL contains unresolved placeholder: {url!r}")
    if not re.match(r"^https?://[^/]+", url):
        raise BaseUrlError(f"server URL is not an absolute http(s) URL: {url!r}")
    return url


def normalize(doc: RawDocument) -> dict:
    """Rewrite a document into 3.x shape and repair mechanical defects.

    Total on parseable documents: 2.0 constructs are relocated, duplicate
    operationIds are suffixed ``_2``, ``_3``, ... in document order, and
    undeclared path template variables gain a synthesized required string
    parameter. Idempotent.
    """
    tree = copy.deepcopy(doc.tree)
    if str(tree.get("swagger")) == "2.0":
        tree = _convert_2_0(tree)
    _dedupe_operation_ids(tree)
    _synthesize_path_params(tree)
    return tree


# -- 2.0 conversion ----------------------------------------------------------


def _convert_2_0(tree: dict) -> dict:
    out: dict = {"openapi": "3.0.3"}
    for key, value in tree.items():
        if key not in _SWAGGER_ONLY_KEYS and key != "paths":
            out[key] = value

    host = tree.get("host")
    if host:
        schemes = tree.get("schemes") or ["https"]
        scheme = "https" if "https" in schemes else schemes[0]
        out["servers"] = [{"url": f"{scheme}://{host}{tree.get('basePath', '')}"}]

    components = out.setdefault("components", {})
    if "definitions" in tree:
        components["schemas"] = tree["definitions"]
    if "parameters" in tree:
        components["parameters"] = tree["parameters"]
    if "responses" in tree:
        components["responses"] = tree["responses"]
    if "securityDefinitions" in tree:
        components["securitySchemes"] = {
            name: _convert_security_scheme(scheme_node)
            for name, scheme_node in tree["securityDefinitions"].items()
        }
    if not components:
        del out["components"]

    doc_consumes = tree.get("consumes") or []
    doc_produces = tree.get("produces") or []
    out["paths"] = {
        path: _convert_path_item(item, doc_consumes, doc_produces)
        for path, item in (tree.get("paths") or {}).items()
    }
    _rewrite_refs(out)
    return out


def _convert_security_scheme(node: Any) -> Any:
    if not isinstance(node, dict):
        return node
    kind = node.get("type")
    if kind == "basic":
        converted = {k: v for k, v in node.items() if k != "type"}
        converted["type"] = "http"
        converted["scheme"] = "basic"
        return converted
    if kind == "oauth2":
        flow_name = {
            "implicit": "implicit",
            "password": "password",
            "application": "clientCredentials",
            "accessCode": "authorizationCode",
        }.get(node.get("flow", ""), node.get("flow", "implicit"))
        flow: dict = {"scopes": node.get("scopes", {})}
        if "authorizationUrl" in node:
            flow["authorizationUrl"] = node["authorizationUrl"]
        if "tokenUrl" in node:
            flow["tokenUrl"] = node["tokenUrl"]
        converted = {
            k: v
            for k, v in node.items()
            if k not in ("type", "flow", "authorizationUrl", "tokenUrl", "scopes")
        }
        converted["type"] = "oauth2"
        converted["flows"] = {flow_name: flow}
        return converted
    return node  # apiKey and anything else keep their 3.x-compatible shape


def _convert_path_item(item: Any, doc_consumes: list, doc_produces: list) -> Any:
    if not isinstance(item, dict):
        return item
    converted = dict(item)
    for method in HTTP_METHODS:
        if method in converted and isinstance(converted[method], dict):
            converted[method] = _convert_operation(
                converted[method], doc_consumes, doc_produces
            )
    if "parameters" in converted:
        converted["parameters"] = [
            _convert_parameter(p) for p in converted["parameters"]
        ]
    return converted


def _convert_operation(op: dict, doc_consumes: list, doc_produces: list) -> dict:
    consumes = op.get("consumes") or doc_consumes or ["application/json"]
    produces = op.get("produces") or doc_produces or ["application/json"]
    out = {k: v for k, v in op.items() if k not in ("consumes", "produces")}

    params = out.get("parameters") or []
    body_params = [p for p in params if isinstance(p, dict) and p.get("in") == "body"]
    form_params = [
        p for p in params if isinstance(p, dict) and p.get("in") == "formData"
    ]
    rest = [
        p
        for p in params
        if not (isinstance(p, dict) and p.get("in") in ("body", "formData"))
    ]
    out["parameters"] = [_convert_parameter(p) for p in rest]
    if not out["parameters"]:
        del out["parameters"]

    if body_params:
        body = body_params[0]
        out["requestBody"] = {
            "content": {consumes[0]: {"schema": body.get("schema", {})}},
            "required": bool(body.get("required", False)),
        }
        if body.get("description"):
            out["requestBody"]["description"] = body["description"]
    elif form_params:
        media = (
            consumes[0]
            if consumes[0]
            in ("application/x-www-form-urlencoded", "multipart/form-data")
            else "application/x-www-form-urlencoded"
        )
        properties = {}
        required = []
        for p in form_params:
            properties[p["name"]] = _parameter_schema(p)
            if p.get("required"):
                required.append(p["name"])
        schema: dict = {"type": "object", "properties": properties}
        if required:
            schema["required"] = required
        out["requestBody"] = {
            "content": {media: {"schema": schema}},
            "required": bool(required),
        }

    responses = out.get("responses")
    if isinstance(responses, dict):
        out["responses"] = {
            status: _convert_response(resp, produces)
            for status, resp in responses.items()
        }
    return out


def _convert_parameter(param: Any) -> Any:
    if not isinstance(param, dict) or "$ref" in param or "schema" in param:
        return param
    if not any(k in param for k in ("type", "items", "enum", "format", "default")):
        return param
    schema = _parameter_schema(param)
    kept = {
        k: v
        for k, v in param.items()
        if k
        not in (
            "type",
            "format",
            "items",
            "enum",
            "default",
            "collectionFormat",
            "maximum",
            "minimum",
            "maxLength",
            "minLength",
            "pattern",
        )
    }
    kept["schema"] = schema
    return kept


def _parameter_schema(param: dict) -> dict:
    schema: dict = {}
    for key in (
        "type",
        "format",
        "items",
        "enum",
        "default",
        "maximum",
        "minimum",
        "maxLength",
        "minLength",
        "pattern",
    ):
        if key in param:
            schema[key] = param[key]
    if schema.get("type") == "file":
        schema["type"] = "string"
        schema["format"] = "binary"
    return schema


def _convert_response(resp: Any, produces: list) -> Any:
    if not isinstance(resp, dict) or "schema" not in resp:
        return resp
    converted = {k: v for k, v in resp.items() if k != "schema"}
    converted["content"] = {produces[0]: {"schema": resp["schema"]}}
    return converted


def _rewrite_refs(node: Any) -> None:
    """Repoint 2.0 ref prefixes at their relocated 3.x component paths."""
    if isinstance(node, dict):
        ref = node.get("$ref")
        if isinstance(ref, str):
            for old, new in (
                ("#/definitions/", "#/components/schemas/"),
                ("#/parameters/", "#/components/parameters/"),
                ("#/responses/", "#/components/responses/"),
            ):
                if ref.startswith(old):
                    node["$ref"] = new + ref[len(old):]
                    break
        for value in node.values():
            _rewrite_refs(value)
    elif isinstance(node, list):
        for value in node:
            _rewrite_refs(value)


# -- repairs shared by both dialects -----------------------------------------


def _dedupe_operation_ids(tree: dict) -> None:
    seen: dict[str, int] = {}
    for item in (tree.get("paths") or {}).values():
        if not isinstance(item, dict):
            continue
        for method in HTTP_METHODS:
            op = item.get(method)
            if not isinstance(op, dict) or "operationId" not in op:
                continue
            op_id = op["operationId"]
            if op_id in seen:
                seen[op_id] += 1
                op["operationId"] = f"{op_id}_{seen[op_id]}"
                seen[op["operationId"]] = 1
            else:
                seen[op_id] = 1


def _synthesize_path_params(tree: dict) -> None:
    for path, item in (tree.get("paths") or {}).items():
        if not isinstance(item, dict):
            continue
        path_vars = _PATH_VAR_RE.findall(path)
        if not path_vars:
            continue
        path_level = {
            p.get("name")
            for p in item.get("parameters", [])
            if isinstance(p, dict) and p.get("in") == "path"
        }
        for method in HTTP_METHODS:
            op = item.get(method)
            if not isinstance(op, dict):
                continue
            declared = path_level | {
                p.get("name")
                for p in op.get("parameters", [])
                if isinstance(p, dict) and p.get("in") == "path"
            }
            for var in path_vars:
                if var not in declared:
                    op.setdefault("parameters", []).append(
                        {
                            "name": var,
                            "in": "path",
                            "required": True,
                            "schema": {"type": "string"},
                        }
                    )
