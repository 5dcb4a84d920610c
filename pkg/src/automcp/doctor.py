"""Contract linting and minimal repair for the five defect classes that
break automation:

  A  incorrect or missing security schemes
  B  malformed or relative base URLs
  C  undocumented runtime headers / token prefixes (advisory only)
  D  parameter type mismatches
  E  missing endpoint-level auth

Patches are structured pointer edits first; the textual unified diff is
rendered from a canonical serialization of the document, so untouched
regions compare byte-identical and the diff shows exactly the repair.
"""

from __future__ import annotations

import copy
import difflib
import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from .errors import BaseUrlError, NonConvergence, PointerError
from .ingest import (
    DIALECT_2_0,
    FORMAT_JSON,
    HTTP_METHODS,
    RawDocument,
    normalize,
    resolve_base_url,
)
from .refs import FlattenedContract, flatten
from .sampling import path_group

CLASS_LABELS = {
    "A": "Incorrect or missing security schemes",
    "B": "Malformed or relative base URLs",
    "C": "Undocumented runtime headers and token prefixes",
    "D": "Parameter type mismatches",
    "E": "Missing endpoint-level auth",
}

DEFAULT_FIX_ITERATIONS = 5
_FALLBACK_BASE_URL = "https://api.example.com"
_ID_NAME_RE = re.compile(r"(^id$|_id$)", re.IGNORECASE)


@dataclass
class PatchEdit:
    pointer: str  # "#/..." JSON pointer
    op: str       # add | replace
    value: Any


@dataclass
class Patch:
    edits: list[PatchEdit] = field(default_factory=list)
    loc_changed: int = 0


@dataclass
class LintFinding:
    lint_class: str
    location: str
    message: str
    patch: Patch | None = None
    suggested_headers: dict[str, str] | None = None

    def to_dict(self) -> dict:
        doc = {
            "class": self.lint_class,
            "label": CLASS_LABELS[self.lint_class],
            "location": self.location,
            "message": self.message,
            "patchable": self.patch is not None,
        }
        if self.suggested_headers is not None:
            doc["suggested_extra_headers"] = self.suggested_headers
        return doc


@dataclass
class VendorRule:
    title_pattern: str
    required_headers: dict[str, str] = field(default_factory=dict)
    base_url: str | None = None
    token_url: str | None = None
    string_path_params: list[str] = field(default_factory=list)


def load_vendor_rules(path: str | Path) -> list[VendorRule]:
    """Rules file: JSON object mapping an api-title regex to per-vendor
    knowledge (required headers, replacement URLs, known string ids)."""
    raw = json.loads(Path(path).read_text(encoding="utf-8"))
    rules = []
    for pattern, body in raw.items():
        rules.append(
            VendorRule(
                title_pattern=pattern,
                required_headers=dict(body.get("required_headers", {})),
                base_url=body.get("base_url"),
                token_url=body.get("token_url"),
                string_path_params=list(body.get("string_path_params", [])),
            )
        )
    return rules


def _matching_rules(rules: list[VendorRule] | None, title: str) -> list[VendorRule]:
    return [
        r for r in rules or [] if re.search(r.title_pattern, title, re.IGNORECASE)
    ]


# -- lint ----------------------------------------------------------------------


def lint(
    contract: FlattenedContract,
    raw: RawDocument,
    rules: list[VendorRule] | None = None,
) -> list[LintFinding]:
    """Scan for the five defect classes. Patch edits target the raw
    (original-dialect) document, not the normalized view."""
    title = str(((raw.tree.get("info") or {}).get("title")) or "")
    matched_rules = _matching_rules(rules, title)
    findings: list[LintFinding] = []
    findings.extend(_lint_class_a(raw, matched_rules))
    findings.extend(_lint_class_b(raw, matched_rules))
    findings.extend(_lint_class_c(matched_rules))
    findings.extend(_lint_class_d(raw, matched_rules))
    findings.extend(_lint_class_e(raw))
    findings.sort(key=lambda f: (f.lint_class, f.location))
    return findings


def _scheme_container(raw: RawDocument) -> tuple[str, dict]:
    if raw.dialect == DIALECT_2_0:
        return "#/securityDefinitions", raw.tree.get("securityDefinitions") or {}
    container = (raw.tree.get("components") or {}).get("securitySchemes") or {}
    return "#/components/securitySchemes", container


def _lint_class_a(raw: RawDocument, rules: list[VendorRule]) -> list[LintFinding]:
    findings: list[LintFinding] = []
    container_ptr, declared = _scheme_container(raw)
    known_types = (
        ("basic", "apiKey", "oauth2")
        if raw.dialect == DIALECT_2_0
        else ("apiKey", "http", "oauth2")
    )

    referenced: set[str] = set()
    for requirement in raw.tree.get("security") or []:
        if isinstance(requirement, dict):
            referenced.update(requirement)
    for item in (raw.tree.get("paths") or {}).values():
        if not isinstance(item, dict):
            continue
        for method in HTTP_METHODS:
            op = item.get(method)
            if isinstance(op, dict):
                for requirement in op.get("security") or []:
                    if isinstance(requirement, dict):
                        referenced.update(requirement)

    for scheme_id in sorted(referenced - set(declared)):
        findings.append(
            LintFinding(
                "A",
                container_ptr,
                f"operations require scheme {scheme_id!r} but it is not declared",
                Patch(
                    [
                        PatchEdit(
                            f"{container_ptr}/{_escape(scheme_id)}",
                            "add",
                            {"type": "basic"}
                            if raw.dialect == DIALECT_2_0
                            else {"type": "http", "scheme": "bearer"},
                        )
                    ]
                ),
            )
        )

    for scheme_id, node in declared.items():
        if not isinstance(node, dict):
            continue
        ptr = f"{container_ptr}/{_escape(scheme_id)}"
        kind = node.get("type")
        if kind not in known_types:
            findings.append(_unknown_type_finding(raw, ptr, scheme_id, node))
            continue
        if kind == "oauth2":
            finding = (
                _oauth2_finding_2_0(ptr, scheme_id, node)
                if raw.dialect == DIALECT_2_0
                else _oauth2_finding_3_x(ptr, scheme_id, node, rules)
            )
            if finding:
                findings.append(finding)
    return findings


def _unknown_type_finding(
    raw: RawDocument, ptr: str, scheme_id: str, node: dict
) -> LintFinding:
    kind = node.get("type")
    message = f"scheme {scheme_id!r} has unrecognized type {kind!r}"
    if (
        isinstance(kind, str)
        and kind.lower() == "apikey"
        and node.get("in")
        and node.get("name")
    ):
        # common casing mistake; the declaration is otherwise complete
        edits = [PatchEdit(f"{ptr}/type", "replace", "apiKey")]
    elif raw.dialect == DIALECT_2_0:
        edits = [PatchEdit(f"{ptr}/type", "replace", "basic")]
    else:
        edits = [
            PatchEdit(f"{ptr}/type", "replace", "http"),
            PatchEdit(f"{ptr}/scheme", "add", "bearer"),
        ]
    return LintFinding("A", ptr, message, Patch(edits))


def _oauth2_finding_3_x(
    ptr: str, scheme_id: str, node: dict, rules: list[VendorRule]
) -> LintFinding | None:
    flows = node.get("flows") or {}
    code_flow = flows.get("authorizationCode")
    if isinstance(code_flow, dict):
        if code_flow.get("tokenUrl"):
            return None
        token_url = _derive_token_url(code_flow.get("authorizationUrl"), rules)
        return LintFinding(
            "A",
            f"{ptr}/flows/authorizationCode",
            f"oauth2 scheme {scheme_id!r}: authorizationCode flow omits tokenUrl",
            Patch([PatchEdit(f"{ptr}/flows/authorizationCode/tokenUrl", "add", token_url)]),
        )
    cc_flow = flows.get("clientCredentials")
    if isinstance(cc_flow, dict):
        if cc_flow.get("tokenUrl"):
            return None
        token_url = _derive_token_url(None, rules)
        return LintFinding(
            "A",
            f"{ptr}/flows/clientCredentials",
            f"oauth2 scheme {scheme_id!r}: clientCredentials flow omits tokenUrl",
            Patch([PatchEdit(f"{ptr}/flows/clientCredentials/tokenUrl", "add", token_url)]),
        )
    implicit = flows.get("implicit")
    if isinstance(implicit, dict):
        token_url = _derive_token_url(implicit.get("authorizationUrl"), rules)
        migrated = {
            "authorizationUrl": implicit.get("authorizationUrl", ""),
            "tokenUrl": token_url,
            "scopes": implicit.get("scopes", {}),
        }
        return LintFinding(
            "A",
            f"{ptr}/flows",
            f"oauth2 scheme {scheme_id!r} declares only the obsolete implicit flow",
            Patch([PatchEdit(f"{ptr}/flows/authorizationCode", "add", migrated)]),
        )
    password = flows.get("password")
    if isinstance(password, dict) and password.get("tokenUrl"):
        return LintFinding(
            "A",
            f"{ptr}/flows",
            f"oauth2 scheme {scheme_id!r} declares only a password flow",
            Patch(
                [
                    PatchEdit(
                        f"{ptr}/flows/clientCredentials",
                        "add",
                        {
                            "tokenUrl": password["tokenUrl"],
                            "scopes": password.get("scopes", {}),
                        },
                    )
                ]
            ),
        )
    return LintFinding(
        "A", f"{ptr}/flows", f"oauth2 scheme {scheme_id!r} declares no usable flow"
    )


def _oauth2_finding_2_0(ptr: str, scheme_id: str, node: dict) -> LintFinding | None:
    flow = node.get("flow")
    if flow in ("accessCode", "application", "password") and not node.get("tokenUrl"):
        token_url = _derive_token_url(node.get("authorizationUrl"), [])
        return LintFinding(
            "A",
            ptr,
            f"oauth2 scheme {scheme_id!r}: flow {flow!r} omits tokenUrl",
            Patch([PatchEdit(f"{ptr}/tokenUrl", "add", token_url)]),
        )
    if flow == "implicit":
        token_url = _derive_token_url(node.get("authorizationUrl"), [])
        return LintFinding(
            "A",
            ptr,
            f"oauth2 scheme {scheme_id!r} declares the obsolete implicit flow",
            Patch(
                [
                    PatchEdit(f"{ptr}/flow", "replace", "accessCode"),
                    PatchEdit(f"{ptr}/tokenUrl", "add", token_url),
                ]
            ),
        )
    return None


def _derive_token_url(authorization_url: str | None, rules: list[VendorRule]) -> str:
    for rule in rules:
        if rule.token_url:
            return rule.token_url
    if authorization_url:
        if "/authorize" in authorization_url:
            return re.sub(r"/authorize\b", "/token", authorization_url)
        return authorization_url.rstrip("/") + "/token"
    return _FALLBACK_BASE_URL + "/oauth/token"


def _lint_class_b(raw: RawDocument, rules: list[VendorRule]) -> list[LintFinding]:
    try:
        resolve_base_url(raw)
        return []
    except BaseUrlError as exc:
        replacement = next((r.base_url for r in rules if r.base_url), None)
        replacement = replacement or _FALLBACK_BASE_URL
        if raw.dialect == DIALECT_2_0:
            host = re.sub(r"^https?://", "", replacement).rstrip("/")
            if "host" in raw.tree:
                edits = [PatchEdit("#/host", "replace", host)]
            else:
                edits = [PatchEdit("#/host", "add", host)]
            location = "#/host"
        else:
            servers = raw.tree.get("servers")
            if isinstance(servers, list) and servers:
                edits = [PatchEdit("#/servers/0/url", "replace", replacement)]
            else:
                edits = [PatchEdit("#/servers", "add", [{"url": replacement}])]
            location = "#/servers/0/url"
        return [LintFinding("B", location, str(exc), Patch(edits))]


def _lint_class_c(rules: list[VendorRule]) -> list[LintFinding]:
    findings = []
    for rule in rules:
        if not rule.required_headers:
            continue
        suggestion = json.dumps(rule.required_headers, ensure_ascii=False)
        findings.append(
            LintFinding(
                "C",
                "#/info/title",
                "vendor requires runtime headers not declared in the contract; "
                f"set EXTRA_HEADERS={suggestion} in the server .env",
                patch=None,
                suggested_headers=dict(rule.required_headers),
            )
        )
    return findings


def _lint_class_d(raw: RawDocument, rules: list[VendorRule]) -> list[LintFinding]:
    override_names = {
        name for rule in rules for name in rule.string_path_params
    }
    findings: list[LintFinding] = []
    for path, item in (raw.tree.get("paths") or {}).items():
        if not isinstance(item, dict):
            continue
        path_ptr = f"#/paths/{_escape(path)}"
        for holder, holder_ptr in _parameter_holders(item, path_ptr):
            for i, param in enumerate(holder):
                if not isinstance(param, dict) or param.get("in") != "path":
                    continue
                finding = _check_path_param_type(
                    param, f"{holder_ptr}/{i}", override_names
                )
                if finding:
                    findings.append(finding)
    return findings


def _parameter_holders(item: dict, path_ptr: str):
    if isinstance(item.get("parameters"), list):
        yield item["parameters"], f"{path_ptr}/parameters"
    for method in HTTP_METHODS:
        op = item.get(method)
        if isinstance(op, dict) and isinstance(op.get("parameters"), list):
            yield op["parameters"], f"{path_ptr}/{method}/parameters"


def _check_path_param_type(
    param: dict, ptr: str, override_names: set[str]
) -> LintFinding | None:
    name = str(param.get("name", ""))
    schema = param.get("schema") if isinstance(param.get("schema"), dict) else None
    declared = (schema or param).get("type")
    if declared not in ("integer", "number"):
        return None
    example = param.get("example", (schema or {}).get("example"))
    looks_like_string_id = (
        _ID_NAME_RE.search(name) and isinstance(example, str)
    ) or name in override_names
    if not looks_like_string_id:
        return None
    type_ptr = f"{ptr}/schema/type" if schema is not None else f"{ptr}/type"
    return LintFinding(
        "D",
        type_ptr,
        f"path parameter {name!r} is typed {declared} but callers pass string "
        f"identifiers",
        Patch([PatchEdit(type_ptr, "replace", "string")]),
    )


def _lint_class_e(raw: RawDocument) -> list[LintFinding]:
    container_ptr, declared = _scheme_container(raw)
    if not declared:
        return []
    doc_security = raw.tree.get("security") or []
    api_key_params = {
        (node.get("name"), node.get("in")): scheme_id
        for scheme_id, node in declared.items()
        if isinstance(node, dict) and node.get("type") == "apiKey"
    }

    groups: dict[str, list[tuple[str, str, dict, bool, str | None]]] = {}
    for path, item in (raw.tree.get("paths") or {}).items():
        if not isinstance(item, dict):
            continue
        path_level = [p for p in item.get("parameters", []) if isinstance(p, dict)]
        for method in HTTP_METHODS:
            op = item.get(method)
            if not isinstance(op, dict):
                continue
            covered, scheme_id = _op_coverage(
                op, path_level, doc_security, api_key_params
            )
            groups.setdefault(path_group(path), []).append(
                (path, method, op, covered, scheme_id)
            )

    findings: list[LintFinding] = []
    for group, ops in groups.items():
        covered = [entry for entry in ops if entry[3]]
        uncovered = [entry for entry in ops if not entry[3]]
        scheme_id = next((e[4] for e in covered if e[4]), None)
        if not covered or not uncovered or scheme_id is None:
            continue
        scheme = declared.get(scheme_id) or {}
        for path, method, op, _, _ in uncovered:
            op_ptr = f"#/paths/{_escape(path)}/{method}"
            findings.append(
                _class_e_finding(raw, op_ptr, path, method, op, scheme_id, scheme, group)
            )
    return findings


def _op_coverage(
    op: dict,
    path_level_params: list[dict],
    doc_security: list,
    api_key_params: dict,
) -> tuple[bool, str | None]:
    """(is the operation covered, id of the scheme protecting it).

    An explicit empty `security: []` counts as covered: the author
    deliberately marked the operation public.
    """
    if "security" in op:
        security = op["security"]
        explicit = True
    else:
        security = doc_security
        explicit = False
    for requirement in security or []:
        if isinstance(requirement, dict) and requirement:
            return True, next(iter(requirement))
    if explicit and security == []:
        return True, None
    for param in list(op.get("parameters") or []) + path_level_params:
        if not isinstance(param, dict):
            continue
        scheme_id = api_key_params.get((param.get("name"), param.get("in")))
        if scheme_id:
            return True, scheme_id
    if not explicit and doc_security:
        return True, None
    return False, None


def _class_e_finding(
    raw: RawDocument,
    op_ptr: str,
    path: str,
    method: str,
    op: dict,
    scheme_id: str,
    scheme: dict,
    group: str,
) -> LintFinding:
    message = (
        f"{method.upper()} {path} has no auth requirement while sibling "
        f"operations under /{group} require scheme {scheme_id!r}"
    )
    if scheme.get("type") == "apiKey" and scheme.get("in") == "query":
        entry: dict = {
            "name": scheme.get("name", scheme_id),
            "in": "query",
            "required": True,
        }
        if raw.dialect == DIALECT_2_0:
            entry["type"] = "string"
        else:
            entry["schema"] = {"type": "string"}
        if isinstance(op.get("parameters"), list):
            edits = [PatchEdit(f"{op_ptr}/parameters/-", "add", entry)]
        else:
            edits = [PatchEdit(f"{op_ptr}/parameters", "add", [entry])]
    else:
        edits = [PatchEdit(f"{op_ptr}/security", "add", [{scheme_id: []}])]
    return LintFinding("E", op_ptr, message, Patch(edits))


# -- patching ------------------------------------------------------------------


def apply_patch(raw: RawDocument, patch: Patch) -> tuple[RawDocument, str]:
    """Apply structured edits and render the unified diff.

    Returns the patched document plus the diff between the canonical
    serializations of the old and new trees; `patch.loc_changed` is
    updated to the number of touched lines (a replaced line counts once).
    """
    patched_tree = copy.deepcopy(raw.tree)
    for edit in patch.edits:
        _apply_edit(patched_tree, edit)
    before = render_document(raw.tree, raw.format)
    after = render_document(patched_tree, raw.format)
    diff = _unified_diff(before, after, raw.source_path.name)
    patch.loc_changed = _count_changed_lines(before, after)
    patched = RawDocument(
        source_path=raw.source_path,
        format=raw.format,
        dialect=raw.dialect,
        tree=patched_tree,
        text=after,
        warnings=list(raw.warnings),
    )
    return patched, diff


def render_document(tree: dict, fmt: str) -> str:
    if fmt == FORMAT_JSON:
        return json.dumps(tree, indent=2, ensure_ascii=False) + "\n"
    return yaml.safe_dump(tree, sort_keys=False, allow_unicode=True)


def _apply_edit(tree: dict, edit: PatchEdit) -> None:
    segments = _pointer_segments(edit.pointer)
    if not segments:
        raise PointerError(edit.pointer, "cannot edit the document root")
    parent = tree
    for i, segment in enumerate(segments[:-1]):
        if isinstance(parent, dict):
            if segment not in parent:
                if edit.op != "add":
                    raise PointerError(edit.pointer, f"missing segment {segment!r}")
                parent[segment] = {}
            parent = parent[segment]
        elif isinstance(parent, list):
            if not segment.isdigit() or int(segment) >= len(parent):
                raise PointerError(edit.pointer, f"bad list index {segment!r}")
            parent = parent[int(segment)]
        else:
            raise PointerError(edit.pointer, f"segment {segment!r} is a scalar")

    leaf = segments[-1]
    if isinstance(parent, dict):
        if edit.op == "replace" and leaf not in parent:
            raise PointerError(edit.pointer, f"nothing to replace at {leaf!r}")
        parent[leaf] = edit.value
    elif isinstance(parent, list):
        if leaf == "-":
            parent.append(edit.value)
        elif leaf.isdigit() and int(leaf) <= len(parent):
            if edit.op == "replace":
                if int(leaf) >= len(parent):
                    raise PointerError(edit.pointer, "index out of range")
                parent[int(leaf)] = edit.value
            else:
                parent.insert(int(leaf), edit.value)
        else:
            raise PointerError(edit.pointer, f"bad list index {leaf!r}")
    else:
        raise PointerError(edit.pointer, "parent is a scalar")


def _pointer_segments(pointer: str) -> list[str]:
    if not pointer.startswith("#"):
        raise PointerError(pointer, "pointer must start with '#'")
    fragment = pointer[1:].lstrip("/")
    if not fragment:
        return []
    return [
        seg.replace("~1", "/").replace("~0", "~") for seg in fragment.split("/")
    ]


def _escape(segment: str) -> str:
    return segment.replace("~", "~0").replace("/", "~1")


def _unified_diff(before: str, after: str, name: str) -> str:
    lines = difflib.unified_diff(
        before.splitlines(),
        after.splitlines(),
        fromfile=name,
        tofile=f"{name} (patched)",
        lineterm="",
    )
    return "\n".join(lines)


def _count_changed_lines(before: str, after: str) -> int:
    """Lines touched by the patch: a replacement counts once, pure
    insertions and deletions count per line."""
    matcher = difflib.SequenceMatcher(
        a=before.splitlines(), b=after.splitlines(), autojunk=False
    )
    changed = 0
    for op, i1, i2, j1, j2 in matcher.get_opcodes():
        if op == "replace":
            changed += max(i2 - i1, j2 - j1)
        elif op == "delete":
            changed += i2 - i1
        elif op == "insert":
            changed += j2 - j1
    return changed


# -- fix loop ------------------------------------------------------------------


@dataclass
class FixReport:
    document: RawDocument
    iterations: int = 0
    findings_by_class: dict[str, int] = field(default_factory=dict)
    loc_changed_by_class: dict[str, int] = field(default_factory=dict)
    total_loc_changed: int = 0
    residual_advisories: list[LintFinding] = field(default_factory=list)
    diff: str = ""
    changed: bool = False

    def to_dict(self) -> dict:
        return {
            "iterations": self.iterations,
            "changed": self.changed,
            "findings_by_class": self.findings_by_class,
            "loc_changed_by_class": self.loc_changed_by_class,
            "total_loc_changed": self.total_loc_changed,
            "residual_advisories": [f.to_dict() for f in self.residual_advisories],
        }


def fix_loop(
    raw: RawDocument,
    rules: list[VendorRule] | None = None,
    max_iterations: int = DEFAULT_FIX_ITERATIONS,
) -> FixReport:
    """lint -> patch -> re-lint until nothing patchable remains.

    Raises NonConvergence when the iteration cap is hit with patchable
    findings still present.
    """
    report = FixReport(document=raw)
    doc = raw
    diffs: list[str] = []
    for _ in range(max_iterations):
        contract = flatten(normalize(doc))
        findings = lint(contract, doc, rules)
        patchable = [f for f in findings if f.patch is not None]
        report.residual_advisories = [
            f for f in findings if f.patch is None and f.lint_class == "C"
        ]
        if not patchable:
            report.document = doc
            return report
        report.iterations += 1
        merged = Patch([e for f in patchable for e in f.patch.edits])
        doc, diff = apply_patch(doc, merged)
        diffs.append(diff)
        report.diff = "\n".join(diffs)
        report.changed = True
        report.total_loc_changed += merged.loc_changed
        per_class: dict[str, int] = {}
        for f in patchable:
            report.findings_by_class[f.lint_class] = (
                report.findings_by_class.get(f.lint_class, 0) + 1
            )
            per_class[f.lint_class] = per_class.get(f.lint_class, 0) + len(
                f.patch.edits
            )
        total_edits = sum(per_class.values()) or 1
        for cls, count in per_class.items():
            share = round(merged.loc_changed * count / total_edits)
            report.loc_changed_by_class[cls] = (
                report.loc_changed_by_class.get(cls, 0) + share
            )

    contract = flatten(normalize(doc))
    final_findings = lint(contract, doc, rules)
    remaining = [f for f in final_findings if f.patch is not None]
    if remaining:
        raise NonConvergence(
            f"{len(remaining)} patchable finding(s) remain after "
            f"{max_iterations} iterations"
        )
    report.residual_advisories = [
        f for f in final_findings if f.patch is None and f.lint_class == "C"
    ]
    report.document = doc
    return report
