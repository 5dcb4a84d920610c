"""End-to-end compilation: spec file in, manifest + env bindings out."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

from .compiler import ToolManifest, compile_manifest
from .doctor import FixReport, VendorRule, fix_loop
from .errors import FatalValidationError
from .ingest import HTTP_METHODS, RawDocument, load_document, normalize, resolve_base_url
from .refs import FlattenedContract, ValidationFinding, flatten, validate
from .security import EnvBinding, build_env_map, extract_security


@dataclass
class CompiledApi:
    raw: RawDocument
    contract: FlattenedContract
    manifest: ToolManifest
    bindings: list[EnvBinding]
    env_template: str
    validation: list[ValidationFinding]
    fix_report: FixReport | None = None


def compile_file(
    path: str | Path,
    fix: bool = False,
    rules: list[VendorRule] | None = None,
) -> CompiledApi:
    """Load, (optionally) repair, normalize, flatten, validate, and
    compile one spec file.

    Raises ParseError/DialectError, BaseUrlError, SchemeError, or
    FatalValidationError on defects that block compilation.
    """
    raw = load_document(path)
    fix_report = None
    if fix:
        fix_report = fix_loop(raw, rules)
        raw = fix_report.document

    base_url = resolve_base_url(raw)
    contract = flatten(normalize(raw))
    findings = validate(contract)
    fatal = [f for f in findings if f.fatal]
    if fatal:
        raise FatalValidationError(fatal)

    schemes = extract_security(contract)
    manifest = compile_manifest(contract, schemes, base_url=base_url)
    bindings, env_template = build_env_map(schemes, manifest.api_title)
    return CompiledApi(
        raw=raw,
        contract=contract,
        manifest=manifest,
        bindings=bindings,
        env_template=env_template,
        validation=findings,
        fix_report=fix_report,
    )


def count_operations(tree: dict) -> int:
    """Operation count straight off a parsed document; usable even when
    compilation fails (for failure-rate denominators)."""
    count = 0
    for item in (tree.get("paths") or {}).values():
        if isinstance(item, dict):
            count += sum(1 for m in item if m in HTTP_METHODS)
    return count
