"""Command-line entry points: generate, serve, lint, sample.

Exit codes: 0 success, 1 parse/dialect error, 2 validation error,
3 I/O error, 4 lint findings remain. Under `serve`, stdout carries
protocol messages only; every diagnostic goes to stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import dataclass
from pathlib import Path

from ._version import __version__
from .compiler import manifest_to_dict
from .doctor import VendorRule, fix_loop, lint, load_vendor_rules
from .envfile import load_env
from .errors import (
    AutoMcpError,
    DialectError,
    ExtraHeadersParseError,
    NonConvergence,
    ParseError,
)
from .ingest import load_document, normalize
from .pipeline import compile_file
from .refs import flatten
from .runtime import serve
from .sampling import DEFAULT_THRESHOLD, sample
from .security import KIND_OAUTH2

EXIT_OK = 0
EXIT_PARSE = 1
EXIT_VALIDATION = 2
EXIT_IO = 3
EXIT_FINDINGS = 4

ENV_PREFIX = "AUTOMCP_"

log = logging.getLogger("automcp.cli")


@dataclass
class RunConfig:
    subcommand: str
    spec_path: Path
    out_dir: Path | None = None
    fix: bool = False
    env_path: Path | None = None
    timeout_seconds: float = 30.0
    threshold: int = DEFAULT_THRESHOLD
    port: int = 8765
    rules_path: Path | None = None
    emit_stub: bool = False


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(stream=sys.stderr, level=logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    cfg = _parse_args(argv if argv is not None else sys.argv[1:])
    handlers = {
        "generate": cmd_generate,
        "serve": cmd_serve,
        "lint": cmd_lint,
        "sample": cmd_sample,
    }
    try:
        return handlers[cfg.subcommand](cfg)
    except (ParseError, DialectError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except NonConvergence as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FINDINGS
    except AutoMcpError as exc:
        prefix = f"class {exc.lint_class}: " if exc.lint_class else ""
        print(f"error: {prefix}{exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO


def _parse_args(argv: list[str]) -> RunConfig:
    parser = argparse.ArgumentParser(
        prog="automcp",
        description="Compile OpenAPI contracts into runnable MCP servers.",
    )
    parser.add_argument("--version", action="version", version=f"automcp {__version__}")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    def add_common(p: argparse.ArgumentParser) -> None:
        p.add_argument("spec", type=Path, help="OpenAPI 2.0/3.x spec file")
        p.add_argument("--rules", type=Path, default=_env_path("RULES"),
                       help="vendor rules JSON (class C/D knowledge)")

    gen = sub.add_parser("generate", help="compile and write server artifacts")
    add_common(gen)
    gen.add_argument("--out", type=Path, required=True, help="output directory")
    gen.add_argument("--fix", action="store_true",
                     help="repair patchable spec defects before compiling")
    gen.add_argument("--emit-stub", action="store_true",
                     help="also write the self-describing manifest for external codegen")
    gen.add_argument("--port", type=int, default=_env_int("PORT", 8765),
                     help="OAuth redirect port recorded in oauth_config.json")

    srv = sub.add_parser("serve", help="serve the compiled tools over stdio")
    add_common(srv)
    srv.add_argument("--env", type=Path,
                     default=_env_path("ENV_PATH") or Path(".env"),
                     help="path to the .env credential store")
    srv.add_argument("--timeout", type=float,
                     default=_env_float("TIMEOUT_SECONDS", 30.0),
                     help="upstream HTTP timeout in seconds")

    ln = sub.add_parser("lint", help="detect and optionally repair spec defects")
    add_common(ln)
    ln.add_argument("--fix", action="store_true", help="write a repaired copy + diff")
    ln.add_argument("--out", type=Path, default=None,
                    help="directory for repaired output (default: spec directory)")

    smp = sub.add_parser("sample", help="print the stratified evaluation sample")
    add_common(smp)
    smp.add_argument("--threshold", type=int,
                     default=_env_int("THRESHOLD", DEFAULT_THRESHOLD),
                     help="max endpoint count evaluated exhaustively")

    ns = parser.parse_args(argv)
    return RunConfig(
        subcommand=ns.subcommand,
        spec_path=ns.spec,
        out_dir=getattr(ns, "out", None),
        fix=getattr(ns, "fix", False),
        env_path=getattr(ns, "env", None),
        timeout_seconds=getattr(ns, "timeout", 30.0),
        threshold=getattr(ns, "threshold", DEFAULT_THRESHOLD),
        port=getattr(ns, "port", 8765),
        rules_path=getattr(ns, "rules", None),
        emit_stub=getattr(ns, "emit_stub", False),
    )


def _env_path(name: str) -> Path | None:
    value = os.environ.get(ENV_PREFIX + name)
    return Path(value) if value else None


def _env_int(name: str, default: int) -> int:
    value = os.environ.get(ENV_PREFIX + name)
    return int(value) if value else default


def _env_float(name: str, default: float) -> float:
    value = os.environ.get(ENV_PREFIX + name)
    return float(value) if value else default


def _load_rules(cfg: RunConfig) -> list[VendorRule] | None:
    return load_vendor_rules(cfg.rules_path) if cfg.rules_path else None


def cmd_generate(cfg: RunConfig) -> int:
    rules = _load_rules(cfg)
    compiled = compile_file(cfg.spec_path, fix=cfg.fix, rules=rules)
    out = cfg.out_dir
    out.mkdir(parents=True, exist_ok=True)

    if compiled.fix_report and compiled.fix_report.changed:
        repaired = out / f"{cfg.spec_path.stem}.fixed{cfg.spec_path.suffix}"
        repaired.write_text(compiled.raw.text, encoding="utf-8")
        (out / f"{cfg.spec_path.stem}.patch.diff").write_text(
            compiled.fix_report.diff + "\n", encoding="utf-8"
        )
        print(f"repaired spec written to {repaired}", file=sys.stderr)

    (out / "manifest.json").write_text(
        json.dumps(manifest_to_dict(compiled.manifest), indent=2, ensure_ascii=False)
        + "\n",
        encoding="utf-8",
    )
    if cfg.emit_stub:
        (out / "stub.json").write_text(
            json.dumps(
                manifest_to_dict(compiled.manifest, include_bindings=True),
                indent=2,
                ensure_ascii=False,
            )
            + "\n",
            encoding="utf-8",
        )

    env_file = out / ".env"
    if env_file.exists():
        print(f"{env_file} already exists; leaving it untouched", file=sys.stderr)
    else:
        env_file.write_text(compiled.env_template, encoding="utf-8")

    slug = compiled.manifest.api_title.lower().replace(" ", "-") or "api"
    launch = {
        "mcpServers": {
            slug: {
                "command": "python",
                "args": [
                    "-m",
                    "automcp",
                    "serve",
                    str(cfg.spec_path.resolve()),
                    "--env",
                    str(env_file.resolve()),
                ],
            }
        }
    }
    (out / "mcp_config.json").write_text(
        json.dumps(launch, indent=2) + "\n", encoding="utf-8"
    )

    oauth_schemes = [s for s in compiled.manifest.schemes if s.kind == KIND_OAUTH2]
    if oauth_schemes:
        scheme = oauth_schemes[0]
        binding = next(
            (b for b in compiled.bindings if b.scheme_id == scheme.id), None
        )
        oauth_doc = {
            "scheme": scheme.id,
            "authorizationUrl": scheme.flows.authorization_url if scheme.flows else None,
            "tokenUrl": scheme.flows.token_url if scheme.flows else None,
            "scopes": scheme.flows.scopes if scheme.flows else {},
            "envVar": binding.env_var if binding else None,
            "redirectPort": cfg.port,
            "envPath": str(env_file.resolve()),
        }
        (out / "oauth_config.json").write_text(
            json.dumps(oauth_doc, indent=2) + "\n", encoding="utf-8"
        )

    print(
        f"{compiled.manifest.api_title}: {len(compiled.manifest.tools)} tools -> {out}",
        file=sys.stderr,
    )
    return EXIT_OK


def cmd_serve(cfg: RunConfig) -> int:
    compiled = compile_file(cfg.spec_path, rules=_load_rules(cfg))
    env = load_env(cfg.env_path)
    try:
        serve(compiled.manifest, env, timeout=cfg.timeout_seconds)
    except ExtraHeadersParseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    return EXIT_OK


def cmd_lint(cfg: RunConfig) -> int:
    rules = _load_rules(cfg)
    raw = load_document(cfg.spec_path)

    if cfg.fix:
        report = fix_loop(raw, rules)
        out_dir = cfg.out_dir or cfg.spec_path.parent
        payload = report.to_dict()
        repaired_count = sum(report.findings_by_class.values())
        payload["summary"] = (
            f"{repaired_count} findings repaired, "
            f"{len(report.residual_advisories)} advisories"
        )
        if report.changed:
            out_dir.mkdir(parents=True, exist_ok=True)
            repaired = out_dir / f"{cfg.spec_path.stem}.fixed{cfg.spec_path.suffix}"
            repaired.write_text(report.document.text, encoding="utf-8")
            diff_file = out_dir / f"{cfg.spec_path.stem}.patch.diff"
            diff_file.write_text(report.diff + "\n", encoding="utf-8")
            payload["repaired_spec"] = str(repaired)
            payload["diff_file"] = str(diff_file)
        print(json.dumps(payload, indent=2, ensure_ascii=False))
        return EXIT_OK

    findings = lint(flatten(normalize(raw)), raw, rules)
    blocking = [f for f in findings if f.lint_class != "C"]
    payload = {
        "summary": f"{len(findings)} findings",
        "findings": [f.to_dict() for f in findings],
        "counts_by_class": _counts(findings),
        "clean": not findings,
    }
    print(json.dumps(payload, indent=2, ensure_ascii=False))
    return EXIT_FINDINGS if blocking else EXIT_OK


def _counts(findings) -> dict[str, int]:
    counts: dict[str, int] = {}
    for f in findings:
        counts[f.lint_class] = counts.get(f.lint_class, 0) + 1
    return counts


def cmd_sample(cfg: RunConfig) -> int:
    compiled = compile_file(cfg.spec_path, rules=_load_rules(cfg))
    report = sample(compiled.manifest, threshold=cfg.threshold)
    print(json.dumps(report.to_dict(), indent=2, ensure_ascii=False))
    return EXIT_OK
