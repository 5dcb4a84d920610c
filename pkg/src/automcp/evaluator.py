"""Desk-scale evaluation: drive sampled tools against the mock upstream
and score each call on HTTP success plus observable effect.

A tool passes when it (1) is present in a loadable manifest, (2) returns
a 2xx from the upstream, and (3) the upstream's recorded request matches
the method/path/query derived from the arguments; creates additionally
must land in the mock's resource store.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from urllib.parse import quote

from .compiler import ToolManifest, ToolSpec
from .doctor import VendorRule
from .errors import AutoMcpError
from .ingest import load_document
from .mock_upstream import ENFORCE_PER_ENDPOINT, MockUpstream, run_mock_upstream
from .pipeline import compile_file, count_operations
from .runtime import _scalar, bindings_for, invoke_tool
from .sampling import SampleReport, path_group, sample

_METHOD_RANK = {
    "POST": 0,
    "GET": 1, "HEAD": 1, "OPTIONS": 1,
    "PUT": 2, "PATCH": 2,
    "DELETE": 3,
}


@dataclass
class ToolOutcome:
    tool_name: str
    passed: bool
    stage: str  # ok | invoke | http | echo | state
    detail: str = ""
    http_status: int | None = None

    def to_dict(self) -> dict:
        return {
            "tool": self.tool_name,
            "passed": self.passed,
            "stage": self.stage,
            "detail": self.detail,
            "http_status": self.http_status,
        }


@dataclass
class EvalReport:
    api_title: str
    manifest_loaded: bool = True
    load_error: str = ""
    total: int = 0
    passed: int = 0
    outcomes: list[ToolOutcome] = field(default_factory=list)

    @property
    def pass_rate(self) -> float:
        return self.passed / self.total if self.total else 0.0

    def to_dict(self) -> dict:
        return {
            "api": self.api_title,
            "manifest_loaded": self.manifest_loaded,
            "load_error": self.load_error,
            "passed": self.passed,
            "total": self.total,
            "pass_rate": round(self.pass_rate, 4),
            "outcomes": [o.to_dict() for o in self.outcomes],
        }

    def format_table(self) -> str:
        lines = [
            f"API: {self.api_title}   "
            f"{self.passed}/{self.total} passed ({self.pass_rate:.0%})"
        ]
        if not self.manifest_loaded:
            lines.append(f"  manifest failed to load: {self.load_error}")
            return "\n".join(lines)
        width = max((len(o.tool_name) for o in self.outcomes), default=4)
        for o in self.outcomes:
            status = "PASS" if o.passed else f"FAIL({o.stage})"
            detail = f"  {o.detail}" if o.detail and not o.passed else ""
            lines.append(f"  {o.tool_name:<{width}}  {status}{detail}")
        return "\n".join(lines)


def load_order_file(path: str | Path) -> list[str]:
    """Explicit call order, one tool name per line; '#' comments allowed."""
    return _read_lines(path)


def load_exclusions_file(path: str | Path) -> set[str]:
    """Tool names to skip (premium/geo-restricted stand-ins), one per line."""
    return set(_read_lines(path))


def _read_lines(path: str | Path) -> list[str]:
    names = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if line and not line.startswith("#"):
            names.append(line)
    return names


def order_tools(
    manifest: ToolManifest,
    selected: list[str],
    order_override: list[str] | None = None,
    exclusions: set[str] | None = None,
) -> list[ToolSpec]:
    """Dependency-friendly call order: creates, then reads, then updates,
    then deletes within each resource group; an explicit override list
    wins where it names tools."""
    exclusions = exclusions or set()
    chosen = [
        manifest.tool(name)
        for name in selected
        if name not in exclusions and manifest.tool(name) is not None
    ]
    doc_index = {t.tool_name: i for i, t in enumerate(manifest.tools)}
    group_order: dict[str, int] = {}
    for tool in manifest.tools:
        group = path_group(tool.endpoint.path_template)
        group_order.setdefault(group, len(group_order))

    def heuristic_key(tool: ToolSpec):
        return (
            group_order[path_group(tool.endpoint.path_template)],
            _METHOD_RANK.get(tool.endpoint.method, 4),
            doc_index[tool.tool_name],
        )

    ordered = sorted(chosen, key=heuristic_key)
    if order_override:
        names = {t.tool_name for t in ordered}
        pinned = [name for name in order_override if name in names]
        by_name = {t.tool_name: t for t in ordered}
        head = [by_name[name] for name in pinned]
        tail = [t for t in ordered if t.tool_name not in set(pinned)]
        ordered = head + tail
    return ordered


def evaluate(
    manifest: ToolManifest,
    sample_report: SampleReport,
    mock: MockUpstream,
    env: dict[str, str],
    timeout: float = 10.0,
    order_override: list[str] | None = None,
    exclusions: set[str] | None = None,
) -> EvalReport:
    """Invoke every sampled tool against the mock and label outcomes."""
    report = EvalReport(api_title=manifest.api_title)
    bindings = bindings_for(manifest)
    tools = order_tools(
        manifest, sample_report.selected_tools(), order_override, exclusions
    )
    report.total = len(tools)
    for tool in tools:
        outcome = _run_one(tool, manifest, mock, env, bindings, timeout)
        report.outcomes.append(outcome)
        if outcome.passed:
            report.passed += 1
    return report


def _run_one(tool, manifest, mock, env, bindings, timeout) -> ToolOutcome:
    args = synth_args(tool)
    try:
        result = invoke_tool(
            tool, args, env, mock.base_url, manifest.schemes, bindings,
            timeout=timeout,
        )
    except AutoMcpError as exc:
        return ToolOutcome(tool.tool_name, False, "invoke", str(exc))
    if result.is_error:
        return ToolOutcome(
            tool.tool_name, False, "http",
            f"HTTP {result.http_status}: {result.body}", result.http_status,
        )

    record = mock.last_record()
    expected_path = _expected_path(tool, args)
    if (
        record is None
        or record.method != tool.endpoint.method
        or record.path != expected_path
    ):
        got = f"{record.method} {record.path}" if record else "nothing recorded"
        return ToolOutcome(
            tool.tool_name, False, "echo",
            f"expected {tool.endpoint.method} {expected_path}, mock saw {got}",
            result.http_status,
        )
    for param in tool.endpoint.parameters:
        if param.is_credential or param.location != "query":
            continue
        if param.sanitized_name in args:
            sent = args[param.sanitized_name]
            seen = record.query.get(param.name)
            if isinstance(sent, list):
                # requests serializes lists as repeated keys; the record
                # keeps the first value, and an empty list sends nothing
                ok = (
                    param.name not in record.query
                    if not sent
                    else seen in {_scalar(v) for v in sent}
                )
            else:
                ok = seen == _scalar(sent)
            if not ok:
                return ToolOutcome(
                    tool.tool_name, False, "echo",
                    f"query {param.name!r}: sent {sent!r}, mock saw {seen!r}",
                    result.http_status,
                )

    if tool.endpoint.method == "POST" and isinstance(args.get("body"), dict):
        stored = mock.store.get(record.path, [])
        if not any(
            all(item.get(k) == v for k, v in args["body"].items())
            for item in stored
        ):
            return ToolOutcome(
                tool.tool_name, False, "state",
                "created resource not visible in the store",
                result.http_status,
            )
    return ToolOutcome(tool.tool_name, True, "ok", http_status=result.http_status)


def evaluate_spec_file(
    spec_path: str | Path,
    env: dict[str, str],
    credentials: dict[str, object] | None = None,
    required_headers: dict[str, str] | None = None,
    enforce: str = ENFORCE_PER_ENDPOINT,
    threshold: int = 20,
    fix: bool = False,
    rules: list[VendorRule] | None = None,
    timeout: float = 10.0,
) -> EvalReport:
    """Compile + sample + mock + evaluate one spec file.

    A compile-stage failure (the manifest never loads) yields a report
    with zero passes over the document's operation count.
    """
    try:
        compiled = compile_file(spec_path, fix=fix, rules=rules)
    except AutoMcpError as exc:
        raw_ops = 0
        title = str(spec_path)
        try:
            doc = load_document(spec_path)
            raw_ops = count_operations(doc.tree)
            title = (doc.tree.get("info") or {}).get("title", title)
        except AutoMcpError:
            pass
        return EvalReport(
            api_title=str(title),
            manifest_loaded=False,
            load_error=f"{exc.__class__.__name__}: {exc}",
            total=raw_ops,
            passed=0,
        )

    sample_report = sample(compiled.manifest, threshold=threshold)
    mock = run_mock_upstream(
        compiled.manifest,
        credentials=credentials,
        required_headers=required_headers,
        enforce=enforce,
    )
    try:
        return evaluate(compiled.manifest, sample_report, mock, env, timeout=timeout)
    finally:
        mock.stop()


def aggregate_reports(reports: list[EvalReport]) -> dict:
    """Corpus-level rollup: per-API pass rates plus the aggregate."""
    total = sum(r.total for r in reports)
    passed = sum(r.passed for r in reports)
    return {
        "apis": {
            r.api_title: {
                "passed": r.passed,
                "total": r.total,
                "pass_rate": round(r.pass_rate, 4),
                "manifest_loaded": r.manifest_loaded,
            }
            for r in reports
        },
        "passed": passed,
        "total": total,
        "pass_rate": round(passed / total, 4) if total else 0.0,
    }


def synth_args(tool: ToolSpec) -> dict:
    """Deterministic sample arguments straight from the input schema.

    Declared examples win over type-derived defaults, so a contract whose
    example contradicts its type surfaces the mismatch at call time.
    """
    return {
        name: _sample_value(prop, name)
        for name, prop in tool.input_schema.get("properties", {}).items()
    }


def _sample_value(schema: dict, hint: str, depth: int = 0):
    if not isinstance(schema, dict):
        return f"sample-{hint}"
    if "example" in schema:
        return schema["example"]
    if "default" in schema:
        return schema["default"]
    if isinstance(schema.get("enum"), list) and schema["enum"]:
        return schema["enum"][0]
    declared = schema.get("type")
    if isinstance(declared, list):
        declared = declared[0] if declared else None
    if declared == "integer":
        return 1
    if declared == "number":
        return 1.5
    if declared == "boolean":
        return True
    if declared == "array":
        items = schema.get("items")
        if depth >= 3 or not isinstance(items, dict):
            return []
        return [_sample_value(items, hint, depth + 1)]
    if declared == "object" or "properties" in schema:
        if depth >= 3:
            return {}
        return {
            key: _sample_value(value, key, depth + 1)
            for key, value in (schema.get("properties") or {}).items()
        }
    return f"sample-{hint}"


def _expected_path(tool: ToolSpec, args: dict) -> str:
    path = tool.endpoint.path_template
    for param in tool.endpoint.parameters:
        if param.location == "path" and param.sanitized_name in args:
            path = path.replace(
                "{%s}" % param.name,
                quote(_scalar(args[param.sanitized_name]), safe=""),
            )
    return path
