"""Auth injection, tool invocation, and the JSON-RPC serve loop."""

from __future__ import annotations

import base64
import io
import json

import pytest

from automcp.errors import (
    ExtraHeadersParseError,
    MissingCredential,
    SchemaViolation,
    TransportError,
)
from automcp.mock_upstream import run_mock_upstream
from automcp.pipeline import compile_file
from automcp.runtime import (
    AuthPlan,
    bindings_for,
    invoke_tool,
    merge_extra_headers,
    resolve_auth,
    serve,
    validate_args,
)
from automcp.security import (
    KIND_API_KEY,
    KIND_HTTP_BASIC,
    KIND_HTTP_BEARER,
    KIND_OAUTH2,
    SecurityScheme,
    build_env_map,
)
from conftest import fixture_path, sentinel_credentials

TRELLO_TREE = {
    "openapi": "3.0.0",
    "info": {"title": "Trello Fixture", "version": "1"},
    "servers": [{"url": "https://board.example/1"}],
    "components": {
        "securitySchemes": {
            "apiKey": {"type": "apiKey", "in": "query", "name": "key"},
            "apiToken": {"type": "apiKey", "in": "query", "name": "token"},
        }
    },
    "paths": {
        "/cards": {
            "post": {
                "operationId": "create_card",
                "security": [{"apiKey": [], "apiToken": []}],
                "requestBody": {
                    "required": True,
                    "content": {
                        "application/json": {
                            "schema": {
                                "type": "object",
                                "required": ["name"],
                                "properties": {"name": {"type": "string"}},
                            }
                        }
                    },
                },
                "responses": {"200": {"description": "ok"}},
            },
            "get": {
                "operationId": "list_cards",
                "security": [{"apiKey": [], "apiToken": []}],
                "responses": {"200": {"description": "ok"}},
            },
        },
        "/users/{id}": {
            "get": {
                "operationId": "get_user",
                "security": [],
                "parameters": [
                    {"name": "id", "in": "path", "required": True,
                     "schema": {"type": "string"}}
                ],
                "responses": {"200": {"description": "ok"}},
            }
        },
    },
}


@pytest.fixture()
def trello(tmp_path):
    spec = tmp_path / "trello.json"
    spec.write_text(json.dumps(TRELLO_TREE), encoding="utf-8")
    return compile_file(spec)


def scheme_set():
    return [
        SecurityScheme("key1", KIND_API_KEY, "header", "X-Key"),
        SecurityScheme("q1", KIND_API_KEY, "query", "api_key"),
        SecurityScheme("basic1", KIND_HTTP_BASIC),
        SecurityScheme("bear1", KIND_HTTP_BEARER),
        SecurityScheme("oauth1", KIND_OAUTH2),
    ]


def bindings_and_env(values: dict[str, str]):
    schemes = scheme_set()
    bindings, _ = build_env_map(schemes, "Acme")
    env = {}
    for binding in bindings:
        if binding.scheme_id in values:
            if binding.role == "PASSWORD":
                env[binding.env_var] = values[binding.scheme_id] + "-pw"
            else:
                env[binding.env_var] = values[binding.scheme_id]
    return schemes, bindings, env


class TestResolveAuth:
    def test_bearer_header(self):
        schemes, bindings, env = bindings_and_env({"bear1": "t"})
        plan = resolve_auth([{"bear1": []}], schemes, env, bindings)
        assert plan.headers["Authorization"] == "Bearer t"

    def test_fallback_to_second_alternative(self):
        schemes, bindings, env = bindings_and_env({"q1": "qk"})
        plan = resolve_auth([{"oauth1": []}, {"q1": []}], schemes, env, bindings)
        assert plan.query == {"api_key": "qk"}
        assert not plan.headers

    def test_query_api_key(self):
        schemes, bindings, env = bindings_and_env({"q1": "sekrit"})
        plan = resolve_auth([{"q1": []}], schemes, env, bindings)
        assert plan.query == {"api_key": "sekrit"}

    def test_basic_userpass_encoding(self):
        schemes, bindings, env = bindings_and_env({"basic1": "user"})
        plan = resolve_auth([{"basic1": []}], schemes, env, bindings)
        expected = base64.b64encode(b"user:user-pw").decode()
        assert plan.headers["Authorization"] == f"Basic {expected}"

    def test_and_within_set(self):
        schemes, bindings, env = bindings_and_env({"key1": "hk", "q1": "qk"})
        plan = resolve_auth([{"key1": [], "q1": []}], schemes, env, bindings)
        assert plan.headers["X-Key"] == "hk"
        assert plan.query["api_key"] == "qk"

    def test_empty_requirements_empty_plan(self):
        schemes, bindings, env = bindings_and_env({})
        plan = resolve_auth([], schemes, env, bindings)
        assert plan == AuthPlan()

    def test_missing_credential_names_variable(self):
        schemes, bindings, env = bindings_and_env({})
        with pytest.raises(MissingCredential) as excinfo:
            resolve_auth([{"key1": []}], schemes, env, bindings)
        assert excinfo.value.env_var == "ACME_KEY1"


class TestMergeExtraHeaders:
    def test_header_added_to_plan(self):
        plan = merge_extra_headers(
            AuthPlan(), {"EXTRA_HEADERS": '{"Notion-Version":"2022-06-28"}'}
        )
        assert plan.headers["Notion-Version"] == "2022-06-28"

    def test_unset_is_noop(self):
        plan = AuthPlan(headers={"A": "1"})
        assert merge_extra_headers(plan, {}) is plan
        assert plan.headers == {"A": "1"}

    def test_non_object_value_fatal(self):
        with pytest.raises(ExtraHeadersParseError):
            merge_extra_headers(AuthPlan(), {"EXTRA_HEADERS": '["x"]'})

    def test_case_insensitive_override(self):
        plan = AuthPlan(headers={"authorization": "Bearer old"})
        merge_extra_headers(plan, {"EXTRA_HEADERS": '{"Authorization":"Bearer new"}'})
        assert plan.headers == {"Authorization": "Bearer new"}


class TestValidateArgs:
    def test_unknown_argument_rejected(self):
        schema = {"type": "object", "properties": {"a": {"type": "string"}},
                  "required": [], "additionalProperties": False}
        assert validate_args({"b": 1}, schema)

    def test_missing_required(self):
        schema = {"type": "object", "properties": {"a": {"type": "string"}},
                  "required": ["a"], "additionalProperties": False}
        assert validate_args({}, schema)

    def test_type_mismatch(self):
        schema = {"type": "object", "properties": {"a": {"type": "integer"}},
                  "required": [], "additionalProperties": False}
        assert validate_args({"a": "not-int"}, schema)
        assert validate_args({"a": True}, schema)
        assert not validate_args({"a": 3}, schema)


class TestInvokeTool:
    def test_trello_card_round_trip(self, trello):
        env, creds = sentinel_credentials(trello)
        with run_mock_upstream(trello.manifest, credentials=creds) as mock:
            tool = trello.manifest.tool("create_card")
            result = invoke_tool(
                tool, {"body": {"name": "Design Tasks"}}, env, mock.base_url,
                trello.manifest.schemes, trello.bindings,
            )
            record = mock.last_record()
        assert result.http_status == 200
        assert result.is_error is False
        assert record.method == "POST"
        assert record.path == "/cards"
        assert record.query["key"] == creds["apiKey"]
        assert record.query["token"] == creds["apiToken"]
        assert record.body == {"name": "Design Tasks"}

    def test_path_segment_percent_encoded(self, trello):
        env, creds = sentinel_credentials(trello)
        with run_mock_upstream(trello.manifest, credentials=creds) as mock:
            tool = trello.manifest.tool("get_user")
            result = invoke_tool(
                tool, {"id": "a/b"}, env, mock.base_url,
                trello.manifest.schemes, trello.bindings,
            )
            record = mock.last_record()
        assert result.is_error is False
        assert record.path == "/users/a%2Fb"

    def test_missing_credential_issues_no_request(self, trello):
        with run_mock_upstream(trello.manifest) as mock:
            tool = trello.manifest.tool("create_card")
            with pytest.raises(MissingCredential) as excinfo:
                invoke_tool(
                    tool, {"body": {"name": "x"}}, {}, mock.base_url,
                    trello.manifest.schemes, trello.bindings,
                )
            assert mock.records == []
        assert excinfo.value.env_var == "TRELLO_FIXTURE_API_KEY"

    def test_schema_violation_before_request(self, trello):
        with run_mock_upstream(trello.manifest) as mock:
            tool = trello.manifest.tool("get_user")
            with pytest.raises(SchemaViolation):
                invoke_tool(
                    tool, {"id": "1", "surprise": True}, {}, mock.base_url,
                    trello.manifest.schemes, trello.bindings,
                )
            assert mock.records == []

    def test_secrets_redacted_in_request_echo(self, trello):
        env, creds = sentinel_credentials(trello)
        with run_mock_upstream(trello.manifest, credentials=creds) as mock:
            tool = trello.manifest.tool("list_cards")
            result = invoke_tool(
                tool, {}, env, mock.base_url,
                trello.manifest.schemes, trello.bindings,
            )
        echo_text = json.dumps(result.request_echo)
        for secret in creds.values():
            assert secret not in echo_text
        assert "***" in result.request_echo["url"]

    def test_transport_error(self, trello):
        env, _ = sentinel_credentials(trello)
        tool = trello.manifest.tool("get_user")
        with pytest.raises(TransportError):
            invoke_tool(
                tool, {"id": "1"}, env, "http://127.0.0.1:1",
                trello.manifest.schemes, trello.bindings, timeout=2,
            )

    def test_cookie_auth_merges_with_cookie_params(self, tmp_path):
        tree = {
            "openapi": "3.0.0",
            "info": {"title": "CookieJar", "version": "1"},
            "servers": [{"url": "https://cj.example"}],
            "components": {
                "securitySchemes": {
                    "ck": {"type": "apiKey", "in": "cookie", "name": "session"}
                }
            },
            "paths": {
                "/jar": {
                    "get": {
                        "security": [{"ck": []}],
                        "parameters": [
                            {"name": "flavor", "in": "cookie",
                             "schema": {"type": "string"}}
                        ],
                        "responses": {"200": {"description": "ok"}},
                    }
                }
            },
        }
        spec = tmp_path / "cj.json"
        spec.write_text(json.dumps(tree), encoding="utf-8")
        compiled = compile_file(spec)
        env, creds = sentinel_credentials(compiled)
        with run_mock_upstream(compiled.manifest, credentials=creds) as mock:
            result = invoke_tool(
                compiled.manifest.tools[0], {"flavor": "oat"}, env, mock.base_url,
                compiled.manifest.schemes, compiled.bindings,
            )
            record = mock.last_record()
        assert result.is_error is False
        assert "flavor=oat" in record.headers["Cookie"]
        assert f"session={creds['ck']}" in record.headers["Cookie"]

    def test_extra_headers_reach_the_wire(self, trello):
        env, creds = sentinel_credentials(trello)
        env["EXTRA_HEADERS"] = '{"Notion-Version":"2022-06-28"}'
        with run_mock_upstream(trello.manifest, credentials=creds) as mock:
            invoke_tool(
                trello.manifest.tool("list_cards"), {}, env, mock.base_url,
                trello.manifest.schemes, trello.bindings,
            )
            record = mock.last_record()
        assert record.headers.get("Notion-Version") == "2022-06-28"


def run_serve(compiled, env, lines) -> list[dict]:
    stdin = io.StringIO("".join(json.dumps(line) + "\n" for line in lines))
    stdout = io.StringIO()
    serve(compiled.manifest, env, stdin=stdin, stdout=stdout, timeout=5)
    return [json.loads(line) for line in stdout.getvalue().splitlines()]


class TestServe:
    def test_initialize_echoes_supported_version(self, trello):
        responses = run_serve(
            trello, {},
            [{"jsonrpc": "2.0", "id": 1, "method": "initialize",
              "params": {"protocolVersion": "2025-03-26"}}],
        )
        assert responses[0]["id"] == 1
        assert responses[0]["result"]["protocolVersion"] == "2025-03-26"
        assert responses[0]["result"]["serverInfo"]["name"] == "Trello Fixture"

    def test_unsupported_version_falls_back(self, trello):
        responses = run_serve(
            trello, {},
            [{"jsonrpc": "2.0", "id": 1, "method": "initialize",
              "params": {"protocolVersion": "1999-01-01"}}],
        )
        assert responses[0]["result"]["protocolVersion"] == "2024-11-05"

    def test_tools_list_matches_manifest(self, trello):
        responses = run_serve(
            trello, {}, [{"jsonrpc": "2.0", "id": 7, "method": "tools/list"}]
        )
        tools = responses[0]["result"]["tools"]
        assert len(tools) == len(trello.manifest.tools)
        assert {t["name"] for t in tools} == {"create_card", "list_cards", "get_user"}

    def test_unknown_tool_is_invalid_params(self, trello):
        responses = run_serve(
            trello, {},
            [{"jsonrpc": "2.0", "id": 2, "method": "tools/call",
              "params": {"name": "nope", "arguments": {}}}],
        )
        assert responses[0]["error"]["code"] == -32602

    def test_unknown_method(self, trello):
        responses = run_serve(
            trello, {}, [{"jsonrpc": "2.0", "id": 3, "method": "resources/list"}]
        )
        assert responses[0]["error"]["code"] == -32601

    def test_parse_error_has_null_id(self, trello):
        stdin = io.StringIO("this is not json\n")
        stdout = io.StringIO()
        serve(trello.manifest, {}, stdin=stdin, stdout=stdout)
        response = json.loads(stdout.getvalue())
        assert response["error"]["code"] == -32700
        assert response["id"] is None

    def test_notifications_never_answered(self, trello):
        responses = run_serve(
            trello, {},
            [
                {"jsonrpc": "2.0", "method": "notifications/initialized"},
                {"jsonrpc": "2.0", "method": "tools/list"},
                {"jsonrpc": "2.0", "id": 4, "method": "tools/list"},
            ],
        )
        assert len(responses) == 1
        assert responses[0]["id"] == 4

    def test_schema_violation_surfaces_as_tool_error(self, trello):
        env, creds = sentinel_credentials(trello)
        with run_mock_upstream(trello.manifest, credentials=creds) as mock:
            trello.manifest.base_url = mock.base_url
            responses = run_serve(
                trello, env,
                [{"jsonrpc": "2.0", "id": 5, "method": "tools/call",
                  "params": {"name": "get_user",
                             "arguments": {"id": "1", "bogus": True}}}],
            )
        result = responses[0]["result"]
        assert result["isError"] is True
        assert "SchemaViolation" in result["content"][0]["text"]

    def test_call_against_mock_and_error_payload_shape(self, trello):
        # a client awaiting each call: two sessions against one mock keep
        # the create strictly before the list
        env, creds = sentinel_credentials(trello)
        with run_mock_upstream(trello.manifest, credentials=creds) as mock:
            trello.manifest.base_url = mock.base_url
            created_resp = run_serve(
                trello, env,
                [{"jsonrpc": "2.0", "id": 10, "method": "tools/call",
                  "params": {"name": "create_card",
                             "arguments": {"body": {"name": "Card A"}}}}],
            )[0]
            listed_resp = run_serve(
                trello, env,
                [{"jsonrpc": "2.0", "id": 11, "method": "tools/call",
                  "params": {"name": "list_cards", "arguments": {}}}],
            )[0]
        created = json.loads(created_resp["result"]["content"][0]["text"])
        assert created["created"]["name"] == "Card A"
        listed = json.loads(listed_resp["result"]["content"][0]["text"])
        assert any(item["name"] == "Card A" for item in listed["items"])

    def test_http_error_embeds_status(self, trello):
        env, creds = sentinel_credentials(trello)
        with run_mock_upstream(trello.manifest, credentials=creds) as mock:
            trello.manifest.base_url = mock.base_url
            env.pop("TRELLO_FIXTURE_API_TOKEN")
            responses = run_serve(
                trello, env,
                [{"jsonrpc": "2.0", "id": 12, "method": "tools/call",
                  "params": {"name": "list_cards", "arguments": {}}}],
            )
        result = responses[0]["result"]
        assert result["isError"] is True
        assert "MissingCredential" in result["content"][0]["text"]

    def test_extra_headers_validated_at_startup(self, trello):
        with pytest.raises(ExtraHeadersParseError):
            serve(
                trello.manifest, {"EXTRA_HEADERS": "[broken"},
                stdin=io.StringIO(""), stdout=io.StringIO(),
            )

    def test_exactly_one_response_per_id(self, trello):
        env, creds = sentinel_credentials(trello)
        with run_mock_upstream(trello.manifest, credentials=creds) as mock:
            trello.manifest.base_url = mock.base_url
            requests_lines = [
                {"jsonrpc": "2.0", "id": i, "method": "tools/call",
                 "params": {"name": "list_cards", "arguments": {}}}
                for i in range(20)
            ]
            responses = run_serve(trello, env, requests_lines)
        ids = [r["id"] for r in responses]
        assert sorted(ids) == list(range(20))


def test_bindings_rederived_from_manifest(trello_manifest=None):
    compiled = compile_file(fixture_path("allauth.yaml"))
    rederived = bindings_for(compiled.manifest)
    assert rederived == compiled.bindings
