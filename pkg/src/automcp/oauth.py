"""OAuth2 token acquisition with a local callback listener.

Runs the authorization-code dance: start a throwaway HTTP listener,
send the user's browser to the authorization URL, trade the returned
code for tokens, and persist them into the `.env` store. Exactly one
acquisition may run per process (the listener owns its port).
"""

from __future__ import annotations

import secrets
import threading
from http.server import BaseHTTPRequestHandler, HTTPServer
from pathlib import Path
from typing import Callable
from urllib.parse import parse_qs, urlencode, urlparse

import requests

from .envfile import update_env_file
from .errors import CallbackTimeoutError, ExchangeError, FlowUnusableError
from .security import OAuth2Flows, refresh_var_for

CALLBACK_PATH = "/callback"
DEFAULT_CALLBACK_TIMEOUT = 300.0

_CALLBACK_PAGE = (
    b"<html><body><p>Authorization received. You can close this window.</p>"
    b"</body></html>"
)


class _CallbackServer(HTTPServer):
    """Captures one `code` (or provider error) delivered to /callback."""

    def __init__(self, port: int, expected_state: str) -> None:
        super().__init__(("127.0.0.1", port), _CallbackHandler)
        self.expected_state = expected_state
        self.code: str | None = None
        self.error: str | None = None
        self.received = threading.Event()


class _CallbackHandler(BaseHTTPRequestHandler):
    server: _CallbackServer

    def do_GET(self) -> None:  # noqa: N802 - http.server API
        parsed = urlparse(self.path)
        if parsed.path != CALLBACK_PATH:
            self.send_error(404)
            return
        params = {k: v[0] for k, v in parse_qs(parsed.query).items()}
        if params.get("state") != self.server.expected_state:
            self.send_error(400, "state mismatch")
            return
        self.send_response(200)
        self.send_header("Content-Type", "text/html")
        self.end_headers()
        self.wfile.write(_CALLBACK_PAGE)
        if "error" in params:
            self.server.error = params["error"]
        else:
            self.server.code = params.get("code")
        self.server.received.set()

    def log_message(self, *args) -> None:
        pass


def acquire_oauth_token(
    flows: OAuth2Flows,
    client_id: str,
    client_secret: str,
    redirect_port: int,
    env_path: str | Path,
    env_var: str,
    scopes: list[str] | None = None,
    timeout: float = DEFAULT_CALLBACK_TIMEOUT,
    open_browser: Callable[[str], object] | None = None,
) -> str:
    """Run the authorization-code flow and write the token to `env_path`.

    `scopes` defaults to every scope the contract declares. `open_browser`
    receives the authorization URL (default: the system browser); tests
    substitute a callable that performs the redirect themselves.
    """
    if not flows.authorization_code_usable:
        raise FlowUnusableError(
            "authorizationCode flow unusable: both authorizationUrl and "
            "tokenUrl are required"
        )
    if open_browser is None:
        import webbrowser

        open_browser = webbrowser.open

    state = secrets.token_urlsafe(16)
    redirect_uri = f"http://localhost:{redirect_port}{CALLBACK_PATH}"
    requested_scopes = list(flows.scopes) if scopes is None else scopes
    auth_query = {
        "response_type": "code",
        "client_id": client_id,
        "redirect_uri": redirect_uri,
        "state": state,
    }
    if requested_scopes:
        auth_query["scope"] = " ".join(requested_scopes)
    auth_url = f"{flows.authorization_url}?{urlencode(auth_query)}"

    server = _CallbackServer(redirect_port, state)
    runner = threading.Thread(
        target=lambda: server.serve_forever(poll_interval=0.05), daemon=True
    )
    runner.start()
    try:
        open_browser(auth_url)
        if not server.received.wait(timeout):
            raise CallbackTimeoutError(
                f"no OAuth callback within {timeout:.0f}s on port {redirect_port}"
            )
    finally:
        server.shutdown()
        server.server_close()
        runner.join()

    if server.error:
        raise ExchangeError(0, f"authorization denied: {server.error}")
    tokens = _exchange(
        flows.token_url,
        {
            "grant_type": "authorization_code",
            "code": server.code or "",
            "redirect_uri": redirect_uri,
            "client_id": client_id,
            "client_secret": client_secret,
        },
    )
    return _store_tokens(env_path, env_var, tokens)


def acquire_client_credentials_token(
    flows: OAuth2Flows,
    client_id: str,
    client_secret: str,
    env_path: str | Path,
    env_var: str,
    scopes: list[str] | None = None,
) -> str:
    """clientCredentials grant: a direct POST to the token endpoint."""
    if not flows.token_url:
        raise FlowUnusableError("clientCredentials flow unusable: no tokenUrl")
    payload = {
        "grant_type": "client_credentials",
        "client_id": client_id,
        "client_secret": client_secret,
    }
    requested = list(flows.scopes) if scopes is None else scopes
    if requested:
        payload["scope"] = " ".join(requested)
    tokens = _exchange(flows.token_url, payload)
    return _store_tokens(env_path, env_var, tokens)


def _exchange(token_url: str, payload: dict) -> dict:
    response = requests.post(token_url, data=payload, timeout=30)
    if not (200 <= response.status_code <= 299):
        raise ExchangeError(response.status_code, response.text)
    try:
        tokens = response.json()
    except ValueError as exc:
        raise ExchangeError(response.status_code, response.text) from exc
    if "access_token" not in tokens:
        raise ExchangeError(response.status_code, response.text)
    return tokens


def _store_tokens(env_path: str | Path, env_var: str, tokens: dict) -> str:
    updates = {env_var: tokens["access_token"]}
    if tokens.get("refresh_token"):
        updates[refresh_var_for(env_var)] = tokens["refresh_token"]
    update_env_file(env_path, updates)
    return tokens["access_token"]
