"""Exception types shared across the toolchain.

Errors that correspond to a spec-defect class carry ``lint_class`` so the
linter and CLI can map hard failures back to a finding category.
"""

from __future__ import annotations


class AutoMcpError(Exception):
    """Base class for all toolchain errors."""

    lint_class: str | None = None


class ParseError(AutoMcpError):
    """The document is not parseable as YAML or JSON."""


class DialectError(AutoMcpError):
    """Neither `swagger: "2.0"` nor `openapi: 3.x` is present."""


class BaseUrlError(AutoMcpError):
    """The resolved base URL is relative, empty, or still templated."""

    lint_class = "B"


class DanglingRefError(AutoMcpError):
    """A $ref points at a location that does not exist in the document."""

    def __init__(self, pointer: str, at: str = "") -> None:
        self.pointer = pointer
        self.at = at
        where = f" (referenced at {at})" if at else ""
        super().__init__(f"$ref target not found: {pointer}{where}")


class ExternalRefError(AutoMcpError):
    """A $ref points outside the document (another file or a URL)."""

    def __init__(self, pointer: str) -> None:
        self.pointer = pointer
        super().__init__(f"external $ref not supported: {pointer}")


class SchemeError(AutoMcpError):
    """A declared security scheme is unusable or of an unknown type."""

    lint_class = "A"


class FlowUnusableError(AutoMcpError):
    """The OAuth2 flow lacks the URLs needed to obtain a token."""

    lint_class = "A"


class ExchangeError(AutoMcpError):
    """The token endpoint rejected the code/credentials exchange."""

    def __init__(self, status: int, body: str) -> None:
        self.status = status
        self.body = body
        super().__init__(f"token exchange failed with HTTP {status}: {body[:200]}")


class CallbackTimeoutError(AutoMcpError):
    """No OAuth callback arrived within the configured window."""


class SchemaViolation(AutoMcpError):
    """Tool arguments do not validate against the tool's input schema."""


class MissingCredential(AutoMcpError):
    """A required credential environment variable is empty or unset."""

    def __init__(self, env_var: str) -> None:
        self.env_var = env_var
        super().__init__(f"missing credential: set {env_var} in the environment or .env")


class TransportError(AutoMcpError):
    """DNS, TLS, connection, or timeout failure talking to the upstream."""


class ExtraHeadersParseError(AutoMcpError):
    """EXTRA_HEADERS is set but is not a JSON object of string -> string."""


class FatalValidationError(AutoMcpError):
    """Validation found a defect the compiler cannot proceed past."""

    def __init__(self, findings) -> None:
        self.findings = findings
        first = findings[0].message if findings else "invalid document"
        super().__init__(first)


class PointerError(AutoMcpError):
    """A patch edit targets a JSON pointer that cannot be created."""

    def __init__(self, pointer: str, reason: str) -> None:
        self.pointer = pointer
        super().__init__(f"cannot apply edit at {pointer}: {reason}")


class NonConvergence(AutoMcpError):
    """The lint/patch loop hit its iteration cap with findings remaining."""
