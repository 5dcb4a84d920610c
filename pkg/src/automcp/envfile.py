"""Reading and writing the `.env` key/value store.

Format: one ``KEY=value`` per line, ``#`` comments, values taken literally
(no quoting or escaping). ``EXTRA_HEADERS`` holds a single-line JSON object.
"""

from __future__ import annotations

import os
from pathlib import Path

EXTRA_HEADERS_VAR = "EXTRA_HEADERS"


def read_env_file(path: str | Path) -> dict[str, str]:
    path = Path(path)
    if not path.exists():
        return {}
    values: dict[str, str] = {}
    for line in path.read_text(encoding="utf-8").splitlines():
        stripped = line.strip()
        if not stripped or stripped.startswith("#") or "=" not in stripped:
            continue
        key, _, value = stripped.partition("=")
        values[key.strip()] = value.strip()
    return values


def update_env_file(path: str | Path, updates: dict[str, str]) -> None:
    """Set keys in place, preserving comments and unrelated lines."""
    path = Path(path)
    lines = path.read_text(encoding="utf-8").splitlines() if path.exists() else []
    pending = dict(updates)
    for i, line in enumerate(lines):
        stripped = line.strip()
        if not stripped or stripped.startswith("#") or "=" not in stripped:
            continue
        key = stripped.partition("=")[0].strip()
        if key in pending:
            lines[i] = f"{key}={pending.pop(key)}"
    for key, value in pending.items():
        lines.append(f"{key}={value}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_env(env_path: str | Path | None, process_env: dict | None = None) -> dict[str, str]:
    """Merge the .env file with the process environment; the process wins."""
    merged = read_env_file(env_path) if env_path else {}
    overlay = os.environ if process_env is None else process_env
    merged.update({k: str(v) for k, v in overlay.items()})
    return merged
