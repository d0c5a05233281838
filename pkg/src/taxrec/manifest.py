"""Run manifests: one ``manifest.json`` per output directory.

Each command records its resolved arguments under its own section, so a
directory that several commands wrote to still holds a single manifest.
"""

from __future__ import annotations

import datetime as _dt
import json
import subprocess
from pathlib import Path

from . import __version__

MANIFEST_NAME = "manifest.json"


def build_id() -> str:
    """``git describe`` of the source tree when available, else the version."""
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty", "--tags"],
                             cwd=Path(__file__).parent, capture_output=True, text=True,
                             timeout=5)
        if out.returncode == 0 and out.stdout.strip():
            return f"{__version__}+{out.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


def read_manifest(path) -> dict:
    path = Path(path)
    if path.is_dir():
        path = path / MANIFEST_NAME
    return json.loads(path.read_text(encoding="utf-8"))


def update_manifest(out_dir, command: str, section: dict) -> Path:
    """Merge ``section`` under ``commands[command]`` of the directory's manifest."""
    path = Path(out_dir) / MANIFEST_NAME
    data = json.loads(path.read_text(encoding="utf-8")) if path.exists() else {}
    data.setdefault("commands", {})
    data["build"] = build_id()
    data["commands"][command] = {
        "started": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
        **section,
    }
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def command_args(manifest: dict, command: str) -> dict:
    try:
        return dict(manifest["commands"][command]["args"])
    except KeyError:
        raise KeyError(f"manifest has no recorded {command!r} run") from None
