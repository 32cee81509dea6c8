import subprocess
from functools import lru_cache
from pathlib import Path

from app import __version__


@lru_cache(maxsize=1)
def version_string() -> str:
    """git-describe style version; falls back to the package version outside a checkout."""
    try:
        result = subprocess.run(
            ["git", "describe", "--tags", "--always", "--dirty"],
            cwd=Path(__file__).resolve().parent,
            capture_output=True,
            text=True,
            timeout=5,
            check=True,
        )
        described = result.stdout.strip()
        if described:
            return f"v{__version__}-{described}" if not described.startswith("v") else described
    except (OSError, subprocess.SubprocessError):
        pass
    return f"v{__version__}"
