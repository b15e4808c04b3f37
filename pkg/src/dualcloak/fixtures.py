"""Locate bundled fixture files (toy model weights, attribute directions).

Lookup order: the directory named by the DUALCLOAK_CACHE environment
variable, if set, then the package's fixtures/ directory. Regenerate the
bundled files with demos/make_fixtures.py.
"""

from __future__ import annotations

import os
from pathlib import Path

CACHE_ENV = "DUALCLOAK_CACHE"

_PACKAGED = Path(__file__).resolve().parent / "fixtures"


def fixture_dir() -> Path:
    """Directory fixtures are read from first (cache override or packaged)."""
    override = os.environ.get(CACHE_ENV)
    if override:
        return Path(override)
    return _PACKAGED


def fixture_path(filename: str) -> Path:
    override = os.environ.get(CACHE_ENV)
    if override:
        candidate = Path(override) / filename
        if candidate.exists():
            return candidate
    candidate = _PACKAGED / filename
    if candidate.exists():
        return candidate
    raise FileNotFoundError(
        f"fixture {filename!r} not found in {CACHE_ENV} or the packaged set; "
        "run demos/make_fixtures.py to regenerate"
    )
