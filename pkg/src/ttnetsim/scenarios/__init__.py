"""Bundled scenario files; `path(name)` resolves one to a filesystem path."""

import os


def path(name: str) -> str:
    return os.path.join(os.path.dirname(__file__), name)
