"""Bundled fixture diagrams and study corpora."""

from __future__ import annotations

import json
from importlib import resources


def _root():
    return resources.files(__name__)


def names() -> list[str]:
    return sorted(p.name[:-3] for p in _root().iterdir() if p.name.endswith(".cg"))


def path(name: str):
    for ext in (".cg", ".studies"):
        p = _root() / (name + ext)
        if p.is_file():
            return p
    raise FileNotFoundError(f"no fixture named {name!r}")


def text(name: str) -> str:
    return path(name).read_text(encoding="utf-8")


def load(name: str):
    """Parsed fixture: a diagram, a selection diagram, or (base, studies) for a corpus."""
    from ..dsl import parse_graph_dsl, parse_studies

    p = path(name)
    if p.name.endswith(".studies"):
        return parse_studies(p.read_text(encoding="utf-8"))
    return parse_graph_dsl(p.read_text(encoding="utf-8"))


def expected(name: str) -> dict:
    p = _root() / (name + ".expected.json")
    return json.loads(p.read_text(encoding="utf-8"))
