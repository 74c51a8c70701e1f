"""Prompt template loading and rendering.

Templates ship as package data under prompts/ and use double-brace
placeholders like {{bundle_render}}; rendering is plain text substitution.
"""

from __future__ import annotations

from importlib import resources


def load_template(name: str) -> str:
    return resources.files("skillmoo").joinpath("prompts", name).read_text(encoding="utf-8")


def render(template: str, mapping: dict[str, str]) -> str:
    out = template
    for key, value in mapping.items():
        out = out.replace("{{" + key + "}}", str(value))
    return out
