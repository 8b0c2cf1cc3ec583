"""Prompt templates shipped as editable text assets.

Templates live in ``adreason/prompts/*.txt`` and use ``$name`` placeholders
(:class:`string.Template`), so literal JSON braces need no escaping. A
directory passed as ``prompt_dir`` (or ``$ADREASON_PROMPT_DIR``) overrides
individual files by name.
"""

from __future__ import annotations

import os
from functools import lru_cache
from importlib import resources
from pathlib import Path
from string import Template

PROMPT_NAMES = (
    "caption",
    "merge",
    "ocr",
    "global_browse",
    "clip_rewrite",
    "frame_inspect_literal",
    "frame_inspect_semantic",
    "comm_expert",
    "controller",
    "refine",
    "repair",
    "verify",
    "anchors",
    "judge",
)


@lru_cache(maxsize=None)
def _packaged(name: str) -> str:
    return resources.files("adreason").joinpath("prompts", f"{name}.txt").read_text(encoding="utf-8")


def load_template(name: str, prompt_dir: str | Path | None = None) -> str:
    if name not in PROMPT_NAMES:
        raise KeyError(f"unknown prompt template {name!r}")
    override = prompt_dir or os.environ.get("ADREASON_PROMPT_DIR")
    if override:
        path = Path(override) / f"{name}.txt"
        if path.is_file():
            return path.read_text(encoding="utf-8")
    return _packaged(name)


def render(name: str, prompt_dir: str | Path | None = None, **fields: object) -> str:
    """Fill a template; a missing placeholder raises ``KeyError``."""
    return Template(load_template(name, prompt_dir)).substitute(
        {k: str(v) for k, v in fields.items()}
    ).strip()
