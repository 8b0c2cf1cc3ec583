"""Small text helpers shared across modules (JSON extraction, tokens, time labels)."""

from __future__ import annotations

import json
import re
from typing import Any

STOPWORDS = frozenset(
    """
    a an the and or but if then else of to in on at by for with from as into onto over
    under about after before during between through is are was were be been being am
    do does did doing have has had having it its this that these those there here what
    which who whom whose when where why how i me my we our you your he him his she her
    they them their not no nor so too very can could should would will shall may might
    must just than such any all each both few more most other some only own same s t
    """.split()
)

_FENCE = re.compile(r"```(?:json|JSON)?\s*(.*?)```", re.DOTALL)
_TOKEN = re.compile(r"[a-z0-9]+(?:['&-][a-z0-9]+)*")


def find_json_object(text: str) -> dict[str, Any] | None:
    """Return the first JSON object embedded in ``text`` (code fences allowed)."""
    candidates = [m.group(1) for m in _FENCE.finditer(text)] + [text]
    decoder = json.JSONDecoder()
    for chunk in candidates:
        chunk = chunk.strip()
        try:
            obj = json.loads(chunk)
        except ValueError:
            obj = None
        if isinstance(obj, dict):
            return obj
        for pos, ch in enumerate(chunk):
            if ch != "{":
                continue
            try:
                obj, _ = decoder.raw_decode(chunk, pos)
            except ValueError:
                continue
            if isinstance(obj, dict):
                return obj
    return None


def tokens(text: str) -> list[str]:
    return _TOKEN.findall(text.lower())


def content_tokens(text: str) -> list[str]:
    return [tok for tok in tokens(text) if tok not in STOPWORDS]


def normalize_space(text: str) -> str:
    return " ".join(text.split())


def word_count(text: str) -> int:
    return len(text.split())


def truncate_words(text: str, limit: int) -> str:
    return " ".join(text.split()[:limit])


def fmt_seconds(t: float) -> str:
    """``3.0 -> '3'``, ``3.25 -> '3.25'``; at most millisecond precision."""
    out = f"{t:.3f}".rstrip("0").rstrip(".")
    return "0" if out in ("", "-0") else out


def span_label(start: float, end: float) -> str:
    return f"{fmt_seconds(start)}–{fmt_seconds(end)} s"


def as_text_list(value: Any) -> list[str]:
    """Coerce a model-supplied field (string, list, or missing) into a list of strings."""
    if value is None:
        return []
    if isinstance(value, str):
        parts = [value]
    elif isinstance(value, (list, tuple)):
        parts = [str(v) for v in value if v is not None]
    else:
        parts = [str(value)]
    return [p.strip() for p in parts if p and p.strip()]


def dedupe(items: list[str]) -> list[str]:
    seen: set[str] = set()
    out = []
    for item in items:
        key = normalize_space(item).casefold()
        if key and key not in seen:
            seen.add(key)
            out.append(item)
    return out
