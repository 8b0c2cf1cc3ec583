"""JSON-templated model calls with a single repair re-prompt."""

from __future__ import annotations

from collections.abc import Callable, Sequence
from dataclasses import replace
from typing import Any

from adreason._textutil import find_json_object
from adreason.backends import Backend, ChatRequest, Message
from adreason.errors import TemplateParseError


def _check(text: str, required: Sequence[str], validate: Callable[[dict], None] | None) -> dict[str, Any]:
    obj = find_json_object(text)
    if obj is None:
        raise ValueError("reply contains no JSON object")
    missing = [k for k in required if k not in obj]
    if missing:
        raise ValueError(f"missing required field(s): {', '.join(missing)}")
    if validate is not None:
        validate(obj)
    return obj


def structured_chat(
    backend: Backend,
    request: ChatRequest,
    required: Sequence[str],
    validate: Callable[[dict], None] | None = None,
) -> tuple[dict[str, Any], str]:
    """Send ``request`` and parse a JSON object holding ``required`` keys.

    On failure, re-prompts once quoting the problem; raises
    :class:`TemplateParseError` (carrying the last raw text) if that fails too.
    ``validate`` may raise ``ValueError`` for semantic checks.
    """
    first = backend.chat(request).text
    try:
        return _check(first, required, validate), first
    except ValueError as exc:
        problem = str(exc)
    repair = replace(
        request,
        messages=[
            *request.messages,
            Message("assistant", first),
            Message(
                "user",
                f"Your reply could not be used ({problem}). Reply again with only the JSON object, "
                f"including the fields: {', '.join(required)}.",
            ),
        ],
    )
    second = backend.chat(repair).text
    try:
        return _check(second, required, validate), second
    except ValueError as exc:
        raise TemplateParseError(f"structured reply unusable after repair: {exc}", raw=second) from exc
