"""Query-time activation of registered subjects.

The raw question is often ambiguous ("what is he holding?"), so it is joined
with the global summary into an anchor text. Each subject profile is scored by
cosine similarity against that anchor and only the top ``k`` are handed to the
controller.
"""

from __future__ import annotations

import logging
from collections.abc import Sequence
from dataclasses import dataclass, field

import numpy as np

from adreason.backends import Backend
from adreason.errors import MissingEmbedding
from adreason.ingest import SubjectProfile
from adreason.retrieval import cosine

log = logging.getLogger(__name__)

ANCHOR_LABEL = "[GLOBAL CONTEXT]"
DEFAULT_K = 3


@dataclass(frozen=True, eq=False)
class SemanticAnchor:
    text: str
    embedding: np.ndarray


@dataclass
class ActiveSubjects:
    items: list[tuple[SubjectProfile, float]] = field(default_factory=list)
    k: int = DEFAULT_K

    def __len__(self) -> int:
        return len(self.items)

    @property
    def subjects(self) -> list[SubjectProfile]:
        return [s for s, _ in self.items]


def anchor_text(query: str, global_summary: str) -> str:
    query = query.strip()
    summary = global_summary.strip()
    return f"{query}\n{ANCHOR_LABEL}\n{summary}" if summary else query


def build_anchor(query: str, global_summary: str, backend: Backend) -> SemanticAnchor:
    if not query.strip():
        raise ValueError("query must be nonempty")
    text = anchor_text(query, global_summary)
    return SemanticAnchor(text, backend.embed_one(text))


def activate_subjects(
    registry: Sequence[SubjectProfile], anchor: SemanticAnchor, k: int = DEFAULT_K
) -> ActiveSubjects:
    """Top-``k`` subjects by cosine to the anchor; ties go to the earlier ``first_seen``."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if not registry:
        log.info("subject registry is empty; nothing to activate")
        return ActiveSubjects([], k)
    scored = []
    for s in registry:
        if s.embedding is None:
            raise MissingEmbedding(f"subject {s.subject_id} has no embedding")
        scored.append((s, cosine(s.embedding, anchor.embedding)))
    scored.sort(key=lambda item: (-item[1], item[0].first_seen, item[0].subject_id))
    return ActiveSubjects(scored[:k], k)
