"""Hybrid dense + lexical clip retrieval and temporal fusion of hits into event blocks.

A clip's score for a query is ``cosine(query, clip document) + beta * lexical``
where the lexical part is the fraction of rewritten keyword phrases found in
the clip's text (caption, transcript and OCR lines) plus a bonus when the raw
query occurs there verbatim. The dense part only sees caption + transcript;
on-screen text is matched lexically.
"""

from __future__ import annotations

import logging
from collections.abc import Sequence
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from adreason import templates
from adreason._textutil import content_tokens, normalize_space
from adreason.backends import Backend, BackendError, ChatRequest, Message
from adreason.errors import EmptyDatabase, MissingEmbedding
from adreason.ingest import ClipRecord, VideoDatabase

log = logging.getLogger(__name__)

MAX_KEYWORDS = 3
EXACT_BONUS = 1.0
FUSION_GAP = 3.0
FUSION_AFFINITY = 0.8


def _normalize_phrase(text: str) -> str:
    return normalize_space(text.strip().strip("'\"").lower())


@dataclass(frozen=True, eq=False)
class HybridQuery:
    text: str
    embedding: np.ndarray
    keywords: tuple[str, ...] = ()
    beta: float = 1.0

    def __post_init__(self) -> None:
        if not self.beta >= 0:
            raise ValueError("beta must be >= 0")
        kws = tuple(k for k in (_normalize_phrase(k) for k in self.keywords) if k)
        if len(kws) > MAX_KEYWORDS:
            raise ValueError(f"at most {MAX_KEYWORDS} keyword phrases, got {len(kws)}")
        object.__setattr__(self, "keywords", kws)
        object.__setattr__(self, "embedding", np.asarray(self.embedding, dtype=np.float64))

    @classmethod
    def build(
        cls, text: str, backend: Backend, keywords: Sequence[str] | None = None, beta: float = 1.0
    ) -> HybridQuery:
        kws = fallback_keywords(text) if keywords is None else keywords
        return cls(text, backend.embed_one(text), tuple(kws), beta)


@dataclass(frozen=True)
class ScoredClip:
    index: int
    start: float
    end: float
    semantic: float
    lexical: float
    total: float


@dataclass(frozen=True)
class EventBlock:
    start: float
    end: float
    members: tuple[int, ...]
    score: float


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    # Stored vectors are float32, so unit norm only holds to ~1e-7; divide explicitly.
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return float(np.dot(a, b) / (np.linalg.norm(a) * np.linalg.norm(b)))


def lexical_score(query: HybridQuery, clip: ClipRecord, exact_bonus: float = EXACT_BONUS) -> float:
    """Keyword hit fraction plus ``exact_bonus`` if the raw query appears verbatim."""
    doc = clip.lexical_document
    score = 0.0
    if query.keywords:
        score = sum(kw in doc for kw in query.keywords) / len(query.keywords)
    raw = _normalize_phrase(query.text)
    if raw and raw in doc:
        score += exact_bonus
    return score


def hybrid_score(query: HybridQuery, clip: ClipRecord, exact_bonus: float = EXACT_BONUS) -> ScoredClip:
    if clip.embedding is None:
        raise MissingEmbedding(f"clip {clip.index} has no embedding")
    semantic = cosine(query.embedding, clip.embedding)
    lexical = lexical_score(query, clip, exact_bonus)
    return ScoredClip(clip.index, clip.start, clip.end, semantic, lexical, semantic + query.beta * lexical)


def search_clips(
    db: VideoDatabase, query: HybridQuery, top_k: int, exact_bonus: float = EXACT_BONUS
) -> list[ScoredClip]:
    """Top ``top_k`` clips by total score; ties go to the earlier clip.

    ``top_k`` above the clip count returns every clip.
    """
    if not db.clips:
        raise EmptyDatabase("database has no clips")
    if top_k < 1:
        raise ValueError("top_k must be >= 1")
    scored = [hybrid_score(query, c, exact_bonus) for c in db.clips]
    scored.sort(key=lambda s: (-s.total, s.start, s.index))
    return scored[:top_k]


def fallback_keywords(query: str) -> list[str]:
    return content_tokens(query)[:MAX_KEYWORDS]


def parse_keyword_reply(text: str) -> list[str]:
    line = next((ln for ln in text.splitlines() if ln.strip()), "")
    if ":" in line and line.split(":", 1)[0].strip().lower() in ("output", "keywords"):
        line = line.split(":", 1)[1]
    phrases = [_normalize_phrase(p) for p in line.split(",")]
    return [p for p in phrases if p][:MAX_KEYWORDS]


def rewrite_query(query: str, backend: Backend, *, prompt_dir: str | Path | None = None) -> list[str]:
    """Ask the model for up to three generic search phrases.

    Falls back to stop-word-filtered tokens of the raw query if the call fails
    or the reply is empty.
    """
    if not query.strip():
        raise ValueError("query must be nonempty")
    request = ChatRequest(
        [Message("user", templates.render("clip_rewrite", prompt_dir, query=query.strip()))],
        role="controller",
        task="rewrite",
    )
    try:
        phrases = parse_keyword_reply(backend.chat(request).text)
    except BackendError as exc:
        log.warning("query rewrite failed (%s); using raw query tokens", exc)
        phrases = []
    return phrases or fallback_keywords(query)


def temporal_fusion(
    ranked: Sequence[ScoredClip],
    db: VideoDatabase,
    gap_max: float = FUSION_GAP,
    affinity_min: float = FUSION_AFFINITY,
) -> list[EventBlock]:
    """Merge retrieved clips into event blocks.

    Candidates are put in time order; each is joined to the block of its
    predecessor when the gap between them is below ``gap_max`` seconds or the
    cosine of their clip embeddings exceeds ``affinity_min``. Blocks come back
    best-first (max member score), ties by start time.
    """
    if not ranked:
        return []
    unique = {s.index: s for s in ranked}
    cands = sorted(unique.values(), key=lambda s: (s.start, s.index))
    by_index = {c.index: c for c in db.clips}
    groups: list[list[ScoredClip]] = [[cands[0]]]
    for prev, cur in zip(cands, cands[1:]):
        if _should_merge(prev, cur, by_index, gap_max, affinity_min):
            groups[-1].append(cur)
        else:
            groups.append([cur])
    blocks = [
        EventBlock(
            start=min(s.start for s in g),
            end=max(s.end for s in g),
            members=tuple(s.index for s in g),
            score=max(s.total for s in g),
        )
        for g in groups
    ]
    blocks.sort(key=lambda b: (-b.score, b.start))
    return blocks


def _should_merge(
    prev: ScoredClip, cur: ScoredClip, clips: dict[int, ClipRecord], gap_max: float, affinity_min: float
) -> bool:
    if cur.start - prev.end < gap_max:
        return True
    a = clips[prev.index].embedding
    b = clips[cur.index].embedding
    return a is not None and b is not None and cosine(a, b) > affinity_min
