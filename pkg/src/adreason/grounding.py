"""Checking candidate answers against the collected evidence, and final answer shaping.

Verification has a deterministic branch (some anchor term from the evidence
must appear in the answer) and an optional model branch (a verifier affirms
the answer's claims). Rejected answers go back to the agent loop as negative
constraints. Accepted answers are trimmed to the benchmark's word limit.
"""

from __future__ import annotations

import logging
import re
from collections.abc import Iterable, Iterator, Mapping, Sequence
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal

from adreason import templates
from adreason._textutil import STOPWORDS, normalize_space, truncate_words, word_count
from adreason.backends import Backend, BackendError, ChatRequest, Message
from adreason.ingest import SubjectProfile

log = logging.getLogger(__name__)

MAX_ANSWER_WORDS = 25
WEAK_EVIDENCE = "Weak Evidence"
GROUNDING_PATTERNS = (
    "what specific",
    "which object",
    "what is shown",
    "what object",
    "which item",
    "what item",
)
META_PHRASES = (
    "the final answer is",
    "the answer is",
    "the video shows",
    "this video shows",
    "the video depicts",
    "based on the video",
    "in the video",
)

# Words that are capitalised in rendered observations but are not scene content.
_RENDER_VOCAB = frozenset(
    """
    clip clips block blocks frame frames grid grids score semantic lexical total audio scene
    potential text keywords search inspect literal mode expert direct answer narrative persuasion
    strategy symbol genre key entities on-screen draft tool error reject accept weak evidence
    global context video question focus transcript unknown none yes tl tr bl br ocr asr
    """.split()
)
_QUOTED = re.compile(r"[\"“]([^\"”\n]{1,80})[\"”]")
_CAP_RUN = re.compile(r"\b[A-Z][A-Za-z0-9'&-]*(?:\s+[A-Z][A-Za-z0-9'&-]*)*\b")
_VERDICT = re.compile(r"VERDICT:\s*(SUPPORTED|UNSUPPORTED)", re.IGNORECASE)


def normalize_term(term: str) -> str:
    return normalize_space(term.lower()).strip(" .,:;!?'\"()[]")


# -- evidence ----------------------------------------------------------------


@dataclass(frozen=True)
class EvidenceRef:
    step: int
    tool: str
    excerpt: str
    start: float | None = None
    end: float | None = None


@dataclass
class EvidenceChain:
    refs: list[EvidenceRef] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.refs)

    def __bool__(self) -> bool:
        return bool(self.refs)

    @property
    def texts(self) -> list[str]:
        return [r.excerpt for r in self.refs]

    def render(self, max_chars: int = 6000) -> str:
        """Evidence as ``[step N, tool] text`` paragraphs, most recent kept when clipped."""
        parts = [f"[step {r.step}, {r.tool}] {r.excerpt}" for r in self.refs]
        out: list[str] = []
        used = 0
        for part in reversed(parts):
            if out and used + len(part) > max_chars:
                break
            out.append(part)
            used += len(part)
        return "\n\n".join(reversed(out))


# -- anchors -----------------------------------------------------------------


@dataclass(frozen=True)
class AnchorSet:
    """Lower-cased anchor terms mapped to the steps they were found in."""

    sources: Mapping[str, tuple[int, ...]] = field(default_factory=dict)

    def __post_init__(self) -> None:
        merged: dict[str, set[int]] = {}
        for term, steps in self.sources.items():
            key = normalize_term(term)
            if key:
                merged.setdefault(key, set()).update(steps)
        object.__setattr__(self, "sources", {k: tuple(sorted(v)) for k, v in sorted(merged.items())})

    @classmethod
    def of(cls, terms: Iterable[str], step: int = -1) -> AnchorSet:
        return cls({t: (step,) for t in terms})

    @property
    def terms(self) -> list[str]:
        return list(self.sources)

    def __iter__(self) -> Iterator[str]:
        return iter(self.sources)

    def __len__(self) -> int:
        return len(self.sources)

    def __contains__(self, term: object) -> bool:
        return isinstance(term, str) and normalize_term(term) in self.sources

    def union(self, other: AnchorSet) -> AnchorSet:
        merged: dict[str, tuple[int, ...]] = dict(self.sources)
        for term, steps in other.sources.items():
            merged[term] = merged.get(term, ()) + steps
        return AnchorSet(merged)


def _is_noise(term: str) -> bool:
    words = term.split()
    return all(w in STOPWORDS or w in _RENDER_VOCAB or w.isdigit() for w in words)


def anchors_in_text(text: str, subject_names: Sequence[str] = ()) -> set[str]:
    """Deterministic anchor terms from one observation."""
    found: set[str] = set()
    for m in _QUOTED.finditer(text):
        term = normalize_term(m.group(1))
        if term and not _is_noise(term):
            found.add(term)
    for m in _CAP_RUN.finditer(text):
        words = [normalize_term(w) for w in m.group(0).split()]
        words = [w for w in words if w and not _is_noise(w)]
        found.update(words)
        if len(words) > 1:
            found.add(" ".join(words))
    lowered = text.lower()
    for name in subject_names:
        key = normalize_term(name)
        if key and _contains_term(lowered, key):
            found.add(key)
    return found


def parse_anchor_reply(text: str) -> list[str]:
    terms = [normalize_term(t) for t in re.split(r"[,\n]", text)]
    return [t for t in terms if t and len(t.split()) <= 6 and not _is_noise(t)]


def extract_anchors(
    evidence: EvidenceChain,
    backend: Backend | None = None,
    *,
    subjects: Sequence[SubjectProfile] = (),
    use_llm: bool = False,
    prompt_dir: str | Path | None = None,
) -> AnchorSet:
    """Collect visual entity terms from the evidence.

    Quoted strings (on-screen text), capitalised words and runs, and names of
    registered subjects that appear in an observation all count. With
    ``use_llm`` the refiner model is also asked for noun phrases; a failing
    call just leaves the deterministic set.
    """
    if not evidence:
        return AnchorSet()
    names = [s.name for s in subjects]
    sources: dict[str, set[int]] = {}
    for ref in evidence.refs:
        for term in anchors_in_text(ref.excerpt, names):
            sources.setdefault(term, set()).add(ref.step)
    anchors = AnchorSet({t: tuple(s) for t, s in sources.items()})
    if use_llm and backend is not None:
        request = ChatRequest(
            [Message("user", templates.render("anchors", prompt_dir, evidence=evidence.render()))],
            role="refiner",
            task="anchors",
        )
        try:
            extra = parse_anchor_reply(backend.chat(request).text)
        except BackendError as exc:
            log.warning("anchor extraction call failed (%s); using rule-based anchors", exc)
        else:
            anchors = anchors.union(AnchorSet.of(extra))
    return anchors


# -- verification ------------------------------------------------------------


@dataclass(frozen=True)
class Verdict:
    state: Literal["Accept", "Reject"]
    reason: str
    matched: tuple[str, ...] = ()
    detail: str = ""

    def __post_init__(self) -> None:
        if self.state not in ("Accept", "Reject"):
            raise ValueError(f"unknown verdict state {self.state!r}")
        if self.state == "Reject" and not self.reason.strip():
            raise ValueError("a Reject verdict needs a reason")

    @property
    def accepted(self) -> bool:
        return self.state == "Accept"

    @property
    def note(self) -> str:
        """Text recorded in the history, e.g. ``Reject: Weak Evidence. <detail>``."""
        head = f"{self.state}: {self.reason}"
        return f"{head}. {self.detail}" if self.detail else head

    def to_dict(self) -> dict[str, object]:
        return {"state": self.state, "reason": self.reason, "matched": list(self.matched), "detail": self.detail}


def _contains_term(lowered_text: str, term: str) -> bool:
    return re.search(rf"(?<!\w){re.escape(term)}(?!\w)", lowered_text) is not None


def matched_anchors(answer: str, anchors: Iterable[str]) -> tuple[str, ...]:
    lowered = answer.lower()
    return tuple(sorted({normalize_term(t) for t in anchors if _contains_term(lowered, normalize_term(t))}))


def verify_grounding(
    answer: str,
    evidence: EvidenceChain,
    anchors: AnchorSet | Iterable[str],
    backend: Backend | None = None,
    *,
    use_llm: bool = False,
    prompt_dir: str | Path | None = None,
) -> Verdict:
    """Accept when an anchor term occurs in the answer, or (optionally) the verifier affirms it."""
    if not answer.strip():
        raise ValueError("answer must be nonempty")
    terms = list(anchors)
    matched = matched_anchors(answer, terms)
    if matched:
        return Verdict("Accept", "anchor match", matched)
    if use_llm and backend is not None and evidence:
        request = ChatRequest(
            [Message("user", templates.render("verify", prompt_dir, answer=answer, evidence=evidence.render()))],
            role="refiner",
            task="verify",
        )
        try:
            reply = backend.chat(request).text
        except BackendError as exc:
            log.warning("verifier call failed (%s); deterministic branch only", exc)
        else:
            hits = _VERDICT.findall(reply)
            if hits and hits[-1].upper() == "SUPPORTED":
                return Verdict("Accept", "verifier affirmed")
    if terms:
        shown = ", ".join(terms[:8]) + (", ..." if len(terms) > 8 else "")
        detail = f'Answer "{answer.strip()}" names none of the observed entities ({shown}).'
    else:
        detail = f'Answer "{answer.strip()}" is not backed by any concrete visual entity yet.'
    return Verdict("Reject", WEAK_EVIDENCE, (), detail)


# -- repair ------------------------------------------------------------------


def needs_visual_grounding(question: str, patterns: Sequence[str] = GROUNDING_PATTERNS) -> bool:
    q = question.casefold()
    return any(p.casefold() in q for p in patterns)


def pick_anchor(anchors: Iterable[str]) -> str:
    """The most specific anchor: most words, then alphabetical."""
    return min(anchors, key=lambda t: (-len(t.split()), t))


def repair_visual_anchor(
    answer: str,
    anchors: AnchorSet | Iterable[str],
    backend: Backend,
    *,
    question: str = "",
    evidence: EvidenceChain | None = None,
    max_words: int = MAX_ANSWER_WORDS,
    prompt_dir: str | Path | None = None,
) -> str:
    """Rewrite an abstract answer so it names a concrete observed entity.

    If the rewrite still lacks every anchor, the most specific one is appended
    in parentheses, keeping the whole answer within ``max_words``.
    """
    terms = [normalize_term(t) for t in anchors]
    terms = [t for t in terms if t]
    if not terms:
        return answer
    request = ChatRequest(
        [
            Message(
                "user",
                templates.render(
                    "repair",
                    prompt_dir,
                    anchors=", ".join(terms),
                    max_words=max_words,
                    question=question or "(not given)",
                    answer=answer,
                    evidence=evidence.render(2000) if evidence else "(none)",
                ),
            )
        ],
        role="refiner",
        task="repair",
    )
    try:
        repaired = normalize_space(backend.chat(request).text)
    except BackendError as exc:
        log.warning("anchor repair failed (%s); keeping the original answer", exc)
        return answer
    repaired = truncate_words(repaired or answer, max_words)
    if matched_anchors(repaired, terms):
        return repaired
    anchor = truncate_words(pick_anchor(terms), max_words)
    room = max_words - word_count(anchor)
    head = truncate_words(repaired, room)
    return f"{head} ({anchor})" if head else anchor


# -- refinement --------------------------------------------------------------

_META = re.compile(
    r"\b(?:" + "|".join(re.escape(p) for p in META_PHRASES) + r")\b(?:\s+that\b)?\s*[:,]?",
    re.IGNORECASE,
)


def strip_meta_phrases(text: str) -> str:
    """Remove filler like "the answer is" or "the video shows" (case-insensitive)."""
    stripped, n = _META.subn(" ", text)
    if not n:
        return normalize_space(text)
    out = normalize_space(stripped).lstrip(" ,:;.-")
    return out[:1].upper() + out[1:]


def _clean(text: str) -> str:
    return strip_meta_phrases(text) or normalize_space(text)


def refine_answer(
    answer: str,
    backend: Backend | None = None,
    *,
    question: str = "",
    max_words: int = MAX_ANSWER_WORDS,
    prompt_dir: str | Path | None = None,
) -> str:
    """Compress ``answer`` to at most ``max_words`` words.

    Meta phrases are stripped first. The refiner model gets one re-prompt if
    its reply is too long; after that the text is cut at ``max_words``. With
    no backend (or a failing one) the stripped draft is cut directly.
    """
    if not answer.strip():
        raise ValueError("answer must be nonempty")
    if max_words < 1:
        raise ValueError("max_words must be >= 1")
    draft = _clean(answer)
    result = draft
    if backend is not None:
        messages = [
            Message(
                "user",
                templates.render(
                    "refine", prompt_dir, max_words=max_words, question=question or "(not given)", answer=draft
                ),
            )
        ]
        try:
            reply = _clean(backend.chat(ChatRequest(messages, role="refiner", task="refine")).text)
            if word_count(reply) > max_words:
                messages += [
                    Message("assistant", reply),
                    Message(
                        "user",
                        f"That has {word_count(reply)} words. Reply again with at most {max_words} words.",
                    ),
                ]
                reply = _clean(backend.chat(ChatRequest(messages, role="refiner", task="refine")).text)
            result = reply or draft
        except BackendError as exc:
            log.warning("refinement call failed (%s); truncating the draft", exc)
    return truncate_words(result, max_words) if word_count(result) > max_words else result
