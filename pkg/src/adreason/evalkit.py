"""LLM-as-judge scoring and strict/relaxed accuracy.

Cases live in ``cases.jsonl``, one object per line::

    {"id": "ad01-q1", "meta": "...", "question": "...", "golden": "...",
     "response": "...", "dimension": "VU"}

``id`` is optional. The judge answers on a final ``Answer: 0 / 0.5 / 1``
line. Strict accuracy counts scores of 1, relaxed counts scores of at least
0.5. Judge replies are cached as ``<case hash>.json`` so a re-run needs no
model calls.
"""

from __future__ import annotations

import hashlib
import json
import logging
import re
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from adreason import templates
from adreason.backends import Backend, ChatRequest, Message
from adreason.errors import EmptyInput, UnparseableVerdict

log = logging.getLogger(__name__)

DIMENSIONS = ("VU", "ER", "TE", "PS", "AM")
SCORE_VALUES = (0.0, 0.5, 1.0)
_ANSWER_LINE = re.compile(r"^\s*\**\s*answer\s*\**\s*:\s*\**\s*(\S+?)\s*\**\s*\.?\s*$", re.IGNORECASE)
_VALUE_TEXT = {"0": 0.0, "0.0": 0.0, "0.5": 0.5, ".5": 0.5, "1": 1.0, "1.0": 1.0}


@dataclass(frozen=True)
class JudgeCase:
    meta: str
    question: str
    golden: str
    response: str
    dimension: str
    case_id: str = ""

    def __post_init__(self) -> None:
        for name in ("meta", "question", "golden", "response"):
            if not getattr(self, name).strip():
                raise ValueError(f"case field {name!r} must be nonempty")
        if self.dimension not in DIMENSIONS:
            raise ValueError(f"dimension must be one of {DIMENSIONS}, got {self.dimension!r}")

    @property
    def content_hash(self) -> str:
        blob = json.dumps(
            [self.meta, self.question, self.golden, self.response, self.dimension], ensure_ascii=False
        ).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()[:16]

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> JudgeCase:
        return cls(
            meta=str(data.get("meta", "")),
            question=str(data.get("question", "")),
            golden=str(data.get("golden", "")),
            response=str(data.get("response", "")),
            dimension=str(data.get("dimension", "")).upper(),
            case_id=str(data.get("id", "")),
        )

    def to_dict(self) -> dict[str, str]:
        out = {"meta": self.meta, "question": self.question, "golden": self.golden,
               "response": self.response, "dimension": self.dimension}
        if self.case_id:
            out["id"] = self.case_id
        return out


@dataclass(frozen=True)
class Score:
    value: float
    raw: str = ""

    def __post_init__(self) -> None:
        if self.value not in SCORE_VALUES:
            raise ValueError(f"score must be one of {SCORE_VALUES}, got {self.value}")


def load_cases(path: str | Path) -> list[JudgeCase]:
    cases = []
    for n, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            cases.append(JudgeCase.from_dict(json.loads(line)))
        except (ValueError, TypeError, AttributeError) as exc:
            raise ValueError(f"{path}:{n}: {exc}") from exc
    return cases


def parse_verdict(text: str) -> float | None:
    """Value on the last ``Answer: x`` line, or ``None`` if it is not 0, 0.5 or 1."""
    for line in reversed(text.strip().splitlines()):
        m = _ANSWER_LINE.match(line)
        if m:
            return _VALUE_TEXT.get(m.group(1))
    return None


def judge(case: JudgeCase, backend: Backend, *, prompt_dir: str | Path | None = None) -> Score:
    prompt = templates.render(
        "judge", prompt_dir, meta=case.meta, question=case.question, golden=case.golden, response=case.response
    )
    messages = [Message("user", prompt)]
    raw = backend.chat(ChatRequest(messages, role="judge", task="judge")).text
    value = parse_verdict(raw)
    if value is not None:
        return Score(value, raw)
    messages += [
        Message("assistant", raw),
        Message("user", "End your reply with exactly one line: Answer: 0, Answer: 0.5 or Answer: 1."),
    ]
    raw = backend.chat(ChatRequest(messages, role="judge", task="judge")).text
    value = parse_verdict(raw)
    if value is None:
        raise UnparseableVerdict(f"judge verdict unparseable for case {case.case_id or case.content_hash}", raw)
    return Score(value, raw)


class JudgeCache:
    """Directory of ``<content hash>.json`` judge results."""

    def __init__(self, root: str | Path) -> None:
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    def _path(self, case: JudgeCase) -> Path:
        return self.root / f"{case.content_hash}.json"

    def get(self, case: JudgeCase) -> Score | None:
        path = self._path(case)
        if not path.exists():
            return None
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
            return Score(float(data["value"]), str(data.get("raw", "")))
        except (ValueError, KeyError, TypeError):
            log.warning("ignoring corrupt cache entry %s", path)
            return None

    def put(self, case: JudgeCase, score: Score) -> None:
        payload = {"value": score.value, "raw": score.raw, "case": case.to_dict()}
        self._path(case).write_text(json.dumps(payload, ensure_ascii=False, sort_keys=True) + "\n", encoding="utf-8")


@dataclass(frozen=True)
class DimensionStats:
    n: int
    strict: float
    relaxed: float


@dataclass
class Report:
    per_dimension: dict[str, DimensionStats]
    overall_strict: float
    overall_relaxed: float
    macro_strict: float
    macro_relaxed: float
    n: int
    failures: list[str] = field(default_factory=list)

    def to_dict(self) -> dict[str, Any]:
        return {
            "n": self.n,
            "overall": {"strict": self.overall_strict, "relaxed": self.overall_relaxed},
            "macro": {"strict": self.macro_strict, "relaxed": self.macro_relaxed},
            "per_dimension": {
                d: {"n": s.n, "strict": s.strict, "relaxed": s.relaxed} for d, s in self.per_dimension.items()
            },
            "failures": list(self.failures),
        }

    def render_table(self) -> str:
        rows = [f"{'dim':<8}{'n':>4}{'strict':>9}{'relaxed':>9}"]
        for d, s in self.per_dimension.items():
            rows.append(f"{d:<8}{s.n:>4}{s.strict:>9.3f}{s.relaxed:>9.3f}")
        rows.append(f"{'overall':<8}{self.n:>4}{self.overall_strict:>9.3f}{self.overall_relaxed:>9.3f}")
        rows.append(f"{'macro':<8}{'':>4}{self.macro_strict:>9.3f}{self.macro_relaxed:>9.3f}")
        if self.failures:
            rows.append("unparseable verdicts: " + ", ".join(self.failures))
        return "\n".join(rows)


def aggregate(scores: Iterable[tuple[str, Score | float]]) -> Report:
    """Strict and relaxed accuracy per dimension, over all cases (micro) and over dimensions (macro)."""
    by_dim: dict[str, list[float]] = {}
    for dim, score in scores:
        value = score.value if isinstance(score, Score) else float(score)
        if value not in SCORE_VALUES:
            raise ValueError(f"score must be one of {SCORE_VALUES}, got {value}")
        by_dim.setdefault(dim, []).append(value)
    if not by_dim:
        raise EmptyInput("aggregate needs at least one score")
    order = [d for d in DIMENSIONS if d in by_dim] + sorted(d for d in by_dim if d not in DIMENSIONS)
    per = {}
    for d in order:
        values = by_dim[d]
        per[d] = DimensionStats(len(values), sum(v == 1.0 for v in values) / len(values),
                                sum(v >= 0.5 for v in values) / len(values))
    everything = [v for d in order for v in by_dim[d]]
    n = len(everything)
    return Report(
        per_dimension=per,
        overall_strict=sum(v == 1.0 for v in everything) / n,
        overall_relaxed=sum(v >= 0.5 for v in everything) / n,
        macro_strict=sum(s.strict for s in per.values()) / len(per),
        macro_relaxed=sum(s.relaxed for s in per.values()) / len(per),
        n=n,
    )


def evaluate(
    cases: Sequence[JudgeCase],
    backend: Backend | None,
    *,
    cache: JudgeCache | None = None,
    prompt_dir: str | Path | None = None,
) -> Report:
    """Judge every case (cache first) and aggregate.

    Cases whose verdict stays unparseable are left out of the numbers and
    listed in ``Report.failures``.
    """
    if not cases:
        raise EmptyInput("no cases to evaluate")
    scored: list[tuple[str, Score]] = []
    failures = []
    for case in cases:
        score = cache.get(case) if cache is not None else None
        if score is None:
            if backend is None:
                raise ValueError(f"case {case.case_id or case.content_hash} is not cached and no backend was given")
            try:
                score = judge(case, backend, prompt_dir=prompt_dir)
            except UnparseableVerdict as exc:
                log.warning("%s", exc)
                failures.append(case.case_id or case.content_hash)
                continue
            if cache is not None:
                cache.put(case, score)
        scored.append((case.dimension, score))
    if not scored:
        raise UnparseableVerdict("every judge verdict was unparseable")
    report = aggregate(scored)
    report.failures = failures
    return report
