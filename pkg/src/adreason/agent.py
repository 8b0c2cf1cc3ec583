"""The think-act-observe controller loop.

A session runs one global browse up front (recorded as step ``-1``),
activates the most relevant subjects, then asks the controller model for one
thought plus one tool call per step until a ``finish`` passes grounding
verification or the step budget runs out. Rejected answers are fed back as
negative constraints; repeated inspection of the same stretch of video is
detected and redirected to an opening or closing window.

Every session writes a line-per-record trace (``trace.jsonl``)::

    {"type": "header", "query": ..., "video_id": ..., "config": {...}}
    {"type": "step", "t": -1, "thought": "", "action": {"tool": "global_browse", ...}, ...}
    {"type": "step", "t": 0, ...}
    {"type": "footer", "status": "verified" | "failure", "answer": ..., "draft": ...,
     "verdicts": [...], "calls": {"controller": 3, ...}, "tokens": 0, "steps": 3}
"""

from __future__ import annotations

import json
import logging
import time
from collections import Counter
from collections.abc import Callable, Sequence
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Literal, Union

from adreason import templates
from adreason._textutil import content_tokens, fmt_seconds, span_label
from adreason.backends import Backend, BackendError, ChatRequest, ChatResponse, Message, ToolCall, ToolSpec
from adreason.errors import AdreasonError, TraceFormatError, ZeroDuration
from adreason.grounding import (
    GROUNDING_PATTERNS,
    MAX_ANSWER_WORDS,
    EvidenceChain,
    EvidenceRef,
    Verdict,
    extract_anchors,
    needs_visual_grounding,
    refine_answer,
    repair_visual_anchor,
    verify_grounding,
)
from adreason.ingest import VideoDatabase
from adreason.registry import ActiveSubjects, activate_subjects, build_anchor
from adreason.tools import (
    ExpertFinding,
    GlobalContext,
    Observation,
    clip_search_tool,
    communication_expert,
    frame_inspect,
    global_browse,
)

log = logging.getLogger(__name__)

Decision = Literal["Proceed", "Redirect"]
Clock = Callable[[], float]


# -- actions -----------------------------------------------------------------


@dataclass(frozen=True)
class GlobalBrowse:
    query: str
    tool = "global_browse"


@dataclass(frozen=True)
class ClipSearch:
    query: str
    tool = "clip_search"


@dataclass(frozen=True)
class FrameInspect:
    query: str
    start: float
    end: float
    mode: Literal["literal", "semantic"] = "literal"
    tool = "frame_inspect"


@dataclass(frozen=True)
class CommExpert:
    focus: str
    start: float
    end: float
    tool = "communication_expert"


@dataclass(frozen=True)
class Finish:
    answer: str
    evidence: tuple[int, ...] = ()
    tool = "finish"


@dataclass(frozen=True)
class InvalidAction:
    """Placeholder for a controller reply that stayed unparseable after repair."""

    raw: str
    error: str
    tool = "invalid"


Action = Union[GlobalBrowse, ClipSearch, FrameInspect, CommExpert, Finish, InvalidAction]
_ACTION_TYPES: dict[str, type] = {
    cls.tool: cls for cls in (GlobalBrowse, ClipSearch, FrameInspect, CommExpert, Finish, InvalidAction)
}


def action_to_dict(action: Action) -> dict[str, Any]:
    out: dict[str, Any] = {"tool": action.tool}
    for f in fields(action):
        value = getattr(action, f.name)
        out[f.name] = list(value) if isinstance(value, tuple) else value
    return out


def action_from_dict(data: dict[str, Any]) -> Action:
    data = dict(data)
    cls = _ACTION_TYPES.get(data.pop("tool", None))
    if cls is None:
        raise TraceFormatError(f"unknown action record {data!r}")
    if cls is Finish:
        data["evidence"] = tuple(data.get("evidence", ()))
    try:
        return cls(**data)
    except TypeError as exc:
        raise TraceFormatError(f"bad action record: {exc}") from exc


def _range_schema(extra: dict[str, Any], required: list[str]) -> dict[str, Any]:
    props = {
        **extra,
        "start": {"type": "number", "description": "range start in seconds"},
        "end": {"type": "number", "description": "range end in seconds"},
    }
    return {"type": "object", "properties": props, "required": [*required, "start", "end"]}


TOOL_SPECS: tuple[ToolSpec, ...] = (
    ToolSpec(
        "global_browse_tool",
        "Summarise the whole ad from captions and speech. Use to re-orient.",
        {"type": "object", "properties": {"query": {"type": "string"}}, "required": ["query"]},
    ),
    ToolSpec(
        "clip_search_tool",
        "Find the moments matching a short visual description; returns merged event blocks.",
        {"type": "object", "properties": {"query": {"type": "string"}}, "required": ["query"]},
    ),
    ToolSpec(
        "frame_inspect_tool",
        "Look at frames in a time range. mode 'literal' is dense (text, counts, colours); "
        "'semantic' is sparse (what happens).",
        _range_schema(
            {"query": {"type": "string"}, "mode": {"type": "string", "enum": ["literal", "semantic"]}},
            ["query", "mode"],
        ),
    ),
    ToolSpec(
        "communication_expert_tool",
        "Analyse narrative, symbols and persuasion strategy over a time range (64 frames as 16 grids).",
        _range_schema({"focus": {"type": "string"}}, ["focus"]),
    ),
    ToolSpec(
        "finish",
        "Give the final answer, citing the step numbers whose observations support it.",
        {
            "type": "object",
            "properties": {
                "answer": {"type": "string"},
                "evidence": {"type": "array", "items": {"type": "integer"}},
            },
            "required": ["answer"],
        },
    ),
)
TOOL_NAMES = tuple(spec.name for spec in TOOL_SPECS)


class ActionParseError(ValueError):
    pass


def _text_arg(args: dict[str, Any], *names: str) -> str:
    for name in names:
        value = args.get(name)
        if isinstance(value, str) and value.strip():
            return value.strip()
    raise ActionParseError(f"missing text argument {names[0]!r}")


def _range_arg(args: dict[str, Any], duration: float) -> tuple[float, float]:
    pair = args.get("range") or args.get("time_range")
    try:
        if isinstance(pair, (list, tuple)) and len(pair) == 2:
            start, end = float(pair[0]), float(pair[1])
        else:
            start, end = float(args["start"]), float(args["end"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ActionParseError("a time range needs numeric 'start' and 'end'") from exc
    start, end = max(0.0, start), min(duration, end)
    if not start < end:
        raise ActionParseError(f"empty time range after clipping to [0, {fmt_seconds(duration)}]")
    return start, end


def parse_action(call: ToolCall | None, duration: float) -> Action:
    """Turn a tool call into an :class:`Action`; ranges are clipped to the video."""
    if call is None:
        raise ActionParseError("no tool call found; make exactly one tool call")
    name = call.name.strip().lower().removesuffix("_tool")
    args = dict(call.arguments)
    if name == "global_browse":
        return GlobalBrowse(_text_arg(args, "query", "focus"))
    if name == "clip_search":
        return ClipSearch(_text_arg(args, "query", "q"))
    if name == "frame_inspect":
        mode = str(args.get("mode", "literal")).strip().lower()
        if mode not in ("literal", "semantic"):
            raise ActionParseError(f"mode must be 'literal' or 'semantic', got {mode!r}")
        return FrameInspect(_text_arg(args, "query", "focus"), *_range_arg(args, duration), mode)  # type: ignore[arg-type]
    if name == "communication_expert":
        return CommExpert(_text_arg(args, "focus", "query"), *_range_arg(args, duration))
    if name == "finish":
        raw_refs = args.get("evidence", args.get("evidence_steps", []))
        if isinstance(raw_refs, (int, float)):
            raw_refs = [raw_refs]
        try:
            refs = tuple(int(r) for r in raw_refs or [])
        except (TypeError, ValueError) as exc:
            raise ActionParseError("evidence must be a list of step numbers") from exc
        return Finish(_text_arg(args, "answer"), refs)
    raise ActionParseError(f"unknown tool {call.name!r}; expected one of {', '.join(TOOL_NAMES)}")


# -- state -------------------------------------------------------------------


@dataclass
class StepRecord:
    t: int
    thought: str
    action: Action
    observation: str
    payload: dict[str, Any] = field(default_factory=dict)
    wall_time: float = 0.0

    def to_dict(self) -> dict[str, Any]:
        return {
            "type": "step",
            "t": self.t,
            "thought": self.thought,
            "action": action_to_dict(self.action),
            "observation": self.observation,
            "payload": self.payload,
            "wall_time": self.wall_time,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> StepRecord:
        try:
            return cls(
                t=int(data["t"]),
                thought=str(data.get("thought", "")),
                action=action_from_dict(data["action"]),
                observation=str(data["observation"]),
                payload=dict(data.get("payload", {})),
                wall_time=float(data.get("wall_time", 0.0)),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise TraceFormatError(f"bad step record: {exc}") from exc


@dataclass(frozen=True)
class SessionConfig:
    t_max: int = 8
    global_browse_top_k: int = 40
    clip_search_top_k: int = 5
    stagnation_threshold: float = 0.6
    stagnation_hits: int = 2
    redirect_window: float = 15.0
    beta: float = 1.0
    subject_k: int = 3
    gap_max: float = 3.0
    affinity_min: float = 0.8
    exact_bonus: float = 1.0
    max_inspect_images: int = 32
    grid_samples: int = 64
    max_answer_words: int = MAX_ANSWER_WORDS
    llm_verifier: bool = False
    llm_anchors: bool = False
    refine_with_backend: bool = True
    grounding_patterns: tuple[str, ...] = GROUNDING_PATTERNS
    prompt_dir: str | None = None

    def __post_init__(self) -> None:
        positive = (
            "t_max", "global_browse_top_k", "clip_search_top_k", "stagnation_hits", "redirect_window",
            "subject_k", "max_inspect_images", "grid_samples", "max_answer_words",
        )
        for name in positive:
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not 0 < self.stagnation_threshold <= 1:
            raise ValueError("stagnation_threshold must be in (0, 1]")
        if not self.beta >= 0:
            raise ValueError("beta must be >= 0")
        object.__setattr__(self, "grounding_patterns", tuple(self.grounding_patterns))

    def to_dict(self) -> dict[str, Any]:
        out = asdict(self)
        out["grounding_patterns"] = list(self.grounding_patterns)
        return out

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> SessionConfig:
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in data.items() if k in known})


@dataclass
class AgentState:
    query: str
    duration: float
    global_context: GlobalContext | None = None
    active: ActiveSubjects = field(default_factory=ActiveSubjects)
    preamble: StepRecord | None = None
    steps: list[StepRecord] = field(default_factory=list)
    rejections: list[str] = field(default_factory=list)
    ranges: list[tuple[float, float]] = field(default_factory=list)
    verdicts: list[Verdict] = field(default_factory=list)
    draft: str = ""

    @property
    def records(self) -> list[StepRecord]:
        """Preamble (if any) followed by loop steps."""
        return ([self.preamble] if self.preamble else []) + self.steps

    @property
    def next_t(self) -> int:
        return len(self.steps)

    def serialize_history(self) -> str:
        if not self.records:
            return "(no steps yet)"
        blocks = []
        for rec in self.records:
            lines = [f"[step {rec.t}]"]
            if rec.thought:
                lines.append(f"thought: {rec.thought}")
            lines.append(f"action: {json.dumps(action_to_dict(rec.action), ensure_ascii=False, sort_keys=True)}")
            lines.append(f"observation: {rec.observation}")
            blocks.append("\n".join(lines))
        return "\n\n".join(blocks)


# -- stagnation --------------------------------------------------------------


def overlap_ratio(logged: tuple[float, float], new: tuple[float, float]) -> float:
    """Length of ``logged ∩ new`` divided by the length of ``new``."""
    d = new[1] - new[0]
    if d <= 0:
        raise ZeroDuration(f"range {new} has no length")
    inter = min(logged[1], new[1]) - max(logged[0], new[0])
    return max(0.0, inter) / d


def check_stagnation(
    ranges: Sequence[tuple[float, float]],
    new: tuple[float, float],
    threshold: float = 0.6,
    hits: int = 2,
) -> Decision:
    """``Redirect`` once at least ``hits`` distinct logged ranges overlap ``new`` by more than ``threshold``."""
    if new[1] - new[0] <= 0:
        raise ZeroDuration(f"range {new} has no length")
    count = sum(overlap_ratio(r, new) > threshold for r in dict.fromkeys(tuple(r) for r in ranges))
    return "Redirect" if count >= hits else "Proceed"


def coverage(window: tuple[float, float], ranges: Sequence[tuple[float, float]]) -> float:
    return sum(max(0.0, min(window[1], e) - max(window[0], s)) for s, e in ranges)


def force_redirect(
    duration: float, ranges: Sequence[tuple[float, float]], window: float = 15.0
) -> tuple[float, float]:
    """The opening window if it is less explored than the closing one, else the closing window."""
    if duration <= 0:
        raise ValueError("duration must be positive")
    first = (0.0, min(window, duration))
    last = (max(0.0, duration - window), duration)
    return first if coverage(first, ranges) < coverage(last, ranges) else last


# -- trace -------------------------------------------------------------------


def _dump(record: dict[str, Any]) -> str:
    return json.dumps(record, ensure_ascii=False, sort_keys=True)


@dataclass
class Trace:
    header: dict[str, Any]
    steps: list[StepRecord] = field(default_factory=list)
    footer: dict[str, Any] | None = None

    @property
    def loop_steps(self) -> list[StepRecord]:
        return [s for s in self.steps if s.t >= 0]

    def __len__(self) -> int:
        return len(self.loop_steps)

    def to_lines(self) -> list[str]:
        lines = [_dump({"type": "header", **self.header})]
        lines += [_dump(s.to_dict()) for s in self.steps]
        if self.footer is not None:
            lines.append(_dump({"type": "footer", **self.footer}))
        return lines

    def write(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text("\n".join(self.to_lines()) + "\n", encoding="utf-8")
        return path

    @classmethod
    def read(cls, path: str | Path) -> Trace:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise TraceFormatError(f"cannot read trace {path}: {exc}") from exc
        return cls.parse(text)

    @classmethod
    def parse(cls, text: str) -> Trace:
        records = []
        for n, line in enumerate(text.splitlines(), start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except ValueError as exc:
                raise TraceFormatError(f"line {n}: not JSON ({exc})") from exc
            if not isinstance(rec, dict) or rec.get("type") not in ("header", "step", "footer"):
                raise TraceFormatError(f"line {n}: not a trace record")
            records.append(rec)
        if not records or records[0]["type"] != "header":
            raise TraceFormatError("trace must start with a header record")
        header = {k: v for k, v in records[0].items() if k != "type"}
        body = records[1:]
        footer = None
        if body and body[-1]["type"] == "footer":
            footer = {k: v for k, v in body.pop().items() if k != "type"}
        if any(r["type"] != "step" for r in body):
            raise TraceFormatError("header and footer may appear only once, at the ends")
        steps = [StepRecord.from_dict(r) for r in body]
        ts = [s.t for s in steps if s.t >= 0]
        if ts != list(range(len(ts))):
            raise TraceFormatError(f"step numbers must count up from 0, got {ts}")
        return cls(header, steps, footer)


@dataclass
class SessionResult:
    status: Literal["verified", "failure"]
    answer: str | None
    draft: str
    trace: Trace
    state: AgentState

    @property
    def ok(self) -> bool:
        return self.status == "verified"


# -- controller step ---------------------------------------------------------


def controller_request(state: AgentState, config: SessionConfig) -> ChatRequest:
    ctx = state.global_context.render(include_draft=True) if state.global_context else "(not acquired)"
    subjects = "\n".join(
        f"- {p.subject_id} {p.name}: {p.appearance}; {p.identity} (first seen {fmt_seconds(p.first_seen)} s, "
        f"relevance {rho:.3f})"
        for p, rho in state.active.items
    ) or "(none)"
    constraints = "\n".join(f"- {note}" for note in state.rejections) or "(none)"
    user = (
        f"QUESTION: {state.query}\n"
        f"VIDEO DURATION: {fmt_seconds(state.duration)} s\n\n"
        f"GLOBAL CONTEXT:\n{ctx}\n\n"
        f"ACTIVE SUBJECTS:\n{subjects}\n\n"
        f"CONSTRAINTS FROM REJECTED ANSWERS:\n{constraints}\n\n"
        f"HISTORY:\n{state.serialize_history()}\n\n"
        f"STEPS LEFT: {config.t_max - state.next_t} of {config.t_max}. This is step {state.next_t}."
    )
    return ChatRequest(
        [Message("system", templates.render("controller", config.prompt_dir)), Message("user", user)],
        role="controller",
        tools=list(TOOL_SPECS),
        task="controller",
    )


def _thought(text: str) -> str:
    kept = [
        ln
        for ln in text.strip().splitlines()
        if not ln.strip().lower().startswith(("action:", "{")) and not ln.strip().startswith("```")
    ]
    return "\n".join(kept).strip()


def _describe_reply(response: ChatResponse) -> str:
    if response.tool_call is None:
        return response.text
    call = json.dumps({"tool": response.tool_call.name, "arguments": dict(response.tool_call.arguments)})
    return f"{response.text}\n{call}".strip()


def step(state: AgentState, backend: Backend, config: SessionConfig | None = None) -> tuple[str, Action]:
    """Ask the controller for one thought and one action.

    An unusable tool call gets one repair prompt; if that fails too, an
    :class:`InvalidAction` is returned and the loop spends a step on it.
    """
    config = config or SessionConfig()
    if state.next_t >= config.t_max:
        raise RuntimeError("step budget exhausted")
    request = controller_request(state, config)
    response = backend.chat(request)
    try:
        return _thought(response.text), parse_action(response.tool_call, state.duration)
    except ActionParseError as exc:
        error = str(exc)
    repair = ChatRequest(
        [
            *request.messages,
            Message("assistant", _describe_reply(response) or "(empty reply)"),
            Message("user", f"Your tool call could not be used: {error}. Reply with a thought and one valid tool call."),
        ],
        role="controller",
        tools=list(TOOL_SPECS),
        task="controller",
    )
    second = backend.chat(repair)
    try:
        return _thought(second.text), parse_action(second.tool_call, state.duration)
    except ActionParseError as exc:
        return _thought(second.text), InvalidAction(_describe_reply(second), str(exc))


# -- loop --------------------------------------------------------------------


def record_rejection(
    state: AgentState, verdict: Verdict, *, thought: str = "", action: Action | None = None, wall_time: float = 0.0
) -> AgentState:
    """Append the rejection note as a step and keep it as a constraint for later prompts."""
    note = verdict.note
    state.rejections.append(note)
    state.steps.append(
        StepRecord(
            state.next_t,
            thought,
            action if action is not None else Finish("(rejected)"),
            note,
            {"verdict": verdict.to_dict()},
            wall_time,
        )
    )
    return state


_EVIDENCE_TOOLS = ("global_browse", "clip_search", "frame_inspect", "communication_expert")


def evidence_chain(state: AgentState, refs: Sequence[int] = ()) -> EvidenceChain:
    """Observations cited by ``refs``; all tool observations when none of the refs resolve."""
    usable = [
        r for r in state.records
        if r.action.tool in _EVIDENCE_TOOLS and not r.payload.get("error") and not r.payload.get("noop")
    ]
    cited = [r for r in usable if r.t in set(refs)]
    chosen = cited or usable

    def span(r: StepRecord) -> tuple[float | None, float | None]:
        return getattr(r.action, "start", None), getattr(r.action, "end", None)

    return EvidenceChain([EvidenceRef(r.t, r.action.tool, r.observation, *span(r)) for r in chosen])


def _same_topic(a: str, b: str) -> bool:
    ta, tb = set(content_tokens(a)), set(content_tokens(b))
    if not ta or not tb:
        return False
    return len(ta & tb) >= 0.5 * min(len(ta), len(tb))


def _duplicates_expert(state: AgentState, action: FrameInspect, config: SessionConfig) -> ExpertFinding | None:
    if not state.steps:
        return None
    prev = state.steps[-1]
    if not isinstance(prev.action, CommExpert) or prev.payload.get("error") or prev.payload.get("degraded"):
        return None
    if overlap_ratio((prev.action.start, prev.action.end), (action.start, action.end)) <= config.stagnation_threshold:
        return None
    if not _same_topic(action.query, prev.action.focus):
        return None
    return ExpertFinding(**prev.payload["finding"])


class Session:
    """Mutable per-question state plus the tool dispatch table."""

    def __init__(
        self, db: VideoDatabase, query: str, backend: Backend, config: SessionConfig, clock: Clock
    ) -> None:
        self.db = db
        self.backend = backend
        self.config = config
        self.clock = clock
        self.state = AgentState(query=query.strip(), duration=db.duration)

    # tools ---------------------------------------------------------------

    def _global_browse(self, query: str) -> Observation:
        cfg = self.config
        try:
            ctx = global_browse(
                self.db, query, self.backend, top_k=cfg.global_browse_top_k, beta=cfg.beta, prompt_dir=cfg.prompt_dir
            )
        except (BackendError, AdreasonError) as exc:
            log.warning("global browse failed: %s", exc)
            ctx = GlobalContext(summary=f"(global browse unavailable: {exc})", degraded=True)
        self.state.global_context = ctx
        return Observation(ctx.render(), {"context": ctx.to_dict(), "degraded": ctx.degraded})

    def _ranged(self, action: FrameInspect | CommExpert) -> tuple[tuple[float, float], str]:
        cfg = self.config
        span = (action.start, action.end)
        prefix = ""
        if check_stagnation(self.state.ranges, span, cfg.stagnation_threshold, cfg.stagnation_hits) == "Redirect":
            new = force_redirect(self.db.duration, self.state.ranges, cfg.redirect_window)
            prefix = (
                f"Stagnation: {span_label(*span)} repeats ranges already inspected. "
                f"Redirected to {span_label(*new)}.\n"
            )
            span = new
        self.state.ranges.append(span)
        return span, prefix

    def execute(self, action: Action) -> Observation:
        cfg = self.config
        if isinstance(action, GlobalBrowse):
            return self._global_browse(action.query)
        if isinstance(action, ClipSearch):
            return clip_search_tool(
                self.db, action.query, self.backend,
                top_k=cfg.clip_search_top_k, beta=cfg.beta, gap_max=cfg.gap_max,
                affinity_min=cfg.affinity_min, exact_bonus=cfg.exact_bonus, prompt_dir=cfg.prompt_dir,
            )
        if isinstance(action, FrameInspect):
            finding = _duplicates_expert(self.state, action, cfg)
            if finding is not None:
                return Observation(f"expert finding accepted: {finding.direct_answer}", {"noop": True})
            span, prefix = self._ranged(action)
            obs = frame_inspect(
                self.db, *span, action.mode, action.query, self.backend,
                max_images=cfg.max_inspect_images, prompt_dir=cfg.prompt_dir,
            )
            return Observation(prefix + obs.text, obs.payload | {"redirected": bool(prefix)})
        if isinstance(action, CommExpert):
            span, prefix = self._ranged(action)
            finding = communication_expert(
                self.db, *span, action.focus, self.state.global_context, self.backend,
                n_samples=cfg.grid_samples, prompt_dir=cfg.prompt_dir,
            )
            payload = {"finding": asdict(finding), "degraded": finding.degraded, "start": span[0], "end": span[1],
                       "redirected": bool(prefix)}
            return Observation(prefix + finding.render(), payload)
        if isinstance(action, InvalidAction):
            return Observation(f"No-op: the tool call could not be parsed ({action.error}).", {"noop": True})
        raise TypeError(f"cannot execute {action!r}")

    # loop ----------------------------------------------------------------

    def _timed(self, fn: Callable[[], Any]) -> tuple[Any, float]:
        t0 = self.clock()
        out = fn()
        return out, round(self.clock() - t0, 6)

    def preamble(self) -> None:
        action = GlobalBrowse(self.state.query)
        obs, wall = self._timed(lambda: self._global_browse(action.query))
        self.state.preamble = StepRecord(-1, "", action, obs.text, obs.payload, wall)
        summary = self.state.global_context.summary if self.state.global_context else ""
        try:
            anchor = build_anchor(self.state.query, "" if self.state.global_context.degraded else summary, self.backend)
            self.state.active = activate_subjects(self.db.subjects, anchor, self.config.subject_k)
        except (BackendError, AdreasonError) as exc:
            log.warning("subject activation skipped: %s", exc)
            self.state.active = ActiveSubjects([], self.config.subject_k)

    def act(self, thought: str, action: Action) -> None:
        def run() -> Observation:
            try:
                return self.execute(action)
            except (BackendError, AdreasonError, ValueError) as exc:
                return Observation(f"Tool error ({type(exc).__name__}): {exc}", {"error": str(exc)})

        obs, wall = self._timed(run)
        self.state.steps.append(StepRecord(self.state.next_t, thought, action, obs.text, obs.payload, wall))

    def finish(self, thought: str, action: Finish) -> str | None:
        """Verify a proposed answer; returns the refined answer on acceptance."""
        cfg, state = self.config, self.state
        t0 = self.clock()
        evidence = evidence_chain(state, action.evidence)
        anchors = extract_anchors(
            evidence, self.backend, subjects=self.db.subjects, use_llm=cfg.llm_anchors, prompt_dir=cfg.prompt_dir
        )
        answer = action.answer
        verdict = verify_grounding(answer, evidence, anchors, self.backend, use_llm=cfg.llm_verifier,
                                   prompt_dir=cfg.prompt_dir)
        payload: dict[str, Any] = {"anchors": list(anchors), "evidence": [r.step for r in evidence.refs]}
        if anchors and not verdict.matched and needs_visual_grounding(state.query, cfg.grounding_patterns):
            repaired = repair_visual_anchor(
                answer, anchors, self.backend, question=state.query, evidence=evidence,
                max_words=cfg.max_answer_words, prompt_dir=cfg.prompt_dir,
            )
            if repaired != answer:
                second = verify_grounding(repaired, evidence, anchors)
                payload["repair"] = {"answer": repaired, "verdict": second.to_dict()}
                if second.accepted:
                    answer, verdict = repaired, second
        state.verdicts.append(verdict)
        payload["verdict"] = verdict.to_dict()
        if not verdict.accepted:
            state.draft = action.answer
            record_rejection(state, verdict, thought=thought, action=action, wall_time=round(self.clock() - t0, 6))
            state.steps[-1].payload.update(payload)
            return None
        refiner = self.backend if cfg.refine_with_backend else None
        final = refine_answer(answer, refiner, question=state.query, max_words=cfg.max_answer_words,
                              prompt_dir=cfg.prompt_dir)
        payload["final"] = final
        matched = ", ".join(verdict.matched) or "-"
        obs = f"{verdict.note} (matched: {matched}). Final answer: {final}"
        state.steps.append(StepRecord(state.next_t, thought, action, obs, payload, round(self.clock() - t0, 6)))
        return final

    def best_draft(self) -> str:
        if self.state.draft:
            return self.state.draft
        ctx = self.state.global_context
        return ctx.draft_answer if ctx is not None else ""


def run_session(
    db: VideoDatabase,
    query: str,
    backend: Backend,
    config: SessionConfig | None = None,
    *,
    clock: Clock = time.perf_counter,
    trace_path: str | Path | None = None,
) -> SessionResult:
    """Answer ``query`` about the video in ``db``.

    Returns ``status="verified"`` with a refined answer, or ``status="failure"``
    with the best unverified draft when the step budget runs out or the
    controller model fails. Pass ``clock=lambda: 0.0`` for byte-stable traces.
    """
    if not query.strip():
        raise ValueError("query must be nonempty")
    config = config or SessionConfig()
    calls_before = Counter(backend.calls)
    tokens_before = backend.tokens
    session = Session(db, query, backend, config, clock)
    state = session.state
    answer: str | None = None
    error = ""
    try:
        session.preamble()
        while answer is None and state.next_t < config.t_max:
            thought, action = step(state, backend, config)
            if isinstance(action, Finish):
                answer = session.finish(thought, action)
            else:
                session.act(thought, action)
    except BackendError as exc:
        log.error("controller failed: %s", exc)
        error = f"{type(exc).__name__}: {exc}"
    status: Literal["verified", "failure"] = "verified" if answer is not None else "failure"
    calls = Counter(backend.calls)
    calls.subtract(calls_before)
    footer: dict[str, Any] = {
        "status": status,
        "answer": answer,
        "draft": session.best_draft(),
        "verdicts": [v.to_dict() for v in state.verdicts],
        "calls": {k: v for k, v in sorted(calls.items()) if v},
        "tokens": backend.tokens - tokens_before,
        "steps": state.next_t,
    }
    if error:
        footer["error"] = error
    header = {"query": state.query, "video_id": db.meta.video_id, "config": config.to_dict()}
    trace = Trace(header, state.records, footer)
    if trace_path is not None:
        trace.write(trace_path)
    return SessionResult(status, answer, footer["draft"], trace, state)
