"""The five controller tools (minus ``finish``, handled by the agent loop).

* :func:`global_browse` summarises the whole ad from text logs.
* :func:`clip_search_tool` runs hybrid retrieval and fuses hits into events.
* :func:`frame_inspect` looks at frames densely (literal) or sparsely (semantic).
* :func:`communication_expert` packs 64 frames into 16 2x2 grids and asks the
  expert model for narrative and persuasion analysis.

Each tool returns an :class:`Observation`: the text shown to the controller
plus a JSON-serialisable payload for the trace.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
from collections.abc import Sequence
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Literal

import numpy as np
from PIL import Image

from adreason import templates
from adreason._structured import structured_chat
from adreason._textutil import as_text_list, fmt_seconds, span_label
from adreason.backends import Backend, ChatRequest, ImageRef, Message
from adreason.errors import AssetError, EmptyDatabase, NoFramesInRange, TemplateParseError
from adreason.ingest import CLIP_SECS, VideoDatabase
from adreason.retrieval import (
    EXACT_BONUS,
    FUSION_AFFINITY,
    FUSION_GAP,
    EventBlock,
    HybridQuery,
    ScoredClip,
    fallback_keywords,
    rewrite_query,
    search_clips,
    temporal_fusion,
)

log = logging.getLogger(__name__)

GLOBAL_BROWSE_TOP_K = 40
CLIP_SEARCH_TOP_K = 5
MAX_INSPECT_IMAGES = 32
GRID_SAMPLES = 64
CELLS_PER_GRID = 4
MAX_GRID_IMAGES = 16
CELL_ORDER = ("TL", "TR", "BL", "BR")

Mode = Literal["literal", "semantic"]


@dataclass
class Observation:
    text: str
    payload: dict[str, Any] = field(default_factory=dict)


# -- global browse -----------------------------------------------------------


@dataclass
class GlobalContext:
    summary: str
    genre: str = "unknown"
    entities: list[str] = field(default_factory=list)
    explicit_text: list[str] = field(default_factory=list)
    asr: str = ""
    draft_answer: str = ""
    degraded: bool = False

    def render(self, include_draft: bool = False) -> str:
        """Readable summary; the model's draft answer is a guess, so it is opt-in."""
        lines = [f"Genre: {self.genre}", f"Narrative: {self.summary}"]
        if self.entities:
            lines.append("Key entities: " + ", ".join(self.entities))
        if self.explicit_text:
            lines.append("On-screen text: " + " | ".join(f'"{t}"' for t in self.explicit_text))
        if include_draft and self.draft_answer:
            lines.append(f"Draft answer: {self.draft_answer}")
        return "\n".join(lines)

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


def clip_log_line(clip) -> str:
    line = f"[{span_label(clip.start, clip.end)}] [SCENE]: {clip.caption}"
    if clip.transcript:
        line += f" [AUDIO]: {clip.transcript}"
    if clip.ocr:
        line += " [POTENTIAL_TEXT]: " + " | ".join(f'"{t}"' for t in clip.ocr)
    return line


def global_browse(
    db: VideoDatabase,
    query: str,
    backend: Backend,
    *,
    top_k: int = GLOBAL_BROWSE_TOP_K,
    beta: float = 1.0,
    prompt_dir: str | Path | None = None,
) -> GlobalContext:
    """Summarise the video from its captions and transcript.

    The ``top_k`` best clips for the query (all of them for short ads) are
    laid out in chronological order, whatever their retrieval rank.
    """
    if not db.clips:
        raise EmptyDatabase("database has no clips")
    hq = HybridQuery.build(query, backend, fallback_keywords(query), beta)
    hits = search_clips(db, hq, min(top_k, len(db.clips)))
    chosen = sorted(hits, key=lambda s: (s.start, s.index))
    by_index = {c.index: c for c in db.clips}
    logs = "\n".join(clip_log_line(by_index[s.index]) for s in chosen)
    asr = db.asr_text()
    user = f"VISUAL LOGS:\n{logs}\n\nAUDIO TRANSCRIPT:\n{asr or '(no speech)'}\n\nUSER QUERY: {query}"
    request = ChatRequest(
        [Message("system", templates.render("global_browse", prompt_dir)), Message("user", user)],
        role="controller",
        task="global_browse",
    )
    try:
        obj, _ = structured_chat(backend, request, ("narrative_reconstruction", "final_answer"))
    except TemplateParseError as exc:
        log.warning("global browse reply unusable; keeping raw text")
        return GlobalContext(summary=exc.raw.strip() or "(no global summary available)", asr=asr, degraded=True)
    return GlobalContext(
        summary=str(obj["narrative_reconstruction"]).strip() or "(empty narrative)",
        genre=str(obj.get("genre") or "unknown").strip(),
        entities=as_text_list(obj.get("inferred_objects")),
        explicit_text=as_text_list(obj.get("explicit_text_found")),
        asr=asr,
        draft_answer=str(obj["final_answer"]).strip(),
    )


# -- clip search -------------------------------------------------------------


def render_blocks(keywords: Sequence[str], blocks: Sequence[EventBlock],
                  ranked: Sequence[ScoredClip], db: VideoDatabase) -> str:
    by_index = {c.index: c for c in db.clips}
    scores = {s.index: s for s in ranked}
    # The query itself is left out: observations should carry only video-derived text.
    lines = [f'Clip search (keywords: {", ".join(keywords) or "none"}): {len(blocks)} event block(s)']
    for n, block in enumerate(blocks, start=1):
        lines.append(f"Block {n}: {span_label(block.start, block.end)} (score {block.score:.3f})")
        for idx in block.members:
            clip, s = by_index[idx], scores[idx]
            lines.append(
                f"  - clip {idx} [{span_label(clip.start, clip.end)}] total {s.total:.3f} "
                f"(semantic {s.semantic:.3f}, lexical {s.lexical:.3f}): {clip.caption}"
            )
            if clip.transcript:
                lines.append(f"    audio: {clip.transcript}")
            if clip.ocr:
                lines.append("    on-screen text: " + " | ".join(f'"{t}"' for t in clip.ocr))
    return "\n".join(lines)


def clip_search_tool(
    db: VideoDatabase,
    query: str,
    backend: Backend,
    *,
    top_k: int = CLIP_SEARCH_TOP_K,
    beta: float = 1.0,
    gap_max: float = FUSION_GAP,
    affinity_min: float = FUSION_AFFINITY,
    exact_bonus: float = EXACT_BONUS,
    prompt_dir: str | Path | None = None,
) -> Observation:
    if not query.strip():
        raise ValueError("clip search query must be nonempty")
    if not db.clips:
        raise EmptyDatabase("database has no clips")
    keywords = rewrite_query(query, backend, prompt_dir=prompt_dir)
    hq = HybridQuery(query, backend.embed_one(query), tuple(keywords), beta)
    ranked = search_clips(db, hq, min(top_k, len(db.clips)), exact_bonus)
    blocks = temporal_fusion(ranked, db, gap_max, affinity_min)
    payload = {
        "keywords": list(hq.keywords),
        "ranked": [asdict(s) for s in ranked],
        "blocks": [asdict(b) | {"members": list(b.members)} for b in blocks],
    }
    return Observation(render_blocks(hq.keywords, blocks, ranked, db), payload)


# -- frame selection ---------------------------------------------------------


def _nearest(times: np.ndarray, t: float) -> float:
    """Nearest available timestamp; ties go to the earlier frame."""
    i = int(np.searchsorted(times, t))
    best = None
    for j in (i - 1, i):
        if 0 <= j < len(times):
            cand = float(times[j])
            if best is None or abs(cand - t) < abs(best - t):
                best = cand
    assert best is not None
    return best


def candidate_frames(db: VideoDatabase, start: float, end: float) -> np.ndarray:
    """Frames in ``[start, end)``.

    An empty window falls back to the single frame nearest its midpoint, as
    long as that frame lies within one frame interval of the window.
    """
    times = np.asarray(db.frame_times, dtype=np.float64)
    if times.size == 0:
        raise NoFramesInRange("database has no frames")
    inside = times[(times >= start) & (times < end)]
    if inside.size:
        return inside
    slack = max(1.0 / db.meta.fps, 1.0)
    t = _nearest(times, (start + end) / 2)
    if start - slack <= t <= end + slack:
        return np.asarray([t])
    raise NoFramesInRange(f"no frames near {span_label(start, end)}")


def _check_range(db: VideoDatabase, start: float, end: float) -> None:
    if not (0 <= start < end <= db.duration):
        raise ValueError(f"range {span_label(start, end)} outside video [0, {fmt_seconds(db.duration)}]")


def select_frames(
    db: VideoDatabase,
    start: float,
    end: float,
    mode: Mode,
    *,
    max_images: int = MAX_INSPECT_IMAGES,
    keyframe_secs: float = CLIP_SECS,
) -> list[float]:
    """Timestamps to attach for a frame inspection.

    ``literal`` takes every frame in the range, thinned uniformly to
    ``max_images``. ``semantic`` takes one keyframe per ``keyframe_secs``
    window: the frame closest to the window centre.
    """
    _check_range(db, start, end)
    cands = candidate_frames(db, start, end)
    if mode == "literal":
        if cands.size > max_images:
            idx = np.round(np.linspace(0, cands.size - 1, max_images)).astype(int)
            cands = cands[idx]
        return [float(t) for t in cands]
    if mode == "semantic":
        n = max(1, math.ceil((end - start) / keyframe_secs - 1e-9))
        width = (end - start) / n
        picked = [_nearest(cands, start + (i + 0.5) * width) for i in range(n)]
        return list(dict.fromkeys(picked))
    raise ValueError(f"unknown inspection mode {mode!r}")


def frame_inspect(
    db: VideoDatabase,
    start: float,
    end: float,
    mode: Mode,
    query: str,
    backend: Backend,
    *,
    max_images: int = MAX_INSPECT_IMAGES,
    prompt_dir: str | Path | None = None,
) -> Observation:
    times = select_frames(db, start, end, mode, max_images=max_images)
    prompt = templates.render(f"frame_inspect_{mode}", prompt_dir)
    stamps = ", ".join(f"t={fmt_seconds(t)}s" for t in times)
    user = f"{prompt}\n\nFrames in order: {stamps}\nQUESTION: {query}"
    request = ChatRequest(
        [Message("user", user)],
        role="captioner",
        images=[ImageRef(str(db.frame_path(t)), "high" if mode == "literal" else "low") for t in times],
        task="frame_inspect",
    )
    reply = backend.chat(request).text.strip()
    header = f"Frame inspect ({mode}) {span_label(start, end)}, {len(times)} frame(s) at {stamps}:"
    return Observation(f"{header}\n{reply}", {"mode": mode, "frames": times, "start": start, "end": end})


# -- grid projection ---------------------------------------------------------


@dataclass(frozen=True)
class GridPlan:
    start: float
    end: float
    timestamps: tuple[float, ...]
    frame_width: int
    frame_height: int

    @property
    def batches(self) -> list[tuple[float, ...]]:
        ts = self.timestamps
        return [ts[i : i + CELLS_PER_GRID] for i in range(0, len(ts), CELLS_PER_GRID)]

    def cells(self, batch: int) -> dict[int, float]:
        """Cell index (0=TL, 1=TR, 2=BL, 3=BR) -> timestamp for one batch."""
        return dict(enumerate(self.batches[batch]))

    @property
    def grid_width(self) -> int:
        return 2 * self.frame_width

    @property
    def grid_height(self) -> int:
        return 2 * self.frame_height

    @property
    def digest(self) -> str:
        blob = json.dumps([self.start, self.end, list(self.timestamps)]).encode()
        return hashlib.sha1(blob).hexdigest()[:10]


def sample_times(start: float, end: float, n: int) -> list[float]:
    """``n`` evenly spaced instants ``start + i*(end-start)/n``."""
    return [start + (end - start) * i / n for i in range(n)]


def plan_grid_projection(db: VideoDatabase, start: float, end: float, n_samples: int = GRID_SAMPLES) -> GridPlan:
    """Pick ``n_samples`` frames for the expert and group them into 2x2 grids.

    Uniform sample instants are snapped to the nearest frame in the range, so
    when frames are scarce the same frame fills several cells.
    """
    if n_samples < CELLS_PER_GRID or n_samples % CELLS_PER_GRID:
        raise ValueError(f"n_samples must be a positive multiple of {CELLS_PER_GRID}")
    if n_samples // CELLS_PER_GRID > MAX_GRID_IMAGES:
        raise ValueError(f"at most {MAX_GRID_IMAGES * CELLS_PER_GRID} samples fit in {MAX_GRID_IMAGES} grids")
    _check_range(db, start, end)
    cands = candidate_frames(db, start, end)
    stamps = tuple(_nearest(cands, t) for t in sample_times(start, end, n_samples))
    try:
        with Image.open(db.frame_path(stamps[0])) as img:
            width, height = img.size
    except OSError as exc:
        raise AssetError(f"cannot open frame at t={stamps[0]}: {exc}") from exc
    return GridPlan(start, end, stamps, width, height)


def compose_grid(frames: Sequence[str | Path | Image.Image]) -> Image.Image:
    """Stitch four frames into one 2x2 image (TL, TR, BL, BR).

    Frames whose size differs from the first one are resized to match it.
    """
    if len(frames) != CELLS_PER_GRID:
        raise ValueError(f"compose_grid needs exactly {CELLS_PER_GRID} frames, got {len(frames)}")
    images = []
    for f in frames:
        if isinstance(f, Image.Image):
            images.append(f.convert("RGB"))
            continue
        try:
            with Image.open(f) as img:
                images.append(img.convert("RGB"))
        except OSError as exc:
            raise AssetError(f"cannot decode frame {f}: {exc}") from exc
    w, h = images[0].size
    grid = Image.new("RGB", (2 * w, 2 * h))
    for cell, img in enumerate(images):
        if img.size != (w, h):
            img = img.resize((w, h), Image.BILINEAR)
        grid.paste(img, ((cell % 2) * w, (cell // 2) * h))
    return grid


def render_grids(db: VideoDatabase, plan: GridPlan) -> list[Path]:
    """Compose every batch and cache it under ``grids/<range>_<digest>/<batch>.jpg``."""
    if db.root is None:
        raise AssetError("database has no root directory for the grid cache")
    cache = Path(db.root) / "grids" / f"{fmt_seconds(plan.start)}-{fmt_seconds(plan.end)}_{plan.digest}"
    cache.mkdir(parents=True, exist_ok=True)
    paths = []
    for b, batch in enumerate(plan.batches):
        out = cache / f"{b:02d}.jpg"
        if not out.exists():
            compose_grid([db.frame_path(t) for t in batch]).save(out, "JPEG", quality=92)
        paths.append(out)
    return paths


# -- communication expert ----------------------------------------------------


@dataclass
class ExpertFinding:
    direct_answer: str
    narrative: str = ""
    strategy: str = ""
    symbols: list[dict[str, str]] = field(default_factory=list)
    degraded: bool = False

    def render(self) -> str:
        lines = [f"Direct answer: {self.direct_answer}"]
        if self.strategy:
            lines.append(f"Persuasion strategy: {self.strategy}")
        if self.narrative:
            lines.append(f"Narrative: {self.narrative}")
        for s in self.symbols:
            lines.append(
                f"Symbol: {s.get('symbol', '?')} -> {s.get('meaning', '?')} (grounding: {s.get('grounding', '-')})"
            )
        return "\n".join(lines)


def _symbols(value: Any) -> list[dict[str, str]]:
    out = []
    for item in value if isinstance(value, list) else []:
        if isinstance(item, dict):
            out.append({k: str(item.get(k, "")) for k in ("symbol", "meaning", "grounding")})
        elif isinstance(item, str) and item.strip():
            out.append({"symbol": item.strip(), "meaning": "", "grounding": ""})
    return out


def expert_request(
    db: VideoDatabase,
    plan: GridPlan,
    grid_paths: Sequence[Path],
    focus: str,
    global_context: GlobalContext | None,
    prompt_dir: str | Path | None = None,
) -> ChatRequest:
    layout = "\n".join(
        f"Grid {b + 1}: " + ", ".join(f"{CELL_ORDER[c]} t={fmt_seconds(t)}s" for c, t in plan.cells(b).items())
        for b in range(len(plan.batches))
    )
    asr = db.asr_text(plan.start, plan.end) or "(no speech in this range)"
    context = global_context.render() if global_context is not None else "(not available)"
    user = (
        f"FOCUS QUESTION: {focus}\n\n"
        f"GLOBAL CONTEXT:\n{context}\n\n"
        f"TRANSCRIPT FOR {span_label(plan.start, plan.end)}:\n{asr}\n\n"
        f"{len(grid_paths)} grid images follow, each read Top-Left -> Top-Right -> Bottom-Left -> Bottom-Right:\n"
        f"{layout}"
    )
    return ChatRequest(
        [Message("system", templates.render("comm_expert", prompt_dir)), Message("user", user)],
        role="expert",
        images=[ImageRef(str(p), "high") for p in grid_paths],
        task="expert",
    )


def communication_expert(
    db: VideoDatabase,
    start: float,
    end: float,
    focus: str,
    global_context: GlobalContext | None,
    backend: Backend,
    *,
    n_samples: int = GRID_SAMPLES,
    prompt_dir: str | Path | None = None,
) -> ExpertFinding:
    plan = plan_grid_projection(db, start, end, n_samples)
    grids = render_grids(db, plan)
    request = expert_request(db, plan, grids, focus, global_context, prompt_dir)
    assert len(request.images) <= MAX_GRID_IMAGES
    try:
        obj, _ = structured_chat(backend, request, ("direct_answer",))
    except TemplateParseError as exc:
        log.warning("expert reply unusable; keeping raw text")
        return ExpertFinding(direct_answer=exc.raw.strip() or "(no finding)", degraded=True)
    return ExpertFinding(
        direct_answer=str(obj["direct_answer"]).strip(),
        narrative=str(obj.get("narrative_reconstruction", "")).strip(),
        strategy=str(obj.get("persuasion_strategy", "")).strip(),
        symbols=_symbols(obj.get("symbols")),
    )
