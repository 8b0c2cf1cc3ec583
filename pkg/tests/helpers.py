"""Builders shared by the test modules: tiny databases, solid-colour frames, scripted controllers."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Any

import numpy as np
from PIL import Image

from adreason.backends import ChatResponse, MockBackend, MockRule, MockScript, ToolCall, hashed_embedding
from adreason.ingest import ClipRecord, SubjectProfile, Utterance, VideoDatabase, VideoMeta, segment_clips

DIM = 64


def unit(rng: np.random.Generator, dim: int = DIM) -> np.ndarray:
    v = rng.normal(size=dim)
    return v / np.linalg.norm(v)


def solid_frame(path: Path, color: tuple[int, int, int], size: tuple[int, int] = (32, 24)) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.new("RGB", size, color).save(path, "JPEG", quality=95)
    return path


def frame_color(t: float) -> tuple[int, int, int]:
    k = int(t)
    return (40 + 7 * k % 200, 90 + 13 * k % 150, 200 - 5 * k % 180)


def make_db(
    root: Path,
    captions: list[str],
    *,
    duration: float | None = None,
    ocr: dict[int, list[str]] | None = None,
    transcript: list[Utterance] | None = None,
    subjects: list[SubjectProfile] | None = None,
    video_id: str = "vid",
    dim: int = DIM,
    frame_size: tuple[int, int] = (32, 24),
) -> VideoDatabase:
    """A database with 5 s clips, 1 FPS solid-colour frames and hashed embeddings."""
    duration = duration if duration is not None else 5.0 * len(captions)
    meta = VideoMeta(video_id, duration)
    spans = segment_clips(meta)
    assert len(spans) == len(captions)
    transcript = transcript or []
    clips = []
    for i, ((a, b), cap) in enumerate(zip(spans, captions)):
        said = " ".join(u.text for u in transcript if u.start < b and u.end > a)
        clip = ClipRecord(i, a, b, cap, said, list((ocr or {}).get(i, [])))
        v = hashed_embedding(clip.document, dim)
        clip.embedding = v / np.linalg.norm(v)
        clips.append(clip)
    for s in subjects or []:
        if s.embedding is None:
            v = hashed_embedding(s.profile_text, dim)
            s.embedding = v / np.linalg.norm(v)
    frames = {}
    for k in range(int(np.ceil(duration))):
        rel = f"frames/{k}.jpg"
        solid_frame(root / rel, frame_color(k), frame_size)
        frames[float(k)] = rel
    return VideoDatabase(meta, clips, subjects or [], transcript, frames, {}, root=root)


def hash_mock(rules: list[MockRule] | None = None, *, mode: str = "ordered", dim: int = DIM) -> MockBackend:
    return MockBackend(MockScript(rules or [], mode=mode, embedding_fallback="hash", dimension=dim))


def ctrl(tool: str, thought: str = "thinking", **arguments: Any) -> MockRule:
    """One scripted controller turn emitting a native tool call."""
    return MockRule(ChatResponse(thought, "tool_calls", ToolCall(tool, arguments)), role="controller", task="controller")


def reply(text: str, *, task: str | None = None, role: str | None = None, repeat: bool = False, **kw: Any) -> MockRule:
    return MockRule(ChatResponse(text), role=role, task=task, repeat=repeat, **kw)


def browse_reply(narrative: str = "A person shows a product.", answer: str = "unknown", **extra: Any) -> MockRule:
    body = {
        "narrative_reconstruction": narrative,
        "genre": extra.pop("genre", "product demo"),
        "inferred_objects": extra.pop("inferred_objects", []),
        "explicit_text_found": extra.pop("explicit_text_found", []),
        "audio_visual_mismatch": "none",
        "final_answer": answer,
    }
    return reply(json.dumps(body), task="global_browse", **extra)
