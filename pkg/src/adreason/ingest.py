"""Offline memory construction: turn pre-extracted video assets into a searchable database.

Inputs are frames already extracted at a fixed rate (1 FPS by default) and a
timestamped speech transcript produced by any ASR system, for example::

    ffmpeg -i ad.mp4 -vf fps=1 frames/frame_%05d.jpg

The build segments the timeline into fixed-length clips, captions each clip
(which also yields a partial subject registry), reads on-screen text from the
frames, merges the registries, embeds clip documents and subject profiles and
writes everything under one directory:

    meta.json          video meta, frame index, format version
    clips.jsonl        one clip record per line
    subjects.json      merged subject registry
    transcript.jsonl   {"start", "end", "text"} per utterance
    ocr.jsonl          {"t", "lines"} per inspected frame
    frames/<t>.jpg     frame assets, named by timestamp in seconds

Embeddings are stored as base64 of little-endian float32. All text is UTF-8.
"""

from __future__ import annotations

import base64
import json
import logging
import math
import re
import shutil
from collections.abc import Mapping, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Literal

import numpy as np
from PIL import Image

from adreason import templates
from adreason._structured import structured_chat
from adreason._textutil import as_text_list, dedupe, find_json_object, fmt_seconds, normalize_space
from adreason.backends import Backend, ChatRequest, ImageRef, Message
from adreason.errors import AssetError, BuildError, DatabaseFormatError, InvalidDuration

log = logging.getLogger(__name__)

FORMAT_VERSION = 1
CLIP_SECS = 5.0
NO_TEXT = "NO_TEXT"


def encode_vector(vec: np.ndarray) -> str:
    return base64.b64encode(np.asarray(vec, dtype="<f4").tobytes()).decode("ascii")


def decode_vector(data: str) -> np.ndarray:
    return np.frombuffer(base64.b64decode(data), dtype="<f4").astype(np.float32)


def _to_f32(vec: np.ndarray | None) -> np.ndarray | None:
    return None if vec is None else np.asarray(vec, dtype=np.float32)


def _dc_equal(a: Any, b: Any) -> bool:
    if type(a) is not type(b):
        return NotImplemented
    for f in fields(a):
        if not f.compare:
            continue
        x, y = getattr(a, f.name), getattr(b, f.name)
        if isinstance(x, np.ndarray) or isinstance(y, np.ndarray):
            if x is None or y is None or not np.array_equal(x, y):
                return False
        elif x != y:
            return False
    return True


# -- domain types ------------------------------------------------------------


@dataclass(frozen=True)
class Utterance:
    start: float
    end: float
    text: str

    def to_dict(self) -> dict[str, Any]:
        return {"start": self.start, "end": self.end, "text": self.text}

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> Utterance:
        return cls(float(d["start"]), float(d["end"]), str(d["text"]))


@dataclass(frozen=True)
class VideoMeta:
    video_id: str
    duration: float
    fps: float = 1.0
    frame_dir: str = "frames"

    def __post_init__(self) -> None:
        if not self.duration > 0:
            raise InvalidDuration(f"video duration must be > 0, got {self.duration}")
        if not self.fps > 0:
            raise ValueError(f"fps must be > 0, got {self.fps}")


@dataclass(eq=False)
class ClipRecord:
    index: int
    start: float
    end: float
    caption: str
    transcript: str = ""
    ocr: list[str] = field(default_factory=list)
    embedding: np.ndarray | None = None

    def __post_init__(self) -> None:
        if not self.end > self.start:
            raise ValueError(f"clip {self.index}: end must exceed start")
        self.embedding = _to_f32(self.embedding)

    __eq__ = _dc_equal

    @property
    def document(self) -> str:
        """Text that gets embedded: caption followed by the transcript slice."""
        return "\n".join(p for p in (self.caption.strip(), self.transcript.strip()) if p)

    @property
    def lexical_document(self) -> str:
        """Lower-cased caption, transcript and OCR lines, one segment per line."""
        parts = [self.caption, self.transcript, *self.ocr]
        return "\n".join(normalize_space(p).lower() for p in parts if p.strip())

    def to_dict(self) -> dict[str, Any]:
        return {
            "index": self.index,
            "start": self.start,
            "end": self.end,
            "caption": self.caption,
            "transcript": self.transcript,
            "ocr": list(self.ocr),
            "embedding": None if self.embedding is None else encode_vector(self.embedding),
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> ClipRecord:
        emb = d.get("embedding")
        return cls(
            index=int(d["index"]),
            start=float(d["start"]),
            end=float(d["end"]),
            caption=str(d["caption"]),
            transcript=str(d.get("transcript", "")),
            ocr=[str(x) for x in d.get("ocr", [])],
            embedding=None if emb is None else decode_vector(emb),
        )


@dataclass(eq=False)
class SubjectProfile:
    subject_id: str
    name: str
    appearance: list[str] = field(default_factory=list)
    identity: list[str] = field(default_factory=list)
    first_seen: float = 0.0
    embedding: np.ndarray | None = None

    def __post_init__(self) -> None:
        if not self.name.strip():
            raise ValueError("subject name must be nonempty")
        self.embedding = _to_f32(self.embedding)

    __eq__ = _dc_equal

    @property
    def profile_text(self) -> str:
        text = self.name.strip()
        if self.appearance:
            text += ". Appearance: " + "; ".join(self.appearance)
        if self.identity:
            text += ". Identity: " + "; ".join(self.identity)
        return text

    def to_dict(self) -> dict[str, Any]:
        return {
            "subject_id": self.subject_id,
            "name": self.name,
            "appearance": list(self.appearance),
            "identity": list(self.identity),
            "first_seen": self.first_seen,
            "embedding": None if self.embedding is None else encode_vector(self.embedding),
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> SubjectProfile:
        emb = d.get("embedding")
        return cls(
            subject_id=str(d["subject_id"]),
            name=str(d["name"]),
            appearance=as_text_list(d.get("appearance")),
            identity=as_text_list(d.get("identity")),
            first_seen=float(d.get("first_seen", 0.0)),
            embedding=None if emb is None else decode_vector(emb),
        )


@dataclass(eq=False)
class VideoDatabase:
    meta: VideoMeta
    clips: list[ClipRecord]
    subjects: list[SubjectProfile] = field(default_factory=list)
    transcript: list[Utterance] = field(default_factory=list)
    frames: dict[float, str] = field(default_factory=dict)
    ocr: dict[float, list[str]] = field(default_factory=dict)
    root: Path | None = field(default=None, compare=False)

    __eq__ = _dc_equal

    @property
    def duration(self) -> float:
        return self.meta.duration

    @property
    def frame_times(self) -> list[float]:
        return sorted(self.frames)

    def frame_path(self, t: float) -> Path:
        rel = self.frames[t]
        return (self.root / rel) if self.root is not None else Path(rel)

    def asr_slice(self, start: float, end: float) -> list[Utterance]:
        return slice_transcript(self.transcript, start, end, include_end=end >= self.duration)

    def asr_text(self, start: float | None = None, end: float | None = None) -> str:
        utts = self.transcript if start is None else self.asr_slice(start, end if end is not None else self.duration)
        return "\n".join(f"[{fmt_seconds(u.start)}-{fmt_seconds(u.end)}] {u.text}" for u in utts)


# -- segmentation and transcript --------------------------------------------


def segment_clips(meta: VideoMeta | float, clip_secs: float = CLIP_SECS) -> list[tuple[float, float]]:
    """Tile ``[0, duration]`` with consecutive spans of ``clip_secs`` (last one may be shorter)."""
    duration = meta.duration if isinstance(meta, VideoMeta) else float(meta)
    if not duration > 0:
        raise InvalidDuration(f"video duration must be > 0, got {duration}")
    if not clip_secs > 0:
        raise ValueError("clip_secs must be > 0")
    spans = []
    k = 0
    while k * clip_secs < duration:
        spans.append((k * clip_secs, min((k + 1) * clip_secs, duration)))
        k += 1
    return spans


def utterance_overlaps(utt: Utterance, start: float, end: float, include_end: bool = False) -> bool:
    """Half-open overlap of an utterance with ``[start, end)``.

    Zero-length utterances count when their instant falls inside the span;
    ``include_end`` closes the span on the right (used for the final clip).
    """
    if utt.end <= utt.start:
        t = utt.start
        return start <= t < end or (include_end and t == end)
    return utt.start < end and utt.end > start or (include_end and utt.start == end)


def slice_transcript(
    transcript: Sequence[Utterance], start: float, end: float, include_end: bool = False
) -> list[Utterance]:
    return [u for u in transcript if utterance_overlaps(u, start, end, include_end)]


def load_transcript(path: str | Path) -> list[Utterance]:
    """Read ``{"start", "end", "text"}`` records (JSON lines or one JSON list)."""
    raw = Path(path).read_text(encoding="utf-8").strip()
    if not raw:
        return []
    if raw.startswith("["):
        rows = json.loads(raw)
    else:
        rows = [json.loads(line) for line in raw.splitlines() if line.strip()]
    return sorted((Utterance.from_dict(r) for r in rows), key=lambda u: (u.start, u.end))


def discover_frames(frame_dir: str | Path, fps: float = 1.0) -> dict[float, Path]:
    """Map timestamps to image files.

    Files whose stem parses as a number are taken as seconds (``3.jpg``);
    otherwise files are sorted by name and assigned ``i / fps``.
    """
    exts = {".jpg", ".jpeg", ".png", ".webp", ".bmp"}
    files = sorted(p for p in Path(frame_dir).iterdir() if p.suffix.lower() in exts)
    if not files:
        return {}
    try:
        return {float(p.stem): p for p in files}
    except ValueError:
        return {i / fps: p for i, p in enumerate(files)}


# -- per-clip stages ---------------------------------------------------------


def _parse_seconds(value: Any, default: float) -> float:
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        return float(value)
    if isinstance(value, str):
        m = re.fullmatch(r"\s*(?:(\d+):)?(\d+):(\d+(?:\.\d+)?)\s*", value)
        if m:
            h, mnt, sec = m.groups()
            return int(h or 0) * 3600 + int(mnt) * 60 + float(sec)
        m = re.search(r"\d+(?:\.\d+)?", value)
        if m:
            return float(m.group())
    return default


def _validate_caption(obj: dict) -> None:
    if not isinstance(obj.get("clip_description"), str) or not obj["clip_description"].strip():
        raise ValueError("clip_description must be a nonempty string")
    if not isinstance(obj.get("subject_registry"), dict):
        raise ValueError("subject_registry must be an object")


def profiles_from_registry(
    registry: Mapping[str, Any], *, default_first_seen: float, duration: float
) -> list[SubjectProfile]:
    out = []
    for key, entry in registry.items():
        if not isinstance(entry, Mapping):
            continue
        name = str(entry.get("name") or key).strip()
        if not name:
            continue
        first_seen = _parse_seconds(entry.get("first_seen"), default_first_seen)
        out.append(
            SubjectProfile(
                subject_id=str(key),
                name=name,
                appearance=dedupe(as_text_list(entry.get("appearance"))),
                identity=dedupe(as_text_list(entry.get("identity"))),
                first_seen=min(max(first_seen, 0.0), duration),
            )
        )
    return out


def build_clip_record(
    index: int,
    span: tuple[float, float],
    frames: Sequence[str | Path],
    transcript: Sequence[Utterance],
    backend: Backend,
    *,
    duration: float,
    prompt_dir: str | Path | None = None,
) -> tuple[ClipRecord, list[SubjectProfile]]:
    """Caption one clip and collect its partial subject registry."""
    start, end = span
    prompt = templates.render("caption", prompt_dir, start=fmt_seconds(start), end=fmt_seconds(end))
    request = ChatRequest(
        messages=[Message("user", prompt)],
        role="captioner",
        images=[ImageRef(str(p), "low") for p in frames],
        task="caption",
    )
    obj, _ = structured_chat(backend, request, ("clip_description", "subject_registry"), _validate_caption)
    utts = slice_transcript(transcript, start, end, include_end=end >= duration)
    record = ClipRecord(
        index=index,
        start=start,
        end=end,
        caption=normalize_space(obj["clip_description"]),
        transcript=" ".join(u.text.strip() for u in utts if u.text.strip()),
    )
    partial = profiles_from_registry(obj["subject_registry"], default_first_seen=start, duration=duration)
    return record, partial


def check_image(path: str | Path) -> None:
    try:
        with Image.open(path) as img:
            img.verify()
    except (OSError, SyntaxError, ValueError) as exc:
        raise AssetError(f"cannot decode frame {path}: {exc}") from exc


def parse_ocr_reply(text: str) -> list[str]:
    lines = [line.strip() for line in text.splitlines()]
    return [line for line in lines if line and line != NO_TEXT]


def extract_frame_text(
    frame: str | Path, backend: Backend, *, prompt_dir: str | Path | None = None
) -> list[str]:
    """Read on-screen text from one frame; the ``NO_TEXT`` sentinel yields ``[]``."""
    check_image(frame)
    request = ChatRequest(
        messages=[Message("user", templates.render("ocr", prompt_dir))],
        role="captioner",
        images=[ImageRef(str(frame), "high")],
        task="ocr",
    )
    return parse_ocr_reply(backend.chat(request).text)


# -- registry merge ----------------------------------------------------------


def _name_key(name: str) -> str:
    return normalize_space(name).casefold()


def merge_subject_registries(
    partials: Sequence[Sequence[SubjectProfile]],
    backend: Backend | None = None,
    *,
    mode: Literal["exact", "llm"] = "exact",
    duration: float | None = None,
    prompt_dir: str | Path | None = None,
) -> list[SubjectProfile]:
    """Unify subjects across clips.

    ``exact`` mode treats subjects with the same (case-folded) name as one:
    the earliest ``first_seen`` wins and description lists are unioned in
    order of first occurrence. ``llm`` mode lets the model decide identity
    first, then normalises its output through the exact merge; an unusable
    model reply falls back to the exact merge.

    The result is sorted by ``(first_seen, name)`` and gets fresh ids
    ``S01, S02, ...``; embeddings are dropped since profile texts may change.
    """
    flat = [p for part in partials for p in part]
    if mode == "llm":
        if backend is None:
            raise ValueError("llm merge mode needs a backend")
        merged = _llm_merge(partials, backend, duration, prompt_dir)
        if merged is not None:
            flat = merged
    elif mode != "exact":
        raise ValueError(f"unknown merge mode {mode!r}")

    groups: dict[str, SubjectProfile] = {}
    for p in flat:
        key = _name_key(p.name)
        if key not in groups:
            groups[key] = SubjectProfile(
                subject_id="",
                name=normalize_space(p.name),
                appearance=dedupe(list(p.appearance)),
                identity=dedupe(list(p.identity)),
                first_seen=p.first_seen,
            )
            continue
        g = groups[key]
        g.first_seen = min(g.first_seen, p.first_seen)
        g.appearance = dedupe(g.appearance + list(p.appearance))
        g.identity = dedupe(g.identity + list(p.identity))
    ordered = sorted(groups.values(), key=lambda s: (s.first_seen, _name_key(s.name)))
    for i, s in enumerate(ordered, start=1):
        s.subject_id = f"S{i:02d}"
    return ordered


def _llm_merge(
    partials: Sequence[Sequence[SubjectProfile]],
    backend: Backend,
    duration: float | None,
    prompt_dir: str | Path | None,
) -> list[SubjectProfile] | None:
    payload = [
        {
            p.subject_id or f"subject_{i}": {
                "name": p.name,
                "appearance": p.appearance,
                "identity": p.identity,
                "first_seen": p.first_seen,
            }
            for i, p in enumerate(part)
        }
        for part in partials
    ]
    prompt = templates.render("merge", prompt_dir, registries=json.dumps(payload, ensure_ascii=False, indent=1))
    reply = backend.chat(ChatRequest([Message("user", prompt)], role="captioner", task="merge")).text
    obj = find_json_object(reply)
    if obj is None:
        log.warning("registry merge reply has no JSON; using exact-name merge")
        return None
    if isinstance(obj.get("subject_registry"), dict):
        obj = obj["subject_registry"]
    limit = duration if duration is not None else math.inf
    return profiles_from_registry(obj, default_first_seen=0.0, duration=limit)


# -- database build and persistence -----------------------------------------


@dataclass
class IngestConfig:
    clip_secs: float = CLIP_SECS
    ocr_stride: int = 1
    merge_mode: Literal["exact", "llm"] = "exact"
    max_workers: int = 1
    prompt_dir: str | Path | None = None

    def __post_init__(self) -> None:
        if not self.clip_secs > 0:
            raise ValueError("clip_secs must be > 0")
        if self.ocr_stride < 1:
            raise ValueError("ocr_stride must be >= 1")
        if self.max_workers < 1:
            raise ValueError("max_workers must be >= 1")


def _frames_for_span(times: list[float], start: float, end: float, last: bool) -> list[float]:
    inside = [t for t in times if start <= t < end or (last and t == end)]
    if inside:
        return inside
    mid = (start + end) / 2
    return [min(times, key=lambda t: (abs(t - mid), t))]


def build_database(
    meta: VideoMeta,
    frames: Mapping[float, str | Path],
    transcript: Sequence[Utterance],
    backend: Backend,
    out_dir: str | Path,
    config: IngestConfig | None = None,
) -> VideoDatabase:
    """Run the whole offline pipeline and persist the result to ``out_dir``.

    Output is written to a sibling staging directory and swapped in at the
    end, so a failed build leaves no partial database behind and a rebuild
    overwrites the previous one. Errors are re-raised as
    :class:`BuildError` tagged with the failing stage.
    """
    config = config or IngestConfig()
    out_dir = Path(out_dir)
    staging = out_dir.parent / f".{out_dir.name}.partial"
    stage = "setup"
    try:
        if staging.exists():
            shutil.rmtree(staging)
        (staging / meta.frame_dir).mkdir(parents=True)

        stage = "frames"
        times = sorted(t for t in frames if 0 <= t <= meta.duration)
        if not times:
            raise AssetError("no frame assets inside the video duration")
        frame_index: dict[float, str] = {}
        for t in times:
            rel = f"{meta.frame_dir}/{fmt_seconds(t)}.jpg"
            _store_frame(Path(frames[t]), staging / rel)
            frame_index[t] = rel

        stage = "segment"
        spans = segment_clips(meta, config.clip_secs)
        transcript = sorted(transcript, key=lambda u: (u.start, u.end))

        stage = "caption"

        def caption(i: int) -> tuple[ClipRecord, list[SubjectProfile]]:
            span = spans[i]
            ts = _frames_for_span(times, span[0], span[1], last=i == len(spans) - 1)
            paths = [staging / frame_index[t] for t in ts]
            return build_clip_record(
                i, span, paths, transcript, backend, duration=meta.duration, prompt_dir=config.prompt_dir
            )

        if config.max_workers > 1:
            with ThreadPoolExecutor(config.max_workers) as pool:
                results = list(pool.map(caption, range(len(spans))))
        else:
            results = [caption(i) for i in range(len(spans))]
        clips = [r[0] for r in results]

        stage = "ocr"
        ocr: dict[float, list[str]] = {}
        for t in times[:: config.ocr_stride]:
            lines = extract_frame_text(staging / frame_index[t], backend, prompt_dir=config.prompt_dir)
            ocr[t] = lines
            owner = _clip_index_at(spans, t)
            for line in lines:
                if line not in clips[owner].ocr:
                    clips[owner].ocr.append(line)

        stage = "merge"
        subjects = merge_subject_registries(
            [r[1] for r in results],
            backend,
            mode=config.merge_mode,
            duration=meta.duration,
            prompt_dir=config.prompt_dir,
        )

        stage = "embed"
        clip_vecs = backend.embed([c.document for c in clips])
        for clip, vec in zip(clips, clip_vecs):
            clip.embedding = _to_f32(vec)
        if subjects:
            subject_vecs = backend.embed([s.profile_text for s in subjects])
            for s, vec in zip(subjects, subject_vecs):
                s.embedding = _to_f32(vec)

        stage = "persist"
        db = VideoDatabase(meta, clips, subjects, list(transcript), frame_index, ocr, root=staging)
        save_database(db, staging)
        if out_dir.exists():
            shutil.rmtree(out_dir)
        staging.rename(out_dir)
        db.root = out_dir
        return db
    except Exception as exc:
        shutil.rmtree(staging, ignore_errors=True)
        raise BuildError(stage, exc) from exc


def _clip_index_at(spans: Sequence[tuple[float, float]], t: float) -> int:
    for i, (a, b) in enumerate(spans):
        if a <= t < b:
            return i
    return len(spans) - 1


def _store_frame(src: Path, dst: Path) -> None:
    if src.suffix.lower() in (".jpg", ".jpeg"):
        check_image(src)
        shutil.copyfile(src, dst)
        return
    try:
        with Image.open(src) as img:
            img.convert("RGB").save(dst, "JPEG", quality=95)
    except OSError as exc:
        raise AssetError(f"cannot decode frame {src}: {exc}") from exc


def _dump(obj: Any, **kw: Any) -> str:
    return json.dumps(obj, ensure_ascii=False, **kw)


def save_database(db: VideoDatabase, path: str | Path) -> None:
    """Write the record files. Frame images must already sit under ``path``
    (or are copied from ``db.root`` when it differs)."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    if db.root is not None and Path(db.root).resolve() != path.resolve():
        for rel in db.frames.values():
            (path / rel).parent.mkdir(parents=True, exist_ok=True)
            shutil.copyfile(Path(db.root) / rel, path / rel)
    meta = {
        "format_version": FORMAT_VERSION,
        "video_id": db.meta.video_id,
        "duration": db.meta.duration,
        "fps": db.meta.fps,
        "frame_dir": db.meta.frame_dir,
        "frames": [{"t": t, "path": db.frames[t]} for t in sorted(db.frames)],
    }
    (path / "meta.json").write_text(_dump(meta, indent=2) + "\n", encoding="utf-8")
    (path / "clips.jsonl").write_text("".join(_dump(c.to_dict()) + "\n" for c in db.clips), encoding="utf-8")
    (path / "subjects.json").write_text(
        _dump([s.to_dict() for s in db.subjects], indent=2) + "\n", encoding="utf-8"
    )
    (path / "transcript.jsonl").write_text(
        "".join(_dump(u.to_dict()) + "\n" for u in db.transcript), encoding="utf-8"
    )
    (path / "ocr.jsonl").write_text(
        "".join(_dump({"t": t, "lines": db.ocr[t]}) + "\n" for t in sorted(db.ocr)), encoding="utf-8"
    )


def _jsonl(path: Path) -> list[dict[str, Any]]:
    return [json.loads(line) for line in path.read_text(encoding="utf-8").splitlines() if line.strip()]


def load_database(path: str | Path) -> VideoDatabase:
    path = Path(path)
    try:
        meta_raw = json.loads((path / "meta.json").read_text(encoding="utf-8"))
        if meta_raw.get("format_version") != FORMAT_VERSION:
            raise DatabaseFormatError(f"unsupported database format {meta_raw.get('format_version')!r}")
        meta = VideoMeta(
            video_id=meta_raw["video_id"],
            duration=float(meta_raw["duration"]),
            fps=float(meta_raw.get("fps", 1.0)),
            frame_dir=meta_raw.get("frame_dir", "frames"),
        )
        frames = {float(f["t"]): str(f["path"]) for f in meta_raw.get("frames", [])}
        clips = [ClipRecord.from_dict(d) for d in _jsonl(path / "clips.jsonl")]
        subjects = [SubjectProfile.from_dict(d) for d in json.loads((path / "subjects.json").read_text("utf-8"))]
        transcript = [Utterance.from_dict(d) for d in _jsonl(path / "transcript.jsonl")]
        ocr_path = path / "ocr.jsonl"
        ocr = {float(d["t"]): list(d["lines"]) for d in _jsonl(ocr_path)} if ocr_path.exists() else {}
    except DatabaseFormatError:
        raise
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise DatabaseFormatError(f"cannot load database at {path}: {exc}") from exc
    missing = [rel for rel in frames.values() if not (path / rel).is_file()]
    if missing:
        raise DatabaseFormatError(f"{len(missing)} frame asset(s) missing, e.g. {missing[0]}")
    if [c.start for c in clips] != sorted(c.start for c in clips):
        raise DatabaseFormatError("clip records are not sorted by start time")
    ids = [s.subject_id for s in subjects]
    if len(ids) != len(set(ids)):
        raise DatabaseFormatError("duplicate subject ids")
    return VideoDatabase(meta, clips, subjects, transcript, frames, ocr, root=path)
