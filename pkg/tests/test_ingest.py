from __future__ import annotations

import hashlib
import json
import re
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from adreason.backends import ChatResponse, MockBackend, MockRule, MockScript
from adreason.errors import BuildError, DatabaseFormatError, InvalidDuration
from adreason.ingest import (
    ClipRecord,
    IngestConfig,
    SubjectProfile,
    Utterance,
    VideoMeta,
    build_database,
    decode_vector,
    discover_frames,
    encode_vector,
    load_database,
    load_transcript,
    merge_subject_registries,
    parse_ocr_reply,
    profiles_from_registry,
    segment_clips,
    slice_transcript,
)

from helpers import DIM, solid_frame


def caption_responder(request):
    m = re.search(r'"clip_start_time": ([\d.]+)', request.text)
    start = float(m.group(1))
    registry = {"man": {"name": "Man in red", "appearance": ["red jacket"], "identity": ["driver"], "first_seen": start}}
    if start >= 5:
        registry["car"] = {"name": "Red Ferrari", "appearance": ["red"], "identity": ["product"], "first_seen": start + 1}
    body = {"clip_start_time": start, "subject_registry": registry, "clip_description": f"Scene at {start:g} seconds."}
    return ChatResponse(json.dumps(body))


def ocr_responder(request):
    name = Path(request.images[0].path).stem
    return ChatResponse("FERRARI\nNO_TEXT" if name == "7" else "NO_TEXT")


def ingest_backend(extra: list[MockRule] | None = None) -> MockBackend:
    rules = (extra or []) + [
        MockRule(responder=caption_responder, task="caption"),
        MockRule(responder=ocr_responder, task="ocr"),
    ]
    return MockBackend(MockScript(rules, mode="first_match", embedding_fallback="hash", dimension=DIM))


@pytest.fixture
def assets(tmp_path):
    frames = {float(t): solid_frame(tmp_path / "in" / f"{t}.jpg", (10 * t, 0, 0)) for t in range(12)}
    transcript = [Utterance(1.0, 3.0, "meet the driver"), Utterance(6.0, 9.0, "feel the speed"), Utterance(12.0, 12.0, "end")]
    return frames, transcript


# -- segmentation / transcript ------------------------------------------------


def test_segment_clips_tiles_the_timeline():
    assert segment_clips(12.0) == [(0, 5), (5, 10), (10, 12)]
    assert segment_clips(10.0) == [(0, 5), (5, 10)]
    with pytest.raises(InvalidDuration):
        segment_clips(0.0)


@given(st.floats(0.1, 500), st.floats(0.5, 30))
def test_segment_clips_partition(duration, clip_secs):
    spans = segment_clips(duration, clip_secs)
    assert spans[0][0] == 0 and spans[-1][1] == duration
    assert all(a < b for a, b in spans)
    assert all(prev[1] == cur[0] for prev, cur in zip(spans, spans[1:]))


def test_slice_transcript_half_open_and_point_utterances():
    utts = [Utterance(0, 5, "a"), Utterance(5, 6, "b"), Utterance(10, 10, "c")]
    assert [u.text for u in slice_transcript(utts, 0, 5)] == ["a"]
    assert [u.text for u in slice_transcript(utts, 5, 10)] == ["b"]
    assert [u.text for u in slice_transcript(utts, 5, 10, include_end=True)] == ["b", "c"]


def test_load_transcript_jsonl_and_list(tmp_path):
    rows = [{"start": 3, "end": 4, "text": "b"}, {"start": 0, "end": 1, "text": "a"}]
    (tmp_path / "t.jsonl").write_text("\n".join(json.dumps(r) for r in rows))
    (tmp_path / "t.json").write_text(json.dumps(rows))
    for name in ("t.jsonl", "t.json"):
        assert [u.text for u in load_transcript(tmp_path / name)] == ["a", "b"]


def test_discover_frames_numeric_and_sequential_names(tmp_path):
    for t in (0, 1.5, 3):
        solid_frame(tmp_path / "num" / f"{t}.jpg", (0, 0, 0))
    for i in range(3):
        solid_frame(tmp_path / "seq" / f"frame_{i:05d}.jpg", (0, 0, 0))
    assert sorted(discover_frames(tmp_path / "num")) == [0, 1.5, 3]
    assert sorted(discover_frames(tmp_path / "seq", fps=2)) == [0, 0.5, 1.0]


def test_vector_codec_roundtrip():
    v = np.random.default_rng(0).normal(size=17).astype(np.float32)
    np.testing.assert_array_equal(decode_vector(encode_vector(v)), v)


def test_parse_ocr_reply_drops_sentinel():
    assert parse_ocr_reply("NO_TEXT") == []
    assert parse_ocr_reply(" SALE 50% \n\nNO_TEXT\nshop now") == ["SALE 50%", "shop now"]


# -- registries ---------------------------------------------------------------


def test_profiles_from_registry_parses_times_and_clamps():
    reg = {
        "a": {"name": "Chef", "first_seen": "0:07", "appearance": "white hat"},
        "b": {"appearance": ["tall"], "first_seen": 99},
        "c": "not a mapping",
    }
    out = profiles_from_registry(reg, default_first_seen=5, duration=30)
    assert [(p.name, p.first_seen, p.appearance) for p in out] == [("Chef", 7.0, ["white hat"]), ("b", 30.0, ["tall"])]


def profile(name, first_seen, appearance=()):
    return SubjectProfile("x", name, list(appearance), [], first_seen)


def test_merge_exact_unions_and_keeps_earliest():
    merged = merge_subject_registries(
        [[profile("Man in red", 5, ["jacket"])], [profile("man in red", 2, ["jacket", "cap"]), profile("Dog", 3)]]
    )
    assert [(s.subject_id, s.name, s.first_seen, s.appearance) for s in merged] == [
        ("S01", "Man in red", 2, ["jacket", "cap"]),
        ("S02", "Dog", 3, []),
    ]


names = st.sampled_from(["Man", "man", "Dog", "Red car", "red  car", "Logo"])


@given(st.lists(st.lists(st.tuples(names, st.integers(0, 20)), max_size=4), max_size=5), st.randoms())
def test_merge_is_insensitive_to_clip_order(parts, rnd):
    partials = [[profile(n, t) for n, t in part] for part in parts]
    shuffled = list(partials)
    rnd.shuffle(shuffled)
    a = merge_subject_registries(partials)
    b = merge_subject_registries(shuffled)
    assert [(s.subject_id, s.name.casefold(), s.first_seen) for s in a] == [
        (s.subject_id, s.name.casefold(), s.first_seen) for s in b
    ]
    assert len({" ".join(s.name.casefold().split()) for s in a}) == len(a)


def test_merge_llm_mode_and_fallback():
    reply = json.dumps({"subject_registry": {"p": {"name": "Runner", "appearance": ["shoes"], "first_seen": 4}}})
    mock = MockBackend(MockScript([MockRule(ChatResponse(reply), task="merge")]))
    out = merge_subject_registries([[profile("runner A", 4)], [profile("runner B", 6)]], mock, mode="llm", duration=10)
    assert [(s.name, s.appearance) for s in out] == [("Runner", ["shoes"])]
    junk = MockBackend(MockScript([MockRule(ChatResponse("sorry"), task="merge")]))
    out = merge_subject_registries([[profile("A", 1)], [profile("B", 0)]], junk, mode="llm")
    assert [s.name for s in out] == ["B", "A"]


# -- full build -----------------------------------------------------------------


def test_build_database_end_to_end(tmp_path, assets):
    frames, transcript = assets
    meta = VideoMeta("ad1", 12.0)
    db = build_database(meta, frames, transcript, ingest_backend(), tmp_path / "db")
    assert [(c.start, c.end) for c in db.clips] == [(0, 5), (5, 10), (10, 12)]
    assert db.clips[0].transcript == "meet the driver"
    assert db.clips[2].transcript == "end"
    assert db.clips[1].ocr == ["FERRARI"] and db.ocr[7.0] == ["FERRARI"]
    assert "ferrari" in db.clips[1].lexical_document
    assert [(s.subject_id, s.name, s.first_seen) for s in db.subjects] == [("S01", "Man in red", 0), ("S02", "Red Ferrari", 6)]
    assert all(c.embedding is not None and c.embedding.dtype == np.float32 for c in db.clips)
    assert not (tmp_path / ".db.partial").exists()
    again = load_database(tmp_path / "db")
    assert again == db
    assert again.frame_path(3.0).is_file()


def test_build_is_deterministic(tmp_path, assets):
    frames, transcript = assets

    def digest(root: Path) -> dict[str, str]:
        return {str(p.relative_to(root)): hashlib.sha256(p.read_bytes()).hexdigest() for p in sorted(root.rglob("*")) if p.is_file()}

    build_database(VideoMeta("ad1", 12.0), frames, transcript, ingest_backend(), tmp_path / "a")
    first = digest(tmp_path / "a")
    build_database(VideoMeta("ad1", 12.0), frames, transcript, ingest_backend(), tmp_path / "a", IngestConfig(max_workers=3))
    assert digest(tmp_path / "a") == first


def test_caption_repair_prompt_then_success(tmp_path, assets):
    frames, transcript = assets
    rules = [
        MockRule(ChatResponse("I think it shows a car."), task="caption"),
        MockRule(responder=caption_responder, task="caption", repeat=True),
        MockRule(responder=ocr_responder, task="ocr", repeat=True),
    ]
    mock = MockBackend(MockScript(rules, embedding_fallback="hash", dimension=DIM))
    db = build_database(VideoMeta("ad1", 12.0), frames, transcript, mock, tmp_path / "db")
    assert len(db.clips) == 3
    assert "could not be used" in mock.requests[1].text
    assert db.clips[0].caption == "Scene at 0 seconds."


def test_build_failure_is_stage_tagged_and_leaves_nothing(tmp_path, assets):
    frames, transcript = assets
    failing = MockBackend(MockScript([MockRule(error="auth", task="ocr"), *ingest_backend().script.rules],
                                     mode="first_match", embedding_fallback="hash", dimension=DIM))
    with pytest.raises(BuildError, match=r"^\[ocr\] AuthError") as info:
        build_database(VideoMeta("ad1", 12.0), frames, transcript, failing, tmp_path / "db")
    assert info.value.stage == "ocr"
    assert not (tmp_path / "db").exists() and not (tmp_path / ".db.partial").exists()


def test_build_rejects_corrupt_frame(tmp_path, assets):
    frames, transcript = assets
    bad = tmp_path / "bad.jpg"
    bad.write_bytes(b"not an image")
    frames = dict(frames) | {3.0: bad}
    with pytest.raises(BuildError, match=r"^\[frames\] AssetError"):
        build_database(VideoMeta("ad1", 12.0), frames, transcript, ingest_backend(), tmp_path / "db")


def test_load_database_detects_damage(tmp_path, assets):
    frames, transcript = assets
    build_database(VideoMeta("ad1", 12.0), frames, transcript, ingest_backend(), tmp_path / "db")
    (tmp_path / "db" / "frames" / "4.jpg").unlink()
    with pytest.raises(DatabaseFormatError, match="missing"):
        load_database(tmp_path / "db")
    with pytest.raises(DatabaseFormatError):
        load_database(tmp_path / "nowhere")
    meta = json.loads((tmp_path / "db" / "meta.json").read_text())
    meta["format_version"] = 99
    (tmp_path / "db" / "meta.json").write_text(json.dumps(meta))
    with pytest.raises(DatabaseFormatError, match="format"):
        load_database(tmp_path / "db")


def test_clip_record_requires_positive_span():
    with pytest.raises(ValueError):
        ClipRecord(0, 5, 5, "x")
