"""
A scripted reasoning session, step by step
==========================================

The controller model is replaced by a script, so the loop's own machinery is
what you see: the up-front global browse, a first answer rejected for naming
nothing observed, a clip search, and a second answer that passes grounding.
"""

import json
import tempfile
from pathlib import Path

from PIL import Image

from adreason.agent import run_session
from adreason.backends import MockBackend, MockScript
from adreason.cli import format_trace
from adreason.ingest import Utterance, VideoMeta, build_database

work = Path(tempfile.mkdtemp(prefix="adreason-session-"))

# -- the video -----------------------------------------------------------------
# Three 5 s clips: a kitchen scene, a sink leak, and a plumber brand card.
captions = [
    "A family cooks dinner in a bright kitchen.",
    "Water sprays from under the sink and floods the floor.",
    "A plumber in blue overalls fixes the pipe; the FlowRight logo appears.",
]
frames = {}
for t in range(15):
    frames[float(t)] = work / "frames" / f"{t}.jpg"
    frames[float(t)].parent.mkdir(parents=True, exist_ok=True)
    Image.new("RGB", (32, 24), (30, 60 + 10 * t, 200)).save(frames[float(t)])
ingest_rules = [
    {"match": {"task": "caption", "contains": [f'"clip_start_time": {5 * i},']},
     "response": {"text": json.dumps({"clip_description": c, "subject_registry": {}})}}
    for i, c in enumerate(captions)
] + [{"match": {"task": "ocr"}, "response": {"text": "NO_TEXT"}}]
ingest = MockBackend(MockScript.from_dict({"mode": "first_match", "embedding_fallback": "hash",
                                           "dimension": 128, "rules": ingest_rules}))
db = build_database(VideoMeta("leak", 15.0), frames, [Utterance(11, 14, "Call FlowRight.")], ingest, work / "db")


# -- the script ----------------------------------------------------------------
def controller(tool, thought, **arguments):
    return {"match": {"role": "controller"},
            "response": {"text": thought, "tool_call": {"name": tool, "arguments": arguments}}}


browse = {
    "narrative_reconstruction": "A home dinner is interrupted by a leak until help arrives.",
    "genre": "service ad", "inferred_objects": [], "explicit_text_found": [],
    "audio_visual_mismatch": "none", "final_answer": "a trustworthy brand",
}
session = MockBackend(MockScript.from_dict({
    "embedding_fallback": "hash", "dimension": 128,
    "rules": [
        {"match": {"task": "global_browse"}, "response": {"text": json.dumps(browse)}},
        controller("finish", "The ad feels reassuring.", answer="the brand is trustworthy"),
        controller("clip_search_tool", "My answer named nothing on screen. Who solves the problem?",
                   query="who fixes the leak"),
        {"match": {"task": "rewrite"}, "response": {"text": "plumber, pipe repair, logo"}},
        controller("finish", "A FlowRight plumber fixes the leak.",
                   answer="A FlowRight plumber fixes the leaking sink", evidence=[1]),
        {"match": {"task": "refine"}, "response": {"text": "A FlowRight plumber fixes the leaking sink."}},
    ],
}))

# -- the run ---------------------------------------------------------------------
# A zero clock makes the trace file byte-for-byte reproducible.
result = run_session(db, "Which company solves the problem in this ad?", session,
                     clock=lambda: 0.0, trace_path=work / "trace.jsonl")
print(format_trace(result.trace))
print()
print(f"final answer: {result.answer}")
print(f"model calls by role: {result.trace.footer['calls']}")
