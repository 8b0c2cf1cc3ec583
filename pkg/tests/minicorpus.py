"""A three-ad miniature corpus with scripted backends, and the pipeline that runs it.

Run as a script to (re)generate ``tests/fixtures/minicorpus`` and its golden
report::

    python tests/minicorpus.py            # write inputs only
    python tests/minicorpus.py --golden   # also run the pipeline and store golden_report.json

Each video gets solid-colour frames, a transcript, a mock script for the
database build (captions and OCR), a mock script for the question session
(controller trajectory plus tool replies) and a question record. A shared
judge script grades the final answers.
"""

from __future__ import annotations

import argparse
import contextlib
import io
import json
import shutil
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from PIL import Image

from adreason.cli import main as cli_main

FIXTURE = Path(__file__).parent / "fixtures" / "minicorpus"
DIM = 64


@dataclass
class Video:
    video_id: str
    duration: int
    palette: list[tuple[int, int, int]]
    captions: list[dict[str, Any]]
    ocr: dict[int, list[str]]
    transcript: list[dict[str, Any]]
    question: str
    golden: str
    dimension: str
    meta: str
    session: list[dict[str, Any]]
    t_max: int = 8
    extra: dict[str, Any] = field(default_factory=dict)


def controller(tool: str, thought: str, **arguments: Any) -> dict[str, Any]:
    return {
        "match": {"role": "controller", "task": "controller"},
        "response": {"text": thought, "tool_call": {"name": tool, "arguments": arguments}},
    }


def answer(task: str, text: str, repeat: bool = False) -> dict[str, Any]:
    rule: dict[str, Any] = {"match": {"task": task}, "response": {"text": text}}
    if repeat:
        rule["repeat"] = True
    return rule


def browse(narrative: str, final: str, **extra: Any) -> dict[str, Any]:
    body = {
        "narrative_reconstruction": narrative,
        "genre": extra.get("genre", "product demo"),
        "inferred_objects": extra.get("inferred_objects", []),
        "explicit_text_found": extra.get("explicit_text_found", []),
        "audio_visual_mismatch": "none",
        "final_answer": final,
    }
    return answer("global_browse", json.dumps(body))


def caption(description: str, subjects: dict[str, dict[str, Any]]) -> dict[str, Any]:
    return {"clip_description": description, "subject_registry": subjects}


VIDEOS = [
    Video(
        video_id="roadster",
        duration=20,
        palette=[(180, 30, 30), (200, 60, 40), (20, 20, 20), (230, 230, 230)],
        captions=[
            caption("A man in a grey suit looks out over a coastal road at dawn.",
                    {"man": {"name": "man in grey suit", "appearance": ["grey suit"], "identity": ["driver"]}}),
            caption("A red Ferrari speeds along the coastal road.",
                    {"car": {"name": "red Ferrari", "appearance": ["red", "convertible"], "identity": ["product"]}}),
            caption("The Ferrari prancing horse logo fills a black screen.", {}),
            caption("The man smiles behind the wheel as the sun rises.",
                    {"man": {"name": "man in grey suit", "appearance": ["sunglasses"], "identity": ["driver"]}}),
        ],
        ocr={11: ["FERRARI"], 12: ["FERRARI", "BORN TO RACE"]},
        transcript=[
            {"start": 1.0, "end": 4.0, "text": "Some roads are made to be driven."},
            {"start": 11.0, "end": 14.0, "text": "Born to race."},
        ],
        question="What specific car brand is advertised?",
        golden="Ferrari",
        dimension="VU",
        meta="A luxury sports car commercial for Ferrari showing a red car on a coastal road.",
        session=[
            browse("A man admires a coastal road, then a red sports car races past before a logo card.", "a sports car"),
            controller("clip_search_tool", "The brand should be on the logo card.", query="brand logo"),
            answer("rewrite", "car logo, brand emblem, black screen"),
            controller("finish", "The logo card reads FERRARI.", answer="A red Ferrari", evidence=[0]),
            answer("refine", "Ferrari, shown as a red sports car."),
        ],
    ),
    Video(
        video_id="fizz",
        duration=15,
        palette=[(20, 80, 200), (30, 120, 220), (240, 240, 240)],
        captions=[
            caption("Friends at a beach party pass around cold blue soda cans.",
                    {"friends": {"name": "group of friends", "appearance": ["swimwear"], "identity": ["consumers"]}}),
            caption("Two strangers share one can and start laughing together.",
                    {"friends": {"name": "group of friends", "appearance": ["sunset"], "identity": ["consumers"]}}),
            caption("A Pepsi can on white with the line Better Together.", {}),
        ],
        ocr={12: ["PEPSI", "BETTER TOGETHER"]},
        transcript=[{"start": 6.0, "end": 9.0, "text": "Some things are better shared."}],
        question="Why does the ad show strangers sharing a drink?",
        golden="To link Pepsi with friendship and social connection.",
        dimension="PS",
        meta="A soft drink ad where sharing a Pepsi turns strangers into friends; the tagline is Better Together.",
        session=[
            browse("People at a beach share soda; the ad ends on a can and a tagline.", "to look refreshing"),
            controller("finish", "Probably about refreshment.", answer="because soda is refreshing"),
            controller("communication_expert_tool", "Ask the expert about the persuasion.",
                       focus="why strangers share a drink", start=0, end=15),
            answer("expert", json.dumps({
                "narrative_reconstruction": "Strangers at a party bond over one shared can.",
                "persuasion_strategy": "Social belonging",
                "symbols": [{"symbol": "shared can", "meaning": "friendship", "grounding": "OCR BETTER TOGETHER"}],
                "direct_answer": "Sharing a Pepsi is shown as the start of friendship.",
            })),
            controller("finish", "The expert ties the can to friendship.",
                       answer="Sharing a Pepsi turns strangers into friends", evidence=[1]),
            answer("refine", "Sharing a Pepsi turns strangers into friends."),
        ],
    ),
    Video(
        video_id="stride",
        duration=15,
        palette=[(40, 160, 60), (60, 180, 80), (10, 10, 10)],
        captions=[
            caption("A runner ties white shoes on a foggy track.",
                    {"runner": {"name": "runner", "appearance": ["white shoes"], "identity": ["athlete"]}}),
            caption("The runner sprints past empty bleachers.",
                    {"runner": {"name": "runner", "appearance": ["green jacket"], "identity": ["athlete"]}}),
            caption("Close-up of the shoe sole as it hits the ground.", {}),
        ],
        ocr={},
        transcript=[{"start": 2.0, "end": 5.0, "text": "Every mile starts with one step."}],
        question="What emotion does the final shot evoke?",
        golden="Determination and quiet pride.",
        dimension="ER",
        meta="A running shoe ad about perseverance; a lone runner trains at dawn.",
        session=[
            browse("A lone runner trains in fog.", "excitement"),
            {**controller("clip_search_tool", "Look at the ending again.", query="final shot"), "repeat": True},
            answer("rewrite", "shoe close-up, running track, final shot", repeat=True),
        ],
    ),
]


# -- writing the fixture ---------------------------------------------------------


def ingest_script(video: Video) -> dict[str, Any]:
    rules = []
    for i, cap in enumerate(video.captions):
        body = {"clip_start_time": 5 * i, **cap}
        rules.append({"match": {"task": "caption", "contains": [f'"clip_start_time": {5 * i},']},
                      "response": {"text": json.dumps(body)}})
    for t, lines in sorted(video.ocr.items()):
        rules.append({"match": {"task": "ocr", "image_contains": f"/{t}.jpg"}, "response": {"text": "\n".join(lines)}})
    rules.append({"match": {"task": "ocr"}, "response": {"text": "NO_TEXT"}})
    return {"mode": "first_match", "dimension": DIM, "embedding_fallback": "hash", "rules": rules}


def session_script(video: Video) -> dict[str, Any]:
    return {"mode": "ordered", "dimension": DIM, "embedding_fallback": "hash", "rules": video.session}


JUDGE_VERDICTS = {
    "roadster": "The response names Ferrari.\nAnswer: 1",
    "fizz": "Gets the friendship link but not the wider social framing.\nAnswer: 0.5",
    "stride": "Wrong emotion.\nAnswer: 0",
}


def write_corpus(root: Path = FIXTURE) -> Path:
    if root.exists():
        shutil.rmtree(root)
    for v in VIDEOS:
        vdir = root / v.video_id
        (vdir / "frames").mkdir(parents=True)
        for t in range(v.duration):
            color = v.palette[min(t // 5, len(v.palette) - 1)]
            shade = tuple(min(255, c + 3 * (t % 5)) for c in color)
            Image.new("RGB", (32, 24), shade).save(vdir / "frames" / f"{t}.jpg", "JPEG", quality=95)
        (vdir / "transcript.jsonl").write_text("".join(json.dumps(u) + "\n" for u in v.transcript))
        _write_json(vdir / "ingest_script.json", ingest_script(v))
        _write_json(vdir / "session_script.json", session_script(v))
        _write_json(vdir / "question.json", {"question": v.question, "golden": v.golden,
                                             "dimension": v.dimension, "meta": v.meta, "t_max": v.t_max})
    return root


def _write_json(path: Path, data: Any) -> None:
    path.write_text(json.dumps(data, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")


# -- running it ----------------------------------------------------------------------


def _cli(*argv: str) -> tuple[int, str]:
    out = io.StringIO()
    with contextlib.redirect_stdout(out):
        code = cli_main([str(a) for a in argv])
    return code, out.getvalue()


def judge_script(responses: dict[str, str]) -> dict[str, Any]:
    rules = [
        {"match": {"task": "judge", "contains": [f"### Response to grade:\n{responses[vid]}\n"]},
         "response": {"text": verdict}}
        for vid, verdict in JUDGE_VERDICTS.items()
    ]
    return {"mode": "first_match", "dimension": DIM, "rules": rules}


def run_pipeline(corpus: Path, work: Path) -> dict[str, Any]:
    """Build, ask and judge every video through the command line; returns the run record."""
    work.mkdir(parents=True, exist_ok=True)
    record: dict[str, Any] = {"sessions": {}}
    cases = []
    responses = {}
    for vdir in sorted(p for p in corpus.iterdir() if p.is_dir()):
        q = json.loads((vdir / "question.json").read_text())
        db = work / vdir.name / "db"
        code, _ = _cli("build-db", vdir, "--transcript", vdir / "transcript.jsonl", "--out", db,
                       "--video-id", vdir.name, "--mock-script", vdir / "ingest_script.json")
        if code != 0:
            raise RuntimeError(f"build-db failed for {vdir.name} (exit {code})")
        trace = work / vdir.name / "trace.jsonl"
        code, _ = _cli("ask", q["question"], "--db", db, "--out", trace, "--t-max", q["t_max"],
                       "--mock-script", vdir / "session_script.json")
        footer = json.loads(trace.read_text().splitlines()[-1])
        response = footer["answer"] if footer["status"] == "verified" else footer["draft"]
        responses[vdir.name] = response
        record["sessions"][vdir.name] = {"exit": code, "status": footer["status"], "steps": footer["steps"],
                                         "response": response}
        cases.append({"id": vdir.name, "meta": q["meta"], "question": q["question"], "golden": q["golden"],
                      "response": response, "dimension": q["dimension"]})
    cases_path = work / "cases.jsonl"
    cases_path.write_text("".join(json.dumps(c) + "\n" for c in cases))
    judge_path = work / "judge_script.json"
    _write_json(judge_path, judge_script(responses))
    report_path = work / "report.json"
    code, table = _cli("eval", cases_path, "--cache", work / "judge_cache", "--out", report_path,
                       "--mock-script", judge_path)
    if code != 0:
        raise RuntimeError(f"eval failed (exit {code})")
    record["report"] = json.loads(report_path.read_text())
    record["table"] = table
    return record


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--golden", action="store_true", help="also run the pipeline and store the golden report")
    args = parser.parse_args()
    root = write_corpus()
    print(f"wrote {root}")
    if args.golden:
        import tempfile

        with tempfile.TemporaryDirectory() as tmp:
            record = run_pipeline(root, Path(tmp))
        record.pop("table")
        _write_json(root.parent / "minicorpus_golden.json", record)
        print(json.dumps(record["report"], indent=2))


if __name__ == "__main__":
    main()
