"""Command line entry point: ``adreason build-db | ask | eval | trace``.

Exit codes: 0 success, 2 input error, 3 session failure, 4 unparseable
judge verdicts.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import Sequence

from adreason.agent import SessionConfig, Trace, action_to_dict, run_session
from adreason.backends import Backend, BackendError, MockBackend, MockScript, OpenAICompatBackend
from adreason.errors import AdreasonError, BuildError, DatabaseFormatError, TraceFormatError, UnparseableVerdict
from adreason.evalkit import JudgeCache, evaluate, load_cases
from adreason.ingest import IngestConfig, VideoMeta, build_database, discover_frames, load_database, load_transcript

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_SESSION = 3
EXIT_VERDICT = 4

log = logging.getLogger("adreason")


class InputError(Exception):
    pass


def make_backend(args: argparse.Namespace) -> Backend:
    if args.backend == "mock":
        if args.mock_script is None:
            return MockBackend(MockScript(embedding_fallback="hash"))
        path = Path(args.mock_script)
        if not path.is_file():
            raise InputError(f"mock script not found: {path}")
        try:
            return MockBackend(MockScript.load(path))
        except (ValueError, KeyError, TypeError) as exc:
            raise InputError(f"bad mock script {path}: {exc}") from exc
    try:
        return OpenAICompatBackend.from_env(args.backend_config)
    except (OSError, ValueError, KeyError) as exc:
        raise InputError(f"cannot configure backend: {exc}") from exc


def session_config(args: argparse.Namespace) -> SessionConfig:
    overrides = {}
    if args.beta is not None:
        overrides["beta"] = args.beta
    if args.t_max is not None:
        overrides["t_max"] = args.t_max
    if args.top_k is not None:
        overrides["clip_search_top_k"] = args.top_k
    try:
        return replace(SessionConfig(), **overrides)
    except ValueError as exc:
        raise InputError(str(exc)) from exc


# -- commands ----------------------------------------------------------------


def cmd_build_db(args: argparse.Namespace) -> int:
    assets = Path(args.assets)
    transcript_path = Path(args.transcript)
    if not assets.is_dir():
        raise InputError(f"assets directory not found: {assets}")
    if not transcript_path.is_file():
        raise InputError(f"transcript file not found: {transcript_path}")
    frame_dir = assets / "frames" if (assets / "frames").is_dir() else assets
    frames = discover_frames(frame_dir, args.fps)
    if not frames:
        raise InputError(f"no frame images in {frame_dir}")
    try:
        transcript = load_transcript(transcript_path)
    except (ValueError, KeyError, TypeError) as exc:
        raise InputError(f"cannot read transcript {transcript_path}: {exc}") from exc
    duration = args.duration if args.duration is not None else max(frames) + 1.0 / args.fps
    meta = VideoMeta(args.video_id or assets.name, duration, args.fps)
    backend = make_backend(args)
    db = build_database(meta, frames, transcript, backend, args.out, IngestConfig(max_workers=args.workers))
    print(f"built {db.root}: {len(db.clips)} clips, {len(db.subjects)} subjects, {len(db.frames)} frames")
    return EXIT_OK


def cmd_ask(args: argparse.Namespace) -> int:
    if args.db is None:
        raise InputError("--db is required")
    db = load_database(args.db)
    config = session_config(args)
    backend = make_backend(args)
    trace_path = Path(args.out or "trace.jsonl")
    clock = (lambda: 0.0) if args.backend == "mock" else None
    kwargs = {"clock": clock} if clock is not None else {}
    result = run_session(db, args.question, backend, config, trace_path=trace_path, **kwargs)
    if result.ok:
        print(result.answer)
        print(f"trace: {trace_path}")
        return EXIT_OK
    print(f"FAILURE after {len(result.trace)} step(s); unverified draft: {result.draft or '(none)'}")
    print(f"trace: {trace_path}")
    return EXIT_SESSION


def cmd_eval(args: argparse.Namespace) -> int:
    path = Path(args.cases)
    if not path.is_file():
        raise InputError(f"cases file not found: {path}")
    try:
        cases = load_cases(path)
    except ValueError as exc:
        raise InputError(str(exc)) from exc
    if not cases:
        raise InputError(f"no cases in {path}")
    cache = JudgeCache(args.cache or path.parent / ".judge_cache")
    backend = make_backend(args)
    try:
        report = evaluate(cases, backend, cache=cache)
    except UnparseableVerdict as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VERDICT
    print(report.render_table())
    if args.out:
        Path(args.out).write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return EXIT_VERDICT if report.failures else EXIT_OK


def format_trace(trace: Trace) -> str:
    h = trace.header
    lines = [f"query: {h.get('query', '')}", f"video: {h.get('video_id', '')}", ""]
    for s in trace.steps:
        label = "preamble" if s.t < 0 else f"step {s.t}"
        lines.append(f"[{label}] {json.dumps(action_to_dict(s.action), ensure_ascii=False, sort_keys=True)}")
        if s.thought:
            lines.append(f"  thought: {s.thought}")
        for i, text in enumerate(s.observation.splitlines()):
            lines.append(("  observation: " if i == 0 else "    ") + text)
        lines.append("")
    f = trace.footer
    if f is None:
        lines.append("(no footer: session did not complete)")
    else:
        lines.append(f"status: {f.get('status')}")
        lines.append(f"answer: {f.get('answer')}")
        if f.get("status") != "verified":
            lines.append(f"draft: {f.get('draft')}")
        for v in f.get("verdicts", []):
            lines.append(f"verdict: {v.get('state')}: {v.get('reason')}")
        calls = ", ".join(f"{k}={v}" for k, v in sorted(f.get("calls", {}).items()))
        lines.append(f"steps: {f.get('steps')}  calls: {calls or '-'}  tokens: {f.get('tokens', 0)}")
    return "\n".join(lines)


def cmd_trace(args: argparse.Namespace) -> int:
    trace = Trace.read(args.file)
    if trace.footer is not None and trace.footer.get("steps") != len(trace):
        raise TraceFormatError(f"footer counts {trace.footer.get('steps')} steps, trace holds {len(trace)}")
    print(format_trace(trace))
    return EXIT_OK


# -- parser ------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--backend", choices=("mock", "openai"), default="mock", help="model backend profile")
    common.add_argument("--mock-script", help="JSON script for the mock backend")
    common.add_argument("--backend-config", help="JSON config for the HTTP backend (models, base URL)")
    common.add_argument("--out", help="output path (database dir, trace file or report file)")
    common.add_argument("-v", "--verbose", action="count", default=0)

    parser = argparse.ArgumentParser(prog="adreason", description="Question answering over advertising videos.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build-db", parents=[common], help="build a video database from frames and a transcript")
    p.add_argument("assets", help="directory of frames (or containing frames/)")
    p.add_argument("--transcript", required=True, help="transcript file (JSON lines of start/end/text)")
    p.add_argument("--video-id")
    p.add_argument("--duration", type=float, help="video length in seconds (default: from frames)")
    p.add_argument("--fps", type=float, default=1.0)
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_build_db)

    p = sub.add_parser("ask", parents=[common], help="answer a question about one video")
    p.add_argument("question")
    p.add_argument("--db", help="database directory")
    p.add_argument("--beta", type=float, help="weight of the lexical score")
    p.add_argument("--t-max", type=int, help="step budget")
    p.add_argument("--top-k", type=int, help="clips per clip search")
    p.set_defaults(func=cmd_ask)

    p = sub.add_parser("eval", parents=[common], help="judge responses and report accuracy")
    p.add_argument("cases", help="cases.jsonl")
    p.add_argument("--cache", help="judge cache directory (default: .judge_cache next to the cases)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("trace", parents=[common], help="print a session trace")
    p.add_argument("file")
    p.set_defaults(func=cmd_trace)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (InputError, DatabaseFormatError, TraceFormatError, BuildError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (AdreasonError, BackendError, ValueError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
