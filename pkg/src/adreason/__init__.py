"""Agentic question answering over advertising videos.

Offline, :func:`~adreason.ingest.build_database` turns frames and a transcript
into a clip database with a subject registry. Online,
:func:`~adreason.agent.run_session` answers one question with a tool-using
controller loop and grounding verification. :mod:`adreason.evalkit` scores
answers with a judge model.
"""

from adreason.agent import SessionConfig, SessionResult, Trace, run_session
from adreason.backends import Backend, MockBackend, MockScript, OpenAICompatBackend
from adreason.evalkit import JudgeCase, Report, aggregate, evaluate, judge
from adreason.ingest import IngestConfig, VideoDatabase, VideoMeta, build_database, load_database

__all__ = [
    "Backend",
    "IngestConfig",
    "JudgeCase",
    "MockBackend",
    "MockScript",
    "OpenAICompatBackend",
    "Report",
    "SessionConfig",
    "SessionResult",
    "Trace",
    "VideoDatabase",
    "VideoMeta",
    "aggregate",
    "build_database",
    "evaluate",
    "judge",
    "load_database",
    "run_session",
]
__version__ = "0.1.0"
