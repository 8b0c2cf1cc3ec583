"""Collects acceptance verdict lines and checks the whole-suite time budget."""

from __future__ import annotations

import time

import pytest

SUITE_BUDGET_S = 60.0
VERDICTS: list[str] = []
_t0 = 0.0


def pytest_sessionstart(session: pytest.Session) -> None:
    global _t0
    _t0 = time.perf_counter()


def _full_run(config: pytest.Config) -> bool:
    return not (config.option.keyword or config.option.markexpr or config.option.lf)


def pytest_sessionfinish(session: pytest.Session, exitstatus: int) -> None:
    elapsed = time.perf_counter() - _t0
    if VERDICTS and _full_run(session.config):
        ok = elapsed < SUITE_BUDGET_S
        VERDICTS.append(f"{'PASS' if ok else 'FAIL'}  full suite wall time {elapsed:.1f} s (< {SUITE_BUDGET_S:g} s)")
        if not ok and exitstatus == 0:
            session.exitstatus = pytest.ExitCode.TESTS_FAILED


def pytest_terminal_summary(terminalreporter, exitstatus, config) -> None:
    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in VERDICTS:
            terminalreporter.write_line(line)
