from __future__ import annotations

import time
from pathlib import Path

import pytest

from graphlim.cli import main

ROOT = Path(__file__).resolve().parent.parent
CONFIGS = ROOT / "configs"
DATA = Path(__file__).resolve().parent / "data"


@pytest.fixture(scope="session")
def acceptance_study(tmp_path_factory):
    """The acceptance convergence study run through the CLI with 1 and 8 threads."""
    out = {}
    for threads in (1, 8):
        d = tmp_path_factory.mktemp(f"converge_t{threads}")
        start = time.perf_counter()
        code = main(["converge", "--config", str(CONFIGS / "converge_acceptance.json"),
                     "--out", str(d), "--threads", str(threads)])
        out[threads] = (code, d, time.perf_counter() - start)
    return out


ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[n])
