import os
import tempfile
from pathlib import Path

import pytest

_VERDICTS: list[str] = []


@pytest.fixture(scope="session")
def verdict():
    """Record one PASS/FAIL line for an acceptance criterion."""

    def record(number: int, name: str, ok: bool, detail: str = "") -> bool:
        _VERDICTS.append(f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {name}" + (f"  ({detail})" if detail else ""))
        print(_VERDICTS[-1])
        return ok

    return record


@pytest.fixture(scope="session")
def artifact_dir() -> Path:
    """Where acceptance runs keep their run directories and reports (``PGDK_ACCEPTANCE_DIR``)."""
    root = Path(os.environ.get("PGDK_ACCEPTANCE_DIR") or Path(tempfile.gettempdir()) / "pgdk-acceptance")
    root.mkdir(parents=True, exist_ok=True)
    return root


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_VERDICTS, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)
