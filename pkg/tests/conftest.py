from pathlib import Path

import pytest

CONFIG_DIR = Path(__file__).resolve().parents[1] / "configs"

_ACCEPTANCE: list[tuple[str, bool, str]] = []


@pytest.fixture
def configs() -> Path:
    return CONFIG_DIR


@pytest.fixture
def record_criterion():
    """Record one acceptance line: ``record_criterion(label, passed, detail)``."""

    def rec(label: str, passed: bool, detail: str) -> bool:
        _ACCEPTANCE.append((label, bool(passed), detail))
        return passed

    return rec


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for label, ok, detail in _ACCEPTANCE:
        tr.write_line(f"{'PASS' if ok else 'FAIL'}  {label}: {detail}")
