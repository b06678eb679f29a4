"""Shared fixtures: the acceptance verdict recorder and its summary block."""

import pytest

_VERDICTS = []


@pytest.fixture(scope="session")
def verdict():
    """Record one `criterion N: PASS/FAIL` line and return the outcome so
    the caller can assert on it."""

    def record(num: int, ok: bool, detail: str, status: str = "") -> bool:
        tag = status or ("PASS" if ok else "FAIL")
        line = f"criterion {num:2d}: {tag}  {detail}"
        _VERDICTS.append((num, line))
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    terminalreporter.write_sep("-", "acceptance criteria")
    for _, line in sorted(_VERDICTS):
        terminalreporter.write_line(line)
