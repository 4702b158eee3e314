"""Shared fixtures and the acceptance summary printed at the end of a session."""

import pytest

_ACCEPTANCE: dict[int, tuple[str, str]] = {}


class AcceptanceReport:
    """Collects one pass/fail line per acceptance criterion."""

    def record(self, number: int, passed: bool, detail: str, label: str | None = None) -> None:
        label = label or ("PASS" if passed else "FAIL")
        _ACCEPTANCE[number] = (label, detail)
        print(f"criterion {number}: {label}  {detail}")


@pytest.fixture(scope="session")
def acceptance():
    return AcceptanceReport()


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        label, detail = _ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number}: {label}  {detail}")
