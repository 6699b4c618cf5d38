import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

ACCEPTANCE: dict[str, tuple[bool, str]] = {}


@pytest.fixture
def criterion(request):
    """Record one acceptance criterion's outcome for the terminal summary."""

    class Recorder:
        def __init__(self):
            self.name = None
            self.detail = ""

        def __call__(self, name, detail=""):
            self.name, self.detail = name, detail

    rec = Recorder()
    yield rec
    if rec.name is not None:
        failed = getattr(request.node, "_acceptance_failed", True)
        ACCEPTANCE[rec.name] = (not failed, rec.detail)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    if report.when == "call":
        item._acceptance_failed = report.failed


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[name]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}  {detail}")
