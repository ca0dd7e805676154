"""Shared fixtures and the acceptance-criterion summary hook.

Tests marked ``@pytest.mark.criterion("N", "title")`` get one PASS/FAIL line
each at the end of the run, so the exit gate is readable at a glance.
"""

from __future__ import annotations

from pathlib import Path

import pytest

from vecqa.backends.toy import ToyBackend
from vecqa.synth import make_planted_corpus

REPO = Path(__file__).resolve().parent.parent

_RESULTS: dict[str, tuple[str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line(
        "markers", "criterion(cid, title): acceptance-gate test, one summary "
                   "line per criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    cid, title = marker.args
    if report.when == "call":
        status = "PASS" if report.passed else ("SKIP" if report.skipped else "FAIL")
        _RESULTS[cid] = (title, status)
    elif report.when == "setup" and not report.passed:
        _RESULTS[cid] = (title, "SKIP" if report.skipped else "FAIL")


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _RESULTS:
        return
    terminalreporter.write_sep("-", "acceptance criteria")
    def order(cid: str):
        return (len(cid), cid)
    for cid in sorted(_RESULTS, key=order):
        title, status = _RESULTS[cid]
        terminalreporter.write_line(f"criterion {cid:>2} {status}: {title}")


# -- shared fixtures -----------------------------------------------------------

@pytest.fixture(scope="session")
def toy_backend() -> ToyBackend:
    return ToyBackend(seed=0)


@pytest.fixture(scope="session")
def planted():
    """25-question planted corpus used by retrieval and rerank tests."""
    return make_planted_corpus(seed=0)


@pytest.fixture(scope="session")
def synth50_dir() -> Path:
    """The committed 50-question scripted fixture."""
    path = REPO / "fixtures" / "synth50"
    if not path.exists():
        pytest.skip("fixtures/synth50 missing; run scripts/make_fixture.py")
    return path
