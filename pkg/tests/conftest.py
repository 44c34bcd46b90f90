import contextlib

import pytest

_ACCEPTANCE_KEY = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_ACCEPTANCE_KEY] = []


class CriterionResult:
    """Mutable slot the test body fills in before leaving the scope."""

    def __init__(self):
        self.ok = False
        self.detail = ""


@pytest.fixture
def criterion(request):
    """Scope that records one acceptance line and enforces the verdict.

    Usage::

        with criterion(2, "skill scores") as c:
            ...
            c.ok = <bool>
            c.detail = "tss=..."
    """
    lines = request.config.stash[_ACCEPTANCE_KEY]

    @contextlib.contextmanager
    def scope(number: int, name: str):
        result = CriterionResult()
        try:
            yield result
        except BaseException as exc:
            lines.append(f"criterion {number} ({name}): FAIL [{type(exc).__name__}: {exc}]")
            raise
        status = "PASS" if result.ok else "FAIL"
        suffix = f" -- {result.detail}" if result.detail else ""
        lines.append(f"criterion {number} ({name}): {status}{suffix}")
        assert result.ok, f"criterion {number} ({name}) failed: {result.detail}"

    return scope


def pytest_terminal_summary(terminalreporter):
    lines = terminalreporter.config.stash.get(_ACCEPTANCE_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
