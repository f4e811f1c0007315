import contextlib
import time

import pytest

from lexmtl import tensor as T

_ACCEPTANCE: dict[int, tuple] = {}


@pytest.fixture(autouse=True)
def fresh_tape():
    """Forward passes outside no_grad() stay on the tape until backward; drop them per test."""
    T.get_tape().clear()
    yield
    T.get_tape().clear()


class _Record:
    def __init__(self):
        self.details: list[str] = []

    def note(self, text: str) -> None:
        self.details.append(text)
        print(text, flush=True)


@pytest.fixture
def criterion():
    """``with criterion(n, title) as rec:`` records PASS when the block raises nothing."""
    @contextlib.contextmanager
    def run(number: int, title: str):
        rec = _Record()
        start = time.perf_counter()
        ok = False
        try:
            yield rec
            ok = True
        finally:
            _ACCEPTANCE[number] = (title, ok, time.perf_counter() - start, rec.details)
    return run


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        title, ok, seconds, details = _ACCEPTANCE[number]
        status = "PASS" if ok else "FAIL"
        summary = details[-1] if details else ""
        terminalreporter.write_line(f"criterion {number} {status}: {title} ({seconds:.0f}s) {summary}")
