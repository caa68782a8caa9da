import re

import pytest

# criterion id -> list of (ok, detail), filled by tests/test_acceptance.py
ACCEPTANCE = {}


@pytest.fixture
def accept():
    def record(criterion: str, ok: bool, detail: str) -> bool:
        ACCEPTANCE.setdefault(criterion, []).append((bool(ok), detail))
        return bool(ok)
    return record


def _key(c):
    m = re.match(r"AC(\d+)", c)
    return (int(m.group(1)) if m else 99, c)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for c in sorted(ACCEPTANCE, key=_key):
        parts = ACCEPTANCE[c]
        ok = all(p for p, _ in parts)
        shown = [d if p else f"NOT MET {d}" for p, d in parts]
        tr.write_line(f"{'PASS' if ok else 'FAIL'} {c}: {'; '.join(shown)}")
