import pytest

from msmtrunc.core import ingest_long_format

D1_TEXT = """id,from,to,entry,exit
A,0,1,0,1
A,1,2,1,4
B,0,2,0,2
C,0,cens,0,3
"""

# A enters at 1.5, already in state 1
D1_TRUNC_TEXT = """id,from,to,entry,exit
A,1,2,1.5,4
B,0,2,0,2
C,0,cens,0,3
"""


@pytest.fixture
def d1():
    return ingest_long_format(D1_TEXT)


@pytest.fixture
def d1_trunc():
    return ingest_long_format(D1_TRUNC_TEXT)


# acceptance report ---------------------------------------------------------------------

ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k}: {'PASS' if ok else 'FAIL'}  {detail}")
