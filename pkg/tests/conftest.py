import io
from functools import lru_cache

import pytest

from multicorrect.phonetics import default_lexicon, load_lexicon


def brute_edit_distance(a, b):
    """Edit distance straight from the recursive definition."""
    a, b = tuple(a), tuple(b)

    @lru_cache(maxsize=None)
    def go(i, j):
        if i == len(a):
            return len(b) - j
        if j == len(b):
            return len(a) - i
        return min(
            go(i + 1, j) + 1,
            go(i, j + 1) + 1,
            go(i + 1, j + 1) + (a[i] != b[j]),
        )

    return go(0, 0)


@pytest.fixture(scope="session")
def lex():
    return default_lexicon()


@pytest.fixture
def small_lex():
    return load_lexicon(io.StringIO("cat\tK AE T\nhat\tHH AE T\ndog\tD AO G\n"))


ACCEPTANCE = {}


def record_criterion(number, ok, detail):
    """Store one acceptance verdict; printed in the terminal summary."""
    ACCEPTANCE[number] = (bool(ok), detail)
    print(f"criterion {number}: {'PASS' if ok else 'FAIL'} {detail}")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
