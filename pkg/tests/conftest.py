"""Shared fixtures and the acceptance-criteria reporting hook.

Acceptance tests register one line per criterion; the summary block at the
end of the pytest run prints PASS/FAIL with the measured values so the
whole gate is readable at a glance.
"""

import numpy as np
import pytest

ACCEPTANCE_RESULTS = {}


def record_criterion(num: int, description: str, passed: bool, detail: str = "") -> None:
    ACCEPTANCE_RESULTS[num] = (description, bool(passed), detail)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE_RESULTS:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for num in sorted(ACCEPTANCE_RESULTS):
        desc, ok, detail = ACCEPTANCE_RESULTS[num]
        status = "PASS" if ok else "FAIL"
        line = f"criterion {num:>2}: {status}  {desc}"
        if detail:
            line += f"  [{detail}]"
        tr.write_line(line, green=ok, red=not ok)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
