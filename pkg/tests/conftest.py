import sys
from pathlib import Path

import numpy as np
import pytest
import torch

sys.path.insert(0, str(Path(__file__).parent))
torch.set_num_threads(1)

_criteria = {}


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    number, title = marker.args
    failed = report.failed or (report.when == "setup" and report.skipped)
    if report.when == "call" or failed:
        measured = [str(v) for k, v in item.user_properties if k == "measured"]
        prev = _criteria.get(number, (title, [], []))
        _criteria[number] = (
            title,
            prev[1] + [(item.name, "FAIL" if failed else "PASS")],
            prev[2] + measured,
        )


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        title, results, measured = _criteria[number]
        verdict = "PASS" if all(r == "PASS" for _, r in results) else "FAIL"
        failing = [name for name, r in results if r != "PASS"]
        detail = f"  [{'; '.join(measured)}]" if measured else ""
        if failing:
            detail += f"  failing: {', '.join(failing)}"
        terminalreporter.write_line(f"criterion {number}: {verdict}  {title}{detail}")
