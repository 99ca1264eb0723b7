import re
import sys
from pathlib import Path

import pytest

# Make the shared oracle helpers importable from every test module.
sys.path.insert(0, str(Path(__file__).parent))

# Acceptance summary: tests named test_criterion_NN_* report one
# aggregated PASS/FAIL line per criterion number at the end of the run.
_CRITERION_RE = re.compile(r"test_criterion_(\d+)")
_criterion_results = {}


def _criterion_number(item):
    m = _CRITERION_RE.match(item.name)
    return int(m.group(1)) if m else None


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    out = yield
    rep = out.get_result()
    num = _criterion_number(item)
    if num is None:
        return
    doc = (item.function.__doc__ or "").strip().splitlines()
    desc = doc[0].strip() if doc else item.name
    entry = _criterion_results.setdefault(num, {"desc": desc, "outcomes": []})
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        entry["outcomes"].append(rep.outcome)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _criterion_results:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(_criterion_results):
        entry = _criterion_results[num]
        outcomes = entry["outcomes"]
        if not outcomes or any(o == "failed" for o in outcomes):
            status = "FAIL"
        elif all(o == "passed" for o in outcomes):
            status = "PASS"
        else:
            status = "SKIP"
        terminalreporter.write_line(
            f"CRITERION {num:02d}: {status} - {entry['desc']}")
