import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

# (criterion, passed, detail) lines from test_acceptance, echoed after the run
ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, passed, detail in ACCEPTANCE:
        tag = "SKIP" if passed is None else "PASS" if passed else "FAIL"
        terminalreporter.write_line(f"{tag}  {name}: {detail}")
