"""Shared pytest hooks.

The acceptance suite registers one result per criterion; after the normal
test table we print them as a compact pass/fail scoreboard so a full run
ends with one line per criterion.
"""

ACCEPTANCE_RESULTS = {}


def record_criterion(num, title, passed, detail=""):
    ACCEPTANCE_RESULTS[num] = (title, passed, detail)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(ACCEPTANCE_RESULTS):
        title, passed, detail = ACCEPTANCE_RESULTS[num]
        status = "pass" if passed else "FAIL"
        line = f"criterion {num:2d} {status}  {title}"
        if detail:
            line += f"  [{detail}]"
        terminalreporter.write_line(line)
