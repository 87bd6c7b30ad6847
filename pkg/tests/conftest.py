"""Shared test plumbing: collects acceptance-criterion verdicts so the run
summary ends with one pass/fail line per criterion."""

CRITERIA = []


def record_criterion(num, text, ok):
    CRITERIA.append((num, text, bool(ok)))
    return bool(ok)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for num, text, ok in sorted(CRITERIA):
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] criterion {num}: {text}")
