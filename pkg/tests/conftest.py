"""Shared pytest plumbing: the acceptance-criteria summary block.

Acceptance tests register one line per criterion; the hook prints them all
after the normal test summary so the pass/fail verdicts are visible even
though pytest captures per-test stdout.
"""

ACCEPTANCE_LINES: list[str] = []


def record_criterion(slug: str, passed: bool, detail: str) -> None:
    verdict = "PASS" if passed else "FAIL"
    ACCEPTANCE_LINES.append(f"[{verdict}] {slug}: {detail}")


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.ensure_newline()
    terminalreporter.section("acceptance criteria")
    for line in ACCEPTANCE_LINES:
        terminalreporter.line(line)
