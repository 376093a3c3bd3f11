"""Shared pytest plumbing: acceptance criteria summary lines."""

_results: dict[int, tuple[bool, str]] = {}


def record_criterion(num: int, passed: bool, detail: str) -> None:
    _results[num] = (passed, detail)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _results:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(_results):
        passed, detail = _results[num]
        word = "PASS" if passed else "FAIL"
        terminalreporter.write_line(f"CRITERION {num:2d}: {word} - {detail}")
