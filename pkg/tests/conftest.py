CRITERIA: list[str] = []


def report_criterion(number, passed, detail, seconds):
    status = "SKIP" if passed is None else ("PASS" if passed else "FAIL")
    line = f"criterion {number:>2}: {status}  {detail}  [{seconds:.1f}s]"
    CRITERIA.append(line)
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in sorted(CRITERIA, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
