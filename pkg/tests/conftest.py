import acceptance_registry


def pytest_terminal_summary(terminalreporter):
    lines = acceptance_registry.lines()
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for line in lines:
        terminalreporter.write_line(line)
