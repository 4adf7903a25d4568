def pytest_terminal_summary(terminalreporter):
    lines = [
        value
        for outcome in ("passed", "failed")
        for rep in terminalreporter.stats.get(outcome, [])
        if rep.when == "call"
        for key, value in rep.user_properties
        if key == "acceptance"
    ]
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: s.split(":", 1)[0].split("criterion ", 1)[-1]):
            terminalreporter.write_line(line)
