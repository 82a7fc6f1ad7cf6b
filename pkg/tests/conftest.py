"""Prints one PASS/FAIL line per acceptance criterion at the end of the run."""


def pytest_terminal_summary(terminalreporter):
    rows = []
    for outcome in ("passed", "failed"):
        for rep in terminalreporter.stats.get(outcome, []):
            props = dict(getattr(rep, "user_properties", []))
            if rep.when == "call" and "ac" in props:
                rows.append((props["ac"], outcome, props))
    if not rows:
        return
    terminalreporter.section("acceptance criteria")
    for ac, outcome, props in sorted(rows, key=lambda r: int(r[0].split("-")[1])):
        verdict = "PASS" if outcome == "passed" else "FAIL"
        terminalreporter.write_line(f"{ac} {verdict} ({props.get('seconds', 0):.2f} s) {props.get('detail', '')}")
