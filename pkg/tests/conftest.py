import sys


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for n in sorted(mod.RESULTS):
        title, checks = mod.RESULTS[n]
        verdict = "PASS" if all(c.ok for c in checks) else "FAIL"
        tr.write_line(f"{verdict} criterion {n}: {title}")
        for c in checks:
            tr.write_line(f"    {'ok    ' if c.ok else 'FAILED'} {c.name}  {c.detail}")
