from __future__ import annotations

from collections import defaultdict

# criterion number -> list of (part, passed, detail); filled by the acceptance tests
ACCEPTANCE: dict[int, list[tuple[str, bool, str]]] = defaultdict(list)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        parts = ACCEPTANCE[number]
        verdict = "PASS" if all(ok for _, ok, _ in parts) else "FAIL"
        detail = "; ".join(f"{part}: {'ok' if ok else 'FAIL'} ({info})" for part, ok, info in parts)
        terminalreporter.write_line(f"criterion {number} {verdict} | {detail}")
