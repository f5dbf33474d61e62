import sys
from pathlib import Path

from hypothesis import HealthCheck, settings

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile(
    "repo", deadline=None, derandomize=True, max_examples=150,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.data_too_large],
)
settings.load_profile("repo")


def pytest_terminal_summary(terminalreporter):
    """One PASS/FAIL line per acceptance criterion."""
    lines = []
    for outcome in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(outcome, []):
            nodeid = getattr(rep, "nodeid", "")
            if "test_acceptance.py::test_criterion_" not in nodeid or getattr(rep, "when", "call") != "call":
                continue
            num = int(nodeid.split("test_criterion_")[1].split("_")[0])
            detail = dict(getattr(rep, "user_properties", [])).get("detail", "")
            lines.append((num, "PASS" if outcome == "passed" else "FAIL", detail))
    if lines:
        terminalreporter.section("acceptance criteria")
        for num, verdict, detail in sorted(lines):
            terminalreporter.write_line(f"criterion {num:2d}: {verdict}  {detail}")
