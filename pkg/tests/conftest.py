"""Shared pytest wiring.

The hook below prints one live pass/fail line per acceptance criterion so a
full-suite run shows the acceptance verdicts at a glance.
"""

from __future__ import annotations


def pytest_runtest_logreport(report):
    if report.when != "call" or "test_acceptance" not in report.nodeid:
        return
    name = report.nodeid.split("::")[-1]
    verdict = "PASS" if report.passed else "FAIL"
    print(f"[acceptance] {name}: {verdict}", flush=True)
