"""Shared test plumbing: the acceptance result registry.

Acceptance tests record one verdict per numbered criterion through the
``acceptance`` fixture; a terminal-summary hook prints one PASS/FAIL line per
criterion at the end of every pytest run so the verdicts are visible without
-s.  A criterion whose test never reached its record call is reported as
failed (not run).
"""

from __future__ import annotations

import pytest

CRITERIA = {
    1: "explicit and recursive terminal wealth agree (1000 pairs, 1e-12 rel, <5s)",
    2: "friction quadratic counterexample values exact to 1e-12",
    3: "indirect-utility kink: value ln 2, one-sided slopes 0.5 / 0.625",
    4: "enumeration and history recursion bit-identical (<30s)",
    5: "grid DP certified against closed form and oracle (<60s)",
    6: "innovation / envelope / cap bound chain on 1e5 random triples",
    7: "innovation lower bounds on bounded trade boxes, m in {1,5,10}",
    8: "zero cash-axis monotonicity violations in every value layer",
    9: "depth-profile classifier on decreasing vs non-decreasing instances",
    10: "zero-price instance: root value u(z) and all-zero strategy, exact",
    11: "Monte Carlo within 3 stderr of exact for >= 99 of 100 seeds",
}

_RESULTS: dict[int, tuple[bool, str]] = {}


class AcceptanceRecorder:
    """Record-then-assert helper so failed checks still reach the summary."""

    def check(self, criterion: int, passed, detail: str = "") -> None:
        ok = bool(passed)
        prev_ok, prev_detail = _RESULTS.get(criterion, (True, ""))
        _RESULTS[criterion] = (prev_ok and ok, prev_detail if not prev_ok else detail)
        assert ok, f"criterion {criterion}: {detail or CRITERIA[criterion]}"


@pytest.fixture
def acceptance() -> AcceptanceRecorder:
    return AcceptanceRecorder()


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _RESULTS:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for num in sorted(CRITERIA):
        if num not in _RESULTS:
            tr.write_line(f"[FAIL] criterion {num:2d}: {CRITERIA[num]} (not run)")
            continue
        ok, detail = _RESULTS[num]
        tag = "PASS" if ok else "FAIL"
        suffix = f" [{detail}]" if detail else ""
        tr.write_line(f"[{tag}] criterion {num:2d}: {CRITERIA[num]}{suffix}")
