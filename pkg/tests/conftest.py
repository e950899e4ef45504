"""Shared fixtures plus the acceptance-criteria result board.

Acceptance tests record one line per criterion; the lines are printed in the
terminal summary so the pass/fail status of every criterion is visible even
when the rest of the run is green.
"""

import numpy as np
import pytest

import magsat as ms

_ACCEPTANCE_LINES: list[str] = []


def record_criterion(number: str, name: str, ok: bool, detail: str = "") -> None:
    status = "PASS" if ok else "FAIL"
    suffix = f" ({detail})" if detail else ""
    _ACCEPTANCE_LINES.append(f"[criterion {number}] {name}: {status}{suffix}")


@pytest.fixture
def recorder():
    return record_criterion


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if _ACCEPTANCE_LINES:
        terminalreporter.write_sep("-", "acceptance criteria")
        for line in sorted(_ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def sso_elements() -> ms.OrbitalElements:
    return ms.OrbitalElements(
        a_km=6691.6,
        e=0.046440,
        inclination=np.radians(96.7),
        raan=np.radians(100.90),
        argp=np.radians(119.70),
        mean_anomaly=np.radians(240.49),
    )


@pytest.fixture(scope="session")
def table_inertia() -> ms.InertiaTensor:
    return ms.InertiaTensor(ix=0.020, iy=0.030, iz=0.040)
