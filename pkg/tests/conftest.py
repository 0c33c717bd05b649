from __future__ import annotations

import dataclasses
from datetime import datetime, timezone

import pytest

from trafficclean.ingest import AnomalySpec, default_scenario, generate_synthetic
from trafficclean.model import Direction, Observation, SegmentKey
from trafficclean.traveltime import DetectorLayout

SEG = SegmentKey("I-405", Direction.NB)
TEN_DETECTORS = tuple(f"D{i}" for i in range(1, 11))
STUCK_CLUSTER = AnomalySpec(
    "anomalous-cluster",
    "D3",
    fraction=0.038,
    values={"speed": 2.0, "volume": 1.0, "occupancy": 100.0},
    jitter={"speed": 1.0, "volume": 0.5, "occupancy": 1.0},
    share=0.95,
)

# criterion id -> (passed, detail); filled by tests/test_acceptance.py
ACCEPTANCE_RESULTS: dict[str, tuple[bool, str]] = {}


def obs(speed=55.0, volume=10, occupancy=8.0, ts=None, detector="D1", segment=SEG) -> Observation:
    ts = ts or datetime(2015, 5, 6, 12, 0, tzinfo=timezone.utc)
    return Observation(detector, segment, ts, speed, volume, occupancy)


@pytest.fixture(scope="session")
def clean_day():
    return generate_synthetic(default_scenario(seed=1, detectors=TEN_DETECTORS))


@pytest.fixture(scope="session")
def stuck_day():
    return generate_synthetic(default_scenario(seed=2, detectors=TEN_DETECTORS, anomalies=[STUCK_CLUSTER]))


@pytest.fixture(scope="session")
def layout():
    return DetectorLayout(("D1", "D2", "D3", "D4"), (2.5, 3.0, 2.5, 3.0))


@pytest.fixture(scope="session")
def bad_detector_week():
    """Five weekdays, free-flowing afternoons, and one detector that
    intermittently reports 20 mph at low volume during the afternoon."""
    bad = AnomalySpec(
        "point-outlier",
        "D2",
        fraction=0.015,
        values={"speed": 20.0, "volume": 3.0, "occupancy": 4.0},
        jitter={"speed": 2.0},
        hours=((15.5, 18.5),),
    )
    base = default_scenario(seed=5, days=5, anomalies=[bad])
    regimes = list(base.regimes)
    regimes[2] = dataclasses.replace(regimes[2], hours=((7.0, 9.0),))
    return generate_synthetic(dataclasses.replace(base, regimes=tuple(regimes)))


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(ACCEPTANCE_RESULTS, key=lambda s: int(s.split()[0][2:])):
        ok, detail = ACCEPTANCE_RESULTS[name]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
