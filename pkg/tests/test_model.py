from datetime import datetime, timedelta, timezone

import pytest
from hypothesis import given
from hypothesis import strategies as st

from trafficclean.model import (
    MalformedRecord,
    Observation,
    TemporalGroup,
    observation_to_row,
    parse_timestamp,
    temporal_group_of,
    validate_observation,
)
from tests.conftest import SEG


def raw(**overrides):
    row = {
        "detector_id": "1001",
        "highway": "I-5",
        "direction": "NB",
        "timestamp": "2015-05-06T14:00:20Z",
        "speed": "55",
        "volume": "10",
        "occupancy": "8",
    }
    row.update(overrides)
    return row


def test_valid_record():
    o = validate_observation(raw())
    assert (o.speed, o.volume, o.occupancy) == (55.0, 10, 8.0)
    assert o.timestamp == datetime(2015, 5, 6, 14, 0, 20, tzinfo=timezone.utc)
    assert o.complete


def test_occupancy_out_of_range_is_rejected():
    with pytest.raises(MalformedRecord, match=r"occupancy out of \[0,100\]"):
        validate_observation(raw(occupancy="130"))


def test_missing_speed_is_kept_as_missing():
    o = validate_observation(raw(speed="", volume="5", occupancy="4"))
    assert o.speed is None and o.volume == 5 and not o.complete


@pytest.mark.parametrize(
    "overrides, reason",
    [
        ({"volume": "-1"}, "volume negative"),
        ({"volume": "2.5"}, "volume not an integer"),
        ({"speed": "-3"}, "speed negative"),
        ({"speed": "fast"}, "unparseable speed"),
        ({"timestamp": "yesterday"}, "unparseable timestamp"),
        ({"direction": "EB"}, "direction"),
        ({"detector_id": ""}, "detector_id"),
    ],
)
def test_rejections(overrides, reason):
    with pytest.raises(MalformedRecord, match=reason):
        validate_observation(raw(**overrides))


def test_speed_zero_is_a_reading_not_missing():
    assert validate_observation(raw(speed="0")).speed == 0.0


def test_naive_timestamp_is_utc():
    assert parse_timestamp("2015-05-06 14:00:00") == datetime(2015, 5, 6, 14, tzinfo=timezone.utc)


@pytest.mark.parametrize(
    "day, group",
    [
        (datetime(2015, 5, 6, 12), TemporalGroup.TUE_WED_THU),
        (datetime(2015, 5, 4, 12), TemporalGroup.MON_FRI),
        (datetime(2015, 5, 9, 12), TemporalGroup.SAT_SUN),
        (datetime(2015, 5, 8, 12), TemporalGroup.MON_FRI),
        (datetime(2015, 5, 10, 12), TemporalGroup.SAT_SUN),
    ],
)
def test_temporal_group_of(day, group):
    assert temporal_group_of(day.replace(tzinfo=timezone.utc)) is group


def test_group_uses_local_day():
    # 03:00 UTC Saturday is still Friday evening in Portland
    ts = datetime(2015, 5, 9, 3, 0, tzinfo=timezone.utc)
    assert temporal_group_of(ts) is TemporalGroup.MON_FRI
    assert temporal_group_of(ts, "UTC") is TemporalGroup.SAT_SUN


@given(st.datetimes(min_value=datetime(2000, 1, 1), max_value=datetime(2040, 1, 1)))
def test_day_groups_partition_time(naive):
    ts = naive.replace(tzinfo=timezone.utc)
    group = temporal_group_of(ts)
    assert group is not TemporalGroup.ALL
    hits = [g for g in (TemporalGroup.MON_FRI, TemporalGroup.TUE_WED_THU, TemporalGroup.SAT_SUN) if g is group]
    assert len(hits) == 1


optional_real = st.one_of(st.none(), st.floats(0, 200, allow_nan=False))


@given(
    speed=optional_real,
    volume=st.one_of(st.none(), st.integers(0, 40)),
    occupancy=st.one_of(st.none(), st.floats(0, 100, allow_nan=False)),
    seconds=st.integers(0, 10**8),
)
def test_row_round_trip(speed, volume, occupancy, seconds):
    ts = datetime(2012, 1, 1, tzinfo=timezone.utc) + timedelta(seconds=seconds)
    o = Observation("X9", SEG, ts, speed, volume, occupancy)
    assert validate_observation(observation_to_row(o)) == o
