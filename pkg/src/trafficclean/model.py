"""Domain types shared by every stage of the cleaning pipeline."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from datetime import datetime, timezone
from typing import Mapping
from zoneinfo import ZoneInfo

FEATURES: tuple[str, str, str] = ("speed", "volume", "occupancy")
CADENCE_SECONDS = 20
DEFAULT_TIMEZONE = "America/Los_Angeles"


class MalformedRecord(ValueError):
    """A raw record that cannot enter the pipeline."""

    def __init__(self, reason: str):
        super().__init__(reason)
        self.reason = reason


class Direction(str, enum.Enum):
    NB = "NB"
    SB = "SB"


class TemporalGroup(str, enum.Enum):
    ALL = "All"
    MON_FRI = "MonFri"
    TUE_WED_THU = "TueWedThu"
    SAT_SUN = "SatSun"

    @classmethod
    def parse(cls, text: str) -> "TemporalGroup":
        for member in cls:
            if member.value.lower() == text.strip().lower():
                return member
        raise ValueError(f"unknown day group {text!r}")


# Monday == 0
_WEEKDAY_GROUP = {
    0: TemporalGroup.MON_FRI,
    1: TemporalGroup.TUE_WED_THU,
    2: TemporalGroup.TUE_WED_THU,
    3: TemporalGroup.TUE_WED_THU,
    4: TemporalGroup.MON_FRI,
    5: TemporalGroup.SAT_SUN,
    6: TemporalGroup.SAT_SUN,
}


@dataclass(frozen=True)
class SegmentKey:
    highway: str
    direction: Direction

    def __post_init__(self):
        if not isinstance(self.direction, Direction):
            try:
                object.__setattr__(self, "direction", Direction(self.direction))
            except ValueError:
                raise MalformedRecord(f"direction must be NB or SB, got {self.direction!r}") from None
        if not self.highway:
            raise MalformedRecord("highway is empty")

    def __str__(self) -> str:
        return f"{self.highway} {self.direction.value}"


@dataclass(frozen=True)
class Observation:
    """One 20-second detector reading.

    Missing readings are ``None``; a speed of 0 is a reading, not a gap.
    Occupancy is a percentage in [0, 100].
    """

    detector_id: str
    segment: SegmentKey
    timestamp: datetime
    speed: float | None
    volume: int | None
    occupancy: float | None

    def __post_init__(self):
        if self.timestamp.tzinfo is None:
            raise MalformedRecord("timestamp has no timezone")
        if self.speed is not None and not (math.isfinite(self.speed) and self.speed >= 0):
            raise MalformedRecord("speed negative or not finite")
        if self.volume is not None and (isinstance(self.volume, bool) or not isinstance(self.volume, int)):
            raise MalformedRecord("volume not an integer")
        if self.volume is not None and self.volume < 0:
            raise MalformedRecord("volume negative")
        if self.occupancy is not None and not (0.0 <= self.occupancy <= 100.0):
            raise MalformedRecord("occupancy out of [0,100]")

    @property
    def features(self) -> tuple[float, float, float]:
        """Raw (speed, volume, occupancy) with NaN for missing values."""
        return (
            math.nan if self.speed is None else float(self.speed),
            math.nan if self.volume is None else float(self.volume),
            math.nan if self.occupancy is None else float(self.occupancy),
        )

    @property
    def complete(self) -> bool:
        return self.speed is not None and self.volume is not None and self.occupancy is not None


def parse_timestamp(text: str) -> datetime:
    """Parse ISO-8601; naive values are taken as UTC. Result is in UTC."""
    text = text.strip()
    if text.endswith(("Z", "z")):
        text = text[:-1] + "+00:00"
    try:
        ts = datetime.fromisoformat(text)
    except ValueError:
        raise MalformedRecord(f"unparseable timestamp {text!r}") from None
    if ts.tzinfo is None:
        ts = ts.replace(tzinfo=timezone.utc)
    return ts.astimezone(timezone.utc)


def format_timestamp(ts: datetime) -> str:
    return ts.astimezone(timezone.utc).isoformat().replace("+00:00", "Z")


def _parse_real(value: str, name: str) -> float | None:
    if value is None or value.strip() == "":
        return None
    try:
        x = float(value)
    except ValueError:
        raise MalformedRecord(f"unparseable {name} {value!r}") from None
    if not math.isfinite(x):
        raise MalformedRecord(f"unparseable {name} {value!r}")
    return x


def validate_observation(raw: Mapping[str, str | None]) -> Observation:
    """Build an Observation from one parsed CSV row.

    Raises MalformedRecord with a short reason when the row is unusable.
    Empty cells become missing values rather than rejections.
    """
    detector_id = (raw.get("detector_id") or "").strip()
    if not detector_id:
        raise MalformedRecord("missing detector_id")
    segment = SegmentKey((raw.get("highway") or "").strip(), (raw.get("direction") or "").strip())
    ts_text = raw.get("timestamp")
    if not ts_text or not ts_text.strip():
        raise MalformedRecord("missing timestamp")
    timestamp = parse_timestamp(ts_text)

    speed = _parse_real(raw.get("speed"), "speed")
    if speed is not None and speed < 0:
        raise MalformedRecord("speed negative")

    vol = _parse_real(raw.get("volume"), "volume")
    volume = None
    if vol is not None:
        if vol < 0:
            raise MalformedRecord("volume negative")
        if vol != int(vol):
            raise MalformedRecord("volume not an integer")
        volume = int(vol)

    occupancy = _parse_real(raw.get("occupancy"), "occupancy")
    if occupancy is not None and not (0.0 <= occupancy <= 100.0):
        raise MalformedRecord("occupancy out of [0,100]")

    return Observation(detector_id, segment, timestamp, speed, volume, occupancy)


def observation_to_row(obs: Observation) -> dict[str, str]:
    def cell(x) -> str:
        return "" if x is None else repr(x) if isinstance(x, float) else str(x)

    return {
        "detector_id": obs.detector_id,
        "highway": obs.segment.highway,
        "direction": obs.segment.direction.value,
        "timestamp": format_timestamp(obs.timestamp),
        "speed": cell(obs.speed),
        "volume": cell(obs.volume),
        "occupancy": cell(obs.occupancy),
    }


def local_time(ts: datetime, tz: str = DEFAULT_TIMEZONE) -> datetime:
    return ts.astimezone(ZoneInfo(tz))


def temporal_group_of(ts: datetime, tz: str = DEFAULT_TIMEZONE) -> TemporalGroup:
    """Day-of-week group of the local calendar day (never ``ALL``)."""
    if ts.tzinfo is None:
        raise MalformedRecord("timestamp has no timezone")
    return _WEEKDAY_GROUP[local_time(ts, tz).weekday()]


def in_group(ts: datetime, group: TemporalGroup, tz: str = DEFAULT_TIMEZONE) -> bool:
    return group is TemporalGroup.ALL or temporal_group_of(ts, tz) is group
