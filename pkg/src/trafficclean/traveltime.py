"""Rule-based vs. distance-based cleaning and their effect on travel times."""

from __future__ import annotations

import csv
import io
import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from trafficclean.model import (
    DEFAULT_TIMEZONE,
    Observation,
    TemporalGroup,
    format_timestamp,
    in_group,
    local_time,
    parse_timestamp,
)
from trafficclean.scoring import OUTLIER_THRESHOLD, ScoredObservation

MAX_SPEED = 100.0
MAX_VOLUME = 17
LOOKBACK_MINUTES = 5

REASON_OUTLIER = "mahalanobis_outlier"
REASON_UNSCOREABLE = "unscoreable"
REASON_ANOMALOUS_CLUSTER = "anomalous_cluster"

CATEGORIES = (
    "both_agree_with_gt",
    "methods_agree_differ_from_gt",
    "new_only_agrees",
    "rule_only_agrees",
    "all_disagree",
)
CATEGORY_LABELS = {
    "both_agree_with_gt": "Both methods agree with GT",
    "methods_agree_differ_from_gt": "Methods agree, but differ from GT",
    "new_only_agrees": "New method only agrees with GT",
    "rule_only_agrees": "Rule-based method only agrees with GT",
    "all_disagree": "Methods disagree with each other and with GT",
}


class EmptyCategory(ValueError):
    pass


# --------------------------------------------------------------------------
# cleaning


@dataclass(frozen=True)
class CleaningOutcome:
    """Per-observation keep/drop decisions, aligned with the input order."""

    observations: tuple[Observation, ...]
    reasons: tuple[str | None, ...]

    @property
    def kept_count(self) -> int:
        return sum(1 for r in self.reasons if r is None)

    @property
    def dropped_count(self) -> int:
        return len(self.reasons) - self.kept_count

    def kept(self) -> list[Observation]:
        return [o for o, r in zip(self.observations, self.reasons) if r is None]

    def reason_counts(self) -> Counter:
        return Counter(r for r in self.reasons if r is not None)


def rule_reason(obs: Observation) -> str | None:
    """First rule that rejects the reading, or None.

    R1 speed > 100; R2 20-second volume > 17; R3 occupancy outside [0, 100];
    R4 zero speed with nonzero volume; R5 a feature is missing.
    """
    if obs.speed is not None and obs.speed > MAX_SPEED:
        return "R1"
    if obs.volume is not None and obs.volume > MAX_VOLUME:
        return "R2"
    if obs.occupancy is not None and not 0.0 <= obs.occupancy <= 100.0:
        return "R3"
    if obs.speed == 0 and obs.volume is not None and obs.volume > 0:
        return "R4"
    if not obs.complete:
        return "R5"
    return None


def rule_clean(observations: Iterable[Observation]) -> CleaningOutcome:
    obs = tuple(observations)
    return CleaningOutcome(obs, tuple(rule_reason(o) for o in obs))


def ml_clean(
    scored: Sequence[ScoredObservation],
    threshold: float = OUTLIER_THRESHOLD,
    flagged_clusters: Iterable[int] = (),
) -> CleaningOutcome:
    """Drop observations whose Mahalanobis distance exceeds ``threshold``.

    Observations that could not be scored are dropped as ``unscoreable``.
    Members of any cluster index in ``flagged_clusters`` are dropped as
    ``anomalous_cluster``; by default no cluster is excluded.
    """
    bad = set(flagged_clusters)
    reasons = []
    for s in scored:
        if not s.scoreable:
            reasons.append(REASON_UNSCOREABLE)
        elif s.regime_index in bad:
            reasons.append(REASON_ANOMALOUS_CLUSTER)
        elif s.distance > threshold:
            reasons.append(REASON_OUTLIER)
        else:
            reasons.append(None)
    return CleaningOutcome(tuple(s.observation for s in scored), tuple(reasons))


# --------------------------------------------------------------------------
# travel times


def minute_of(ts: datetime) -> datetime:
    return ts.astimezone(timezone.utc).replace(second=0, microsecond=0)


@dataclass(frozen=True)
class MinuteSpeed:
    speed: float | None
    carried: bool = False


def per_minute_speeds(
    outcome: CleaningOutcome,
    detector_id: str,
    lookback: int = LOOKBACK_MINUTES,
    minutes: Sequence[datetime] | None = None,
) -> dict[datetime, MinuteSpeed]:
    """Mean kept speed per minute for one detector.

    A minute with no kept reading reuses the most recent measured minute if
    it lies within ``lookback`` minutes, and is otherwise missing. The grid
    defaults to every minute spanned by the detector's observations, kept or
    not.
    """
    sums: dict[datetime, list[float]] = defaultdict(list)
    seen = []
    for obs, reason in zip(outcome.observations, outcome.reasons):
        if obs.detector_id != detector_id:
            continue
        m = minute_of(obs.timestamp)
        seen.append(m)
        if reason is None and obs.speed is not None:
            sums[m].append(obs.speed)
    if minutes is None:
        if not seen:
            return {}
        first, last = min(seen), max(seen)
        minutes = [first + timedelta(minutes=i) for i in range(int((last - first).total_seconds() // 60) + 1)]

    result: dict[datetime, MinuteSpeed] = {}
    last_measured: tuple[datetime, float] | None = None
    for m in sorted(minutes):
        speeds = sums.get(m)
        if speeds:
            value = math.fsum(speeds) / len(speeds)
            result[m] = MinuteSpeed(value)
            last_measured = (m, value)
        elif last_measured is not None and m - last_measured[0] <= timedelta(minutes=lookback):
            result[m] = MinuteSpeed(last_measured[1], carried=True)
        else:
            result[m] = MinuteSpeed(None)
    return result


@dataclass(frozen=True)
class DetectorLayout:
    """Ordered detectors and the miles of roadway each one represents."""

    detectors: tuple[str, ...]
    lengths: tuple[float, ...]

    def __post_init__(self):
        if len(self.detectors) != len(self.lengths) or not self.detectors:
            raise ValueError("layout needs one influence length per detector")
        if len(set(self.detectors)) != len(self.detectors):
            raise ValueError("layout detectors must be unique")
        if any(not (x > 0) for x in self.lengths):
            raise ValueError("influence lengths must be positive")

    @property
    def length(self) -> float:
        return math.fsum(self.lengths)

    @classmethod
    def read_csv(cls, path: str | Path) -> "DetectorLayout":
        dets, lengths = [], []
        with open(path, encoding="utf-8", newline="") as fh:
            for row in csv.DictReader(line for line in fh if not line.startswith("#")):
                dets.append(row["detector_id"].strip())
                lengths.append(float(row["influence_length_miles"]))
        return cls(tuple(dets), tuple(lengths))

    def to_csv(self) -> str:
        lines = ["# trafficclean layout format-version 1", "detector_id,influence_length_miles"]
        lines += [f"{d},{x!r}" for d, x in zip(self.detectors, self.lengths)]
        return "\n".join(lines) + "\n"


def estimate_travel_time(
    layout: DetectorLayout, speeds: Mapping[str, Mapping[datetime, MinuteSpeed]], minute: datetime
) -> float | None:
    """Mid-point travel time in minutes: sum of length / speed over detectors.

    Missing if any detector lacks a positive speed for the minute.
    """
    total = []
    for det, length in zip(layout.detectors, layout.lengths):
        entry = speeds.get(det, {}).get(minute)
        if entry is None or entry.speed is None or entry.speed <= 0:
            return None
        total.append(length / entry.speed * 60.0)
    return math.fsum(total)


@dataclass(frozen=True)
class TravelTimeSeries:
    values: dict[datetime, float | None] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.values)

    def get(self, minute: datetime) -> float | None:
        return self.values.get(minute)

    def present(self) -> dict[datetime, float]:
        return {m: v for m, v in self.values.items() if v is not None}

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("# trafficclean travel-time format-version 1\n")
        buf.write("minute,travel_time_minutes\n")
        for m in sorted(self.values):
            v = self.values[m]
            buf.write(f"{format_timestamp(m)},{'' if v is None else format(v, '.6f')}\n")
        return buf.getvalue()

    @classmethod
    def read_csv(cls, path: str | Path) -> "TravelTimeSeries":
        values: dict[datetime, float | None] = {}
        with open(path, encoding="utf-8", newline="") as fh:
            for row in csv.DictReader(line for line in fh if not line.startswith("#")):
                text = (row.get("travel_time_minutes") or "").strip()
                values[minute_of(parse_timestamp(row["minute"]))] = float(text) if text else None
        return cls(values)


def travel_time_series(
    layout: DetectorLayout,
    outcome: CleaningOutcome,
    lookback: int = LOOKBACK_MINUTES,
    minutes: Sequence[datetime] | None = None,
) -> TravelTimeSeries:
    """Per-minute travel times over the layout from one cleaner's decisions."""
    if minutes is None:
        stamps = [minute_of(o.timestamp) for o in outcome.observations if o.detector_id in layout.detectors]
        if not stamps:
            return TravelTimeSeries({})
        first, last = min(stamps), max(stamps)
        minutes = [first + timedelta(minutes=i) for i in range(int((last - first).total_seconds() // 60) + 1)]
    speeds = {det: per_minute_speeds(outcome, det, lookback, minutes) for det in layout.detectors}
    return TravelTimeSeries({m: estimate_travel_time(layout, speeds, m) for m in minutes})


def ground_truth_from_dataset(dataset, layout: DetectorLayout) -> TravelTimeSeries:
    """Synthetic ground truth from the generator's pre-injection speeds."""
    if dataset.truth is None:
        raise ValueError("dataset carries no generator truth")
    truth_obs = tuple(
        Observation(o.detector_id, o.segment, o.timestamp, s, 0, 0.0)
        for o, s in zip(dataset.observations, dataset.truth.true_speeds)
    )
    outcome = CleaningOutcome(truth_obs, (None,) * len(truth_obs))
    return travel_time_series(layout, outcome, lookback=0)


# --------------------------------------------------------------------------
# comparison against ground truth


def round_half_up(x: float) -> int:
    return math.floor(x + 0.5)


@dataclass(frozen=True)
class PeakFilter:
    """Which minutes enter a comparison: local hours ``[start, end)`` on
    weekdays, optionally restricted to one day group."""

    start_hour: float = 16.0
    end_hour: float = 18.0
    weekdays_only: bool = True
    group: TemporalGroup = TemporalGroup.ALL
    tz: str = DEFAULT_TIMEZONE

    def accepts(self, minute: datetime) -> bool:
        local = local_time(minute, self.tz)
        if self.weekdays_only and local.weekday() >= 5:
            return False
        hour = local.hour + local.minute / 60
        if not self.start_hour <= hour < self.end_hour:
            return False
        return in_group(minute, self.group, self.tz)


ANY_MINUTE = PeakFilter(0.0, 24.0, weekdays_only=False)


def categorize(rule: float, ml: float, gt: float) -> str:
    r, m, g = round_half_up(rule), round_half_up(ml), round_half_up(gt)
    if r == g and m == g:
        return "both_agree_with_gt"
    if r == m:
        return "methods_agree_differ_from_gt"
    if m == g:
        return "new_only_agrees"
    if r == g:
        return "rule_only_agrees"
    return "all_disagree"


@dataclass(frozen=True)
class AgreementTable:
    counts: dict[str, int]
    total: int
    label: str = ""

    @property
    def percentages(self) -> dict[str, int]:
        if not self.total:
            return {c: 0 for c in CATEGORIES}
        return {c: round_half_up(100.0 * self.counts[c] / self.total) for c in CATEGORIES}


def _common_minutes(rule: TravelTimeSeries, ml: TravelTimeSeries, gt: TravelTimeSeries, flt: PeakFilter):
    r, m, g = rule.present(), ml.present(), gt.present()
    return sorted(t for t in r.keys() & m.keys() & g.keys() if flt.accepts(t)), r, m, g


def agreement_table(
    rule: TravelTimeSeries,
    ml: TravelTimeSeries,
    gt: TravelTimeSeries,
    flt: PeakFilter = PeakFilter(),
    label: str = "",
) -> AgreementTable:
    """Classify each shared, filter-passing minute into the five categories."""
    minutes, r, m, g = _common_minutes(rule, ml, gt, flt)
    counts = Counter(categorize(r[t], m[t], g[t]) for t in minutes)
    return AgreementTable({c: counts.get(c, 0) for c in CATEGORIES}, len(minutes), label)


def format_agreement(tables: Sequence[AgreementTable]) -> str:
    """Plain-text table with one column per input table plus an average."""
    width = max(len(v) for v in CATEGORY_LABELS.values()) + 2
    cols = [t.label or f"#{i + 1}" for i, t in enumerate(tables)]
    lines = [" " * width + "".join(f"{c:>12}" for c in cols) + f"{'Avg.':>8}"]
    for c in CATEGORIES:
        pcts = [t.percentages[c] for t in tables]
        nonempty = [p for p, t in zip(pcts, tables) if t.total]
        avg = round_half_up(sum(nonempty) / len(nonempty)) if nonempty else 0
        lines.append(f"{CATEGORY_LABELS[c]:<{width}}" + "".join(f"{p:>11}%" for p in pcts) + f"{avg:>7}%")
    lines.append(f"{'Number of observations':<{width}}" + "".join(f"{t.total:>12,}" for t in tables))
    return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class DisagreementBreakdown:
    n: int
    ml_closer_share: float
    rule_closer_share: float
    tie_share: float
    ml_mean_margin: float
    rule_mean_margin: float


def disagreement_breakdown(
    rule: TravelTimeSeries,
    ml: TravelTimeSeries,
    gt: TravelTimeSeries,
    flt: PeakFilter = ANY_MINUTE,
) -> DisagreementBreakdown:
    """Which method is closer to ground truth when neither agrees with it.

    Closeness uses unrounded absolute errors; margins are mean differences
    in absolute error over the minutes each method wins.
    """
    minutes, r, m, g = _common_minutes(rule, ml, gt, flt)
    minutes = [t for t in minutes if categorize(r[t], m[t], g[t]) == "all_disagree"]
    if not minutes:
        raise EmptyCategory("no minutes where all three disagree")
    ml_wins, rule_wins, ties = [], [], 0
    for t in minutes:
        e_ml, e_rule = abs(m[t] - g[t]), abs(r[t] - g[t])
        if e_ml < e_rule:
            ml_wins.append(e_rule - e_ml)
        elif e_rule < e_ml:
            rule_wins.append(e_ml - e_rule)
        else:
            ties += 1
    n = len(minutes)
    mean = lambda xs: math.fsum(xs) / len(xs) if xs else math.nan
    return DisagreementBreakdown(n, len(ml_wins) / n, len(rule_wins) / n, ties / n, mean(ml_wins), mean(rule_wins))
