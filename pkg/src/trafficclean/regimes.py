"""Per-detector regime time series and their smoothed variants."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from datetime import datetime, timedelta
from typing import Sequence

import numpy as np

from trafficclean.clustering import ClusterModel
from trafficclean.model import CADENCE_SECONDS, Observation
from trafficclean.scoring import ScoredObservation, assign, score_observations


@dataclass(frozen=True)
class RegimePoint:
    timestamp: datetime
    regime_index: int | None
    distance: float | None


@dataclass(frozen=True)
class RegimeSeries:
    detector_id: str
    points: tuple[RegimePoint, ...]
    gaps: tuple[tuple[datetime, datetime], ...] = ()

    def __len__(self) -> int:
        return len(self.points)

    @property
    def labels(self) -> list[int | None]:
        return [p.regime_index for p in self.points]

    def transitions(self) -> int:
        """Label changes between consecutive non-gap points."""
        labels = [x for x in self.labels if x is not None]
        return sum(1 for a, b in zip(labels, labels[1:]) if a != b)


def _find_gaps(points: Sequence[RegimePoint], cadence: float = CADENCE_SECONDS) -> tuple:
    """Runs of unscoreable points, plus holes in the time grid."""
    gaps = []
    run_start = run_end = None
    for p in points:
        if p.regime_index is None:
            if run_start is None:
                run_start = p.timestamp
            run_end = p.timestamp
        elif run_start is not None:
            gaps.append((run_start, run_end))
            run_start = None
    if run_start is not None:
        gaps.append((run_start, run_end))
    limit = timedelta(seconds=1.5 * cadence)
    for a, b in zip(points, points[1:]):
        if b.timestamp - a.timestamp > limit:
            gaps.append((a.timestamp + timedelta(seconds=cadence), b.timestamp - timedelta(seconds=cadence)))
    return tuple(sorted(gaps))


def _single_detector(items, key) -> str:
    ids = {key(x) for x in items}
    if len(ids) > 1:
        raise ValueError(f"expected one detector, got {sorted(ids)}")
    return ids.pop() if ids else ""


def _dedup_sorted(items, ts):
    out, seen = [], set()
    for x in sorted(items, key=ts):
        t = ts(x)
        if t not in seen:
            seen.add(t)
            out.append(x)
    return out


def regime_series(scored: Sequence[ScoredObservation], detector_id: str | None = None) -> RegimeSeries:
    """Time-ordered regime labels for one detector.

    If ``detector_id`` is given, other detectors' observations are ignored.
    Repeated timestamps keep the first occurrence.
    """
    if detector_id is not None:
        scored = [s for s in scored if s.observation.detector_id == detector_id]
    det = detector_id or _single_detector(scored, lambda s: s.observation.detector_id)
    rows = _dedup_sorted(scored, lambda s: s.observation.timestamp)
    points = tuple(RegimePoint(s.observation.timestamp, s.regime_index, s.distance) for s in rows)
    return RegimeSeries(det, points, _find_gaps(points))


def _window_bounds(i: int, n: int, window: int, centered: bool) -> tuple[int, int]:
    if centered:
        left = (window - 1) // 2
        return max(0, i - left), min(n, i + window - left)
    return max(0, i - window + 1), i + 1


def smooth_series(
    observations: Sequence[Observation],
    model: ClusterModel,
    window: int = 5,
    centered: bool = False,
    average: str = "features",
    metric: str = "mahalanobis",
    detector_id: str | None = None,
) -> RegimeSeries:
    """Regime series after a rolling window over observations.

    With ``average="features"`` (default) the raw feature vectors in each
    trailing window are averaged and the mean vector is re-assigned; members
    with a missing feature are left out, and a window with no valid member is
    a gap. ``average="labels"`` instead takes the most frequent label in the
    window (ties go to the most recent). ``centered=True`` centers the window
    for offline use.
    """
    if window < 1:
        raise ValueError("window must be >= 1")
    if average not in ("features", "labels"):
        raise ValueError(f"unknown averaging mode {average!r}")
    if detector_id is not None:
        observations = [o for o in observations if o.detector_id == detector_id]
    det = detector_id or _single_detector(observations, lambda o: o.detector_id)
    obs = _dedup_sorted(observations, lambda o: o.timestamp)
    n = len(obs)
    if n == 0:
        return RegimeSeries(det, ())

    x = np.array([o.features for o in obs], dtype=float)
    valid = ~np.isnan(x).any(axis=1)

    if average == "labels":
        raw = score_observations(obs, model, metric=metric, features=x)
        points = []
        for i in range(n):
            lo, hi = _window_bounds(i, n, window, centered)
            votes = [(raw[j].regime_index, j) for j in range(lo, hi) if raw[j].scoreable]
            if not votes:
                points.append(RegimePoint(obs[i].timestamp, None, None))
                continue
            counts = Counter(label for label, _ in votes)
            top = max(counts.values())
            label = max((j, lab) for lab, j in votes if counts[lab] == top)[1]
            dists = [raw[j].distance for lab, j in votes if lab == label]
            points.append(RegimePoint(obs[i].timestamp, label, float(np.mean(dists))))
        points = tuple(points)
        return RegimeSeries(det, points, _find_gaps(points))

    means = np.full((n, 3), np.nan)
    for i in range(n):
        lo, hi = _window_bounds(i, n, window, centered)
        members = x[lo:hi][valid[lo:hi]]
        if len(members):
            means[i] = members.mean(axis=0)
    idx, dist = assign(means, model, metric)
    points = tuple(
        RegimePoint(o.timestamp, None, None) if k < 0 else RegimePoint(o.timestamp, int(k), float(d))
        for o, k, d in zip(obs, idx, dist)
    )
    return RegimeSeries(det, points, _find_gaps(points))
