"""Reading, partitioning, and synthesizing detector datasets."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from datetime import date, datetime, time, timedelta, timezone
from functools import cached_property
from pathlib import Path
from typing import Iterable, Sequence
from zoneinfo import ZoneInfo

import numpy as np
import yaml

from trafficclean.model import (
    CADENCE_SECONDS,
    DEFAULT_TIMEZONE,
    Direction,
    MalformedRecord,
    Observation,
    SegmentKey,
    TemporalGroup,
    in_group,
    observation_to_row,
    validate_observation,
)

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
CSV_COLUMNS = ("detector_id", "highway", "direction", "timestamp", "speed", "volume", "occupancy")
ANOMALY_KINDS = ("stuck-value", "point-outlier", "anomalous-cluster")


class FileUnreadable(OSError):
    pass


class HeaderMismatch(ValueError):
    pass


class InvalidScenario(ValueError):
    pass


@dataclass(frozen=True)
class Rejection:
    line: int
    reason: str


@dataclass(frozen=True)
class SyntheticTruth:
    """Generator-side knowledge about each row, aligned with the observations."""

    true_speeds: tuple[float, ...]
    labels: tuple[str | None, ...]


@dataclass(frozen=True)
class Dataset:
    observations: tuple[Observation, ...]
    provenance: str = ""
    rejections: tuple[Rejection, ...] = ()
    truth: SyntheticTruth | None = None

    def __len__(self) -> int:
        return len(self.observations)

    def __iter__(self):
        return iter(self.observations)

    @cached_property
    def features(self) -> np.ndarray:
        """(n, 3) raw feature matrix, NaN where a reading is missing."""
        if not self.observations:
            return np.empty((0, 3))
        return np.array([o.features for o in self.observations], dtype=float)

    @property
    def detectors(self) -> list[str]:
        return sorted({o.detector_id for o in self.observations})

    @property
    def segments(self) -> list[SegmentKey]:
        return sorted({o.segment for o in self.observations}, key=str)

    def subset(self, indices: Iterable[int], provenance: str | None = None) -> "Dataset":
        idx = list(indices)
        truth = None
        if self.truth is not None:
            truth = SyntheticTruth(
                tuple(self.truth.true_speeds[i] for i in idx),
                tuple(self.truth.labels[i] for i in idx),
            )
        return Dataset(
            tuple(self.observations[i] for i in idx),
            self.provenance if provenance is None else provenance,
            self.rejections,
            truth,
        )


@dataclass(frozen=True)
class ColumnMap:
    """Names of the input columns; defaults match the documented CSV layout."""

    detector_id: str = "detector_id"
    highway: str = "highway"
    direction: str = "direction"
    timestamp: str = "timestamp"
    speed: str = "speed"
    volume: str = "volume"
    occupancy: str = "occupancy"


def _sorted_order(observations: Sequence[Observation]) -> list[int]:
    return sorted(range(len(observations)), key=lambda i: (observations[i].detector_id, observations[i].timestamp))


def read_csv(path: str | Path, columns: ColumnMap = ColumnMap()) -> Dataset:
    """Read observations from a CSV file.

    Lines starting with ``#`` are skipped. Rows that fail validation are not
    dropped silently: each one is listed in ``Dataset.rejections`` with its
    line number and reason. The result is sorted by (detector, time).
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise FileUnreadable(f"cannot read {path}: {exc}") from exc

    lines = text.splitlines(keepends=True)
    numbered = [(i + 1, line) for i, line in enumerate(lines) if not line.startswith("#") and line.strip()]
    if not numbered:
        raise HeaderMismatch(f"{path}: no header row")
    reader = csv.reader([line for _, line in numbered])
    header = [h.strip() for h in next(reader)]
    wanted = asdict(columns)
    missing = [name for name in wanted.values() if name not in header]
    if missing:
        raise HeaderMismatch(f"{path}: missing columns {missing}")
    position = {key: header.index(name) for key, name in wanted.items()}

    observations: list[Observation] = []
    rejections: list[Rejection] = []
    for (line_no, _), row in zip(numbered[1:], reader):
        if len(row) != len(header):
            rejections.append(Rejection(line_no, f"expected {len(header)} fields, got {len(row)}"))
            continue
        raw = {key: row[pos] for key, pos in position.items()}
        try:
            observations.append(validate_observation(raw))
        except MalformedRecord as exc:
            rejections.append(Rejection(line_no, exc.reason))

    if rejections:
        logger.info("%s: rejected %d of %d rows", path, len(rejections), len(rejections) + len(observations))
    order = _sorted_order(observations)
    # name plus content digest, so outputs do not depend on where the file lives
    digest = hashlib.sha256(text.encode("utf-8")).hexdigest()[:12]
    return Dataset(tuple(observations[i] for i in order), f"{path.name}@{digest}", tuple(rejections))


def dataset_to_csv(dataset: Dataset) -> str:
    buf = io.StringIO()
    buf.write(f"# trafficclean observations format-version {FORMAT_VERSION}\n")
    writer = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for obs in dataset.observations:
        writer.writerow(observation_to_row(obs))
    return buf.getvalue()


def write_csv(dataset: Dataset, path: str | Path) -> None:
    Path(path).write_text(dataset_to_csv(dataset), encoding="utf-8")


def partition(
    dataset: Dataset,
    segment: SegmentKey | None = None,
    group: TemporalGroup = TemporalGroup.ALL,
    tz: str = DEFAULT_TIMEZONE,
) -> Dataset:
    """Observations of one segment (or all, if None) on the days of one group."""
    keep = [
        i
        for i, o in enumerate(dataset.observations)
        if (segment is None or o.segment == segment) and in_group(o.timestamp, group, tz)
    ]
    label = f"{dataset.provenance}[{segment or '*'}|{group.value}]"
    return dataset.subset(keep, provenance=label)


# --------------------------------------------------------------------------
# synthetic scenarios


@dataclass(frozen=True)
class RegimeSpec:
    name: str
    mean: tuple[float, float, float]
    cov: tuple[tuple[float, float, float], ...]
    weight: float
    hours: tuple[tuple[float, float], ...] = ()

    def active_at(self, hour: float) -> bool:
        if not self.hours:
            return True
        return any(start <= hour < end for start, end in self.hours)


@dataclass(frozen=True)
class AnomalySpec:
    """One injected defect.

    ``fraction`` is relative to the total number of generated rows; ``count``
    is an absolute row count. Exactly one of the two is set. ``values`` holds
    feature overrides and ``jitter`` optional per-feature Gaussian noise.
    """

    kind: str
    detector_id: str | None = None
    fraction: float | None = None
    count: int | None = None
    values: dict = field(default_factory=dict)
    jitter: dict = field(default_factory=dict)
    share: float = 0.95
    hours: tuple[tuple[float, float], ...] = ()


@dataclass(frozen=True)
class ScenarioConfig:
    regimes: tuple[RegimeSpec, ...]
    detectors: tuple[str, ...]
    start: date
    days: int = 1
    seed: int = 0
    highway: str = "I-405"
    direction: str = "NB"
    timezone: str = DEFAULT_TIMEZONE
    anomalies: tuple[AnomalySpec, ...] = ()

    def digest(self) -> str:
        payload = json.dumps(_scenario_to_dict(self), sort_keys=True, default=str)
        return hashlib.sha256(payload.encode()).hexdigest()[:16]


def _scenario_to_dict(cfg: ScenarioConfig) -> dict:
    d = asdict(cfg)
    d["start"] = cfg.start.isoformat()
    # tuples -> lists, so the result is plain YAML/JSON
    return json.loads(json.dumps(d))


def _pairs(value) -> tuple[tuple[float, float], ...]:
    return tuple((float(a), float(b)) for a, b in (value or ()))


def scenario_from_dict(data: dict) -> ScenarioConfig:
    try:
        regimes = []
        for r in data.get("regimes") or ():
            mean = tuple(float(x) for x in r["mean"])
            if "cov" in r:
                cov = tuple(tuple(float(x) for x in row) for row in r["cov"])
            else:
                cov = tuple(tuple(float(s) ** 2 if i == j else 0.0 for j in range(3)) for i, s in enumerate(r["sd"]))
            regimes.append(RegimeSpec(str(r.get("name", f"regime{len(regimes)}")), mean, cov, float(r["weight"]), _pairs(r.get("hours"))))
        anomalies = []
        for a in data.get("anomalies") or ():
            anomalies.append(
                AnomalySpec(
                    kind=str(a["kind"]),
                    detector_id=None if a.get("detector_id") is None else str(a["detector_id"]),
                    fraction=None if a.get("fraction") is None else float(a["fraction"]),
                    count=None if a.get("count") is None else int(a["count"]),
                    values={k: float(v) for k, v in (a.get("values") or {}).items()},
                    jitter={k: float(v) for k, v in (a.get("jitter") or {}).items()},
                    share=float(a.get("share", 0.95)),
                    hours=_pairs(a.get("hours")),
                )
            )
        start = data["start"]
        if not isinstance(start, date):
            start = date.fromisoformat(str(start))
        cfg = ScenarioConfig(
            # no regimes given: use the built-in day
            regimes=tuple(regimes) or default_scenario().regimes,
            detectors=tuple(str(d) for d in data["detectors"]),
            start=start,
            days=int(data.get("days", 1)),
            seed=int(data.get("seed", 0)),
            highway=str(data.get("highway", "I-405")),
            direction=str(data.get("direction", "NB")),
            timezone=str(data.get("timezone", DEFAULT_TIMEZONE)),
            anomalies=tuple(anomalies),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise InvalidScenario(f"bad scenario config: {exc}") from exc
    validate_scenario(cfg)
    return cfg


def load_scenario(path: str | Path) -> ScenarioConfig:
    with open(path, encoding="utf-8") as fh:
        data = yaml.safe_load(fh)
    if not isinstance(data, dict):
        raise InvalidScenario(f"{path}: top level must be a mapping")
    return scenario_from_dict(data)


def validate_scenario(cfg: ScenarioConfig) -> None:
    if not cfg.regimes:
        raise InvalidScenario("at least one regime is required")
    if not cfg.detectors or len(set(cfg.detectors)) != len(cfg.detectors):
        raise InvalidScenario("detector roster must be non-empty and unique")
    if cfg.days < 1:
        raise InvalidScenario("days must be >= 1")
    weights = [r.weight for r in cfg.regimes]
    if any(w < 0 for w in weights) or not math.isclose(sum(weights), 1.0, abs_tol=1e-9):
        raise InvalidScenario(f"mixing weights must be nonnegative and sum to 1, got {sum(weights)}")
    for r in cfg.regimes:
        cov = np.asarray(r.cov, dtype=float)
        if cov.shape != (3, 3) or not np.allclose(cov, cov.T):
            raise InvalidScenario(f"regime {r.name}: covariance must be a symmetric 3x3 matrix")
        if np.linalg.eigvalsh(cov).min() < -1e-12:
            raise InvalidScenario(f"regime {r.name}: covariance is not positive semidefinite")
    try:
        Direction(cfg.direction)
        ZoneInfo(cfg.timezone)
    except Exception as exc:
        raise InvalidScenario(str(exc)) from exc
    for a in cfg.anomalies:
        if a.kind not in ANOMALY_KINDS:
            raise InvalidScenario(f"unknown anomaly kind {a.kind!r}")
        if (a.fraction is None) == (a.count is None):
            raise InvalidScenario(f"{a.kind}: set exactly one of fraction or count")
        if a.fraction is not None and not 0.0 <= a.fraction <= 1.0:
            raise InvalidScenario(f"{a.kind}: fraction must lie in [0,1]")
        if a.count is not None and a.count < 0:
            raise InvalidScenario(f"{a.kind}: count must be >= 0")
        if not 0.0 <= a.share <= 1.0:
            raise InvalidScenario(f"{a.kind}: share must lie in [0,1]")
        if a.detector_id is not None and a.detector_id not in cfg.detectors:
            raise InvalidScenario(f"{a.kind}: detector {a.detector_id!r} not in roster")
        if a.kind == "anomalous-cluster" and a.detector_id is None:
            raise InvalidScenario("anomalous-cluster needs a detector_id")
        unknown = set(a.values) | set(a.jitter)
        unknown -= {"speed", "volume", "occupancy"}
        if unknown:
            raise InvalidScenario(f"{a.kind}: unknown features {sorted(unknown)}")


def _timeline(cfg: ScenarioConfig) -> tuple[list[datetime], np.ndarray]:
    """UTC timestamps at the nominal cadence and their local hour-of-day."""
    tz = ZoneInfo(cfg.timezone)
    start = datetime.combine(cfg.start, time(0), tzinfo=tz).astimezone(timezone.utc)
    end = datetime.combine(cfg.start + timedelta(days=cfg.days), time(0), tzinfo=tz).astimezone(timezone.utc)
    n = int((end - start).total_seconds()) // CADENCE_SECONDS
    stamps = [start + timedelta(seconds=CADENCE_SECONDS * i) for i in range(n)]
    hours = np.array([(lt := s.astimezone(tz)).hour + lt.minute / 60 + lt.second / 3600 for s in stamps])
    return stamps, hours


def _clip_features(x: np.ndarray) -> np.ndarray:
    out = x.copy()
    out[:, 0] = np.maximum(out[:, 0], 0.0)
    out[:, 1] = np.maximum(np.rint(out[:, 1]), 0.0)
    out[:, 2] = np.clip(out[:, 2], 0.0, 100.0)
    return out


def _injection_count(spec: AnomalySpec, total: int) -> int:
    return spec.count if spec.count is not None else int(round(spec.fraction * total))


def generate_synthetic(cfg: ScenarioConfig) -> Dataset:
    """Generate a dataset of Gaussian traffic regimes with injected defects.

    Each detector gets one row per 20-second step across ``cfg.days`` local
    days. At every step the regime is drawn among those whose hour schedule
    covers the local time, in proportion to the mixing weights. Injections
    overwrite already-generated rows (so the row count never changes) and
    never touch a row twice. The same config always yields the same data.
    """
    validate_scenario(cfg)
    rng = np.random.default_rng(cfg.seed)
    segment = SegmentKey(cfg.highway, Direction(cfg.direction))
    stamps, hours = _timeline(cfg)
    n_steps = len(stamps)
    n_det = len(cfg.detectors)
    total = n_steps * n_det

    weights = np.array([r.weight for r in cfg.regimes])
    active = np.array([[r.active_at(h) for r in cfg.regimes] for h in hours])
    active[~active.any(axis=1)] = True
    probs = active * weights
    zero = probs.sum(axis=1) == 0
    probs[zero] = active[zero]
    probs /= probs.sum(axis=1, keepdims=True)
    cum = np.cumsum(probs, axis=1)

    feats = np.empty((total, 3))
    for d in range(n_det):
        u = rng.random(n_steps)
        regime = (u[:, None] > cum).sum(axis=1)
        regime = np.minimum(regime, len(cfg.regimes) - 1)
        rows = slice(d * n_steps, (d + 1) * n_steps)
        block = np.empty((n_steps, 3))
        for r_idx, r in enumerate(cfg.regimes):
            mask = regime == r_idx
            if mask.any():
                block[mask] = rng.multivariate_normal(r.mean, r.cov, size=int(mask.sum()), method="eigh")
        feats[rows] = block
    feats = _clip_features(feats)
    true_speeds = feats[:, 0].copy()
    labels: list[str | None] = [None] * total

    det_index = {det: i for i, det in enumerate(cfg.detectors)}
    feature_col = {"speed": 0, "volume": 1, "occupancy": 2}

    def pick(det: str | None, count: int, window) -> np.ndarray:
        if det is None:
            pool = np.arange(total)
        else:
            d = det_index[det]
            pool = np.arange(d * n_steps, (d + 1) * n_steps)
        if window:
            step_hours = hours[pool % n_steps]
            pool = pool[np.array([any(a <= h < b for a, b in window) for h in step_hours], dtype=bool)]
        pool = np.array([i for i in pool if labels[i] is None], dtype=int)
        if count > len(pool):
            raise InvalidScenario(f"cannot inject {count} rows into a pool of {len(pool)}")
        return np.sort(rng.choice(pool, size=count, replace=False)) if count else pool[:0]

    for spec in cfg.anomalies:
        count = _injection_count(spec, total)
        if spec.kind == "anomalous-cluster":
            main = int(math.ceil(spec.share * count))
            chosen = [pick(spec.detector_id, main, spec.hours)]
            others = [det for det in cfg.detectors if det != spec.detector_id]
            rest = count - main
            if rest and not others:
                raise InvalidScenario("anomalous-cluster share < 1 needs more than one detector")
            for j, det in enumerate(others):
                part = rest // len(others) + (1 if j < rest % len(others) else 0)
                chosen.append(pick(det, part, spec.hours))
            idx = np.concatenate(chosen)
        else:
            idx = pick(spec.detector_id, count, spec.hours)
        for name, value in spec.values.items():
            col = feature_col[name]
            noise = spec.jitter.get(name, 0.0)
            feats[idx, col] = value + (rng.normal(0.0, noise, size=len(idx)) if noise else 0.0)
        feats[idx] = _clip_features(feats[idx])
        for i in idx:
            labels[i] = spec.kind

    observations = []
    for d, det in enumerate(cfg.detectors):
        for s in range(n_steps):
            sp, vol, occ = feats[d * n_steps + s]
            observations.append(Observation(det, segment, stamps[s], float(sp), int(vol), float(occ)))
    truth = SyntheticTruth(tuple(float(x) for x in true_speeds), tuple(labels))
    data = Dataset(tuple(observations), f"synthetic:{cfg.digest()}", (), truth)
    # same canonical order as read_csv
    return data.subset(_sorted_order(observations))


def default_scenario(seed: int = 0, days: int = 1, detectors: Sequence[str] = ("D1", "D2", "D3", "D4"),
                     start: date = date(2015, 5, 4), anomalies: Sequence[AnomalySpec] = ()) -> ScenarioConfig:
    """Three well-separated regimes: light (night), free-flow, congested (peaks)."""
    night = ((0.0, 6.0), (21.0, 24.0))
    day = ((6.0, 21.0),)
    peaks = ((7.0, 9.0), (15.5, 18.5))
    return ScenarioConfig(
        regimes=(
            RegimeSpec("light", (65.0, 2.0, 2.0), ((9.0, 0, 0), (0, 1.0, 0), (0, 0, 0.64)), 0.35, night),
            RegimeSpec("free-flow", (60.0, 11.0, 11.0), ((16.0, 0, 0), (0, 2.25, 0), (0, 0, 2.25)), 0.45, day),
            RegimeSpec("congested", (18.0, 13.0, 38.0), ((25.0, 0, 0), (0, 2.25, 0), (0, 0, 25.0)), 0.20, peaks),
        ),
        detectors=tuple(detectors),
        start=start,
        days=days,
        seed=seed,
        anomalies=tuple(anomalies),
    )


def scenario_to_yaml(cfg: ScenarioConfig) -> str:
    return yaml.safe_dump(_scenario_to_dict(cfg), sort_keys=False)
