"""Plot-ready CSV writers for the pipeline's outputs.

Every file starts with a ``# trafficclean <kind> format-version N`` comment
line followed by a header row.
"""

from __future__ import annotations

import csv
import io
from typing import Iterable, Sequence

from trafficclean.anomaly import ClusterReport, DriftResult
from trafficclean.clustering import ClusterModel, ElbowCurve
from trafficclean.model import FEATURES, format_timestamp, observation_to_row
from trafficclean.regimes import RegimeSeries
from trafficclean.scoring import ScoredObservation
from trafficclean.traveltime import CATEGORIES, CATEGORY_LABELS, AgreementTable

FORMAT_VERSION = 1


def _csv(kind: str, header: Sequence[str], rows: Iterable[Sequence]) -> str:
    buf = io.StringIO()
    buf.write(f"# trafficclean {kind} format-version {FORMAT_VERSION}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


def _num(x: float | None, places: int = 6) -> str:
    return "" if x is None else f"{x:.{places}f}"


def spider_rows(model: ClusterModel) -> list[tuple[int, str, float, float]]:
    """(cluster, axis, raw value, value / per-axis max over centers)."""
    peak = model.centers.max(axis=0)
    rows = []
    for j, center in enumerate(model.centers):
        for a, name in enumerate(FEATURES):
            norm = center[a] / peak[a] if peak[a] > 0 else 1.0
            rows.append((j, name, float(center[a]), float(norm)))
    return rows


def emit_spider_data(model: ClusterModel) -> str:
    rows = [(j, name, _num(raw), _num(norm)) for j, name, raw, norm in spider_rows(model)]
    return _csv("spider", ("cluster_index", "axis_name", "raw_value", "normalized_value"), rows)


def elbow_csv(curve: ElbowCurve, knee: int) -> str:
    rows = [(k, f"{e:.9f}", int(k == knee)) for k, e in zip(curve.ks, curve.errors)]
    return _csv("elbow", ("k", "avg_sq_error", "is_knee"), rows)


def scored_csv(scored: Sequence[ScoredObservation]) -> str:
    header = ("detector_id", "highway", "direction", "timestamp", "speed", "volume", "occupancy",
              "regime_index", "distance", "band", "is_outlier")
    rows = []
    for s in scored:
        base = observation_to_row(s.observation)
        rows.append(
            [base[c] for c in header[:7]]
            + [
                "" if s.regime_index is None else s.regime_index,
                _num(s.distance),
                "" if s.band is None else s.band.value,
                "" if not s.scoreable else str(s.is_outlier).lower(),
            ]
        )
    return _csv("scored", header, rows)


def cluster_report_csv(report: ClusterReport) -> str:
    rows = [
        (c.index, *(_num(v) for v in c.center), c.count, _num(c.fraction), c.top_detector or "",
         _num(c.top_share), ";".join(c.flags))
        for c in report.clusters
    ]
    header = ("cluster_index", "speed", "volume", "occupancy", "members", "fraction", "top_detector",
              "top_share", "flags")
    return _csv("cluster-report", header, rows)


def drift_csv(entries: Sequence[tuple[str, str, DriftResult]]) -> str:
    return _csv("drift", ("period_A", "period_B", "value"), [(a, b, _num(r.value)) for a, b, r in entries])


def series_csv(pairs: Sequence[tuple[RegimeSeries, RegimeSeries]]) -> str:
    rows = []
    for raw, smooth in pairs:
        smoothed = {p.timestamp: p.regime_index for p in smooth.points}
        for p in raw.points:
            s = smoothed.get(p.timestamp)
            rows.append((raw.detector_id, format_timestamp(p.timestamp),
                         "" if p.regime_index is None else p.regime_index, _num(p.distance),
                         "" if s is None else s))
    return _csv("regimes", ("detector_id", "timestamp", "regime_index", "distance", "smoothed_regime_index"), rows)


def agreement_csv(tables: Sequence[AgreementTable]) -> str:
    rows = []
    for t in tables:
        pct = t.percentages
        for c in CATEGORIES:
            rows.append((t.label, c, CATEGORY_LABELS[c], t.counts[c], pct[c]))
        rows.append((t.label, "total", "Number of observations", t.total, 100 if t.total else 0))
    return _csv("agreement", ("table", "category", "label", "count", "percent"), rows)
