"""Anomalous-cluster detection and cluster-set drift."""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import asdict, dataclass, replace
from typing import Sequence

import numpy as np

from trafficclean.clustering import DEFAULT_RESTARTS, ClusterModel, fit_model
from trafficclean.scoring import ScoredObservation, score_observations

RULE_STUCK_OCCUPANCY = "stuck_high_occupancy"
RULE_SINGLE_DETECTOR = "single_detector_dominated"


class ModelMismatch(ValueError):
    pass


class EmptyCenterSet(ValueError):
    pass


@dataclass(frozen=True)
class ClusterSummary:
    index: int
    center: tuple[float, float, float]
    count: int
    fraction: float
    top_detector: str | None
    top_share: float | None
    flags: tuple[str, ...] = ()

    @property
    def flagged(self) -> bool:
        return bool(self.flags)


@dataclass(frozen=True)
class ClusterReport:
    model_id: str
    total: int
    clusters: tuple[ClusterSummary, ...]
    unscoreable: int = 0

    @property
    def flagged(self) -> list[ClusterSummary]:
        return [c for c in self.clusters if c.flags]

    def to_dict(self) -> dict:
        return {
            "model_id": self.model_id,
            "total": self.total,
            "unscoreable": self.unscoreable,
            "clusters": [asdict(c) for c in self.clusters],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def cluster_report(model: ClusterModel, scored: Sequence[ScoredObservation]) -> ClusterReport:
    """Per-cluster membership and detector concentration."""
    mid = model.model_id
    members: list[Counter] = [Counter() for _ in range(model.k)]
    unscoreable = 0
    for s in scored:
        if s.model_id != mid:
            raise ModelMismatch(f"observation scored by model {s.model_id!r}, report model is {mid!r}")
        if not s.scoreable:
            unscoreable += 1
            continue
        members[s.regime_index][s.observation.detector_id] += 1
    total = sum(sum(c.values()) for c in members)
    clusters = []
    for j, counts in enumerate(members):
        n = sum(counts.values())
        if n:
            # ties go to the lexically smallest detector id
            top, top_n = min(counts.items(), key=lambda kv: (-kv[1], kv[0]))
            share = top_n / n
        else:
            top, share = None, None
        clusters.append(
            ClusterSummary(j, tuple(float(v) for v in model.centers[j]), n, n / total if total else 0.0, top, share)
        )
    return ClusterReport(mid, total, tuple(clusters), unscoreable)


@dataclass(frozen=True)
class AnomalyRules:
    stuck_occupancy_min: float = 90.0
    stuck_speed_max: float = 10.0
    dominance_share: float = 0.9
    dominance_min_fraction: float = 0.01
    enabled: tuple[str, ...] = (RULE_STUCK_OCCUPANCY, RULE_SINGLE_DETECTOR)


def flag_anomalous_clusters(report: ClusterReport, rules: AnomalyRules = AnomalyRules()) -> ClusterReport:
    flagged = []
    for c in report.clusters:
        speed, _, occupancy = c.center
        flags = []
        if RULE_STUCK_OCCUPANCY in rules.enabled:
            if occupancy >= rules.stuck_occupancy_min and speed <= rules.stuck_speed_max:
                flags.append(RULE_STUCK_OCCUPANCY)
        if RULE_SINGLE_DETECTOR in rules.enabled and c.top_share is not None:
            if c.top_share >= rules.dominance_share and c.fraction >= rules.dominance_min_fraction:
                flags.append(RULE_SINGLE_DETECTOR)
        flagged.append(replace(c, flags=tuple(flags)))
    return replace(report, clusters=tuple(flagged))


@dataclass(frozen=True)
class DriftResult:
    value: float
    contributions: tuple[float, ...]
    basis: str = "standardized"
    symmetric: bool = False

    def to_dict(self) -> dict:
        return asdict(self)


def cluster_set_distance(centers_a, centers_b, symmetric: bool = False, basis: str = "standardized") -> DriftResult:
    """Sum over centers in A of the Euclidean distance to the nearest center in B.

    Directional (A to B). With ``symmetric=True`` the larger of the two
    directions is returned.
    """
    a = np.atleast_2d(np.asarray(centers_a, dtype=float))
    b = np.atleast_2d(np.asarray(centers_b, dtype=float))
    if a.size == 0 or b.size == 0:
        raise EmptyCenterSet("both center sets must be non-empty")
    contrib = np.sqrt(((a[:, None, :] - b[None, :, :]) ** 2).sum(axis=2)).min(axis=1)
    result = DriftResult(float(contrib.sum()), tuple(float(c) for c in contrib), basis, symmetric)
    if symmetric:
        back = cluster_set_distance(b, a, basis=basis)
        if back.value > result.value:
            return DriftResult(back.value, back.contributions, basis, True)
    return result


def model_drift(model_a: ClusterModel, model_b: ClusterModel, symmetric: bool = False) -> DriftResult:
    """Drift between two models with both center sets in A's standardized units."""
    a = (model_a.centers - model_a.means) / model_a.sds
    b = (model_b.centers - model_a.means) / model_a.sds
    basis = f"standardized:{model_a.model_id}"
    return cluster_set_distance(a, b, symmetric=symmetric, basis=basis)


@dataclass(frozen=True)
class RefitResult:
    model: ClusterModel
    report: ClusterReport


def refit_with_extra_cluster(
    dataset,
    k_base: int,
    seed: int = 0,
    restarts: int = DEFAULT_RESTARTS,
    rules: AnomalyRules = AnomalyRules(),
    metadata: dict | None = None,
) -> RefitResult:
    """Fit at ``k_base + 1`` so an anomalous cluster can separate from the
    normal regimes, then score and flag."""
    model = fit_model(dataset.features, k_base + 1, seed, restarts, metadata)
    scored = score_observations(dataset.observations, model, features=dataset.features)
    report = flag_anomalous_clusters(cluster_report(model, scored), rules)
    return RefitResult(model, report)
