"""Covariance estimation, Mahalanobis distance, and regime assignment."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import TYPE_CHECKING, Iterable, Sequence

import numpy as np

from trafficclean.model import Observation

if TYPE_CHECKING:
    from trafficclean.clustering import ClusterModel

RIDGE_SCHEDULE = (0.0, 1e-9, 1e-6, 1e-3)
MAX_CONDITION = 1e12
OUTLIER_THRESHOLD = 2.5
BAND_EDGES = (2.0, 3.0, 4.0)


class TooFewPoints(ValueError):
    pass


class NotInvertible(np.linalg.LinAlgError):
    pass


class DistanceBand(str, enum.Enum):
    GOOD = "Good"
    SUSPECT = "Suspect"
    ANOMALOUS = "Anomalous"
    SEVERE = "Severe"


_BANDS = (DistanceBand.GOOD, DistanceBand.SUSPECT, DistanceBand.ANOMALOUS, DistanceBand.SEVERE)


def band_of(d: float, edges: Sequence[float] = BAND_EDGES) -> DistanceBand:
    # right-open bands: [0,2) [2,3) [3,4) [4,inf)
    lo, mid, hi = edges
    if d < lo:
        return DistanceBand.GOOD
    if d < mid:
        return DistanceBand.SUSPECT
    if d < hi:
        return DistanceBand.ANOMALOUS
    return DistanceBand.SEVERE


@dataclass(frozen=True)
class ScoredObservation:
    observation: Observation
    regime_index: int | None
    distance: float | None
    band: DistanceBand | None
    is_outlier: bool
    model_id: str = ""
    issue: str | None = None

    @property
    def scoreable(self) -> bool:
        return self.issue is None


def estimate_covariance(points: np.ndarray) -> np.ndarray:
    """Sample covariance (divisor n-1) of complete rows."""
    x = np.asarray(points, dtype=float)
    if x.ndim != 2:
        raise ValueError("points must be a 2-D array")
    x = x[~np.isnan(x).any(axis=1)]
    if len(x) < 2:
        raise TooFewPoints(f"need at least 2 complete points, got {len(x)}")
    centered = x - x.mean(axis=0)
    cov = centered.T @ centered / (len(x) - 1)
    return (cov + cov.T) / 2


def invert_regularized(matrix: np.ndarray, schedule: Sequence[float] = RIDGE_SCHEDULE) -> tuple[np.ndarray, float]:
    """Invert ``matrix + eps*I`` for the smallest workable ``eps`` in ``schedule``.

    A candidate is accepted when its condition number is below 1e12.
    Returns ``(inverse, eps)``.
    """
    m = np.asarray(matrix, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError("matrix must be square")
    if not np.allclose(m, m.T, rtol=1e-10, atol=1e-12):
        raise ValueError("matrix must be symmetric")
    eye = np.eye(len(m))
    for eps in schedule:
        candidate = m + eps * eye
        cond = np.linalg.cond(candidate)
        if not np.isfinite(cond) or cond >= MAX_CONDITION:
            continue
        inv = np.linalg.inv(candidate)
        return (inv + inv.T) / 2, float(eps)
    raise NotInvertible(f"matrix stays ill-conditioned up to ridge {schedule[-1]}")


def mahalanobis(x, center, inverse_covariance) -> float:
    diff = np.asarray(x, dtype=float) - np.asarray(center, dtype=float)
    q = float(diff @ np.asarray(inverse_covariance, dtype=float) @ diff)
    return math.sqrt(max(q, 0.0))


def distances_to_centers(points: np.ndarray, centers: np.ndarray, inverse_covariance: np.ndarray) -> np.ndarray:
    """(n, k) Mahalanobis distances of every point to every center."""
    diff = np.asarray(points, dtype=float)[:, None, :] - np.asarray(centers, dtype=float)[None, :, :]
    q = np.einsum("nki,ij,nkj->nk", diff, inverse_covariance, diff)
    return np.sqrt(np.maximum(q, 0.0))


def assign(
    points: np.ndarray, model: ClusterModel, metric: str = "mahalanobis"
) -> tuple[np.ndarray, np.ndarray]:
    """Closest regime per point and the Mahalanobis distance to it.

    ``metric`` picks how "closest" is decided: ``"mahalanobis"`` (default) or
    ``"euclidean"`` in the model's standardized space. The reported distance
    is Mahalanobis either way. Rows with NaN get index -1 and distance NaN.
    """
    x = np.asarray(points, dtype=float).reshape(-1, 3)
    ok = ~np.isnan(x).any(axis=1)
    idx = np.full(len(x), -1, dtype=int)
    dist = np.full(len(x), np.nan)
    if ok.any():
        d = distances_to_centers(x[ok], model.centers, model.inverse_covariance)
        if metric == "mahalanobis":
            chosen = np.argmin(d, axis=1)
        elif metric == "euclidean":
            z = (x[ok] - model.means) / model.sds
            e = ((z[:, None, :] - model.centers_std[None, :, :]) ** 2).sum(axis=2)
            chosen = np.argmin(e, axis=1)
        else:
            raise ValueError(f"unknown assignment metric {metric!r}")
        idx[ok] = chosen
        dist[ok] = d[np.arange(len(chosen)), chosen]
    return idx, dist


def _scored(obs, i, d, model, threshold, edges) -> ScoredObservation:
    if i < 0:
        return ScoredObservation(obs, None, None, None, False, model.model_id, "missing_feature")
    d = float(d)
    return ScoredObservation(obs, int(i), d, band_of(d, edges), d > threshold, model.model_id)


def assign_and_score(
    observation: Observation,
    model: ClusterModel,
    threshold: float = OUTLIER_THRESHOLD,
    edges: Sequence[float] = BAND_EDGES,
    metric: str = "mahalanobis",
) -> ScoredObservation:
    """Score one observation. Missing features yield an unscoreable result
    flagged with ``issue="missing_feature"`` rather than an exception."""
    idx, dist = assign(np.array([observation.features]), model, metric)
    return _scored(observation, idx[0], dist[0], model, threshold, edges)


def score_observations(
    observations: Sequence[Observation] | Iterable[Observation],
    model: ClusterModel,
    threshold: float = OUTLIER_THRESHOLD,
    edges: Sequence[float] = BAND_EDGES,
    metric: str = "mahalanobis",
    features: np.ndarray | None = None,
) -> list[ScoredObservation]:
    obs = list(observations)
    if not obs:
        return []
    x = np.array([o.features for o in obs]) if features is None else features
    idx, dist = assign(x, model, metric)
    return [_scored(o, i, d, model, threshold, edges) for o, i, d in zip(obs, idx, dist)]


def score_dataset(dataset, model: ClusterModel, **kwargs) -> list[ScoredObservation]:
    return score_observations(dataset.observations, model, features=dataset.features, **kwargs)
