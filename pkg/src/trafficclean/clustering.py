"""K-means regime models on standardized (speed, volume, occupancy)."""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from trafficclean.model import FEATURES
from trafficclean.scoring import estimate_covariance, invert_regularized

logger = logging.getLogger(__name__)

MODEL_FORMAT_VERSION = 1
MAX_ITER = 300
CENTER_TOL = 1e-6
DEFAULT_RESTARTS = 10


class DegeneratePartition(ValueError):
    pass


class TooFewDistinctPoints(ValueError):
    pass


class CurveTooShort(ValueError):
    pass


@dataclass(frozen=True)
class Standardization:
    means: np.ndarray
    sds: np.ndarray
    n_used: int
    n_excluded: int

    def apply(self, points: np.ndarray) -> np.ndarray:
        return (np.asarray(points, dtype=float) - self.means) / self.sds

    def invert(self, points_std: np.ndarray) -> np.ndarray:
        return np.asarray(points_std, dtype=float) * self.sds + self.means


def complete_rows(points: np.ndarray) -> np.ndarray:
    x = np.asarray(points, dtype=float)
    return x[~np.isnan(x).any(axis=1)]


def standardize(points: np.ndarray) -> tuple[np.ndarray, Standardization]:
    """Z-score each column with the population standard deviation.

    Rows with any missing (NaN) feature are excluded and counted.
    """
    x = np.asarray(points, dtype=float)
    full = complete_rows(x)
    if len(full) == 0:
        raise DegeneratePartition("no complete rows to standardize")
    means = full.mean(axis=0)
    sds = full.std(axis=0)
    flat = [FEATURES[i] if len(FEATURES) == full.shape[1] else str(i) for i in np.flatnonzero(~(sds > 0))]
    if flat:
        raise DegeneratePartition(f"zero variance in {', '.join(flat)}")
    z = (full - means) / sds
    return z, Standardization(means, sds, len(full), len(x) - len(full))


@dataclass
class KMeansResult:
    centers: np.ndarray
    labels: np.ndarray
    sse: float
    avg_sq_error: float
    n_iter: int
    history: list[float] = field(default_factory=list)
    restart_sse: list[float] = field(default_factory=list)


def _sq_dists(points: np.ndarray, centers: np.ndarray) -> np.ndarray:
    # expanded form; only used to pick the nearest center
    d = (points**2).sum(axis=1)[:, None] - 2.0 * points @ centers.T + (centers**2).sum(axis=1)[None, :]
    return np.maximum(d, 0.0)


def _sse(points: np.ndarray, centers: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    per_point = ((points - centers[labels]) ** 2).sum(axis=1)
    return float(per_point.sum()), per_point


def kmeans_plusplus(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = len(points)
    centers = np.empty((k, points.shape[1]))
    centers[0] = points[rng.integers(n)]
    closest = ((points - centers[0]) ** 2).sum(axis=1)
    for j in range(1, k):
        total = closest.sum()
        if total <= 0:
            raise TooFewDistinctPoints(f"only {j} distinct points for k={k}")
        nxt = rng.choice(n, p=closest / total)
        centers[j] = points[nxt]
        closest = np.minimum(closest, ((points - centers[j]) ** 2).sum(axis=1))
    return centers


def _lloyd(points: np.ndarray, centers: np.ndarray) -> KMeansResult:
    centers = centers.copy()
    k, dim = centers.shape
    labels = None
    history = []
    it = 0
    for it in range(1, MAX_ITER + 1):
        new_labels = np.argmin(_sq_dists(points, centers), axis=1)
        sse, nearest = _sse(points, centers, new_labels)
        history.append(sse)
        if labels is not None and np.array_equal(new_labels, labels):
            break
        labels = new_labels
        counts = np.bincount(labels, minlength=k)
        sums = np.stack([np.bincount(labels, weights=points[:, c], minlength=k) for c in range(dim)], axis=1)
        new_centers = sums / np.maximum(counts, 1)[:, None]
        if (counts == 0).any():
            # empty cluster: restart it at the worst-served point
            order = np.argsort(-nearest, kind="stable")
            for rank, j in enumerate(np.flatnonzero(counts == 0)):
                new_centers[j] = points[order[rank]]
        shift = np.abs(new_centers - centers).max()
        centers = new_centers
        if shift < CENTER_TOL:
            labels = np.argmin(_sq_dists(points, centers), axis=1)
            history.append(_sse(points, centers, labels)[0])
            break
    return KMeansResult(centers, labels, history[-1], history[-1] / len(points), it, history)


def kmeans_fit(points: np.ndarray, k: int, seed: int = 0, restarts: int = DEFAULT_RESTARTS) -> KMeansResult:
    """Best-of-``restarts`` Lloyd's algorithm from k-means++ seeds.

    ``avg_sq_error`` is the total within-cluster squared Euclidean error
    divided by the number of points.
    """
    x = np.asarray(points, dtype=float)
    if k < 1:
        raise ValueError("k must be >= 1")
    if restarts < 1:
        raise ValueError("restarts must be >= 1")
    distinct = len(np.unique(x, axis=0))
    if distinct < k:
        raise TooFewDistinctPoints(f"{distinct} distinct points, k={k}")
    rng = np.random.default_rng(seed)
    best = None
    restart_sse = []
    for _ in range(restarts):
        run = _lloyd(x, kmeans_plusplus(x, k, rng))
        restart_sse.append(run.sse)
        if best is None or run.sse < best.sse:
            best = run
    best.restart_sse = restart_sse
    return best


@dataclass(frozen=True)
class ElbowCurve:
    ks: tuple[int, ...]
    errors: tuple[float, ...]

    def __post_init__(self):
        if len(self.ks) != len(self.errors):
            raise ValueError("ks and errors differ in length")
        if any(b <= a for a, b in zip(self.ks, self.ks[1:])):
            raise ValueError("k values must be strictly increasing")


def elbow_sweep(points: np.ndarray, k_min: int = 1, k_max: int = 10, seed: int = 0,
                restarts: int = DEFAULT_RESTARTS) -> ElbowCurve:
    x = np.asarray(points, dtype=float)
    distinct = len(np.unique(x, axis=0))
    if k_max > distinct:
        raise TooFewDistinctPoints(f"k_max={k_max} exceeds {distinct} distinct points")
    ks = tuple(range(k_min, k_max + 1))
    errors = tuple(kmeans_fit(x, k, seed, restarts).avg_sq_error for k in ks)
    return ElbowCurve(ks, errors)


def chord_distances(curve: ElbowCurve) -> np.ndarray:
    """Perpendicular distance of each curve point to the first-to-last chord."""
    k = np.asarray(curve.ks, dtype=float)
    e = np.asarray(curve.errors, dtype=float)
    dx, dy = k[-1] - k[0], e[-1] - e[0]
    return np.abs(dy * (k - k[0]) - dx * (e - e[0])) / np.hypot(dx, dy)


def select_k_knee(curve: ElbowCurve, override: int | None = None) -> int:
    if override is not None:
        return int(override)
    if len(curve.ks) < 3:
        raise CurveTooShort(f"need >= 3 points, got {len(curve.ks)}")
    dist = chord_distances(curve)
    scale = max(abs(e) for e in curve.errors) or 1.0
    best = dist.max()
    # floating-point noise must not defeat the smaller-k tie-break
    return int(curve.ks[int(np.flatnonzero(dist >= best - 1e-12 * scale)[0])])


@dataclass(frozen=True)
class ClusterModel:
    """A fitted regime model; centers are ordered by ascending speed."""

    k: int
    means: np.ndarray
    sds: np.ndarray
    centers: np.ndarray
    centers_std: np.ndarray
    covariance: np.ndarray
    inverse_covariance: np.ndarray
    ridge: float = 0.0
    avg_sq_error: float = float("nan")
    metadata: dict = field(default_factory=dict)
    feature_order: tuple[str, ...] = FEATURES

    @property
    def standardization(self) -> Standardization:
        return Standardization(self.means, self.sds, int(self.metadata.get("n_train", 0)), 0)

    def to_dict(self) -> dict:
        return {
            "format_version": MODEL_FORMAT_VERSION,
            "feature_order": list(self.feature_order),
            "k": self.k,
            "standardization": {"mean": self.means.tolist(), "sd": self.sds.tolist()},
            "centers": self.centers.tolist(),
            "centers_std": self.centers_std.tolist(),
            "covariance": self.covariance.tolist(),
            "inverse_covariance": self.inverse_covariance.tolist(),
            "ridge": self.ridge,
            "avg_sq_error": self.avg_sq_error,
            "metadata": self.metadata,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ClusterModel":
        version = data.get("format_version")
        if version != MODEL_FORMAT_VERSION:
            raise ValueError(f"unsupported model format_version {version!r}")
        if tuple(data["feature_order"]) != FEATURES:
            raise ValueError(f"feature order {data['feature_order']} is not {list(FEATURES)}")
        arr = lambda key: np.asarray(data[key], dtype=float)
        return cls(
            k=int(data["k"]),
            means=np.asarray(data["standardization"]["mean"], dtype=float),
            sds=np.asarray(data["standardization"]["sd"], dtype=float),
            centers=arr("centers"),
            centers_std=arr("centers_std"),
            covariance=arr("covariance"),
            inverse_covariance=arr("inverse_covariance"),
            ridge=float(data.get("ridge", 0.0)),
            avg_sq_error=float(data.get("avg_sq_error", float("nan"))),
            metadata=dict(data.get("metadata", {})),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ClusterModel":
        return cls.from_dict(json.loads(text))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json() + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "ClusterModel":
        return cls.from_json(Path(path).read_text(encoding="utf-8"))

    @property
    def model_id(self) -> str:
        payload = json.dumps(
            [self.centers.tolist(), self.covariance.tolist(), self.means.tolist(), self.sds.tolist()]
        )
        return hashlib.sha256(payload.encode()).hexdigest()[:12]


def finalize_model(
    centers_std: np.ndarray,
    params: Standardization,
    covariance: np.ndarray,
    metadata: dict | None = None,
    avg_sq_error: float = float("nan"),
) -> ClusterModel:
    centers_std = np.atleast_2d(np.asarray(centers_std, dtype=float))
    raw = params.invert(centers_std)
    order = np.argsort(raw[:, 0], kind="stable")
    cov = np.asarray(covariance, dtype=float)
    inv, eps = invert_regularized(cov)
    return ClusterModel(
        k=len(raw),
        means=np.asarray(params.means, dtype=float),
        sds=np.asarray(params.sds, dtype=float),
        centers=raw[order],
        centers_std=centers_std[order],
        covariance=cov,
        inverse_covariance=inv,
        ridge=eps,
        avg_sq_error=float(avg_sq_error),
        metadata=dict(metadata or {}),
    )


def fit_model(points: np.ndarray, k: int, seed: int = 0, restarts: int = DEFAULT_RESTARTS,
              metadata: dict | None = None) -> ClusterModel:
    """Standardize, cluster, estimate the global covariance, and finalize."""
    z, params = standardize(points)
    result = kmeans_fit(z, k, seed, restarts)
    cov = estimate_covariance(complete_rows(points))
    meta = {"seed": seed, "restarts": restarts, "n_train": params.n_used, "n_excluded": params.n_excluded}
    meta.update(metadata or {})
    logger.debug("fit k=%d on %d rows: avg sq error %.6f", k, params.n_used, result.avg_sq_error)
    return finalize_model(result.centers, params, cov, meta, result.avg_sq_error)
