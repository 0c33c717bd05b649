"""Regime clustering and Mahalanobis-distance cleaning for loop-detector data."""

from trafficclean.anomaly import (
    AnomalyRules,
    ClusterReport,
    DriftResult,
    cluster_report,
    cluster_set_distance,
    flag_anomalous_clusters,
    model_drift,
    refit_with_extra_cluster,
)
from trafficclean.clustering import (
    ClusterModel,
    ElbowCurve,
    elbow_sweep,
    finalize_model,
    fit_model,
    kmeans_fit,
    select_k_knee,
    standardize,
)
from trafficclean.ingest import Dataset, generate_synthetic, partition, read_csv, write_csv
from trafficclean.model import Observation, SegmentKey, TemporalGroup, temporal_group_of, validate_observation
from trafficclean.scoring import (
    DistanceBand,
    ScoredObservation,
    assign_and_score,
    estimate_covariance,
    invert_regularized,
    mahalanobis,
    score_dataset,
)

__version__ = "0.1.0"

__all__ = [
    "AnomalyRules",
    "ClusterModel",
    "ClusterReport",
    "Dataset",
    "DistanceBand",
    "DriftResult",
    "ElbowCurve",
    "Observation",
    "ScoredObservation",
    "SegmentKey",
    "TemporalGroup",
    "assign_and_score",
    "cluster_report",
    "cluster_set_distance",
    "elbow_sweep",
    "estimate_covariance",
    "finalize_model",
    "fit_model",
    "flag_anomalous_clusters",
    "generate_synthetic",
    "invert_regularized",
    "kmeans_fit",
    "mahalanobis",
    "model_drift",
    "partition",
    "read_csv",
    "refit_with_extra_cluster",
    "score_dataset",
    "select_k_knee",
    "standardize",
    "temporal_group_of",
    "validate_observation",
    "write_csv",
]
