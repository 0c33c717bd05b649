import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from trafficclean.anomaly import (
    RULE_SINGLE_DETECTOR,
    RULE_STUCK_OCCUPANCY,
    AnomalyRules,
    ClusterReport,
    ClusterSummary,
    EmptyCenterSet,
    ModelMismatch,
    cluster_report,
    cluster_set_distance,
    flag_anomalous_clusters,
    model_drift,
    refit_with_extra_cluster,
)
from trafficclean.clustering import Standardization, finalize_model, fit_model
from trafficclean.scoring import score_observations
from tests.conftest import obs


def unit_model(centers):
    return finalize_model(np.asarray(centers, float), Standardization(np.zeros(3), np.ones(3), 0, 0), np.eye(3))


def test_single_detector_cluster_share():
    model = unit_model([[0, 0, 0], [50, 0, 0]])
    rows = [obs(0.0, 0, 0.0, detector="D7") for _ in range(20)]
    rows += [obs(50.0, 0, 0.0, detector=f"D{i % 10}") for i in range(100)]
    report = cluster_report(model, score_observations(rows, model))
    slow, fast = report.clusters
    assert (slow.top_detector, slow.top_share, slow.count) == ("D7", 1.0, 20)
    assert fast.top_share == pytest.approx(0.1)


def test_report_conserves_counts():
    model = unit_model([[0, 0, 0], [10, 0, 0], [20, 0, 0]])
    rng = np.random.default_rng(0)
    rows = [obs(float(s), 0, 0.0, detector=f"D{rng.integers(4)}") for s in rng.uniform(0, 25, 300)]
    rows.append(obs(None, 0, 0.0))
    report = cluster_report(model, score_observations(rows, model))
    assert sum(c.count for c in report.clusters) == report.total == 300
    assert report.unscoreable == 1
    assert sum(c.fraction for c in report.clusters) == pytest.approx(1.0)


def test_detector_tie_goes_to_smallest_id():
    model = unit_model([[0, 0, 0]])
    rows = [obs(detector="B"), obs(detector="A")]
    assert cluster_report(model, score_observations(rows, model)).clusters[0].top_detector == "A"


def test_report_rejects_other_models_scores():
    a, b = unit_model([[0, 0, 0]]), unit_model([[1, 0, 0]])
    with pytest.raises(ModelMismatch):
        cluster_report(a, score_observations([obs()], b))


def summary(center, fraction=0.2, share=0.3):
    return ClusterSummary(0, center, 100, fraction, "D1", share)


@pytest.mark.parametrize(
    "cs, flags",
    [
        (summary((5.0, 1.0, 95.0)), (RULE_STUCK_OCCUPANCY,)),
        (summary((10.0, 1.0, 90.0)), (RULE_STUCK_OCCUPANCY,)),
        (summary((11.0, 1.0, 95.0)), ()),
        (summary((5.0, 1.0, 89.0)), ()),
        (summary((60.0, 10.0, 10.0), share=0.92, fraction=0.03), (RULE_SINGLE_DETECTOR,)),
        (summary((60.0, 10.0, 10.0), share=0.92, fraction=0.005), ()),
        (summary((60.0, 10.0, 10.0), share=0.89, fraction=0.2), ()),
        (summary((3.0, 1.0, 99.0), share=0.95, fraction=0.04), (RULE_STUCK_OCCUPANCY, RULE_SINGLE_DETECTOR)),
    ],
)
def test_flag_rules(cs, flags):
    out = flag_anomalous_clusters(ClusterReport("m", 100, (cs,)))
    assert out.clusters[0].flags == flags


def test_rules_can_be_disabled():
    cs = summary((3.0, 1.0, 99.0), share=0.95, fraction=0.04)
    rules = AnomalyRules(enabled=(RULE_SINGLE_DETECTOR,))
    assert flag_anomalous_clusters(ClusterReport("m", 100, (cs,)), rules).clusters[0].flags == (RULE_SINGLE_DETECTOR,)


def test_drift_hand_value():
    assert cluster_set_distance([[3, 4, 0]], [[0, 0, 0]]).value == 5.0


def test_drift_is_directional():
    a = [[0, 0, 0], [10, 0, 0]]
    b = [[0, 0, 0]]
    assert cluster_set_distance(a, b).value == 10.0
    assert cluster_set_distance(b, a).value == 0.0
    assert cluster_set_distance(b, a, symmetric=True).value == 10.0


def test_drift_empty_set():
    with pytest.raises(EmptyCenterSet):
        cluster_set_distance(np.empty((0, 3)), [[0, 0, 0]])


center_sets = st.lists(st.tuples(*[st.floats(-50, 50, allow_nan=False)] * 3), min_size=1, max_size=6)


@given(center_sets)
def test_drift_to_self_is_zero(a):
    assert cluster_set_distance(a, a).value == 0.0


@given(center_sets, center_sets, st.tuples(*[st.floats(-50, 50, allow_nan=False)] * 3))
def test_adding_centers_to_b_never_increases_drift(a, b, extra):
    assert cluster_set_distance(a, b + [extra]).value <= cluster_set_distance(a, b).value


def test_model_drift_uses_first_models_units(clean_day):
    m = fit_model(clean_day.features, 3, seed=0, restarts=3)
    assert model_drift(m, m).value == 0.0
    shifted = finalize_model(
        m.centers_std + np.array([1.0, 0, 0]), m.standardization, m.covariance
    )
    assert model_drift(m, shifted).value == pytest.approx(3.0)


def test_refit_flags_planted_cluster(stuck_day):
    res = refit_with_extra_cluster(stuck_day, 3, seed=0, restarts=10)
    flagged = res.report.flagged
    assert len(flagged) == 1
    assert flagged[0].top_detector == "D3"
    assert abs(flagged[0].fraction - 0.038) <= 0.005


def test_refit_on_clean_data_flags_nothing(clean_day):
    assert refit_with_extra_cluster(clean_day, 3, seed=0, restarts=5).report.flagged == []


def test_refit_from_one_cluster(clean_day):
    res = refit_with_extra_cluster(clean_day, 1, seed=0, restarts=3)
    assert res.model.k == 2 and len(res.report.clusters) == 2
