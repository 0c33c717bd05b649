import csv
import json

import pytest

from trafficclean.cli import main

SCENARIO = """\
start: 2015-05-06
days: 1
seed: 4
detectors: [D1, D2, D3, D4]
regimes:
  - {name: congested, mean: [20, 14, 35], sd: [1.5, 0.5, 1.5], weight: 0.3}
  - {name: free, mean: [60, 10, 10], sd: [1.5, 0.5, 1.0], weight: 0.4}
  - {name: light, mean: [66, 2, 2], sd: [1.5, 0.5, 0.5], weight: 0.3}
"""

LAYOUT = "detector_id,influence_length_miles\nD1,2.5\nD2,3.0\nD3,2.5\nD4,3.0\n"


def rows(path):
    with open(path) as fh:
        return list(csv.DictReader(line for line in fh if not line.startswith("#")))


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    (d / "scenario.yaml").write_text(SCENARIO)
    (d / "layout.csv").write_text(LAYOUT)
    assert main(["generate", "--scenario", str(d / "scenario.yaml"), "--layout", str(d / "layout.csv"),
                 "--output-dir", str(d)]) == 0
    return d


def run(workdir, *args):
    return main([*args, "--input", str(workdir / "observations.csv"), "--output-dir", str(workdir),
                 "--restarts", "3"])


def test_generate_summary(tmp_path, capsys):
    (tmp_path / "s.yaml").write_text(SCENARIO)
    assert main(["generate", "--scenario", str(tmp_path / "s.yaml"), "--output-dir", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    assert out.startswith("generate: rows_in=0 rows_out=17280 rejections=0")
    assert (tmp_path / "observations.csv").read_text().startswith("# trafficclean observations format-version 1")


def test_elbow_finds_three(workdir, capsys):
    assert run(workdir, "elbow") == 0
    assert "knee=3" in capsys.readouterr().out
    table = rows(workdir / "elbow.csv")
    assert [int(r["k"]) for r in table] == list(range(1, 11))
    assert [r["k"] for r in table if r["is_knee"] == "1"] == ["3"]


def test_fit_writes_model_and_spider(workdir):
    assert run(workdir, "fit", "--k", "3") == 0
    model = json.loads((workdir / "model.json").read_text())
    assert model["k"] == 3 and model["feature_order"] == ["speed", "volume", "occupancy"]
    spider = rows(workdir / "spider.csv")
    assert len(spider) == 9
    speeds = [float(r["normalized_value"]) for r in spider if r["axis_name"] == "speed"]
    assert max(speeds) == 1.0


def test_spider_single_cluster_is_all_ones(workdir, tmp_path):
    assert main(["fit", "--k", "1", "--restarts", "1", "--input", str(workdir / "observations.csv"),
                 "--output-dir", str(tmp_path)]) == 0
    assert {float(r["normalized_value"]) for r in rows(tmp_path / "spider.csv")} == {1.0}


def test_score_report_regimes(workdir, capsys):
    assert run(workdir, "fit", "--k", "3") == 0
    assert run(workdir, "score") == 0
    assert run(workdir, "report") == 0
    assert run(workdir, "regimes", "--window", "5") == 0
    out = capsys.readouterr().out
    assert "score: rows_in=17280 rows_out=17280 rejections=0" in out
    assert "flagged=0" in out
    assert len(rows(workdir / "scored.csv")) == 17280
    assert len(rows(workdir / "regimes.csv")) == 17280


def test_score_without_model(tmp_path, workdir, capsys):
    code = main(["score", "--input", str(workdir / "observations.csv"), "--output-dir", str(tmp_path)])
    assert code == 1
    assert "model not found" in capsys.readouterr().err


def test_usage_error_exits_two(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["fit", "--k", "0"])
    assert exc.value.code == 2
    with pytest.raises(SystemExit) as exc:
        main(["fit", "--k", "11"])
    assert exc.value.code == 2


def test_large_k_needs_flag(workdir, tmp_path, capsys):
    code = main(["fit", "--k", "11", "--allow-large-k", "--restarts", "1",
                 "--input", str(workdir / "observations.csv"), "--output-dir", str(tmp_path)])
    assert code == 0


def test_compare_identical_series(workdir, tmp_path):
    assert run(workdir, "fit", "--k", "3") == 0
    assert run(workdir, "traveltime", "--layout", str(workdir / "layout.csv")) == 0
    tt = str(workdir / "travel_time_rule.csv")
    code = main(["compare", "--rule-tt", tt, "--ml-tt", tt, "--ground-truth", str(workdir / "ground_truth.csv"),
                 "--output-dir", str(tmp_path), "--peak", "0-24", "--day-group", "TueWedThu"])
    assert code == 0
    table = {r["category"]: r for r in rows(tmp_path / "agreement.csv")}
    assert {r["table"] for r in table.values()} == {"*/TWT"}
    assert int(table["total"]["count"]) == 1440
    agree = int(table["both_agree_with_gt"]["percent"]) + int(table["methods_agree_differ_from_gt"]["percent"])
    assert agree == 100
    assert sum(int(table[c]["count"]) for c in table if c != "total") == 1440
    assert (tmp_path / "agreement.txt").read_text().count("%") >= 5


def test_repeat_runs_are_byte_identical(workdir, tmp_path):
    outs = []
    for name in ("a", "b"):
        d = tmp_path / name
        assert main(["fit", "--k", "3", "--restarts", "2", "--input", str(workdir / "observations.csv"),
                     "--output-dir", str(d)]) == 0
        assert main(["score", "--input", str(workdir / "observations.csv"), "--output-dir", str(d)]) == 0
        outs.append({p.name: p.read_bytes() for p in sorted(d.iterdir())})
    assert outs[0] == outs[1]


def test_drift_command(workdir, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for d, seed in ((a, "1"), (b, "2")):
        assert main(["fit", "--k", "3", "--seed", seed, "--restarts", "2",
                     "--input", str(workdir / "observations.csv"), "--output-dir", str(d)]) == 0
    assert main(["drift", "--baseline", str(a / "model.json"), "--other", str(b / "model.json"),
                 "--output-dir", str(tmp_path)]) == 0
    (entry,) = json.loads((tmp_path / "drift.json").read_text())
    assert entry["value"] < 0.1
