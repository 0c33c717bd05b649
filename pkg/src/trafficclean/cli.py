"""Command-line entry point: ``trafficclean <command> [options]``.

Exit status: 0 on success, 1 on data errors, 2 on usage errors.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import dataclass
from pathlib import Path

from trafficclean import anomaly, clustering, ingest, regimes, report, scoring, traveltime
from trafficclean.model import DEFAULT_TIMEZONE, Direction, SegmentKey, TemporalGroup

logger = logging.getLogger("trafficclean")

K_LIMIT = 10


class DataError(Exception):
    pass


@dataclass(frozen=True)
class RunConfig:
    command: str
    input: Path | None
    output_dir: Path
    model: Path | None
    segment: SegmentKey | None
    day_group: TemporalGroup
    k: int | None
    k_min: int
    k_max: int
    seed: int
    restarts: int
    outlier_threshold: float
    window: int
    timezone: str
    peak: tuple[float, float]

    @property
    def model_path(self) -> Path:
        return self.model or self.output_dir / "model.json"


def _peak(text: str) -> tuple[float, float]:
    try:
        a, b = (float(x) for x in text.split("-"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"--peak expects START-END hours, got {text!r}") from None
    if not 0 <= a < b <= 24:
        raise argparse.ArgumentTypeError(f"--peak hours out of order: {text!r}")
    return a, b


def _day_group(text: str) -> TemporalGroup:
    try:
        return TemporalGroup.parse(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--input", type=Path, help="observations CSV")
    common.add_argument("--output-dir", type=Path, default=Path("."))
    common.add_argument("--model", type=Path, help="model JSON (default: OUTPUT_DIR/model.json)")
    common.add_argument("--segment", help="highway name to select")
    common.add_argument("--direction", choices=[d.value for d in Direction])
    common.add_argument("--day-group", type=_day_group, default=TemporalGroup.ALL,
                        help="All, MonFri, TueWedThu or SatSun")
    common.add_argument("--k", type=int)
    common.add_argument("--k-min", type=int, default=1)
    common.add_argument("--k-max", type=int, default=K_LIMIT)
    common.add_argument("--allow-large-k", action="store_true", help=f"permit k above {K_LIMIT}")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--restarts", type=int, default=clustering.DEFAULT_RESTARTS)
    common.add_argument("--outlier-threshold", type=float, default=scoring.OUTLIER_THRESHOLD)
    common.add_argument("--assign-metric", choices=("mahalanobis", "euclidean"), default="mahalanobis")
    common.add_argument("--window", type=int, default=5)
    common.add_argument("--centered", action="store_true", help="centered smoothing window")
    common.add_argument("--timezone", default=DEFAULT_TIMEZONE)
    common.add_argument("--peak", type=_peak, default=(16.0, 18.0), help="local hours, e.g. 16-18")
    common.add_argument("--layout", type=Path, help="CSV of detector_id,influence_length_miles")
    common.add_argument("--ground-truth", type=Path, help="CSV of minute,travel_time_minutes")
    common.add_argument("--exclude-flagged", action="store_true",
                        help="ML cleaning also drops members of flagged clusters")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="trafficclean", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("generate", parents=[common], help="write a synthetic dataset")
    p.add_argument("--scenario", type=Path, required=True, help="scenario YAML/JSON")
    sub.add_parser("elbow", parents=[common], help="k sweep and knee selection")
    sub.add_parser("fit", parents=[common], help="fit a regime model")
    sub.add_parser("score", parents=[common], help="assign regimes and distances")
    sub.add_parser("report", parents=[common], help="cluster report with anomaly flags")
    p = sub.add_parser("drift", parents=[common], help="cluster-set drift between models")
    p.add_argument("--baseline", type=Path, required=True, help="model of the reference period")
    p.add_argument("--other", type=Path, nargs="+", required=True, help="models to compare")
    p.add_argument("--symmetric", action="store_true")
    sub.add_parser("regimes", parents=[common], help="regime series per detector")
    sub.add_parser("traveltime", parents=[common], help="travel times under both cleaners")
    p = sub.add_parser("compare", parents=[common], help="agreement with ground truth")
    p.add_argument("--rule-tt", type=Path, help="precomputed rule-cleaned travel times")
    p.add_argument("--ml-tt", type=Path, help="precomputed ML-cleaned travel times")
    return parser


def make_config(args: argparse.Namespace, parser: argparse.ArgumentParser) -> RunConfig:
    segment = None
    if args.segment or args.direction:
        if not (args.segment and args.direction):
            parser.error("--segment and --direction go together")
        segment = SegmentKey(args.segment, Direction(args.direction))
    if args.outlier_threshold <= 0:
        parser.error("--outlier-threshold must be positive")
    if args.window < 1:
        parser.error("--window must be >= 1")
    if args.restarts < 1:
        parser.error("--restarts must be >= 1")
    limit = None if args.allow_large_k else K_LIMIT
    for name in ("k", "k_min", "k_max"):
        value = getattr(args, name)
        if value is not None and (value < 1 or (limit and value > limit)):
            parser.error(f"--{name.replace('_', '-')} must lie in [1, {limit or 'inf'}]")
    if args.k_min > args.k_max:
        parser.error("--k-min exceeds --k-max")
    return RunConfig(args.command, args.input, args.output_dir, args.model, segment, args.day_group, args.k,
                     args.k_min, args.k_max, args.seed, args.restarts, args.outlier_threshold, args.window,
                     args.timezone, args.peak)


# --------------------------------------------------------------------------
# helpers


def _summary(cfg: RunConfig, rows_in: int, rows_out: int, rejections: int, extra: str = "") -> None:
    line = f"{cfg.command}: rows_in={rows_in} rows_out={rows_out} rejections={rejections}"
    print(line + (f" {extra}" if extra else ""))


def _write(cfg: RunConfig, name: str, text: str) -> Path:
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    path = cfg.output_dir / name
    path.write_text(text, encoding="utf-8")
    return path


def _load_input(cfg: RunConfig) -> tuple[ingest.Dataset, ingest.Dataset]:
    if cfg.input is None:
        raise DataError("--input is required")
    if not cfg.input.exists():
        raise DataError(f"input not found: {cfg.input}")
    full = ingest.read_csv(cfg.input)
    for r in full.rejections:
        logger.info("rejected line %d: %s", r.line, r.reason)
    return full, ingest.partition(full, cfg.segment, cfg.day_group, cfg.timezone)


def _load_model(cfg: RunConfig, path: Path | None = None) -> clustering.ClusterModel:
    path = path or cfg.model_path
    if not path.exists():
        raise DataError(f"model not found: {path}")
    return clustering.ClusterModel.load(path)


def _metadata(cfg: RunConfig, data: ingest.Dataset) -> dict:
    stamps = [o.timestamp for o in data.observations]
    return {
        "segment": str(cfg.segment) if cfg.segment else "*",
        "temporal_group": cfg.day_group.value,
        "timezone": cfg.timezone,
        "date_range": [min(stamps).date().isoformat(), max(stamps).date().isoformat()] if stamps else [],
        "source": data.provenance,
    }


def _score(cfg: RunConfig, args, data: ingest.Dataset, model: clustering.ClusterModel):
    return scoring.score_dataset(data, model, threshold=cfg.outlier_threshold, metric=args.assign_metric)


def _cleaned_series(cfg: RunConfig, args, data: ingest.Dataset):
    if args.layout is None:
        raise DataError("--layout is required")
    if not args.layout.exists():
        raise DataError(f"layout not found: {args.layout}")
    layout = traveltime.DetectorLayout.read_csv(args.layout)
    model = _load_model(cfg)
    scored = _score(cfg, args, data, model)
    flagged = ()
    if args.exclude_flagged:
        rep = anomaly.flag_anomalous_clusters(anomaly.cluster_report(model, scored))
        flagged = [c.index for c in rep.flagged]
    rule = traveltime.rule_clean(data.observations)
    ml = traveltime.ml_clean(scored, cfg.outlier_threshold, flagged)
    tt_rule = traveltime.travel_time_series(layout, rule)
    tt_ml = traveltime.travel_time_series(layout, ml)
    return rule, ml, tt_rule, tt_ml


# --------------------------------------------------------------------------
# commands


def cmd_generate(cfg: RunConfig, args) -> None:
    if not args.scenario.exists():
        raise DataError(f"scenario not found: {args.scenario}")
    scenario = ingest.load_scenario(args.scenario)
    data = ingest.generate_synthetic(scenario)
    _write(cfg, "observations.csv", ingest.dataset_to_csv(data))
    extra = ""
    if args.layout is not None:
        layout = traveltime.DetectorLayout.read_csv(args.layout)
        gt = traveltime.ground_truth_from_dataset(data, layout)
        _write(cfg, "ground_truth.csv", gt.to_csv())
        extra = f"ground_truth_minutes={len(gt)}"
    _summary(cfg, 0, len(data), 0, extra)


def cmd_elbow(cfg: RunConfig, args) -> None:
    full, data = _load_input(cfg)
    z, params = clustering.standardize(data.features)
    curve = clustering.elbow_sweep(z, cfg.k_min, cfg.k_max, cfg.seed, cfg.restarts)
    knee = clustering.select_k_knee(curve, cfg.k)
    _write(cfg, "elbow.csv", report.elbow_csv(curve, knee))
    _summary(cfg, len(full) + len(full.rejections), params.n_used, len(full.rejections), f"knee={knee}")


def cmd_fit(cfg: RunConfig, args) -> None:
    full, data = _load_input(cfg)
    k = cfg.k
    if k is None:
        z, _ = clustering.standardize(data.features)
        k = clustering.select_k_knee(clustering.elbow_sweep(z, cfg.k_min, cfg.k_max, cfg.seed, cfg.restarts))
    model = clustering.fit_model(data.features, k, cfg.seed, cfg.restarts, _metadata(cfg, data))
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    model.save(cfg.model_path)
    _write(cfg, "spider.csv", report.emit_spider_data(model))
    _summary(cfg, len(full) + len(full.rejections), model.metadata["n_train"], len(full.rejections),
             f"k={k} ridge={model.ridge:g}")


def cmd_score(cfg: RunConfig, args) -> None:
    model = _load_model(cfg)
    full, data = _load_input(cfg)
    scored = _score(cfg, args, data, model)
    _write(cfg, "scored.csv", report.scored_csv(scored))
    outliers = sum(1 for s in scored if s.is_outlier)
    unscoreable = sum(1 for s in scored if not s.scoreable)
    _summary(cfg, len(full) + len(full.rejections), len(scored), len(full.rejections),
             f"outliers={outliers} unscoreable={unscoreable}")


def cmd_report(cfg: RunConfig, args) -> None:
    model = _load_model(cfg)
    full, data = _load_input(cfg)
    rep = anomaly.flag_anomalous_clusters(anomaly.cluster_report(model, _score(cfg, args, data, model)))
    _write(cfg, "cluster_report.csv", report.cluster_report_csv(rep))
    _write(cfg, "cluster_report.json", rep.to_json() + "\n")
    _summary(cfg, len(full) + len(full.rejections), rep.total, len(full.rejections),
             f"flagged={len(rep.flagged)} unscoreable={rep.unscoreable}")


def cmd_drift(cfg: RunConfig, args) -> None:
    base = _load_model(cfg, args.baseline)
    entries = []
    for path in args.other:
        other = _load_model(cfg, path)
        entries.append((args.baseline.stem, path.stem, anomaly.model_drift(base, other, args.symmetric)))
    _write(cfg, "drift.csv", report.drift_csv(entries))
    payload = [{"period_A": a, "period_B": b, **r.to_dict()} for a, b, r in entries]
    _write(cfg, "drift.json", json.dumps(payload, indent=2) + "\n")
    _summary(cfg, len(entries) + 1, len(entries), 0)


def cmd_regimes(cfg: RunConfig, args) -> None:
    model = _load_model(cfg)
    full, data = _load_input(cfg)
    scored = _score(cfg, args, data, model)
    pairs = []
    for det in data.detectors:
        raw = regimes.regime_series(scored, det)
        smooth = regimes.smooth_series(data.observations, model, cfg.window, args.centered,
                                       metric=args.assign_metric, detector_id=det)
        pairs.append((raw, smooth))
    _write(cfg, "regimes.csv", report.series_csv(pairs))
    _summary(cfg, len(full) + len(full.rejections), sum(len(r) for r, _ in pairs), len(full.rejections),
             f"detectors={len(pairs)}")


def cmd_traveltime(cfg: RunConfig, args) -> None:
    full, data = _load_input(cfg)
    rule, ml, tt_rule, tt_ml = _cleaned_series(cfg, args, data)
    _write(cfg, "travel_time_rule.csv", tt_rule.to_csv())
    _write(cfg, "travel_time_ml.csv", tt_ml.to_csv())
    _summary(cfg, len(full) + len(full.rejections), len(tt_rule), len(full.rejections),
             f"rule_kept={rule.kept_count} ml_kept={ml.kept_count}")


def cmd_compare(cfg: RunConfig, args) -> None:
    if args.ground_truth is None:
        raise DataError("--ground-truth is required")
    if not args.ground_truth.exists():
        raise DataError(f"ground truth not found: {args.ground_truth}")
    gt = traveltime.TravelTimeSeries.read_csv(args.ground_truth)
    rows_in = rejected = 0
    if args.rule_tt or args.ml_tt:
        if not (args.rule_tt and args.ml_tt):
            raise DataError("--rule-tt and --ml-tt go together")
        for p in (args.rule_tt, args.ml_tt):
            if not p.exists():
                raise DataError(f"travel-time file not found: {p}")
        tt_rule = traveltime.TravelTimeSeries.read_csv(args.rule_tt)
        tt_ml = traveltime.TravelTimeSeries.read_csv(args.ml_tt)
        rows_in = len(tt_rule) + len(tt_ml)
    else:
        full, data = _load_input(cfg)
        _, _, tt_rule, tt_ml = _cleaned_series(cfg, args, data)
        rows_in, rejected = len(full) + len(full.rejections), len(full.rejections)
    start, end = cfg.peak
    direction = cfg.segment.direction.value if cfg.segment else "*"
    groups = [TemporalGroup.MON_FRI, TemporalGroup.TUE_WED_THU]
    if cfg.day_group is not TemporalGroup.ALL:
        groups = [cfg.day_group]
    tables = []
    for g in groups:
        flt = traveltime.PeakFilter(start, end, True, g, cfg.timezone)
        short = {"MonFri": "MF", "TueWedThu": "TWT", "SatSun": "SS"}[g.value]
        tables.append(traveltime.agreement_table(tt_rule, tt_ml, gt, flt, f"{direction}/{short}"))
    _write(cfg, "agreement.csv", report.agreement_csv(tables))
    _write(cfg, "agreement.txt", traveltime.format_agreement(tables))
    try:
        flt = traveltime.PeakFilter(start, end, True, TemporalGroup.ALL, cfg.timezone)
        breakdown = traveltime.disagreement_breakdown(tt_rule, tt_ml, gt, flt)
        _write(cfg, "disagreement.json", json.dumps(breakdown.__dict__, indent=2) + "\n")
    except traveltime.EmptyCategory:
        _write(cfg, "disagreement.json", json.dumps({"n": 0}) + "\n")
    included = sum(t.total for t in tables)
    _summary(cfg, rows_in, included, rejected)


COMMANDS = {
    "generate": cmd_generate,
    "elbow": cmd_elbow,
    "fit": cmd_fit,
    "score": cmd_score,
    "report": cmd_report,
    "drift": cmd_drift,
    "regimes": cmd_regimes,
    "traveltime": cmd_traveltime,
    "compare": cmd_compare,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    cfg = make_config(args, parser)
    try:
        COMMANDS[cfg.command](cfg, args)
    except (DataError, ingest.FileUnreadable, ingest.HeaderMismatch, ingest.InvalidScenario,
            clustering.DegeneratePartition, clustering.TooFewDistinctPoints, clustering.CurveTooShort,
            scoring.TooFewPoints, scoring.NotInvertible, ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
