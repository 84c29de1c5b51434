"""Command-line entry point.

Exit codes: 0 success, 1 usage or configuration error, 2 data error.
"""
from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

import numpy as np

from . import config as cfgmod
from . import io
from .errors import ConfigError, SafeRouteError
from .fusion import FusedTable, build_table
from .heatmap import read_scores, write_heatmap
from .learn import format_table, scores as metric_scores
from .learn.gbdt import predict
from .pipeline import (ModelSet, cross_validate_table, level_accuracy, level_confusion, model_key,
                       predict_table, score_segments, temporal_split, train_models, write_scores)
from .risk import FuzzyEngine, LEVELS

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="YAML pipeline config")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--horizon", choices=("1", "2", "both"), default=None, help="prediction horizon(s)")
    p.add_argument("--simplified", action="store_true",
                   help="train: also fit simplified models; predict/score: route every row to them")
    p.add_argument("--out", type=Path, help="output directory (overrides paths.out)")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="saferoute", description="Conflict prediction and segment risk mapping.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", help="run the traffic simulator and write tracks and face frames")
    _common(p)

    p = sub.add_parser("ingest", help="match streams to tracks and write the fused feature table")
    _common(p)
    p.add_argument("--tracks", type=Path)
    p.add_argument("--faces", type=Path)
    p.add_argument("--calibration", type=Path)
    p.add_argument("--site", type=Path)

    p = sub.add_parser("train", help="train conflict models and print the evaluation report")
    _common(p)
    p.add_argument("--fused", type=Path)
    p.add_argument("--split", choices=("temporal", "none"), help="override train.split")

    for name, helptext in (("predict", "write per-row conflict predictions"),
                           ("score", "write per-segment actual and predicted risk scores")):
        p = sub.add_parser(name, help=helptext)
        _common(p)
        p.add_argument("--fused", type=Path)
        p.add_argument("--models", type=Path)
        p.add_argument("--holdout", action="store_true", help="only rows of the second (held-out) half")
        if name == "score":
            p.add_argument("--site", type=Path)

    p = sub.add_parser("heatmap", help="render score CSV as SVG heat map plus CSV")
    _common(p)
    p.add_argument("--scores", type=Path)
    p.add_argument("--mode", choices=("cells", "timeline", "both"), default="both")
    p.add_argument("--time", type=float, help="timestamp for cells mode (default: latest)")

    p = sub.add_parser("run-all", help="simulate, ingest, train, score and render end to end")
    _common(p)
    return parser


# ---------------------------------------------------------------- helpers

def _config(args) -> cfgmod.PipelineConfig:
    cfg = cfgmod.load(args.config) if args.config else cfgmod.PipelineConfig(base=Path.cwd())
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    if args.out is not None:
        cfg = dataclasses.replace(cfg, paths=dataclasses.replace(cfg.paths, out=str(args.out.resolve())))
    if args.horizon is not None:
        hs = (1, 2) if args.horizon == "both" else (int(args.horizon),)
        cfg = dataclasses.replace(cfg, horizons=hs)
    return cfg


def _input(cfg, override: Path | None, name: str) -> Path:
    path = override if override is not None else cfg.path(name)
    if not Path(path).exists():
        raise ConfigError(f"input not found: {path}")
    return Path(path)


def _output(cfg, name: str) -> Path:
    path = cfg.path(name)
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


def _emit(text: str) -> None:
    sys.stdout.write(text if text.endswith("\n") else text + "\n")


# --------------------------------------------------------------- commands

def cmd_simulate(cfg) -> dict:
    from .sim.face import scenario_streams
    from .sim.traffic import generate_scenario

    result = generate_scenario(cfg.scenario)
    streams = scenario_streams(result)
    io.write_tracks(_output(cfg, "tracks"), result.tracks)
    io.write_faces(_output(cfg, "faces"), streams)
    io.write_calibration(_output(cfg, "calibration"), streams)
    io.write_site(_output(cfg, "site"), result.config.lanes, result.config.segments, result.config.origin)
    result.trips.to_csv(_output(cfg, "tracks").parent / "trips.csv", index=False, lineterminator="\n")
    _emit(f"simulated {len(result.trips)} trips, {len(result.tracks)} track points, "
          f"{len(streams)} app streams -> {cfg.path('tracks').parent}")
    return {"result": result, "streams": streams}


def cmd_ingest(cfg, tracks=None, faces=None, calibration=None, site=None) -> FusedTable:
    lanes, segments, origin = io.read_site(_input(cfg, site, "site"))
    tr = io.read_tracks(_input(cfg, tracks, "tracks"))
    faces_path = faces if faces is not None else cfg.path("faces")
    streams = []
    if Path(faces_path).exists():
        calib = calibration if calibration is not None else cfg.path("calibration")
        streams = io.read_faces(faces_path, calib if Path(calib).exists() else None)
    elif faces is not None:
        raise ConfigError(f"input not found: {faces}")
    table = build_table(tr, lanes, segments, streams, sample_period=cfg.fusion.sample_period,
                        horizons=cfg.horizons, thresholds=cfg.thresholds, origin=origin,
                        radius=cfg.fusion.radius, time_tol=cfg.fusion.time_tol)
    table.to_csv(_output(cfg, "fused"))
    n_full = int((table.frame["variant"] == "full").sum()) if len(table) else 0
    _emit(f"fused {len(table)} rows ({n_full} with driver features) from {len(streams)} streams; "
          f"conflict prevalence {table.prevalence():.3f} -> {cfg.path('fused')}")
    return table


def _holdout_table(models: ModelSet, table: FusedTable, rows) -> str:
    lines = [f"{'model':<18}  {'accuracy':>9}  {'precision':>9}  {'recall':>9}  {'f1':>9}  rows"]
    for (variant, kind, h), model in sorted(models.models.items()):
        ds = table.dataset(kind, h, variant, rows)
        if len(ds) == 0:
            continue
        _, flags = predict(model, ds)
        m = metric_scores(ds.y, np.asarray(flags, dtype=int))
        lines.append(f"{model_key(variant, kind, h):<18}  {m['accuracy']:9.4f}  {m['precision']:9.4f}  "
                     f"{m['recall']:9.4f}  {m['f1']:9.4f}  {len(ds)}")
    return "\n".join(lines)


def cmd_train(cfg, fused=None, split=None, simplified=False) -> ModelSet:
    table = FusedTable.from_csv(_input(cfg, fused, "fused"))
    horizons = [h for h in cfg.horizons if h in table.horizons]
    if not horizons:
        raise ConfigError(f"fused table has no labels for horizons {cfg.horizons}")
    split = split or cfg.train.split
    if split == "temporal":
        train_rows, test_rows = temporal_split(table)
    else:
        train_rows, test_rows = np.ones(len(table), bool), None
    variants = ("full", "simplified") if (simplified or cfg.train.simplified) else ("full",)
    models = train_models(table, cfg.gbdt, train_rows, horizons=horizons, variants=variants,
                          rebalance=cfg.train.rebalance, k=cfg.train.smote_k, seed=cfg.seed)
    model_dir = cfg.path("models")
    for old in model_dir.glob("*_*_*s.json") if model_dir.exists() else ():
        old.unlink()
    models.save(model_dir)
    parts = [f"trained {len(models)} models on {int(np.sum(train_rows))} rows "
             f"(split={split}, rebalance={cfg.train.rebalance}) -> {model_dir}"]
    if cfg.train.cv_folds:
        reports = cross_validate_table(table, cfg.gbdt, train_rows, horizons=horizons, variants=("full",),
                                       rebalance=cfg.train.cv_rebalance, folds=cfg.train.cv_folds,
                                       k=cfg.train.smote_k, seed=cfg.seed)
        parts += ["", f"{cfg.train.cv_folds}-fold cross-validation (training rows, macro metrics)",
                  format_table(reports)]
    if test_rows is not None:
        parts += ["", "held-out second half (macro metrics)", _holdout_table(models, table, test_rows)]
    report = "\n".join(parts)
    _output(cfg, "report").write_text(report + "\n", encoding="utf-8")
    _emit(report)
    return models


def _rows(table: FusedTable, holdout: bool):
    return temporal_split(table)[1] if holdout else None


def cmd_predict(cfg, fused=None, models_dir=None, holdout=False, simplified=False):
    table = FusedTable.from_csv(_input(cfg, fused, "fused"))
    models = ModelSet.load(_input(cfg, models_dir, "models"))
    preds = predict_table(models, table, _rows(table, holdout), simplified_only=simplified)
    preds.to_csv(_output(cfg, "predictions"), index=False, lineterminator="\n", float_format="%.6f")
    _emit(f"predicted {len(preds)} rows -> {cfg.path('predictions')}")
    return preds


def cmd_score(cfg, fused=None, models_dir=None, site=None, holdout=False, simplified=False):
    _, segments, _ = io.read_site(_input(cfg, site, "site"))
    table = FusedTable.from_csv(_input(cfg, fused, "fused"))
    models = ModelSet.load(_input(cfg, models_dir, "models"))
    horizons = [h for h in cfg.horizons if h in models.horizons]
    preds = predict_table(models, table, _rows(table, holdout), simplified_only=simplified)
    scores = score_segments(preds, segments, horizons, FuzzyEngine(cfg.fuzzy))
    write_scores(scores, _output(cfg, "scores"))
    lines = [f"scored {len(scores)} segment-timestamps -> {cfg.path('scores')}"]
    for h in horizons:
        if len(scores):
            lines.append(f"five-level accuracy at {h} s: {level_accuracy(scores, h):.4f}")
            conf = level_confusion(scores, h)
            lines.append("  actual \\ predicted  " + " ".join(f"{lv[:6]:>7}" for lv in LEVELS))
            for lv, row in zip(LEVELS, conf):
                lines.append(f"  {lv:<19} " + " ".join(f"{v:7d}" for v in row))
    _emit("\n".join(lines))
    return scores


def cmd_heatmap(cfg, scores_path=None, mode="both", t=None):
    path = _input(cfg, scores_path, "scores")
    scores = read_scores(path)
    site = cfg.path("site")
    segments = None
    if site.exists():
        segments = io.read_site(site)[1].segment_ids
    out_dir = cfg.path("scores").parent
    written = []
    for m in (("cells", "timeline") if mode == "both" else (mode,)):
        written += write_heatmap(scores, out_dir, m, cfg.heatmap.window,
                                 t if t is not None else cfg.heatmap.cell_time, segments)
    _emit("wrote " + ", ".join(str(p) for p in written))
    return written


def cmd_run_all(cfg):
    cmd_simulate(cfg)
    cmd_ingest(cfg)
    cmd_train(cfg, simplified=True)
    cmd_score(cfg, holdout=cfg.train.split == "temporal")
    cmd_heatmap(cfg)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _config(args)
        if args.command == "simulate":
            cmd_simulate(cfg)
        elif args.command == "ingest":
            cmd_ingest(cfg, args.tracks, args.faces, args.calibration, args.site)
        elif args.command == "train":
            cmd_train(cfg, args.fused, args.split, args.simplified)
        elif args.command == "predict":
            cmd_predict(cfg, args.fused, args.models, args.holdout, args.simplified)
        elif args.command == "score":
            cmd_score(cfg, args.fused, args.models, args.site, args.holdout, args.simplified)
        elif args.command == "heatmap":
            cmd_heatmap(cfg, args.scores, args.mode, args.time)
        elif args.command == "run-all":
            cmd_run_all(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (SafeRouteError, ValueError, KeyError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
