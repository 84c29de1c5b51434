import hashlib
import json
import shutil

import numpy as np
import pandas as pd
import pytest

from saferoute import io
from saferoute.cli import main
from saferoute.fusion import FusedTable

SMALL = """
scenario:
  duration: 120
  vehicles: 30
train:
  cv_folds: 0
"""
FREE = """
scenario:
  duration: 60
  vehicles: 4
  braking_rate: 0
  lane_changes: false
  mix: {normal: 1.0}
train:
  cv_folds: 0
"""


def digest(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    root = tmp_path_factory.mktemp("run")
    cfg = root / "c.yaml"
    cfg.write_text(SMALL)
    assert run("simulate", "--config", cfg) == 0
    assert run("ingest", "--config", cfg) == 0
    assert run("train", "--config", cfg, "--simplified") == 0
    return root, cfg


def near_miss_tracks(path):
    """Follower at 15 m/s brakes at 8 m/s^2 only 20 m behind a stopped leader in segment S4."""
    t = np.round(np.arange(0, 10.0001, 0.05), 2)
    v0, a, t_brake = 15.0, 8.0, 80 / 15
    tb = np.clip(t - t_brake, 0, v0 / a)
    s = 60 + v0 * np.minimum(t, t_brake) + v0 * tb - 0.5 * a * tb ** 2
    acc = np.where((t >= t_brake) & (tb < v0 / a), -a, 0.0)
    follower = pd.DataFrame(dict(vehicle_id="f", t=t, s=s, lane_id="L2", speed=v0 - a * tb, accel=acc))
    leader = pd.DataFrame(dict(vehicle_id="l", t=t, s=160.0, lane_id="L2", speed=0.0, accel=0.0))
    io.write_tracks(path, pd.concat([follower, leader]))


def test_simulate_outputs_parse_and_repeat(trained, tmp_path):
    root, cfg = trained
    out = root / "out"
    tracks = io.read_tracks(out / "tracks.jsonl")
    assert len(tracks) and io.read_faces(out / "faces.jsonl.gz", out / "calibration.jsonl")
    assert run("simulate", "--config", cfg, "--out", tmp_path) == 0
    for name in ("tracks.jsonl", "faces.jsonl.gz", "calibration.jsonl", "site.json"):
        assert digest(out / name) == digest(tmp_path / name)


def test_train_writes_twelve_models_and_repeats(trained, tmp_path):
    root, cfg = trained
    models = sorted((root / "out" / "models").glob("*.json"))
    models = [m for m in models if m.name != "manifest.json"]
    assert len(models) == 12
    assert run("train", "--config", cfg, "--simplified", "--fused", root / "out" / "fused.csv", "--out", tmp_path) == 0
    for m in models:
        assert digest(m) == digest(tmp_path / "models" / m.name)


def test_separable_toy_reports_accuracy_one(trained, tmp_path, capsys):
    root, _ = trained
    table = FusedTable.from_csv(root / "out" / "fused.csv")
    frame = table.frame.copy()
    for c in frame.columns:
        if c.endswith(("_1s", "_2s")):
            frame[c] = frame["in_queue"].astype(int)
    table.frame = frame
    table.to_csv(tmp_path / "toy.csv")
    cfg = tmp_path / "t.yaml"
    cfg.write_text("train:\n  cv_folds: 3\n")
    capsys.readouterr()
    assert run("train", "--config", cfg, "--fused", tmp_path / "toy.csv", "--split", "none") == 0
    rows = [l.split() for l in capsys.readouterr().out.splitlines() if l.startswith("full_")]
    assert len(rows) == 6 and all(float(r[1]) == 1.0 for r in rows)


def test_free_flow_scores_low(trained, tmp_path):
    root, _ = trained
    cfg = tmp_path / "free.yaml"
    cfg.write_text(FREE)
    assert run("simulate", "--config", cfg) == 0
    site = tmp_path / "out" / "site.json"
    doc = json.loads(site.read_text())
    for seg in doc["segments"]:
        seg["crashes_per_year"] = 2.0
    site.write_text(json.dumps(doc))
    assert run("ingest", "--config", cfg) == 0
    assert run("score", "--config", cfg, "--models", root / "out" / "models") == 0
    scores = pd.read_csv(tmp_path / "out" / "scores.csv")
    cols = [c for c in scores.columns if c.startswith(("actual_", "predicted_"))]
    assert len(scores) and (scores[cols] < 40).all().all()


def test_near_miss_in_high_crash_segment(trained, tmp_path):
    root, cfg = trained
    near_miss_tracks(tmp_path / "nm.jsonl")
    site = root / "out" / "site.json"
    assert run("ingest", "--config", cfg, "--tracks", tmp_path / "nm.jsonl", "--site", site, "--out", tmp_path) == 0
    assert run("score", "--config", cfg, "--models", root / "out" / "models", "--site", site, "--out", tmp_path) == 0
    scores = pd.read_csv(tmp_path / "scores.csv")
    s4 = scores[scores.segment_id == "S4"]
    assert (s4[["predicted_1s", "predicted_2s"]] >= 60).any().all()


def test_empty_stream_gives_header_only_scores(trained, tmp_path):
    root, cfg = trained
    (tmp_path / "empty.jsonl").write_text("")
    site = root / "out" / "site.json"
    assert run("ingest", "--config", cfg, "--tracks", tmp_path / "empty.jsonl", "--site", site, "--out", tmp_path) == 0
    assert run("score", "--config", cfg, "--models", root / "out" / "models", "--site", site, "--out", tmp_path) == 0
    lines = (tmp_path / "scores.csv").read_text().splitlines()
    assert len(lines) == 1 and lines[0].startswith("segment_id,t,")
    assert run("heatmap", "--config", cfg, "--scores", tmp_path / "scores.csv", "--out", tmp_path) == 0


def test_usage_errors_exit_1(tmp_path):
    with pytest.raises(SystemExit) as exc:
        run("frobnicate")
    assert exc.value.code == 1
    with pytest.raises(SystemExit) as exc:
        run("train", "--horizon", "3")
    assert exc.value.code == 1
    bad = tmp_path / "bad.yaml"
    bad.write_text("scenario:\n  mix: {normal: 0.5, aggressive: 0.4}\n")
    assert run("simulate", "--config", bad) == 1
    assert run("simulate", "--config", tmp_path / "missing.yaml") == 1
    assert run("train", "--out", tmp_path) == 1


def test_data_errors_exit_2(tmp_path):
    bad = tmp_path / "scores.csv"
    bad.write_text("segment_id,t,actual_1s\nS1,0,abc\n")
    assert run("heatmap", "--scores", bad, "--out", tmp_path) == 2
    fused = tmp_path / "fused.csv"
    fused.write_text("a,b\n1,2\n")
    assert run("train", "--fused", fused, "--out", tmp_path) == 2
