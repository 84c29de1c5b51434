import gzip

import numpy as np
import pandas as pd
import pytest

from saferoute import config, io
from saferoute.errors import ConfigError, SchemaError
from saferoute.sim import PROFILES, ScenarioConfig, default_lanes, default_segments, generate_driver_stream, generate_scenario


def test_tracks_round_trip(tmp_path):
    r = generate_scenario(ScenarioConfig(vehicles=5, duration=5, warmup=0))
    path = tmp_path / "tracks.jsonl"
    io.write_tracks(path, r.tracks)
    back = io.read_tracks(path)
    want = r.tracks.sort_values(["vehicle_id", "t"], kind="mergesort").reset_index(drop=True)
    assert list(back.vehicle_id) == list(want.vehicle_id)
    assert np.allclose(back.s, want.s, atol=1e-6) and np.allclose(back.speed, want.speed, atol=1e-6)


def test_tracks_schema_errors(tmp_path):
    bad = tmp_path / "bad.jsonl"
    bad.write_text('{"vehicle_id": "a", "t": 0, "s": 1}\n')
    with pytest.raises(SchemaError):
        io.read_tracks(bad)
    bad.write_text('{"vehicle_id": "a", "t": 0, "s": 1, "lane_id": "L1", "speed": -2}\n')
    with pytest.raises(SchemaError):
        io.read_tracks(bad)
    bad.write_text("not json\n")
    with pytest.raises(SchemaError):
        io.read_tracks(bad)
    empty = tmp_path / "empty.jsonl"
    empty.write_text("")
    assert io.read_tracks(empty).empty


def test_faces_and_calibration_round_trip(tmp_path):
    st = generate_driver_stream(PROFILES["normal"], 3, seed=2, stream_id="app-1")
    faces, calib = tmp_path / "faces.jsonl.gz", tmp_path / "calibration.jsonl"
    io.write_faces(faces, [st])
    io.write_calibration(calib, [st])
    [back] = io.read_faces(faces, calib)
    assert back.stream_id == "app-1" and len(back) == len(st)
    assert np.allclose(back.landmarks, st.landmarks, atol=1e-6)
    assert np.allclose(back.aus, st.aus, atol=1e-6)
    assert np.allclose(back.calibration, st.calibration, atol=1e-6)
    assert back.road_reference == pytest.approx(st.road_reference, abs=1e-6)


def test_gzip_output_is_reproducible(tmp_path):
    st = generate_driver_stream(PROFILES["normal"], 1, seed=0)
    a, b = tmp_path / "a.jsonl.gz", tmp_path / "b.jsonl.gz"
    io.write_faces(a, [st])
    io.write_faces(b, [st])
    assert a.read_bytes() == b.read_bytes()
    assert gzip.decompress(a.read_bytes()).count(b"\n") == len(st)


def test_face_record_missing_fields(tmp_path):
    p = tmp_path / "faces.jsonl"
    p.write_text('{"t": 0.0, "landmarks": []}\n')
    with pytest.raises(SchemaError):
        io.read_faces(p)
    p.write_text('[1, 2]\n')
    with pytest.raises(SchemaError):
        io.read_faces(p)


def test_site_round_trip(tmp_path):
    lanes, segs = default_lanes(), default_segments()
    p = tmp_path / "site.json"
    io.write_site(p, lanes, segs, (-77.4, 37.5))
    lanes2, segs2, origin = io.read_site(p)
    assert lanes2 == lanes and segs2.to_dict() == segs.to_dict() and origin == (-77.4, 37.5)
    p.write_text('{"lanes": [{"lane_id": "L1"}]}')
    with pytest.raises(SchemaError):
        io.read_site(p)


def test_config_defaults(tmp_path):
    p = tmp_path / "c.yaml"
    p.write_text("seed: 3\n")
    cfg = config.load(p)
    assert cfg.seed == 3 and cfg.scenario.seed == 3 and cfg.horizons == (1, 2)
    assert cfg.path("scores") == tmp_path / "out" / "scores.csv"
    assert cfg.train.rebalance is False


def test_config_sections(tmp_path):
    cfg = config.from_dict({"scenario": {"vehicles": 10, "mix": {"normal": 0.5, "aggressive": 0.5}},
                            "gbdt": {"trees": 20}, "train": {"cv_folds": 0}})
    assert cfg.scenario.vehicles == 10 and dict(cfg.scenario.mix) == {"normal": 0.5, "aggressive": 0.5}
    assert cfg.gbdt.trees == 20 and cfg.train.cv_folds == 0


@pytest.mark.parametrize("data", [
    {"bogus": 1}, {"train": {"bogus": 1}}, {"scenario": {"speed": 3}}, {"gbdt": {"depth": 3}},
    {"horizons": [3]}, {"seed": "x"}, {"train": {"split": "random"}}, {"train": {"cv_folds": 1}},
    {"scenario": {"mix": {"normal": 0.5, "aggressive": 0.4}}}, {"heatmap": {"window": 0}}])
def test_config_rejects(data):
    with pytest.raises(ConfigError):
        config.from_dict(data)


def test_config_file_errors(tmp_path):
    with pytest.raises(ConfigError):
        config.load(tmp_path / "missing.yaml")
    p = tmp_path / "bad.yaml"
    p.write_text("a: [1, 2\n")
    with pytest.raises(ConfigError):
        config.load(p)
    p.write_text("- 1\n- 2\n")
    with pytest.raises(ConfigError):
        config.load(p)
