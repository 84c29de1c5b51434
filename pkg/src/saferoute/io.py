"""JSON-lines readers and writers for tracks, face frames, calibration and site files.

Paths ending in ``.gz`` are gzip-compressed with a zeroed header timestamp
so equal content gives equal bytes.
"""
from __future__ import annotations

import gzip
import io
import json
from contextlib import contextmanager
from pathlib import Path
from typing import Iterable, Iterator, Mapping

import numpy as np
import pandas as pd

from .driver import AU_COLUMNS, normalise_aus
from .errors import SchemaError
from .trajectory import LaneShape, SegmentMap

TRACK_FIELDS = ("vehicle_id", "t", "s", "lane_id", "segment_id", "heading", "speed", "accel", "x", "y")
TRACK_REQUIRED = ("vehicle_id", "t", "s", "lane_id")
FACE_REQUIRED = ("t", "landmarks", "head_pose", "eye_gaze", "aus", "gps")
DIGITS = 6


@contextmanager
def _open_text(path, mode: str):
    path = Path(path)
    if path.suffix == ".gz":
        if "w" in mode:
            with open(path, "wb") as raw, gzip.GzipFile(fileobj=raw, mode="wb", mtime=0, filename="", compresslevel=1) as gz, \
                    io.TextIOWrapper(gz, encoding="utf-8", newline="\n") as fh:
                yield fh
        else:
            with gzip.open(path, "rt", encoding="utf-8") as fh:
                yield fh
    else:
        with open(path, mode, encoding="utf-8", newline="\n" if "w" in mode else None) as fh:
            yield fh


def _dumps(obj) -> str:
    return json.dumps(obj, separators=(",", ":"), allow_nan=False)


def read_jsonl(path) -> Iterator[dict]:
    with _open_text(path, "r") as fh:
        for n, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise SchemaError(f"{path}:{n}: invalid JSON ({exc.msg})") from None
            if not isinstance(rec, dict):
                raise SchemaError(f"{path}:{n}: expected an object")
            yield rec


def write_jsonl(path, records: Iterable[Mapping]) -> None:
    with _open_text(path, "w") as fh:
        for rec in records:
            fh.write(_dumps(rec))
            fh.write("\n")


def _round(x):
    return np.round(np.asarray(x, dtype=float), DIGITS).tolist()


# ------------------------------------------------------------------ tracks

def write_tracks(path, tracks: pd.DataFrame) -> None:
    cols = [c for c in TRACK_FIELDS if c in tracks]
    df = tracks[cols].copy()
    for c in cols:
        if c in ("vehicle_id", "lane_id", "segment_id"):
            df[c] = df[c].astype(str)
        else:
            df[c] = np.round(df[c].to_numpy(dtype=float), DIGITS)
    _write_frame(path, df)


def _write_frame(path, df: pd.DataFrame) -> None:
    text = df.to_json(orient="records", lines=True, double_precision=10) if len(df) else ""
    with _open_text(path, "w") as fh:
        fh.write(text)
        if text and not text.endswith("\n"):
            fh.write("\n")


def read_tracks(path) -> pd.DataFrame:
    try:
        df = pd.read_json(path, lines=True, convert_dates=False, compression="infer",
                          dtype={"vehicle_id": str, "lane_id": str, "segment_id": str})
    except ValueError as exc:
        raise SchemaError(f"{path}: malformed track file ({exc})") from None
    if df.empty:
        return pd.DataFrame(columns=list(TRACK_FIELDS))
    missing = [k for k in TRACK_REQUIRED if k not in df]
    if missing or df[list(TRACK_REQUIRED)].isna().any().any():
        raise SchemaError(f"{path}: track records lack {missing or 'values for required fields'}")
    for c in ("vehicle_id", "lane_id", "segment_id"):
        if c in df:
            df[c] = df[c].astype(str)
    for c in ("t", "s", "heading", "speed", "accel", "x", "y"):
        if c in df:
            try:
                df[c] = pd.to_numeric(df[c], errors="raise").astype(float)
            except (ValueError, TypeError):
                raise SchemaError(f"{path}: non-numeric values in {c!r}") from None
    if "speed" in df and (df["speed"] < 0).any():
        raise SchemaError(f"{path}: negative speed")
    return df.sort_values(["vehicle_id", "t"], kind="mergesort").reset_index(drop=True)


# ------------------------------------------------------------------- faces

def write_faces(path, streams) -> None:
    frames = []
    for st in streams:
        names = [f"AU{u:02d}" for u in st.au_numbers]
        frames.append(pd.DataFrame({
            "stream_id": st.stream_id,
            "t": np.round(np.asarray(st.t, dtype=float), DIGITS),
            "landmarks": list(np.round(np.asarray(st.landmarks, dtype=float), DIGITS)),
            "head_pose": list(np.round(np.asarray(st.head_pose, dtype=float), DIGITS)),
            "eye_gaze": list(np.round(np.asarray(st.eye_gaze, dtype=float), DIGITS)),
            "aus": [dict(zip(names, row)) for row in np.round(np.asarray(st.aus, dtype=float), DIGITS).tolist()],
            "gps": list(np.round(np.asarray(st.gps, dtype=float), 9)),
            "speed": np.round(np.asarray(st.speed, dtype=float), DIGITS),
        }))
    with _open_text(path, "w") as fh:
        for df in frames:
            if len(df):
                text = df.to_json(orient="records", lines=True, double_precision=10)
                fh.write(text if text.endswith("\n") else text + "\n")


def write_calibration(path, streams) -> None:
    def records():
        for st in streams:
            yield {"stream_id": st.stream_id, "road_reference": _round(st.road_reference)}
            for p in _round(st.calibration):
                yield {"stream_id": st.stream_id, "point": p}
    write_jsonl(path, records())


def read_calibration(path) -> dict[str, tuple[np.ndarray, tuple[float, float]]]:
    points: dict[str, list] = {}
    refs: dict[str, tuple[float, float]] = {}
    for n, rec in enumerate(read_jsonl(path), 1):
        sid = str(rec.get("stream_id", ""))
        if "road_reference" in rec:
            refs[sid] = tuple(float(v) for v in rec["road_reference"])
        elif "point" in rec:
            points.setdefault(sid, []).append([float(v) for v in rec["point"]])
        else:
            raise SchemaError(f"{path}:{n}: calibration record needs 'point' or 'road_reference'")
    out = {}
    for sid in sorted(set(points) | set(refs)):
        pts = np.asarray(points.get(sid, []), dtype=float).reshape(-1, 2)
        out[sid] = (pts, refs.get(sid, refs.get("", (0.0, 0.0))))
    return out


def _au_matrix(maps: list[Mapping]) -> np.ndarray:
    """AU activations in ``AU_COLUMNS`` order; key spellings are parsed once per distinct key set."""
    out = np.zeros((len(maps), len(AU_COLUMNS)))
    col = {u: i for i, u in enumerate(AU_COLUMNS)}
    layouts: dict[tuple, list] = {}
    for i, m in enumerate(maps):
        keys = tuple(m)
        if keys not in layouts:
            nums = list(normalise_aus({k: 0.0 for k in keys}))
            layouts[keys] = [col.get(n) for n in nums]
        for j, v in zip(layouts[keys], m.values()):
            if j is not None:
                out[i, j] = float(v)
    return out


def read_faces(path, calibration_path=None) -> list:
    """Face streams grouped by ``stream_id`` (records without one form stream ``""``)."""
    from .sim.face import FaceStream

    groups: dict[str, list[dict]] = {}
    for n, rec in enumerate(read_jsonl(path), 1):
        missing = [k for k in FACE_REQUIRED if k not in rec]
        if missing:
            raise SchemaError(f"{path}:{n}: face record lacks {missing}")
        groups.setdefault(str(rec.get("stream_id", "")), []).append(rec)
    calib = read_calibration(calibration_path) if calibration_path else {}
    streams = []
    for sid in sorted(groups):
        recs = sorted(groups[sid], key=lambda r: r["t"])
        m = len(recs)
        try:
            lm = np.asarray([r["landmarks"] for r in recs], dtype=float).reshape(m, 68, 2)
            aus = _au_matrix([r["aus"] for r in recs])
            stream = FaceStream(
                sid, np.asarray([r["t"] for r in recs], dtype=float), lm,
                np.asarray([r["head_pose"] for r in recs], dtype=float).reshape(m, 2),
                np.asarray([r["eye_gaze"] for r in recs], dtype=float).reshape(m, 2),
                aus.reshape(m, len(AU_COLUMNS)),
                np.asarray([r["gps"] for r in recs], dtype=float).reshape(m, 2),
                np.asarray([r.get("speed", 0.0) for r in recs], dtype=float))
        except (ValueError, TypeError) as exc:
            raise SchemaError(f"{path}: stream {sid!r}: malformed frame ({exc})") from None
        if sid in calib:
            stream.calibration, stream.road_reference = calib[sid]
        streams.append(stream)
    return streams


# -------------------------------------------------------------------- site

def write_site(path, lanes: Iterable[LaneShape], segments: SegmentMap, origin) -> None:
    doc = {"origin": list(origin),
           "lanes": [{"lane_id": l.lane_id, "shape": l.shape, "speed_limit": l.speed_limit, "length": l.length}
                     for l in lanes],
           "segments": segments.to_dict()}
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def read_site(path) -> tuple[tuple[LaneShape, ...], SegmentMap, tuple[float, float]]:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        lanes = tuple(LaneShape(str(l["lane_id"]), l["shape"], float(l["speed_limit"]), float(l["length"]))
                      for l in doc["lanes"])
        segments = SegmentMap.from_dict(doc["segments"])
        origin = tuple(float(v) for v in doc.get("origin", (0.0, 0.0)))
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaError(f"{path}: malformed site file ({exc})") from None
    return lanes, segments, origin
