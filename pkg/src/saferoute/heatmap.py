"""SVG heat maps of segment risk scores.

``cells`` draws one timestamp as a segments x {actual, predicted} x horizon
grid; ``timeline`` draws segments against tumbling time windows. Fill colors
are the five level colors and nothing else.
"""
from __future__ import annotations

from pathlib import Path
from typing import Sequence
from xml.sax.saxutils import escape

import numpy as np
import pandas as pd

from .errors import SchemaError
from .risk import COLOR_HEX, bin_level, window_average

CELL_W, CELL_H = 90, 28
LABEL_W, HEADER_H = 70, 34
FONT = 'font-family="sans-serif" font-size="12"'


def read_scores(path) -> pd.DataFrame:
    try:
        df = pd.read_csv(path, dtype={"segment_id": str})
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as exc:
        raise SchemaError(f"{path}: unreadable score CSV ({exc})") from None
    if "segment_id" not in df or "t" not in df:
        raise SchemaError(f"{path}: score CSV needs segment_id and t columns")
    score_cols = [c for c in df.columns if c.startswith(("actual_", "predicted_"))]
    if not score_cols:
        raise SchemaError(f"{path}: no actual_/predicted_ score columns")
    for c in ["t", *score_cols]:
        vals = pd.to_numeric(df[c], errors="coerce")
        if vals.isna().any():
            raise SchemaError(f"{path}: non-numeric values in {c!r}")
        df[c] = vals.astype(float)
        if c != "t" and ((df[c] < 0) | (df[c] > 100)).any():
            raise SchemaError(f"{path}: scores in {c!r} outside [0, 100]")
    return df


def _horizons(df: pd.DataFrame) -> list[int]:
    hs = sorted({int(c.split("_")[1][:-1]) for c in df.columns
                 if c.startswith("actual_") and c.endswith("s") and c.split("_")[1][:-1].isdigit()})
    return [h for h in hs if f"predicted_{h}s" in df]


def cells_table(df: pd.DataFrame, t: float | None = None, segments: Sequence[str] | None = None) -> pd.DataFrame:
    """Long table (segment_id, column, score, level, color) for one timestamp.

    Segments with no vehicle at that timestamp score 0.
    """
    horizons = _horizons(df)
    columns = [f"{kind}_{h}s" for h in horizons for kind in ("actual", "predicted")]
    segs = list(segments) if segments is not None else sorted(df["segment_id"].unique())
    if t is None:
        t = float(df["t"].max()) if len(df) else 0.0
    at = df[np.isclose(df["t"], t, atol=1e-6)].set_index("segment_id") if len(df) else df
    rows = []
    for seg in segs:
        for col in columns:
            score = float(at.at[seg, col]) if seg in at.index else 0.0
            level, color = bin_level(score)
            rows.append((seg, col, score, level, color))
    out = pd.DataFrame(rows, columns=["segment_id", "column", "score", "level", "color"])
    out.attrs["t"] = t
    return out


def timeline_table(df: pd.DataFrame, column: str | None = None, window: float = 60.0,
                   segments: Sequence[str] | None = None) -> pd.DataFrame:
    """Windowed mean score per (segment, window_start)."""
    if column is None:
        hs = _horizons(df)
        column = f"predicted_{hs[0]}s" if hs else "predicted_1s"
    if column not in df:
        raise SchemaError(f"score column {column!r} missing")
    if len(df) == 0:
        return pd.DataFrame(columns=["segment_id", "window_start", "score", "level", "color"])
    w = window_average(df[["segment_id", "t", column]], window, value=column).rename(columns={column: "score"})
    if segments is not None:
        w = w[w["segment_id"].isin(segments)]
    levels = [bin_level(float(s)) for s in w["score"]]
    w["level"] = [lv for lv, _ in levels]
    w["color"] = [c for _, c in levels]
    w.attrs["column"] = column
    return w.reset_index(drop=True)


def _svg(width: int, height: int, body: list[str], title: str) -> str:
    head = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f"<title>{escape(title)}</title>",
    ]
    return "\n".join(head + body + ["</svg>", ""])


def _cell(x: int, y: int, score: float, color: str) -> list[str]:
    return [f'<rect x="{x}" y="{y}" width="{CELL_W}" height="{CELL_H}" fill="{COLOR_HEX[color]}" '
            f'stroke="#000000" stroke-width="1"/>',
            f'<text x="{x + CELL_W // 2}" y="{y + CELL_H // 2 + 4}" text-anchor="middle" {FONT}>'
            f'{score:.1f}</text>']


def render_cells(table: pd.DataFrame) -> str:
    segs = list(dict.fromkeys(table["segment_id"]))
    cols = list(dict.fromkeys(table["column"]))
    width = LABEL_W + CELL_W * len(cols)
    height = HEADER_H + CELL_H * len(segs)
    body = []
    for j, col in enumerate(cols):
        x = LABEL_W + j * CELL_W + CELL_W // 2
        body.append(f'<text x="{x}" y="{HEADER_H - 10}" text-anchor="middle" {FONT}>{escape(col)}</text>')
    lookup = {(r.segment_id, r.column): r for r in table.itertuples(index=False)}
    for i, seg in enumerate(segs):
        y = HEADER_H + i * CELL_H
        body.append(f'<text x="{LABEL_W - 8}" y="{y + CELL_H // 2 + 4}" text-anchor="end" {FONT}>{escape(seg)}</text>')
        for j, col in enumerate(cols):
            r = lookup[(seg, col)]
            body += _cell(LABEL_W + j * CELL_W, y, r.score, r.color)
    t = table.attrs.get("t")
    return _svg(width, height, body, f"segment risk at t={t:.2f} s" if t is not None else "segment risk")


def render_timeline(table: pd.DataFrame, segments: Sequence[str] | None = None) -> str:
    segs = list(segments) if segments is not None else sorted(table["segment_id"].unique())
    windows = sorted(table["window_start"].unique()) if len(table) else []
    width = LABEL_W + CELL_W * max(len(windows), 1)
    height = HEADER_H + CELL_H * max(len(segs), 1)
    body = []
    for j, w in enumerate(windows):
        x = LABEL_W + j * CELL_W + CELL_W // 2
        body.append(f'<text x="{x}" y="{HEADER_H - 10}" text-anchor="middle" {FONT}>{w:g} s</text>')
    lookup = {(r.segment_id, r.window_start): r for r in table.itertuples(index=False)}
    for i, seg in enumerate(segs):
        y = HEADER_H + i * CELL_H
        body.append(f'<text x="{LABEL_W - 8}" y="{y + CELL_H // 2 + 4}" text-anchor="end" {FONT}>{escape(seg)}</text>')
        for j, w in enumerate(windows):
            r = lookup.get((seg, w))
            # a window with no vehicle in the segment counts as an empty segment
            score, color = (r.score, r.color) if r is not None else (0.0, "green")
            body += _cell(LABEL_W + j * CELL_W, y, score, color)
    col = table.attrs.get("column", "score")
    return _svg(width, height, body, f"windowed {col}")


def write_heatmap(scores: pd.DataFrame, out_dir, mode: str = "cells", window: float = 60.0,
                  t: float | None = None, segments: Sequence[str] | None = None,
                  column: str | None = None) -> tuple[Path, Path]:
    """Write ``heatmap_<mode>.svg`` and ``heatmap_<mode>.csv`` into ``out_dir``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if mode == "cells":
        table = cells_table(scores, t, segments)
        svg = render_cells(table)
    elif mode == "timeline":
        table = timeline_table(scores, column, window, segments)
        svg = render_timeline(table, segments)
    else:
        raise ValueError(f"unknown heat-map mode {mode!r}")
    svg_path = out_dir / f"heatmap_{mode}.svg"
    csv_path = out_dir / f"heatmap_{mode}.csv"
    svg_path.write_text(svg, encoding="utf-8", newline="\n")
    table.to_csv(csv_path, index=False, lineterminator="\n", float_format="%.4f")
    return svg_path, csv_path
