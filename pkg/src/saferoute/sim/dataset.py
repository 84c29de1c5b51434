"""Labelled learner datasets straight from a simulation run."""
from __future__ import annotations

from typing import Sequence

from ..fusion import FusedTable, build_table
from ..learn.dataset import Dataset
from ..tci import DEFAULT_THRESHOLDS, INDICATORS, Thresholds
from .face import scenario_streams
from .traffic import ScenarioConfig, SimResult, generate_scenario


def simulate_table(config: ScenarioConfig = ScenarioConfig(), sample_period: float = 0.5,
                   horizons: Sequence[int] = (1, 2), thresholds: Thresholds = DEFAULT_THRESHOLDS,
                   result: SimResult | None = None) -> tuple[SimResult, FusedTable]:
    """Run (or reuse) a scenario, render its app streams and fuse everything."""
    result = result or generate_scenario(config)
    streams = scenario_streams(result)
    table = build_table(result.tracks, result.config.lanes, result.config.segments, streams,
                        sample_period=sample_period, horizons=horizons, thresholds=thresholds,
                        origin=result.config.origin)
    return result, table


def build_dataset(table: FusedTable, horizons: Sequence[int] | None = None,
                  variant: str = "full") -> dict[tuple[str, int], Dataset]:
    """One dataset per (indicator, horizon); six for the default horizons."""
    return {(kind, h): table.dataset(kind, h, variant)
            for kind in INDICATORS for h in (horizons or table.horizons)}
