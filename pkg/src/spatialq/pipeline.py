"""Signal pair -> per-head difference tensors -> multi-head score."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DataError, SpatialQError
from .features import AnalysisConfig, BandPlan, DifferenceTensor, erb_band_plan, feature_difference, feature_grid
from .hoa import SoundFieldSignal, load_soundfield
from .qnet import ModelParams, NetConfig, forward
from .render import MAX_HEADS, RenderFilterSet, render_binaural


def analysis_for(net: NetConfig, base: AnalysisConfig | None = None) -> AnalysisConfig:
    """Analysis settings implied by a model (frame length, band and feature count)."""
    base = base or AnalysisConfig()
    return replace(
        base,
        band_count=net.band_count,
        frame_duration=net.frame_ms / 1000.0,
        include_diffuseness=net.feature_count == 4,
    )


def signal_features(signal: SoundFieldSignal, head: RenderFilterSet, analysis: AnalysisConfig,
                    plan: BandPlan | None = None):
    binaural = render_binaural(signal, head)
    foa = signal.foa() if analysis.include_diffuseness else None
    return feature_grid(binaural, foa, analysis, plan)


def pair_difference(ref: SoundFieldSignal, deg: SoundFieldSignal, head: RenderFilterSet,
                    analysis: AnalysisConfig, plan: BandPlan | None = None) -> DifferenceTensor:
    if ref.sample_rate != deg.sample_rate:
        raise DataError("reference and degraded sample rates differ")
    plan = plan or erb_band_plan(analysis)
    return feature_difference(
        signal_features(ref, head, analysis, plan), signal_features(deg, head, analysis, plan)
    )


@dataclass(frozen=True)
class MetricScore:
    score: float  # 0-100
    per_head: dict[str, float]


def score_pair(ref: SoundFieldSignal, deg: SoundFieldSignal, heads: Sequence[RenderFilterSet],
               params: ModelParams, net: NetConfig, analysis: AnalysisConfig | None = None) -> MetricScore:
    """Average of single-head scores, on the 0-100 scale."""
    if not 1 <= len(heads) <= MAX_HEADS:
        raise DataError(f"need between 1 and {MAX_HEADS} heads, got {len(heads)}")
    analysis = analysis or analysis_for(net)
    plan = erb_band_plan(analysis)
    per_head = {}
    for head in heads:
        try:
            diff = pair_difference(ref, deg, head, analysis, plan)
        except SpatialQError as exc:
            raise type(exc)(f"head {head.name!r}: {exc}") from exc
        per_head[head.name] = 100.0 * forward(diff, params, net)[0]
    return MetricScore(float(np.mean(list(per_head.values()))), per_head)


class DifferenceCache:
    """Difference tensors per (pair, head), computed once.

    Reference grids are shared between every pair that uses the same file.
    ``prefetch`` spreads the work over ``threads`` workers; results never
    depend on the thread count.
    """

    def __init__(self, heads: Sequence[RenderFilterSet], analysis: AnalysisConfig, threads: int = 1):
        self.heads = list(heads)
        self.analysis = analysis
        self.plan = erb_band_plan(analysis)
        self.threads = max(1, int(threads))
        self._grids: dict[tuple[Path, int], np.ndarray] = {}
        self._diffs: dict[tuple[str, int], np.ndarray] = {}

    def _grids_for(self, path: Path) -> list:
        signal = load_soundfield(path)
        return [signal_features(signal, head, self.analysis, self.plan) for head in self.heads]

    def prefetch(self, pairs) -> None:
        paths = []
        for pair in pairs:
            for p in (pair.ref_path, pair.deg_path):
                if p not in paths and (p, 0) not in self._grids:
                    paths.append(p)
        if self.threads > 1:
            with ThreadPoolExecutor(self.threads) as pool:
                results = list(pool.map(self._grids_for, paths))
        else:
            results = [self._grids_for(p) for p in paths]
        for path, grids in zip(paths, results):
            for k, grid in enumerate(grids):
                self._grids[(path, k)] = grid

    def get(self, pair, head_index: int) -> np.ndarray:
        key = (pair.id, head_index)
        if key not in self._diffs:
            if (pair.ref_path, head_index) not in self._grids:
                self.prefetch([pair])
            diff = feature_difference(
                self._grids[(pair.ref_path, head_index)], self._grids[(pair.deg_path, head_index)]
            )
            self._diffs[key] = diff.values
        return self._diffs[key]
