"""The per-subcarrier preprocessing chain.

Each subcarrier column of an amplitude matrix runs through: median
despiking -> Butterworth low-pass -> EMD high-frequency removal ->
min-max normalization; the first 49 columns are retained as features.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass, field

import numpy as np

from .emd import SiftConfig, emd_decompose, emd_remove_high_freq
from .errors import EmptyInputError
from .filters import MedianConfig, apply_iir, design_butterworth, median_filter
from .ingest import DEFAULT_FEATURE_COUNT, select_subcarriers


@dataclass(frozen=True)
class NormStats:
    x_min: float
    x_max: float


def minmax_normalize(x) -> tuple[np.ndarray, NormStats]:
    """Affinely map a series onto [0, 1].

    A constant series maps to all zeros (degenerate rule; keeps the
    all-quiet case well defined instead of dividing by zero).
    """
    x = np.asarray(x, dtype=np.float64)
    if x.size == 0:
        raise EmptyInputError("minmax_normalize: empty series")
    x_min = float(x.min())
    x_max = float(x.max())
    if x_max == x_min:
        return np.zeros_like(x), NormStats(x_min, x_max)
    return (x - x_min) / (x_max - x_min), NormStats(x_min, x_max)


@dataclass(frozen=True)
class DspConfig:
    median_radius: int = 2
    cutoff_hz: float = 10.0
    filter_order: int = 8
    keep_imf_from: int = 2  # drop IMF 1 (the fastest mode) by default
    max_imfs: int = 10
    sift: SiftConfig = field(default_factory=SiftConfig)
    feature_count: int = DEFAULT_FEATURE_COUNT


@functools.lru_cache(maxsize=16)
def _cached_filter(order: int, cutoff_hz: float, sample_rate_hz: float):
    return design_butterworth(order, cutoff_hz, sample_rate_hz)


def preprocess(series, cfg: DspConfig | None = None, sample_rate_hz: float = 100.0) -> np.ndarray:
    """Run the full chain over a (T, S) amplitude matrix.

    Returns a (T, feature_count) matrix with every entry in [0, 1].
    Columns are independent, so only the retained ones are computed.
    """
    cfg = cfg if cfg is not None else DspConfig()
    series = np.asarray(series, dtype=np.float64)
    if series.size == 0:
        raise EmptyInputError("preprocess: empty series matrix")
    kept = select_subcarriers(series, cfg.feature_count)
    filt = _cached_filter(cfg.filter_order, cfg.cutoff_hz, sample_rate_hz)
    median_cfg = MedianConfig(cfg.median_radius)
    out = np.empty_like(kept, dtype=np.float64)
    for j in range(kept.shape[1]):
        col = median_filter(kept[:, j], median_cfg)
        col = apply_iir(filt, col)
        decomp = emd_decompose(col, cfg.max_imfs, cfg.sift)
        # a quiet column may yield fewer modes than the configured start order
        keep_from = min(cfg.keep_imf_from, len(decomp.imfs) + 1)
        col = emd_remove_high_freq(decomp, keep_from)
        out[:, j], _ = minmax_normalize(col)
    return out
