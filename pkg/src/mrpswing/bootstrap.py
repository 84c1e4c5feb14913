"""Percentile cluster bootstrap over respondents."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from ._parallel import parallel_map
from .errors import ConfigError
from .estimate import EstimateSeries
from .panel import N_DAYS, Panel

# separates bootstrap streams from simulator streams built on the same seed
_STREAM_TAG = 0xB0075


@dataclass(frozen=True)
class BootstrapConfig:
    replicates: int = 200
    seed: int = 0
    percentiles: tuple[float, float] = (2.5, 97.5)

    def __post_init__(self):
        if int(self.replicates) < 1:
            raise ConfigError(f"replicates must be >= 1, got {self.replicates}")
        if not 0 <= int(self.seed) < 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        lo, hi = self.percentiles
        if not 0 < lo < hi < 100:
            raise ConfigError(f"percentiles must satisfy 0 < lo < hi < 100, got {self.percentiles}")


@dataclass(frozen=True, eq=False)
class BootstrapResult:
    lo: np.ndarray
    hi: np.ndarray
    replicates: np.ndarray  # (B, 45), NaN where a replicate day is MISSING


def replicate_rng(seed: int, r: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), _STREAM_TAG], spawn_key=(int(r),)))


def resample(panel: Panel, seed: int, r: int) -> Panel:
    """Replicate ``r``: respondents drawn with replacement, responses carried along."""
    n = panel.n_respondents
    idx = np.sort(replicate_rng(seed, r).integers(0, n, size=n)) if n else np.zeros(0, dtype=np.int64)
    return panel.take(idx)


def percentile_band(replicates: np.ndarray, percentiles=(2.5, 97.5)) -> tuple[np.ndarray, np.ndarray]:
    """Per-day percentile interval, MISSING where over half the replicates are."""
    B, days = replicates.shape
    lo = np.full(days, np.nan)
    hi = np.full(days, np.nan)
    for t in range(days):
        col = replicates[:, t]
        ok = col[~np.isnan(col)]
        if len(ok) == 0 or (B - len(ok)) > B / 2:
            continue
        lo[t], hi[t] = np.percentile(np.sort(ok), percentiles)
    return lo, hi


def cluster_bootstrap(
    panel: Panel,
    series_fn: Callable[[Panel], EstimateSeries],
    cfg: BootstrapConfig,
    *,
    workers: int = 1,
) -> BootstrapResult:
    """Re-run ``series_fn`` on ``cfg.replicates`` respondent resamples.

    Respondents are sorted after drawing so a replicate depends only on the
    multiset of drawn respondents.
    """

    def one(r):
        return np.asarray(series_fn(resample(panel, cfg.seed, r)).estimate, dtype=float)

    reps = np.vstack(parallel_map(one, range(cfg.replicates), workers=workers))
    lo, hi = percentile_band(reps, cfg.percentiles)
    return BootstrapResult(lo, hi, reps)


def attach_bands(series: EstimateSeries, result: BootstrapResult) -> EstimateSeries:
    return series.with_bands(result.lo, result.hi)


def write_replicates_csv(path: str | Path, results: dict[str, BootstrapResult]) -> None:
    """Raw replicate estimates: ``replicate,day,estimate`` (plus model_kind)."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(["replicate", "day", "estimate", "model_kind"])
        for kind, res in results.items():
            for r in range(res.replicates.shape[0]):
                for t in range(N_DAYS):
                    v = res.replicates[r, t]
                    out.writerow([r, t, "" if np.isnan(v) else f"{v:.6f}", kind])
