"""Swing statistics and intent transitions across two windows."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import MissingEndpoint, NoCommonDays, OverlappingWindows
from .estimate import EstimateSeries
from .panel import INTENTS, Panel, window_select

INFINITE = math.inf


def _values(series) -> np.ndarray:
    if isinstance(series, EstimateSeries):
        return np.asarray(series.estimate, dtype=float)
    return np.asarray(series, dtype=float)


@dataclass(frozen=True)
class SwingStats:
    drop: float
    total_variation: float

    def as_dict(self) -> dict:
        return {"drop": self.drop, "total_variation": self.total_variation}


def total_variation(series) -> float:
    """Sum of |x[t+1] - x[t]| over adjacent days that are both present."""
    x = _values(series)
    d = np.diff(x)
    return float(np.sum(np.abs(d[~np.isnan(d)])))


def swing_stats(series, t0: int, t1: int) -> SwingStats:
    x = _values(series)
    for t in (t0, t1):
        if not 0 <= t < len(x) or np.isnan(x[t]):
            raise MissingEndpoint(f"day {t} is MISSING or out of range")
    return SwingStats(drop=float(x[t0] - x[t1]), total_variation=total_variation(x))


def swing_reduction(series_demo, series_party) -> float:
    """TV(demo) / TV(party) over days present in both series.

    Returns ``INFINITE`` when the party-adjusted series does not move.
    """
    a, b = _values(series_demo), _values(series_party)
    common = ~np.isnan(a) & ~np.isnan(b)
    pairs = common[1:] & common[:-1]
    if not pairs.any():
        raise NoCommonDays("no adjacent days present in both series")
    tv_a = float(np.sum(np.abs(np.diff(a)[pairs])))
    tv_b = float(np.sum(np.abs(np.diff(b)[pairs])))
    if tv_b == 0:
        return INFINITE
    return tv_a / tv_b


@dataclass(frozen=True, eq=False)
class TransitionMatrix:
    """``counts[i, j]``: respondents with intent i before and intent j after."""

    counts: np.ndarray
    before_covered: int
    after_covered: int

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def count(self, before: str, after: str) -> int:
        return int(self.counts[INTENTS.index(before), INTENTS.index(after)])

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            out = csv.writer(fh, lineterminator="\n")
            out.writerow(["before\\after", *INTENTS])
            for i, label in enumerate(INTENTS):
                out.writerow([label, *(int(c) for c in self.counts[i])])


def transition_matrix(panel: Panel, before: tuple[int, int], after: tuple[int, int]) -> TransitionMatrix:
    """Cross-tabulate each respondent's latest intent in two disjoint windows."""
    (t, w), (t2, w2) = before, after
    if not t < t2 - w2 + 1:
        raise OverlappingWindows(f"window ending {t} overlaps window [{t2 - w2 + 1}, {t2}]")
    rs_a = window_select(panel, t, w)
    rs_b = window_select(panel, t2, w2)
    intent_a = np.full(panel.n_respondents, -1)
    intent_b = np.full(panel.n_respondents, -1)
    intent_a[rs_a.resp] = rs_a.intent
    intent_b[rs_b.resp] = rs_b.intent
    both = (intent_a >= 0) & (intent_b >= 0)
    k = len(INTENTS)
    counts = np.bincount(intent_a[both] * k + intent_b[both], minlength=k * k).reshape(k, k)
    return TransitionMatrix(counts, before_covered=len(rs_a), after_covered=len(rs_b))
