"""Daily poststratified series.

For each day t the responses in the trailing window [t - w + 1, t] are
fitted with the hierarchical model, the model predicts every cell of the
lattice, and the predictions are averaged with the electorate weights.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable

import numpy as np

from ._parallel import parallel_map
from .errors import MalformedRow, MissingProbability, NonConvergence, ValidationError
from .lattice import DEM, REP, WeightTable
from .model import ModelSpec, Observations, fit_map
from .panel import N_DAYS, Panel, fix_partisanship, two_party_subset, window_select

DEMO = "DEMO"
DEMO_PARTY = "DEMO_PARTY"
DEM_SHARE = "DEM_SHARE"
MODEL_KINDS = (DEMO, DEMO_PARTY, DEM_SHARE)

SERIES_COLUMNS = ("day", "model_kind", "estimate", "ci_lo", "ci_hi", "n_obs")


@dataclass(frozen=True, eq=False)
class EstimateSeries:
    """One value per fielding day; NaN marks MISSING.

    ``ci_lo``/``ci_hi`` are the displayed band (widened if needed so it
    contains the estimate); ``ci_lo_raw``/``ci_hi_raw`` keep the bootstrap
    percentiles as computed.
    """

    model_kind: str
    estimate: np.ndarray
    n_obs: np.ndarray
    window: int = 4
    min_n: int = 100
    ci_lo: np.ndarray | None = None
    ci_hi: np.ndarray | None = None
    ci_lo_raw: np.ndarray | None = None
    ci_hi_raw: np.ndarray | None = None

    def __post_init__(self):
        if self.model_kind not in MODEL_KINDS:
            raise ValidationError(f"unknown model kind {self.model_kind!r}")
        for name in ("estimate", "ci_lo", "ci_hi", "ci_lo_raw", "ci_hi_raw"):
            a = getattr(self, name)
            if a is not None:
                a = np.array(a, dtype=float)
                if a.shape != (N_DAYS,):
                    raise ValidationError(f"{name} needs {N_DAYS} values")
                a.setflags(write=False)
                object.__setattr__(self, name, a)
        n = np.array(self.n_obs, dtype=np.int64)
        n.setflags(write=False)
        object.__setattr__(self, "n_obs", n)

    @property
    def missing(self) -> np.ndarray:
        return np.isnan(self.estimate)

    @property
    def has_bands(self) -> bool:
        return self.ci_lo is not None

    def __getitem__(self, day: int) -> float:
        return float(self.estimate[day])

    def with_bands(self, lo, hi) -> "EstimateSeries":
        """Attach a band, widening it where it excludes the point estimate."""
        lo = np.asarray(lo, dtype=float)
        hi = np.asarray(hi, dtype=float)
        est = self.estimate
        shown_lo = np.where(np.isnan(est) | np.isnan(lo), np.nan, np.fmin(lo, est))
        shown_hi = np.where(np.isnan(est) | np.isnan(hi), np.nan, np.fmax(hi, est))
        return replace(self, ci_lo=shown_lo, ci_hi=shown_hi, ci_lo_raw=lo, ci_hi_raw=hi)


def poststratify(cell_probs, weights) -> float:
    """Electorate-weighted average of cell probabilities.

    ``cell_probs`` must match the weight array's shape; NaN marks a missing
    probability, which is an error only where the weight is positive.
    """
    w = weights.weights if isinstance(weights, WeightTable) else np.asarray(weights, dtype=float)
    theta = np.asarray(cell_probs, dtype=float)
    if theta.shape != w.shape:
        raise ValidationError(f"probability shape {theta.shape} does not match weights {w.shape}")
    positive = w > 0
    if np.any(np.isnan(theta[positive])):
        raise MissingProbability("missing probability for a cell with positive weight")
    return float(np.dot(w[positive], theta[positive]))


def _check_kind(spec: ModelSpec, weights: WeightTable, model_kind: str) -> WeightTable:
    if model_kind == DEMO_PARTY:
        if not weights.has_party:
            raise ValidationError("DEMO_PARTY needs a party-extended weight table (missing party dimension)")
        if not spec.include_party:
            raise ValidationError("DEMO_PARTY needs a model spec with include_party set")
        return weights
    if model_kind == DEMO:
        if spec.include_party:
            raise ValidationError("DEMO needs a model spec without the party factor")
        return weights.demographic()
    raise ValidationError(f"unknown model kind {model_kind!r}")


def _estimate(obs: Observations, spec: ModelSpec, weights: WeightTable, min_n: int, day: int) -> float:
    if len(obs) < min_n or len(obs) == 0:
        return float("nan")
    try:
        model = fit_map(obs, spec)
    except NonConvergence as exc:
        exc.day = day
        raise
    return poststratify(model.predict_all(), weights)


def _days(days: Iterable[int] | None) -> list[int]:
    if days is None:
        return list(range(N_DAYS))
    out = sorted(set(int(d) for d in days))
    if out and not (0 <= out[0] and out[-1] < N_DAYS):
        raise ValidationError(f"days outside [0, {N_DAYS - 1}]")
    return out


def _assemble(kind, results, w, min_n):
    est = np.full(N_DAYS, np.nan)
    n_obs = np.zeros(N_DAYS, dtype=np.int64)
    for t, value, n in results:
        est[t] = value
        n_obs[t] = n
    return EstimateSeries(kind, est, n_obs, window=w, min_n=min_n)


def daily_series(
    panel: Panel,
    spec: ModelSpec,
    weights: WeightTable,
    w: int = 4,
    model_kind: str = DEMO,
    min_n: int = 100,
    *,
    days: Iterable[int] | None = None,
    all_responses: bool = False,
    workers: int = 1,
) -> EstimateSeries:
    """Two-party CAND_A share per day under DEMO or DEMO_PARTY adjustment.

    Days outside ``days`` (default: all) are left MISSING. A NonConvergence
    from any day propagates with its ``day`` attribute set.
    """
    weights = _check_kind(spec, weights, model_kind)
    if model_kind == DEMO_PARTY:
        panel = fix_partisanship(panel)

    def one(t):
        obs = two_party_subset(window_select(panel, t, w, all_responses=all_responses), party_first=panel.is_fixed)
        return t, _estimate(obs, spec, weights, min_n, t), len(obs)

    return _assemble(model_kind, parallel_map(one, _days(days), workers=workers), w, min_n)


def partisan_share_series(
    panel: Panel,
    spec: ModelSpec,
    demographic_weights: WeightTable,
    w: int = 4,
    min_n: int = 100,
    *,
    days: Iterable[int] | None = None,
    all_responses: bool = True,
    workers: int = 1,
) -> EstimateSeries:
    """Demographically adjusted DEM share among DEM/REP identifiers in the window.

    This measures who responds, not vote intent. By default every in-window
    response counts, so the series is a share of responses; pass
    ``all_responses=False`` for one (latest) response per respondent.
    """
    if spec.include_party:
        raise ValidationError("the partisan share model cannot include party as a predictor")
    weights = demographic_weights.demographic()
    panel = fix_partisanship(panel)

    def one(t):
        rs = window_select(panel, t, w, all_responses=all_responses)
        pf = rs.party_first
        keep = (pf == DEM) | (pf == REP)
        obs = Observations(cells=rs.cells[keep], y=(pf[keep] == DEM).astype(np.int64))
        return t, _estimate(obs, spec, weights, min_n, t), len(obs)

    return _assemble(DEM_SHARE, parallel_map(one, _days(days), workers=workers), w, min_n)


def _fmt(x) -> str:
    return "" if x is None or np.isnan(x) else f"{x:.6f}"


def write_series_csv(path: str | Path, series: Iterable[EstimateSeries]) -> None:
    series = list(series)
    raw = any(s.ci_lo_raw is not None for s in series)
    header = list(SERIES_COLUMNS) + (["ci_lo_raw", "ci_hi_raw"] if raw else [])
    with open(path, "w", newline="", encoding="utf-8") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(header)
        for s in series:
            for t in range(N_DAYS):
                row = [
                    t,
                    s.model_kind,
                    _fmt(s.estimate[t]),
                    _fmt(s.ci_lo[t]) if s.ci_lo is not None else "",
                    _fmt(s.ci_hi[t]) if s.ci_hi is not None else "",
                    int(s.n_obs[t]),
                ]
                if raw:
                    row += [
                        _fmt(s.ci_lo_raw[t]) if s.ci_lo_raw is not None else "",
                        _fmt(s.ci_hi_raw[t]) if s.ci_hi_raw is not None else "",
                    ]
                out.writerow(row)


def read_series_csv(path: str | Path, *, window: int = 4, min_n: int = 100) -> dict[str, EstimateSeries]:
    """Series keyed by model kind. Values carry the file's 6-decimal precision."""
    cols: dict[str, dict[str, np.ndarray]] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in SERIES_COLUMNS if c not in (reader.fieldnames or [])]
        if missing:
            raise MalformedRow(f"{path}: header is missing columns {missing}")
        for lineno, row in enumerate(reader, start=2):
            kind = row["model_kind"]
            if kind not in MODEL_KINDS:
                raise MalformedRow(f"line {lineno}: unknown model_kind {kind!r}")
            c = cols.setdefault(kind, {
                name: np.full(N_DAYS, np.nan) for name in ("estimate", "ci_lo", "ci_hi", "ci_lo_raw", "ci_hi_raw")
            } | {"n_obs": np.zeros(N_DAYS, dtype=np.int64), "_bands": [False]})
            try:
                t = int(row["day"])
                if not 0 <= t < N_DAYS:
                    raise ValueError
                for name in ("estimate", "ci_lo", "ci_hi", "ci_lo_raw", "ci_hi_raw"):
                    v = (row.get(name) or "").strip()
                    if v:
                        c[name][t] = float(v)
                        if name == "ci_lo":
                            c["_bands"][0] = True
                c["n_obs"][t] = int(row["n_obs"])
            except (TypeError, ValueError):
                raise MalformedRow(f"line {lineno}: malformed series row") from None
    out = {}
    for kind, c in cols.items():
        bands = c["_bands"][0]
        raw = not np.all(np.isnan(c["ci_lo_raw"]))
        out[kind] = EstimateSeries(
            kind, c["estimate"], c["n_obs"], window=window, min_n=min_n,
            ci_lo=c["ci_lo"] if bands else None, ci_hi=c["ci_hi"] if bands else None,
            ci_lo_raw=c["ci_lo_raw"] if raw else None, ci_hi_raw=c["ci_hi_raw"] if raw else None,
        )
    return out
