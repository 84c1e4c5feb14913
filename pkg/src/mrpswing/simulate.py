"""Synthetic electorates and panels with party-dependent response propensity.

Each simulated respondent carries a fixed preference draw ``U ~ Uniform(0, 1)``
and backs CAND_A on day d exactly when ``U < p(party, cell, d)``. Preferences
therefore never drift unless the support schedule moves, and when it moves
only the respondents between the old and new thresholds switch. Undecided
status is drawn afresh for every response with probability ``u(d)``, so a
falling undecided rate produces Undecided -> candidate flows.

Respondent ``i`` draws from its own generator seeded by ``(seed, i)``, which
keeps output identical however the work is split across workers.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from ._parallel import parallel_map
from .errors import ConfigError, ValidationError
from .lattice import (
    PARTIES,
    CellLattice,
    FactorSpec,
    PartyShares,
    WeightTable,
    build_lattice,
    default_lattice,
    product_weights,
    read_weights_csv,
)
from .panel import CAND_A, CAND_B, N_DAYS, UNDECIDED, assemble_panel

_CHUNK = 2048


def schedule(value, *, name: str = "schedule") -> np.ndarray:
    """Expand a day schedule to a length-45 array.

    Accepts a scalar, a list of 45 values, or a mapping
    ``{"default": x, "segments": [[first_day, last_day, value], ...]}``
    (inclusive day ranges, later segments win).
    """
    if isinstance(value, Mapping):
        out = np.full(N_DAYS, float(value.get("default", 0.0)))
        for seg in value.get("segments", []):
            if len(seg) != 3:
                raise ConfigError(f"{name}: segments need [first_day, last_day, value]")
            lo, hi, v = int(seg[0]), int(seg[1]), float(seg[2])
            if not 0 <= lo <= hi < N_DAYS:
                raise ConfigError(f"{name}: segment days {lo}..{hi} outside [0, {N_DAYS - 1}]")
            out[lo:hi + 1] = v
        return out
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        return np.full(N_DAYS, float(arr))
    if arr.shape != (N_DAYS,):
        raise ConfigError(f"{name}: expected {N_DAYS} daily values, got shape {arr.shape}")
    return arr.copy()


def _per_party(value, name: str) -> np.ndarray:
    if isinstance(value, Mapping) and value and set(value) <= {*PARTIES, "*"}:
        default = value.get("*")
        rows = []
        for p in PARTIES:
            if p not in value and default is None:
                raise ConfigError(f"{name}: missing schedule for party {p}")
            rows.append(schedule(value.get(p, default), name=f"{name}[{p}]"))
        return np.stack(rows)
    arr = np.asarray(value, dtype=float) if not isinstance(value, Mapping) else None
    if arr is not None and arr.shape == (len(PARTIES), N_DAYS):
        return arr.copy()
    row = schedule(value, name=name)
    return np.stack([row] * len(PARTIES))


def _logit(p):
    p = np.clip(p, 1e-12, 1 - 1e-12)
    return np.log(p) - np.log1p(-p)


def _expit(x):
    return 1.0 / (1.0 + np.exp(-x))


@dataclass(frozen=True, eq=False)
class SimConfig:
    """Generative description of a synthetic electorate and its panel.

    ``support[k, d]`` is P(CAND_A | two-party supporter, party k, day d);
    ``cell_offsets`` (one array per lattice factor) shift it on the logit
    scale per demographic level. ``multiplier[k, d]`` scales the base daily
    response propensity. ``pool`` is the composition the respondents are drawn
    from; it defaults to the population.
    """

    lattice: CellLattice
    population: WeightTable
    party_given_cell: np.ndarray
    support: np.ndarray
    undecided: np.ndarray
    n_respondents: int
    entry: np.ndarray
    base_propensity: float
    multiplier: np.ndarray
    seed: int = 0
    cell_offsets: tuple[np.ndarray, ...] | None = None
    pool: WeightTable | None = None
    source: dict = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self):
        size = self.lattice.size
        if self.population.lattice != self.lattice or self.population.has_party:
            raise ConfigError("population must be a demographic weight table over the lattice")
        if self.pool is not None and (self.pool.lattice != self.lattice or self.pool.has_party):
            raise ConfigError("pool must be a demographic weight table over the lattice")
        pgc = np.array(self.party_given_cell, dtype=float)
        if pgc.shape == (len(PARTIES),):
            pgc = np.tile(pgc, (size, 1))
        if pgc.shape != (size, len(PARTIES)) or np.any(pgc < 0) or not np.allclose(pgc.sum(axis=1), 1.0, atol=1e-9):
            raise ConfigError("party_given_cell rows must be probability vectors over (DEM, REP, OTHER)")
        object.__setattr__(self, "party_given_cell", pgc)
        support = np.array(self.support, dtype=float)
        if support.shape != (len(PARTIES), N_DAYS) or np.any((support < 0) | (support > 1)):
            raise ConfigError("support must be a (3, 45) array of probabilities")
        object.__setattr__(self, "support", support)
        und = np.array(self.undecided, dtype=float)
        if und.shape != (N_DAYS,) or np.any((und < 0) | (und >= 1)):
            raise ConfigError("undecided rate must be 45 values in [0, 1)")
        object.__setattr__(self, "undecided", und)
        if int(self.n_respondents) < 1:
            raise ConfigError("n_respondents must be >= 1")
        entry = np.array(self.entry, dtype=float)
        if entry.shape != (N_DAYS,) or np.any(entry < 0) or not entry.sum() > 0:
            raise ConfigError("entry distribution must be 45 nonnegative values with positive sum")
        object.__setattr__(self, "entry", entry / entry.sum())
        if not 0 <= self.base_propensity <= 1:
            raise ConfigError("base propensity must lie in [0, 1]")
        mult = np.array(self.multiplier, dtype=float)
        if mult.shape != (len(PARTIES), N_DAYS) or np.any(~(mult > 0)):
            raise ConfigError("propensity multipliers must be a positive (3, 45) array")
        object.__setattr__(self, "multiplier", mult)
        if self.cell_offsets is not None:
            offs = tuple(np.asarray(o, dtype=float) for o in self.cell_offsets)
            if len(offs) != len(self.lattice.factors) or any(
                o.shape != (f.cardinality,) for o, f in zip(offs, self.lattice.factors)
            ):
                raise ConfigError("cell_offsets needs one array per factor, one value per level")
            object.__setattr__(self, "cell_offsets", offs)
        if not 0 <= int(self.seed) < 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer")

    @property
    def pool_weights(self) -> np.ndarray:
        return (self.pool or self.population).weights

    def cell_offset(self, cells=None) -> np.ndarray:
        """Logit offset per cell (zeros when no offsets are configured)."""
        if cells is None:
            cells = np.arange(self.lattice.size)
        cells = np.asarray(cells)
        if self.cell_offsets is None:
            return np.zeros(cells.shape)
        levels = self.lattice.levels(cells.reshape(-1))
        out = np.zeros(len(levels))
        for f, o in enumerate(self.cell_offsets):
            out += o[levels[:, f]]
        return out.reshape(cells.shape)

    def support_for(self, party: int, cell: int) -> np.ndarray:
        """P(CAND_A | two-party) for one (party, cell) across all days."""
        if self.cell_offsets is None:
            return self.support[party]
        return _expit(_logit(self.support[party]) + self.cell_offset(np.array([cell]))[0])

    def propensity(self) -> np.ndarray:
        return np.minimum(1.0, self.base_propensity * self.multiplier)

    def with_seed(self, seed: int) -> "SimConfig":
        return replace(self, seed=int(seed))

    def with_respondents(self, n: int) -> "SimConfig":
        return replace(self, n_respondents=int(n))


def true_series(cfg: SimConfig) -> np.ndarray:
    """Population two-party CAND_A share per day, computed exactly."""
    joint = cfg.population.weights[:, None] * cfg.party_given_cell  # (cells, parties)
    if cfg.cell_offsets is None:
        return joint.sum(axis=0) @ cfg.support
    offs = cfg.cell_offset()
    out = np.zeros(N_DAYS)
    for k in range(len(PARTIES)):
        p = _expit(_logit(cfg.support[k])[None, :] + offs[:, None])  # (cells, days)
        out += joint[:, k] @ p
    return out


def _categorical(cum: np.ndarray, u: float) -> int:
    return min(int(np.searchsorted(cum, u * cum[-1], side="right")), len(cum) - 1)


def _simulate_chunk(args):
    cfg, lo, hi = args
    cum_pool = np.cumsum(cfg.pool_weights)
    cum_party = np.cumsum(cfg.party_given_cell, axis=1)
    cum_entry = np.cumsum(cfg.entry)
    prop = cfg.propensity()
    days = np.arange(N_DAYS)
    cells, parties, resp, day, intent = [], [], [], [], []
    for i in range(lo, hi):
        rng = np.random.default_rng(np.random.SeedSequence(int(cfg.seed), spawn_key=(i,)))
        u = rng.random(4)
        respond = rng.random(N_DAYS)
        undecided = rng.random(N_DAYS)
        cell = _categorical(cum_pool, u[0])
        party = _categorical(cum_party[cell], u[1])
        entry = _categorical(cum_entry, u[2])
        support = cfg.support_for(party, cell)
        active = (days >= entry) & (respond < prop[party])
        d = days[active]
        choice = np.where(undecided[active] < cfg.undecided[active], UNDECIDED,
                          np.where(u[3] < support[active], CAND_A, CAND_B))
        cells.append(cell)
        parties.append(party)
        resp.append(np.full(len(d), i))
        day.append(d)
        intent.append(choice)
    return cells, parties, resp, day, intent


def simulate_panel(cfg: SimConfig, *, workers: int = 1, return_tallies: bool = False):
    """Draw a panel from ``cfg``; party reports are truthful and constant.

    With ``return_tallies`` also returns the generator's own per-respondent
    response counts (an independent check on panel bookkeeping).
    """
    R = int(cfg.n_respondents)
    chunks = [(cfg, lo, min(lo + _CHUNK, R)) for lo in range(0, R, _CHUNK)]
    results = parallel_map(_simulate_chunk, chunks, workers=workers)
    cells = [c for r in results for c in r[0]]
    parties = np.array([p for r in results for p in r[1]], dtype=np.int64)
    resp = np.concatenate([a for r in results for a in r[2]] or [np.zeros(0, dtype=np.int64)])
    day = np.concatenate([a for r in results for a in r[3]] or [np.zeros(0, dtype=np.int64)])
    intent = np.concatenate([a for r in results for a in r[4]] or [np.zeros(0, dtype=np.int64)])
    party = parties[resp] if len(resp) else np.zeros(0, dtype=np.int64)
    width = max(6, len(str(R - 1)))
    ids = [f"r{i:0{width}d}" for i in range(R)]
    panel = assemble_panel(cfg.lattice, ids, cells, resp, day, intent, party)
    if return_tallies:
        tallies = np.array([len(a) for r in results for a in r[2]], dtype=np.int64)
        return panel, tallies
    return panel


# --- JSON configuration ------------------------------------------------------


def _weights_from_json(spec, lattice: CellLattice, base: Path | None) -> WeightTable:
    if spec is None or spec == "uniform":
        return WeightTable.uniform(lattice)
    if isinstance(spec, Mapping) and "margins" in spec:
        return product_weights(lattice, spec["margins"])
    if isinstance(spec, Mapping) and "file" in spec:
        path = Path(spec["file"])
        if base is not None and not path.is_absolute():
            path = base / path
        return read_weights_csv(path, lattice).demographic()
    raise ConfigError(f"unrecognised weight specification {spec!r}")


def _entry_from_json(spec) -> np.ndarray:
    if spec is None:
        spec = {"day": 0}
    if isinstance(spec, Mapping):
        out = np.zeros(N_DAYS)
        if "day" in spec:
            out[int(spec["day"])] = 1.0
        elif "uniform" in spec:
            lo, hi = (int(x) for x in spec["uniform"])
            if not 0 <= lo <= hi < N_DAYS:
                raise ConfigError("entry uniform range outside [0, 44]")
            out[lo:hi + 1] = 1.0
        else:
            raise ConfigError(f"unrecognised entry specification {spec!r}")
        return out
    return schedule(spec, name="entry")


def _party_given_cell_from_json(d, lattice: CellLattice) -> np.ndarray:
    shares = PartyShares.from_mapping(d.get("party_shares", {"DEM": 1 / 3, "REP": 1 / 3, "OTHER": 1 / 3}))
    pgc = np.tile(shares.as_array(), (lattice.size, 1))
    by_factor = d.get("party_given_factor")
    if by_factor:
        name = by_factor["factor"]
        axis = lattice.names.index(name)
        levels = lattice.levels()
        f = lattice.factors[axis]
        for label, mapping in by_factor["shares"].items():
            pgc[levels[:, axis] == f.index(label)] = PartyShares.from_mapping(mapping).as_array()
    return pgc


def config_from_dict(d: Mapping, *, base: Path | None = None) -> SimConfig:
    known = {
        "factors", "population", "pool", "party_shares", "party_given_factor", "support",
        "cell_offsets", "undecided", "n_respondents", "entry", "base_propensity",
        "propensity_multiplier", "seed",
    }
    unknown = set(d) - known
    if unknown:
        raise ConfigError(f"unknown simulation config keys {sorted(unknown)}")
    try:
        if "factors" in d:
            lattice = build_lattice(FactorSpec(f["name"], tuple(f["levels"])) for f in d["factors"])
        else:
            lattice = default_lattice()
        offsets = None
        if d.get("cell_offsets"):
            offs = [np.zeros(f.cardinality) for f in lattice.factors]
            for name, levels in d["cell_offsets"].items():
                axis = lattice.names.index(name)
                for label, v in levels.items():
                    offs[axis][lattice.factors[axis].index(label)] = float(v)
            offsets = tuple(offs)
        return SimConfig(
            lattice=lattice,
            population=_weights_from_json(d.get("population"), lattice, base),
            pool=_weights_from_json(d["pool"], lattice, base) if d.get("pool") is not None else None,
            party_given_cell=_party_given_cell_from_json(d, lattice),
            support=_per_party(d.get("support", 0.5), "support"),
            undecided=schedule(d.get("undecided", 0.0), name="undecided"),
            n_respondents=int(d.get("n_respondents", 1000)),
            entry=_entry_from_json(d.get("entry")),
            base_propensity=float(d.get("base_propensity", 0.5)),
            multiplier=_per_party(d.get("propensity_multiplier", 1.0), "propensity_multiplier"),
            seed=int(d.get("seed", 0)),
            cell_offsets=offsets,
            source=dict(d),
        )
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ValidationError):
            raise
        raise ConfigError(f"invalid simulation config: {exc!r}") from None


def load_config(path: str | Path) -> SimConfig:
    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        try:
            d = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    return config_from_dict(d, base=path.parent)


def write_truth_csv(path: str | Path, truth: Sequence[float]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("day,truth\n")
        for t, v in enumerate(truth):
            fh.write(f"{t},{v:.6f}\n")


# --- Reference scenarios -----------------------------------------------------

# Illustrative composition; not taken from any exit poll.
REFERENCE_MARGINS = {
    "gender": [0.47, 0.53],
    "race": [0.74, 0.13, 0.09, 0.04],
    "age": [0.18, 0.29, 0.37, 0.16],
    "education": [0.04, 0.20, 0.32, 0.44],
    "state": list(np.round(np.linspace(0.4, 2.0, 51), 6)),
}


def swing_scenario(
    *,
    n_respondents: int = 20000,
    seed: int = 42,
    dem_multiplier: float = 0.6,
    dip_days: tuple[int, int] = (17, 30),
    base_propensity: float = 0.5,
    undecided=0.1,
    party_support=(0.9, 0.1, 0.6),
    party_shares=(0.4, 0.4, 0.2),
    support_schedule: np.ndarray | None = None,
    lattice: CellLattice | None = None,
) -> dict:
    """JSON-ready config: constant truth, DEM response dip on ``dip_days``.

    With the default party supports and shares the two-party truth is
    0.4 * 0.9 + 0.4 * 0.1 + 0.2 * 0.6 = 0.52 on every day.
    """
    lattice = lattice or default_lattice()
    mult = {"DEM": {"default": 1.0, "segments": [[dip_days[0], dip_days[1], dem_multiplier]]}, "REP": 1.0, "OTHER": 1.0}
    if support_schedule is None:
        support = {p: float(v) for p, v in zip(PARTIES, party_support)}
    else:
        support = np.asarray(support_schedule, dtype=float).tolist()
    return {
        "factors": [{"name": f.name, "levels": list(f.levels)} for f in lattice.factors],
        "population": {"margins": {k: v for k, v in REFERENCE_MARGINS.items() if k in lattice.names}},
        "party_shares": dict(zip(PARTIES, party_shares)),
        "support": support,
        "undecided": undecided,
        "n_respondents": n_respondents,
        "entry": {"day": 0},
        "base_propensity": base_propensity,
        "propensity_multiplier": mult,
        "seed": seed,
    }
