"""Demographic factors, the poststratification cell lattice and weight tables.

A lattice is the Cartesian product of its factors, enumerated row-major in
declared factor order, so every cell has a stable integer position. Weight
tables hold one electorate proportion per cell, optionally split further by
party (an ``(n_cells, 3)`` array, party as the last axis).
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass
from math import prod
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import (
    DuplicateCell,
    DuplicateFactor,
    InvalidFactor,
    MalformedRow,
    NegativeWeight,
    UnknownLevel,
    ValidationError,
    ZeroTotalWeight,
)

PARTIES = ("DEM", "REP", "OTHER")
DEM, REP, OTHER_PARTY = 0, 1, 2

CellKey = tuple  # tuple[int, ...], one level index per factor

GENDERS = ("male", "female")
RACES = ("white", "black", "hispanic", "other")
AGES = ("18-29", "30-44", "45-64", "65+")
EDUCATIONS = ("no_hs", "hs_grad", "some_college", "college_grad")
STATES = (
    "AK", "AL", "AR", "AZ", "CA", "CO", "CT", "DC", "DE", "FL", "GA", "HI",
    "IA", "ID", "IL", "IN", "KS", "KY", "LA", "MA", "MD", "ME", "MI", "MN",
    "MO", "MS", "MT", "NC", "ND", "NE", "NH", "NJ", "NM", "NV", "NY", "OH",
    "OK", "OR", "PA", "RI", "SC", "SD", "TN", "TX", "UT", "VA", "VT", "WA",
    "WI", "WV", "WY",
)


@dataclass(frozen=True)
class FactorSpec:
    name: str
    levels: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "levels", tuple(self.levels))
        if not isinstance(self.name, str) or not self.name.strip():
            raise InvalidFactor("factor name must be a nonempty string")
        if len(self.levels) < 2:
            raise InvalidFactor(f"factor {self.name!r} needs at least 2 levels, got {len(self.levels)}")
        if len(set(self.levels)) != len(self.levels):
            raise InvalidFactor(f"factor {self.name!r} has duplicate level labels")

    @property
    def cardinality(self) -> int:
        return len(self.levels)

    def index(self, label: str) -> int:
        """Level index for ``label`` (case-sensitive, surrounding whitespace ignored)."""
        try:
            return self._lookup[label.strip()]
        except KeyError:
            raise UnknownLevel(f"unknown level {label!r} for factor {self.name!r}") from None

    @property
    def _lookup(self) -> dict[str, int]:
        cached = self.__dict__.get("_lookup_cache")
        if cached is None:
            cached = {lab: i for i, lab in enumerate(self.levels)}
            object.__setattr__(self, "_lookup_cache", cached)
        return cached


@dataclass(frozen=True)
class CellLattice:
    factors: tuple[FactorSpec, ...]

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(f.name for f in self.factors)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(f.cardinality for f in self.factors)

    @property
    def size(self) -> int:
        return prod(self.shape)

    def __len__(self):
        return self.size

    def factor(self, name: str) -> FactorSpec:
        for f in self.factors:
            if f.name == name:
                return f
        raise KeyError(name)

    def validate_key(self, key: Sequence[int]) -> CellKey:
        key = tuple(int(i) for i in key)
        if len(key) != len(self.factors):
            raise ValidationError(f"cell key {key} has {len(key)} indices, lattice has {len(self.factors)} factors")
        for i, f in zip(key, self.factors):
            if not 0 <= i < f.cardinality:
                raise ValidationError(f"level index {i} out of range for factor {f.name!r}")
        return key

    def position(self, key: Sequence[int]) -> int:
        key = self.validate_key(key)
        pos = 0
        for i, k in zip(key, self.shape):
            pos = pos * k + i
        return pos

    def key(self, position: int) -> CellKey:
        if not 0 <= position < self.size:
            raise ValidationError(f"cell position {position} out of range [0, {self.size})")
        out = []
        for k in reversed(self.shape):
            position, r = divmod(position, k)
            out.append(r)
        return tuple(reversed(out))

    def positions(self, levels: np.ndarray) -> np.ndarray:
        """Vectorised ``position`` over an ``(n, n_factors)`` level-index array."""
        levels = np.asarray(levels, dtype=np.int64).reshape(-1, len(self.factors))
        if not self.factors:
            return np.zeros(len(levels), dtype=np.int64)
        return np.ravel_multi_index(tuple(levels.T), self.shape).astype(np.int64)

    def levels(self, positions: np.ndarray | None = None) -> np.ndarray:
        """``(n, n_factors)`` level indices for ``positions`` (all cells if None)."""
        if positions is None:
            positions = np.arange(self.size)
        positions = np.asarray(positions, dtype=np.int64)
        if not self.factors:
            return np.zeros((len(positions), 0), dtype=np.int64)
        return np.stack(np.unravel_index(positions, self.shape), axis=1).astype(np.int64)

    def key_from_labels(self, labels: Mapping[str, str] | Sequence[str]) -> CellKey:
        if isinstance(labels, Mapping):
            labels = [labels[f.name] for f in self.factors]
        if len(labels) != len(self.factors):
            raise ValidationError(f"expected {len(self.factors)} level labels, got {len(labels)}")
        return tuple(f.index(lab) for f, lab in zip(self.factors, labels))

    def labels(self, key: Sequence[int]) -> tuple[str, ...]:
        key = self.validate_key(key)
        return tuple(f.levels[i] for f, i in zip(self.factors, key))


def build_lattice(factors: Iterable[FactorSpec]) -> CellLattice:
    factors = tuple(factors)
    seen = set()
    for f in factors:
        if f.name in seen:
            raise DuplicateFactor(f"duplicate factor name {f.name!r}")
        seen.add(f.name)
    return CellLattice(factors)


def default_factors() -> list[FactorSpec]:
    return [
        FactorSpec("gender", GENDERS),
        FactorSpec("race", RACES),
        FactorSpec("age", AGES),
        FactorSpec("education", EDUCATIONS),
        FactorSpec("state", STATES),
    ]


def default_lattice() -> CellLattice:
    """2 x 4 x 4 x 4 x 51 lattice (6,528 cells)."""
    return build_lattice(default_factors())


def party_index(label: str) -> int:
    try:
        return PARTIES.index(label.strip())
    except ValueError:
        raise UnknownLevel(f"unknown party label {label!r}; expected one of {PARTIES}") from None


@dataclass(frozen=True)
class PartyShares:
    """Target electorate shares for DEM, REP, OTHER."""

    shares: tuple[float, float, float]

    def __post_init__(self):
        s = tuple(float(x) for x in self.shares)
        if len(s) != 3:
            raise ValidationError("party shares need exactly three values (DEM, REP, OTHER)")
        if any(not np.isfinite(x) or x < 0 for x in s):
            raise ValidationError(f"party shares must be finite and nonnegative, got {s}")
        if abs(sum(s) - 1.0) > 1e-9:
            raise ValidationError(f"party shares must sum to 1, got {sum(s)!r}")
        object.__setattr__(self, "shares", s)

    @classmethod
    def from_mapping(cls, m: Mapping[str, float]) -> "PartyShares":
        unknown = set(m) - set(PARTIES)
        if unknown:
            raise UnknownLevel(f"unknown party labels {sorted(unknown)}")
        return cls(tuple(float(m.get(p, 0.0)) for p in PARTIES))

    def as_array(self) -> np.ndarray:
        return np.array(self.shares)

    def __getitem__(self, party: str) -> float:
        return self.shares[party_index(party)]


@dataclass(frozen=True, eq=False)
class WeightTable:
    """Normalised electorate proportions over a lattice (optionally x party)."""

    lattice: CellLattice
    weights: np.ndarray

    def __post_init__(self):
        w = np.array(self.weights, dtype=float)
        expected = (self.lattice.size,) if w.ndim == 1 else (self.lattice.size, len(PARTIES))
        if w.shape != expected:
            raise ValidationError(f"weight array shape {w.shape} does not match lattice {expected}")
        if not np.all(np.isfinite(w)) or np.any(w < 0):
            raise NegativeWeight("weights must be finite and nonnegative")
        total = w.sum()
        if abs(total - 1.0) > 1e-9:
            raise ValidationError(f"weights must sum to 1 (got {total!r}); use normalized()")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    @classmethod
    def normalized(cls, lattice: CellLattice, raw: np.ndarray) -> "WeightTable":
        raw = np.asarray(raw, dtype=float)
        if np.any(raw < 0):
            raise NegativeWeight("raw weights must be nonnegative")
        total = raw.sum()
        if not total > 0:
            raise ZeroTotalWeight("total raw weight must be positive")
        return cls(lattice, raw / total)

    @classmethod
    def uniform(cls, lattice: CellLattice) -> "WeightTable":
        return cls.normalized(lattice, np.ones(lattice.size))

    @property
    def has_party(self) -> bool:
        return self.weights.ndim == 2

    def demographic(self) -> "WeightTable":
        """Marginal over party; identity for demographic-only tables."""
        if not self.has_party:
            return self
        return WeightTable(self.lattice, self.weights.sum(axis=1))

    def party_margins(self) -> PartyShares:
        if not self.has_party:
            raise ValidationError("weight table has no party dimension")
        s = self.weights.sum(axis=0)
        return PartyShares(tuple(s / s.sum()))

    def weight(self, key: Sequence[int], party: str | None = None) -> float:
        pos = self.lattice.position(key)
        if self.has_party:
            if party is None:
                return float(self.weights[pos].sum())
            return float(self.weights[pos, party_index(party)])
        if party is not None:
            raise ValidationError("weight table has no party dimension")
        return float(self.weights[pos])


def load_weights(rows: Iterable[Mapping[str, str]], lattice: CellLattice, *, first_line: int = 1) -> WeightTable:
    """Build a normalised table from records of factor labels plus ``weight``.

    Records that carry a ``party`` value produce a party-extended table; a mix of
    records with and without party is rejected. Unlisted cells get weight 0.
    """
    rows = list(rows)
    with_party = None
    entries: dict[tuple, float] = {}
    for lineno, row in enumerate(rows, start=first_line):
        has_party = "party" in row and row["party"] is not None and str(row["party"]).strip() != ""
        if with_party is None:
            with_party = has_party
        elif has_party != with_party:
            raise MalformedRow(f"line {lineno}: party column must be filled on every row or none")
        try:
            labels = [row[name] for name in lattice.names]
        except KeyError as exc:
            raise MalformedRow(f"line {lineno}: missing field {exc.args[0]!r}") from None
        if any(lab is None for lab in labels):
            raise MalformedRow(f"line {lineno}: missing level label")
        try:
            key = lattice.key_from_labels(labels)
            if has_party:
                key = key + (party_index(str(row["party"])),)
        except UnknownLevel as exc:
            raise UnknownLevel(f"line {lineno}: {exc}") from None
        raw = row.get("weight")
        try:
            weight = float(str(raw).strip())
        except (TypeError, ValueError):
            raise MalformedRow(f"line {lineno}: field 'weight' is not a number: {raw!r}") from None
        if not np.isfinite(weight):
            raise MalformedRow(f"line {lineno}: field 'weight' is not finite")
        if weight < 0:
            raise NegativeWeight(f"line {lineno}: negative weight {weight!r}")
        if key in entries:
            raise DuplicateCell(f"line {lineno}: duplicate row for cell {key}")
        entries[key] = weight

    shape = (lattice.size, len(PARTIES)) if with_party else (lattice.size,)
    raw = np.zeros(shape)
    for key, weight in entries.items():
        if with_party:
            raw[lattice.position(key[:-1]), key[-1]] = weight
        else:
            raw[lattice.position(key)] = weight
    total = raw.sum()
    if not total > 0:
        raise ZeroTotalWeight("total raw weight must be positive")
    if abs(total - 1.0) > 0.01:
        warnings.warn(f"raw weights sum to {total:.6g}; renormalizing", stacklevel=2)
    return WeightTable(lattice, raw / total)


def read_weights_csv(path: str | Path, lattice: CellLattice) -> WeightTable:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = [c for c in (*lattice.names, "weight") if c not in header]
        if missing:
            raise MalformedRow(f"{path}: header is missing columns {missing}")
        return load_weights(reader, lattice, first_line=2)


def write_weights_csv(path: str | Path, table: WeightTable) -> None:
    lattice = table.lattice
    header = [*lattice.names, "party", "weight"] if table.has_party else [*lattice.names, "weight"]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(header)
        for pos in range(lattice.size):
            labels = lattice.labels(lattice.key(pos))
            if table.has_party:
                for k, party in enumerate(PARTIES):
                    out.writerow([*labels, party, repr(float(table.weights[pos, k]))])
            else:
                out.writerow([*labels, repr(float(table.weights[pos]))])


def extend_with_party(wt: WeightTable, shares: PartyShares) -> WeightTable:
    """Independence product: weight(cell j, party k) = w_j * s_k."""
    if wt.has_party:
        raise ValidationError("weight table is already party-extended")
    return WeightTable(wt.lattice, np.outer(wt.weights, shares.as_array()))


def product_weights(lattice: CellLattice, margins: Mapping[str, Sequence[float]]) -> WeightTable:
    """Table whose cells are products of per-factor marginal proportions.

    Factors missing from ``margins`` are uniform.
    """
    raw = np.ones(lattice.shape) if lattice.factors else np.ones(1)
    for axis, f in enumerate(lattice.factors):
        m = np.asarray(margins.get(f.name, np.ones(f.cardinality)), dtype=float)
        if m.shape != (f.cardinality,):
            raise ValidationError(f"margin for {f.name!r} needs {f.cardinality} values")
        if np.any(m < 0):
            raise NegativeWeight(f"negative margin for {f.name!r}")
        shape = [1] * len(lattice.factors)
        shape[axis] = f.cardinality
        raw = raw * (m / m.sum()).reshape(shape)
    return WeightTable.normalized(lattice, raw.reshape(-1))
