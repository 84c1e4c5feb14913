"""Panel survey responses: ingestion, partisanship fixing, entry filter and
moving-window selection.

A :class:`Panel` is stored column-wise. Responses are kept sorted by
(respondent, day, stream position) so "earliest" and "latest in window"
lookups are simple scans over contiguous blocks.
"""

from __future__ import annotations

import csv
import datetime as dt
import warnings
from collections import Counter
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import (
    DayOutOfRange,
    InconsistentDemographics,
    MalformedRow,
    MissingParty,
    UnknownLevel,
    ValidationError,
)
from .lattice import PARTIES, CellLattice, party_index
from .model import Observations

INTENTS = ("CAND_A", "CAND_B", "OTHER", "UNDECIDED")
CAND_A, CAND_B, OTHER_INTENT, UNDECIDED = 0, 1, 2, 3
N_DAYS = 45
LAST_DAY = N_DAYS - 1
NO_PARTY = -1

RESPONSE_COLUMNS = ("respondent_id", "day", "gender", "race", "age", "education", "state", "party", "intent")


def intent_index(label: str) -> int:
    try:
        return INTENTS.index(label.strip())
    except ValueError:
        raise UnknownLevel(f"unknown intent label {label!r}; expected one of {INTENTS}") from None


@dataclass(frozen=True)
class Response:
    respondent_id: str
    day: int
    cell: tuple
    intent: str
    party_reported: str | None


@dataclass(frozen=True)
class Respondent:
    respondent_id: str
    cell: tuple
    party_first: str | None
    first_response_day: int
    responses: tuple[Response, ...]


def _frozen(a, dtype=np.int64):
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Panel:
    """Respondents (indexed 0..R-1) and their responses.

    Per-respondent arrays have length R; per-response arrays have length N and
    are sorted by (respondent, day, seq). ``party_first`` is None until
    :func:`fix_partisanship` has run.
    """

    lattice: CellLattice
    respondent_ids: tuple[str, ...]
    cells: np.ndarray
    resp: np.ndarray
    day: np.ndarray
    intent: np.ndarray
    party: np.ndarray
    seq: np.ndarray
    party_first: np.ndarray | None = None
    duplicates_dropped: int = 0

    def __post_init__(self):
        for name in ("cells", "resp", "day", "intent", "party", "seq"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))
        if self.party_first is not None:
            object.__setattr__(self, "party_first", _frozen(self.party_first))
        n = len(self.resp)
        if not all(len(getattr(self, c)) == n for c in ("day", "intent", "party", "seq")):
            raise ValidationError("per-response arrays differ in length")
        if len(self.cells) != len(self.respondent_ids):
            raise ValidationError("per-respondent arrays differ in length")
        if len(set(self.respondent_ids)) != len(self.respondent_ids):
            raise ValidationError("respondent ids must be unique")
        if n and (self.day.min() < 0 or self.day.max() > LAST_DAY):
            raise DayOutOfRange(f"response day outside [0, {LAST_DAY}]")
        if n > 1:
            order = np.lexsort((self.seq, self.day, self.resp))
            if not np.array_equal(order, np.arange(n)):
                raise ValidationError("responses must be sorted by (respondent, day, seq)")

    @property
    def n_respondents(self) -> int:
        return len(self.respondent_ids)

    @property
    def n_responses(self) -> int:
        return len(self.resp)

    @property
    def is_fixed(self) -> bool:
        return self.party_first is not None

    @property
    def offsets(self) -> np.ndarray:
        """Start of each respondent's block of responses (length R + 1)."""
        return np.searchsorted(self.resp, np.arange(self.n_respondents + 1))

    @property
    def response_cells(self) -> np.ndarray:
        return self.cells[self.resp]

    @property
    def first_day(self) -> np.ndarray:
        """First response day per respondent (-1 for respondents with no responses)."""
        out = np.full(self.n_respondents, -1, dtype=np.int64)
        if self.n_responses:
            starts = self.offsets
            has = starts[1:] > starts[:-1]
            out[has] = self.day[starts[:-1][has]]
        return out

    def respondent(self, i: int) -> Respondent:
        lo, hi = np.searchsorted(self.resp, [i, i + 1])
        rid = self.respondent_ids[i]
        key = self.lattice.key(int(self.cells[i]))
        responses = tuple(
            Response(
                rid,
                int(self.day[j]),
                key,
                INTENTS[self.intent[j]],
                None if self.party[j] == NO_PARTY else PARTIES[self.party[j]],
            )
            for j in range(lo, hi)
        )
        pf = None
        if self.party_first is not None:
            pf = PARTIES[self.party_first[i]]
        first = responses[0].day if responses else -1
        return Respondent(rid, key, pf, first, responses)

    def __iter__(self):
        return (self.respondent(i) for i in range(self.n_respondents))

    def take(self, indices: Sequence[int]) -> "Panel":
        """Panel made of respondents ``indices`` (in that order).

        Repeated indices produce clones; the k-th extra copy of id ``x`` is
        renamed ``x#k`` to keep ids unique.
        """
        indices = np.asarray(indices, dtype=np.int64)
        starts = self.offsets
        counts = starts[indices + 1] - starts[indices]
        rows = _block_rows(starts[indices], counts)
        new_resp = np.repeat(np.arange(len(indices)), counts)
        ids = self.respondent_ids
        if len(np.unique(indices)) == len(indices):
            new_ids = tuple(ids[i] for i in indices)
        else:
            seen: Counter = Counter()
            new_ids = []
            for i in indices.tolist():
                k = seen[i]
                seen[i] += 1
                new_ids.append(ids[i] if k == 0 else f"{ids[i]}#{k}")
            new_ids = tuple(new_ids)
        return Panel(
            lattice=self.lattice,
            respondent_ids=new_ids,
            cells=self.cells[indices],
            resp=new_resp,
            day=self.day[rows],
            intent=self.intent[rows],
            party=self.party[rows],
            seq=self.seq[rows],
            party_first=None if self.party_first is None else self.party_first[indices],
        )


def _block_rows(starts: np.ndarray, counts: np.ndarray) -> np.ndarray:
    """Concatenate ranges [s, s + c) for each (s, c)."""
    total = int(counts.sum())
    if total == 0:
        return np.zeros(0, dtype=np.int64)
    ends = np.cumsum(counts)
    shift = np.repeat(starts - (ends - counts), counts)
    return np.arange(total) + shift


def assemble_panel(
    lattice: CellLattice,
    respondent_ids: Sequence[str],
    cells: Sequence[int],
    resp: Sequence[int],
    day: Sequence[int],
    intent: Sequence[int],
    party: Sequence[int],
    *,
    duplicates_dropped: int = 0,
) -> Panel:
    """Build a Panel from unsorted per-response arrays in stream order."""
    resp = np.asarray(resp, dtype=np.int64)
    day = np.asarray(day, dtype=np.int64)
    seq = np.arange(len(resp))
    order = np.lexsort((seq, day, resp))
    return Panel(
        lattice=lattice,
        respondent_ids=tuple(respondent_ids),
        cells=np.asarray(cells, dtype=np.int64),
        resp=resp[order],
        day=day[order],
        intent=np.asarray(intent, dtype=np.int64)[order],
        party=np.asarray(party, dtype=np.int64)[order],
        seq=seq[order],
        duplicates_dropped=duplicates_dropped,
    )


def _parse_day(row, lineno, election_date):
    raw = row.get("day")
    if raw is not None and str(raw).strip() != "":
        try:
            day = int(str(raw).strip())
        except ValueError:
            raise MalformedRow(f"line {lineno}: field 'day' is not an integer: {raw!r}") from None
    elif election_date is not None and row.get("date"):
        try:
            date = dt.date.fromisoformat(str(row["date"]).strip())
        except ValueError:
            raise MalformedRow(f"line {lineno}: field 'date' is not an ISO date: {row['date']!r}") from None
        # day 44 is election eve
        day = N_DAYS - (election_date - date).days
    else:
        raise MalformedRow(f"line {lineno}: missing field 'day'")
    if not 0 <= day <= LAST_DAY:
        raise DayOutOfRange(f"line {lineno}: day {day} outside [0, {LAST_DAY}]")
    return day


def parse_panel(
    records: Iterable[Mapping[str, str]],
    lattice: CellLattice,
    *,
    election_date: dt.date | None = None,
    first_line: int = 1,
) -> Panel:
    """Validate response records and group them by respondent.

    Exact duplicate records are dropped (one warning with the count). An empty
    ``party`` field is accepted as "not reported".
    """
    index: dict[str, int] = {}
    ids: list[str] = []
    cells: list[int] = []
    resp, days, intents, parties = [], [], [], []
    seen_rows: set = set()
    dupes = 0
    for lineno, row in enumerate(records, start=first_line):
        if None in row or any(v is None for v in row.values()):
            raise MalformedRow(f"line {lineno}: wrong number of fields")
        fingerprint = tuple(row.values())
        if fingerprint in seen_rows:
            dupes += 1
            continue
        seen_rows.add(fingerprint)
        rid = str(row.get("respondent_id", "")).strip()
        if not rid:
            raise MalformedRow(f"line {lineno}: empty respondent_id")
        day = _parse_day(row, lineno, election_date)
        try:
            key = lattice.key_from_labels([row[name] for name in lattice.names])
        except KeyError as exc:
            raise MalformedRow(f"line {lineno}: missing field {exc.args[0]!r}") from None
        except UnknownLevel as exc:
            raise UnknownLevel(f"line {lineno}: {exc}") from None
        try:
            intent = intent_index(row.get("intent") or "")
            p = (row.get("party") or "").strip()
            party = party_index(p) if p else NO_PARTY
        except UnknownLevel as exc:
            raise UnknownLevel(f"line {lineno}: {exc}") from None
        cell = lattice.position(key)
        i = index.get(rid)
        if i is None:
            i = index[rid] = len(ids)
            ids.append(rid)
            cells.append(cell)
        elif cells[i] != cell:
            raise InconsistentDemographics(f"line {lineno}: respondent {rid!r} changes demographics")
        resp.append(i)
        days.append(day)
        intents.append(intent)
        parties.append(party)
    if dupes:
        warnings.warn(f"dropped {dupes} duplicate response rows", stacklevel=2)
    return assemble_panel(lattice, ids, cells, resp, days, intents, parties, duplicates_dropped=dupes)


def read_responses_csv(path: str | Path, lattice: CellLattice, *, election_date: dt.date | None = None) -> Panel:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        required = ["respondent_id", *lattice.names, "party", "intent"]
        missing = [c for c in required if c not in header]
        if "day" not in header and not ("date" in header and election_date is not None):
            missing.append("day")
        if missing:
            raise MalformedRow(f"{path}: header is missing columns {missing}")
        return parse_panel(reader, lattice, election_date=election_date, first_line=2)


def write_responses_csv(path: str | Path, panel: Panel) -> None:
    """Write responses in stream order using the response file schema."""
    lattice = panel.lattice
    cell_labels = [lattice.labels(lattice.key(int(c))) for c in panel.cells]
    order = np.argsort(panel.seq, kind="stable")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(["respondent_id", "day", *lattice.names, "party", "intent"])
        for j in order.tolist():
            i = int(panel.resp[j])
            p = int(panel.party[j])
            out.writerow([
                panel.respondent_ids[i],
                int(panel.day[j]),
                *cell_labels[i],
                "" if p == NO_PARTY else PARTIES[p],
                INTENTS[panel.intent[j]],
            ])


def fix_partisanship(panel: Panel) -> Panel:
    """Set each respondent's party from their earliest party report.

    Same-day reports are ordered by stream position; a same-day disagreement
    on the earliest day emits a warning and the first record wins.
    """
    if panel.is_fixed:
        return panel
    has = np.flatnonzero(panel.party != NO_PARTY)
    r = panel.resp[has]
    first_mask = np.ones(len(has), dtype=bool)
    first_mask[1:] = r[1:] != r[:-1]
    first_rows = has[first_mask]
    if len(first_rows) != panel.n_respondents:
        covered = np.zeros(panel.n_respondents, dtype=bool)
        covered[panel.resp[first_rows]] = True
        bad = [panel.respondent_ids[i] for i in np.flatnonzero(~covered)[:5]]
        raise MissingParty(f"respondents without any party report: {bad}")
    party_first = panel.party[first_rows]

    # reports on the same day as the first report that disagree with it
    conflict = (panel.day[has] == panel.day[first_rows][r]) & (panel.party[has] != party_first[r])
    if conflict.any():
        n_bad = len(np.unique(r[conflict]))
        warnings.warn(
            f"{n_bad} respondents report different parties on their first day; keeping the first record",
            stacklevel=2,
        )
    return replace(panel, party_first=party_first)


def filter_first_before(panel: Panel, cut_day: int) -> Panel:
    """Keep respondents whose first response is strictly before ``cut_day``.

    All responses of retained respondents are kept, including later ones.
    """
    if not 0 <= cut_day <= N_DAYS:
        raise ValidationError(f"cut_day {cut_day} outside [0, {N_DAYS}]")
    first = panel.first_day
    keep = np.flatnonzero((first >= 0) & (first < cut_day))
    out = panel.take(keep)
    return replace(out, duplicates_dropped=panel.duplicates_dropped)


@dataclass(frozen=True, eq=False)
class ResponseSet:
    """Responses selected for the window [t - w + 1, t]; ``rows`` index the panel."""

    panel: Panel
    t: int
    w: int
    rows: np.ndarray
    all_responses: bool = False

    def __len__(self):
        return len(self.rows)

    @property
    def resp(self):
        return self.panel.resp[self.rows]

    @property
    def day(self):
        return self.panel.day[self.rows]

    @property
    def intent(self):
        return self.panel.intent[self.rows]

    @property
    def cells(self):
        return self.panel.cells[self.resp]

    @property
    def party_first(self):
        if self.panel.party_first is None:
            raise ValidationError("panel partisanship not fixed; run fix_partisanship first")
        return self.panel.party_first[self.resp]

    def as_panel(self) -> Panel:
        """Panel holding only the selected responses (all respondents kept)."""
        p = self.panel
        return Panel(
            lattice=p.lattice,
            respondent_ids=p.respondent_ids,
            cells=p.cells,
            resp=p.resp[self.rows],
            day=p.day[self.rows],
            intent=p.intent[self.rows],
            party=p.party[self.rows],
            seq=p.seq[self.rows],
            party_first=p.party_first,
        )


def window_select(panel: Panel, t: int, w: int, *, all_responses: bool = False) -> ResponseSet:
    """Latest response per respondent with day in [t - w + 1, t].

    Ties within a day go to the last record in stream order. With
    ``all_responses`` every in-window response is kept instead.
    """
    if w < 1:
        raise ValidationError(f"window length must be >= 1, got {w}")
    if not 0 <= t <= LAST_DAY:
        raise ValidationError(f"day {t} outside [0, {LAST_DAY}]")
    in_window = np.flatnonzero((panel.day >= t - w + 1) & (panel.day <= t))
    if not all_responses and len(in_window):
        r = panel.resp[in_window]
        last = np.ones(len(in_window), dtype=bool)
        last[:-1] = r[1:] != r[:-1]
        in_window = in_window[last]
    return ResponseSet(panel, t, w, in_window, all_responses)


def two_party_subset(rs: ResponseSet, *, party_first: bool = True) -> Observations:
    """CAND_A / CAND_B responses as labelled observations (y = 1 for CAND_A)."""
    keep = np.isin(rs.intent, (CAND_A, CAND_B))
    rows = rs.rows[keep]
    resp = rs.panel.resp[rows]
    party = rs.panel.party_first[resp] if party_first and rs.panel.party_first is not None else None
    y = (rs.panel.intent[rows] == CAND_A).astype(np.int64)
    return Observations(cells=rs.panel.cells[resp], y=y, party=party)


@dataclass(frozen=True)
class PanelStats:
    respondents: int
    responses: int
    histogram: dict[int, int] = field(default_factory=dict)

    @property
    def mean_responses(self) -> float:
        return self.responses / self.respondents if self.respondents else 0.0

    def at_least(self, k: int) -> int:
        return sum(c for n, c in self.histogram.items() if n >= k)

    def as_dict(self, k: int = 15) -> dict:
        return {
            "respondents": self.respondents,
            "responses": self.responses,
            "mean_responses": self.mean_responses,
            f"at_least_{k}": self.at_least(k),
            "histogram": {str(n): c for n, c in sorted(self.histogram.items())},
        }


def panel_stats(panel: Panel) -> PanelStats:
    counts = np.bincount(panel.resp, minlength=panel.n_respondents)
    hist = np.bincount(counts) if len(counts) else np.zeros(0, dtype=np.int64)
    return PanelStats(
        respondents=panel.n_respondents,
        responses=panel.n_responses,
        histogram={n: int(c) for n, c in enumerate(hist) if c},
    )
