import datetime as dt

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mrpswing.errors import DayOutOfRange, InconsistentDemographics, MalformedRow, MissingParty, UnknownLevel
from mrpswing.lattice import DEM, OTHER_PARTY, default_lattice
from mrpswing.panel import (
    CAND_A,
    assemble_panel,
    filter_first_before,
    fix_partisanship,
    panel_stats,
    parse_panel,
    read_responses_csv,
    two_party_subset,
    window_select,
    write_responses_csv,
)
from mrpswing.simulate import config_from_dict, simulate_panel, swing_scenario

LAT = default_lattice()


def test_parse_counts(row):
    p = parse_panel([row("a", 1), row("a", 3), row("b", 2)], LAT)
    assert p.n_respondents == 2 and p.n_responses == 3


def test_day_out_of_range(row):
    with pytest.raises(DayOutOfRange):
        parse_panel([row("a", 45)], LAT)


def test_duplicates_dropped(row):
    with pytest.warns(UserWarning, match="1 duplicate"):
        p = parse_panel([row("a", 1), row("a", 1)], LAT)
    assert p.n_responses == 1 and p.duplicates_dropped == 1


def test_parse_errors(row):
    bad = row("a", 1)
    bad["intent"] = "MAYBE"
    with pytest.raises(UnknownLevel):
        parse_panel([bad], LAT)
    bad = row("a", 1)
    bad["party"] = "GREEN"
    with pytest.raises(UnknownLevel):
        parse_panel([bad], LAT)
    bad = row("a", "x")
    with pytest.raises(MalformedRow):
        parse_panel([bad], LAT)
    other_cell = row("a", 2, cell=("female", "white", "18-29", "hs_grad", "CA"))
    with pytest.raises(InconsistentDemographics):
        parse_panel([row("a", 1), other_cell], LAT)


def test_iso_dates_map_to_days(row):
    r = row("a", "")
    r["date"] = "2012-11-05"
    p = parse_panel([r], LAT, election_date=dt.date(2012, 11, 6))
    assert int(p.day[0]) == 44


def test_party_fixed_at_first_response(row):
    p = fix_partisanship(parse_panel([row("a", 10, party="REP"), row("a", 2, party="DEM")], LAT))
    assert p.party_first[0] == DEM
    # raw later report is retained
    assert sorted(p.party.tolist()) == [0, 1]


def test_single_other_report(row):
    p = fix_partisanship(parse_panel([row("a", 5, party="OTHER")], LAT))
    assert p.party_first[0] == OTHER_PARTY


def test_same_day_tie_first_record_wins(row):
    p = parse_panel([row("a", 3, party="DEM"), row("a", 3, party="REP", intent="CAND_B")], LAT)
    with pytest.warns(UserWarning, match="different parties"):
        fixed = fix_partisanship(p)
    assert fixed.party_first[0] == DEM


def test_missing_party(row):
    with pytest.raises(MissingParty):
        fix_partisanship(parse_panel([row("a", 3, party="")], LAT))


def test_first_report_skips_unreported_rows(row):
    p = fix_partisanship(parse_panel([row("a", 1, party=""), row("a", 4, party="REP")], LAT))
    assert p.party_first[0] == 1


def test_fix_is_idempotent(row):
    p = fix_partisanship(parse_panel([row("a", 1), row("b", 2, party="REP")], LAT))
    again = fix_partisanship(p)
    assert np.array_equal(again.party_first, p.party_first)


def test_filter_first_before(row):
    p = parse_panel([row("a", 1), row("a", 30), row("b", 17), row("c", 20)], LAT)
    kept = filter_first_before(p, 17)
    assert kept.respondent_ids == ("a",)
    assert kept.day.tolist() == [1, 30]
    assert filter_first_before(p, 0).n_respondents == 0
    assert filter_first_before(p, 45).n_respondents == 3


def test_window_latest_in_window(row):
    p = parse_panel([row("a", 12, intent="CAND_B"), row("a", 14), row("b", 5)], LAT)
    rs = window_select(p, 15, 4)
    assert rs.day.tolist() == [14]
    assert rs.resp.tolist() == [0]


def test_window_length_one(row):
    p = parse_panel([row("a", 14), row("a", 15, intent="CAND_B"), row("b", 14)], LAT)
    rs = window_select(p, 15, 1)
    assert rs.day.tolist() == [15]


def test_same_day_later_record_wins_window(row):
    p = parse_panel([row("a", 3, intent="CAND_A"), row("a", 3, intent="CAND_B")], LAT)
    rs = window_select(p, 3, 4)
    assert rs.intent.tolist() == [1]


def test_all_responses_switch(row):
    p = parse_panel([row("a", 12), row("a", 14), row("b", 13)], LAT)
    assert len(window_select(p, 15, 4, all_responses=True)) == 3


def test_two_party_subset(row):
    p = fix_partisanship(parse_panel(
        [row("a", 1, intent="CAND_A"), row("b", 1, intent="UNDECIDED"), row("c", 1, intent="CAND_B")], LAT))
    obs = two_party_subset(window_select(p, 1, 1))
    assert sorted(obs.y.tolist()) == [0, 1]
    assert obs.party.tolist() == [DEM, DEM]
    only_undecided = fix_partisanship(parse_panel([row("a", 1, intent="UNDECIDED")], LAT))
    assert len(two_party_subset(window_select(only_undecided, 1, 1))) == 0


def random_panel(seed, n_resp=40, n_rows=200):
    r = np.random.default_rng(seed)
    resp = np.concatenate([np.arange(n_resp), r.integers(0, n_resp, n_rows - n_resp)])
    cells = r.integers(0, LAT.size, n_resp)
    return fix_partisanship(assemble_panel(
        LAT, [f"p{i}" for i in range(n_resp)], cells, resp, r.integers(0, 45, n_rows),
        r.integers(0, 4, n_rows), r.integers(0, 3, n_resp)[resp]))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.integers(0, 44), st.integers(1, 10))
def test_window_properties(seed, t, w):
    p = random_panel(seed)
    rs = window_select(p, t, w)
    days = rs.day
    assert np.all((days >= t - w + 1) & (days <= t))
    assert len(np.unique(rs.resp)) == len(rs)
    again = window_select(rs.as_panel(), t, w)
    assert np.array_equal(again.as_panel().seq, rs.as_panel().seq)
    obs = two_party_subset(rs)
    dropped = int(np.sum(rs.intent >= 2))
    assert len(obs) + dropped == len(rs)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000))
def test_two_party_labels_permutation_invariant(seed):
    p = random_panel(seed)
    rs = window_select(p, 44, 45, all_responses=True)
    r = np.random.default_rng(seed)
    perm = r.permutation(p.n_responses)
    raw = (p.resp[perm], p.day[perm], p.intent[perm], p.party[perm])
    shuffled = fix_partisanship(assemble_panel(LAT, p.respondent_ids, p.cells, *raw))
    a = two_party_subset(rs).y
    b = two_party_subset(window_select(shuffled, 44, 45, all_responses=True)).y
    assert sorted(a.tolist()) == sorted(b.tolist())


def test_panel_stats(row):
    p = parse_panel([row("a", 1), row("a", 2), row("a", 3), row("b", 1)], LAT)
    s = panel_stats(p)
    assert s.mean_responses == 2.0
    assert s.at_least(2) == 1
    empty = panel_stats(filter_first_before(p, 0))
    assert (empty.respondents, empty.responses, empty.mean_responses, empty.at_least(1)) == (0, 0, 0.0, 0)


def test_panel_stats_match_simulator_tallies():
    cfg = config_from_dict(swing_scenario(n_respondents=500, seed=3))
    panel, tallies = simulate_panel(cfg, return_tallies=True)
    s = panel_stats(panel)
    assert s.respondents == 500
    assert s.responses == int(tallies.sum())
    expected = np.bincount(tallies)
    assert s.histogram == {n: int(c) for n, c in enumerate(expected) if c}
    assert s.at_least(15) == int(np.sum(tallies >= 15))


def test_csv_round_trip(tmp_path):
    cfg = config_from_dict(swing_scenario(n_respondents=200, seed=5))
    panel = simulate_panel(cfg)
    path = tmp_path / "r.csv"
    write_responses_csv(path, panel)
    back = read_responses_csv(path, LAT)
    assert back.respondent_ids == panel.respondent_ids
    for name in ("cells", "resp", "day", "intent", "party"):
        assert np.array_equal(getattr(back, name), getattr(panel, name))


def test_take_clones_get_unique_ids(row):
    p = parse_panel([row("a", 1), row("b", 2)], LAT)
    c = p.take([0, 0, 1])
    assert c.respondent_ids == ("a", "a#1", "b")
    assert c.day.tolist() == [1, 1, 2]
    assert int(np.sum(c.intent == CAND_A)) == 3
