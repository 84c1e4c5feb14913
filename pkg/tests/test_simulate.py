import json
import math

import numpy as np
import pytest

from mrpswing.errors import ConfigError
from mrpswing.lattice import DEM, REP, FactorSpec, build_lattice
from mrpswing.panel import CAND_A, CAND_B, UNDECIDED, window_select
from mrpswing.simulate import config_from_dict, load_config, schedule, simulate_panel, swing_scenario, true_series

SMALL = build_lattice([FactorSpec("gender", ("male", "female")), FactorSpec("race", ("white", "black", "hispanic", "other"))])


def small_cfg(**kw):
    d = swing_scenario(lattice=SMALL, **kw)
    return d


def test_constant_truth():
    cfg = config_from_dict(small_cfg(party_support=(0.52, 0.52, 0.52)))
    np.testing.assert_allclose(true_series(cfg), 0.52, atol=1e-15)


def test_default_scenario_truth_is_052():
    cfg = config_from_dict(swing_scenario(n_respondents=10))
    np.testing.assert_allclose(true_series(cfg), 0.52, atol=1e-12)


def test_step_truth():
    support = np.where(np.arange(45) < 17, 0.52, 0.49)
    d = small_cfg(support_schedule=np.stack([support] * 3))
    truth = true_series(config_from_dict(d))
    np.testing.assert_allclose(truth, support, atol=1e-15)


def test_two_party_mixture():
    cfg = config_from_dict(small_cfg(party_shares=(0.5, 0.5, 0.0), party_support=(0.9, 0.1, 0.3)))
    np.testing.assert_allclose(true_series(cfg), 0.5, atol=1e-15)


def test_truth_is_seed_independent_and_linear():
    a = small_cfg(seed=1)
    b = small_cfg(seed=2)
    np.testing.assert_array_equal(true_series(config_from_dict(a)), true_series(config_from_dict(b)))
    # mixture of two population compositions -> same mixture of truths
    offsets = {"race": {"black": -1.2, "hispanic": -0.5}}
    p1 = dict(small_cfg(), cell_offsets=offsets, population={"margins": {"race": [1, 0, 0, 0]}})
    p2 = dict(small_cfg(), cell_offsets=offsets, population={"margins": {"race": [0, 1, 0, 0]}})
    mix = dict(small_cfg(), cell_offsets=offsets, population={"margins": {"race": [0.3, 0.7, 0, 0]}})
    t1, t2, tm = (true_series(config_from_dict(x)) for x in (p1, p2, mix))
    np.testing.assert_allclose(tm, 0.3 * t1 + 0.7 * t2, atol=1e-14)


def test_truth_with_offsets_matches_loop():
    offsets = {"gender": {"female": 0.4}, "race": {"black": -1.0, "other": 0.3}}
    cfg = config_from_dict(dict(small_cfg(), cell_offsets=offsets))
    pop = cfg.population.weights
    shares = cfg.party_given_cell
    expected = np.zeros(45)
    for cell in range(SMALL.size):
        g, r = SMALL.key(cell)
        off = (0.4 if g == 1 else 0.0) + {1: -1.0, 3: 0.3}.get(r, 0.0)
        for k in range(3):
            for d in range(45):
                s = cfg.support[k, d]
                p = 1 / (1 + math.exp(-(math.log(s / (1 - s)) + off)))
                expected[d] += pop[cell] * shares[cell, k] * p
    np.testing.assert_allclose(true_series(cfg), expected, atol=1e-13)


def test_zero_propensity_gives_no_responses():
    cfg = config_from_dict(small_cfg(n_respondents=300, base_propensity=0.0))
    p = simulate_panel(cfg)
    assert p.n_respondents == 300 and p.n_responses == 0


def test_reproducible_and_seed_sensitive():
    a = simulate_panel(config_from_dict(small_cfg(n_respondents=400, seed=9)))
    b = simulate_panel(config_from_dict(small_cfg(n_respondents=400, seed=9)))
    c = simulate_panel(config_from_dict(small_cfg(n_respondents=400, seed=10)))
    for name in ("cells", "resp", "day", "intent", "party"):
        assert np.array_equal(getattr(a, name), getattr(b, name))
    assert not np.array_equal(a.intent, c.intent) or not np.array_equal(a.day, c.day)


def test_workers_do_not_change_output():
    cfg = config_from_dict(small_cfg(n_respondents=5000, seed=4))
    a = simulate_panel(cfg, workers=1)
    b = simulate_panel(cfg, workers=3)
    for name in ("cells", "resp", "day", "intent", "party", "seq"):
        assert np.array_equal(getattr(a, name), getattr(b, name))


def test_entry_days_respected():
    d = small_cfg(n_respondents=2000, seed=2)
    d["entry"] = {"uniform": [5, 20]}
    cfg = config_from_dict(d)
    p = simulate_panel(cfg)
    assert p.n_respondents == 2000
    first = p.first_day
    assert first[first >= 0].min() >= 5
    assert p.day.min() >= 5


def test_raw_share_matches_truth_with_equal_propensity():
    cfg = config_from_dict(small_cfg(n_respondents=20000, seed=5, dem_multiplier=1.0))
    p = simulate_panel(cfg)
    rs = window_select(p, 10, 1)
    two = np.isin(rs.intent, (CAND_A, CAND_B))
    n = int(two.sum())
    share = float(np.mean(rs.intent[two] == CAND_A))
    se = math.sqrt(0.52 * 0.48 / n)
    assert abs(share - 0.52) < 3 * se


def test_dem_share_of_responses_drops_by_closed_form():
    cfg = config_from_dict(small_cfg(n_respondents=20000, seed=6))
    p = simulate_panel(cfg)
    party = p.party
    two = (party == DEM) | (party == REP)

    def dem_share(lo, hi):
        m = two & (p.day >= lo) & (p.day <= hi)
        is_dem = (party[m] == DEM).astype(float)
        # cluster-robust standard error over respondents
        resp = p.resp[m]
        share = is_dem.mean()
        resid = np.bincount(resp, weights=is_dem - share, minlength=p.n_respondents)
        se = math.sqrt(np.sum(resid ** 2)) / len(is_dem)
        return share, se

    d, se_pre = dem_share(0, 16)
    dip, se_dip = dem_share(17, 30)
    expected = d * 0.6 / (d * 0.6 + (1 - d))
    assert dip < d
    assert abs(dip - expected) < 3 * math.hypot(se_dip, se_pre)


def test_undecided_rate():
    cfg = config_from_dict(small_cfg(n_respondents=5000, seed=8, undecided=0.2))
    p = simulate_panel(cfg)
    n = p.n_responses
    frac = float(np.mean(p.intent == UNDECIDED))
    assert abs(frac - 0.2) < 3 * math.sqrt(0.2 * 0.8 / n)


def test_party_reports_constant():
    p = simulate_panel(config_from_dict(small_cfg(n_respondents=500, seed=1)))
    starts = p.offsets
    for i in range(0, 500, 37):
        block = p.party[starts[i]:starts[i + 1]]
        assert len(set(block.tolist())) <= 1


def test_schedule_forms():
    assert np.all(schedule(0.3) == 0.3)
    s = schedule({"default": 1.0, "segments": [[17, 30, 0.6]]})
    assert s[16] == 1.0 and s[17] == 0.6 and s[30] == 0.6 and s[31] == 1.0
    with pytest.raises(ConfigError):
        schedule([0.1] * 3)
    with pytest.raises(ConfigError):
        schedule({"segments": [[40, 50, 1.0]]})


def test_config_validation():
    with pytest.raises(ConfigError):
        config_from_dict(dict(small_cfg(), n_respondents=0))
    with pytest.raises(ConfigError):
        config_from_dict(dict(small_cfg(), undecided=1.0))
    with pytest.raises(ConfigError):
        config_from_dict(dict(small_cfg(), bogus=1))
    with pytest.raises(ConfigError):
        config_from_dict(dict(small_cfg(), propensity_multiplier={"DEM": 0.0, "REP": 1, "OTHER": 1}))


def test_load_config_json(tmp_path):
    path = tmp_path / "sim.json"
    path.write_text(json.dumps(small_cfg(n_respondents=50)))
    cfg = load_config(path)
    assert cfg.n_respondents == 50 and cfg.lattice == SMALL
    path.write_text("{not json")
    with pytest.raises(ConfigError):
        load_config(path)


def test_party_given_factor():
    d = dict(small_cfg(n_respondents=10), party_given_factor={
        "factor": "race", "shares": {"black": {"DEM": 0.9, "REP": 0.05, "OTHER": 0.05}}})
    cfg = config_from_dict(d)
    black = SMALL.levels()[:, 1] == 1
    np.testing.assert_allclose(cfg.party_given_cell[black], [[0.9, 0.05, 0.05]] * int(black.sum()))
    np.testing.assert_allclose(cfg.party_given_cell[~black][0], [0.4, 0.4, 0.2])
