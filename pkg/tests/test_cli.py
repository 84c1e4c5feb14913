import json

import numpy as np
import pytest

from mrpswing.cli import run
from mrpswing.lattice import FactorSpec, build_lattice, product_weights, write_weights_csv
from mrpswing.simulate import REFERENCE_MARGINS, swing_scenario

from conftest import make_row, HEADER

SMALL = build_lattice([FactorSpec("gender", ("male", "female")), FactorSpec("race", ("white", "black", "hispanic", "other"))])


def _write_json(path, obj):
    path.write_text(json.dumps(obj))
    return path


@pytest.fixture
def small_inputs(tmp_path):
    lat = _write_json(tmp_path / "lattice.json", {"factors": [{"name": f.name, "levels": list(f.levels)} for f in SMALL.factors]})
    cfg = _write_json(tmp_path / "sim.json", swing_scenario(lattice=SMALL, n_respondents=1500, seed=4))
    weights = tmp_path / "weights.csv"
    write_weights_csv(weights, product_weights(SMALL, {k: REFERENCE_MARGINS[k] for k in SMALL.names}))
    assert run(["simulate", "--config", str(cfg), "--out", str(tmp_path / "sim")]) == 0
    return tmp_path, lat, weights, tmp_path / "sim" / "responses.csv"


def test_simulate_reproducible(tmp_path, small_inputs):
    base, _, _, responses = small_inputs
    cfg = base / "sim.json"
    assert run(["simulate", "--config", str(cfg), "--seed", "42", "--out", str(tmp_path / "a")]) == 0
    assert run(["simulate", "--config", str(cfg), "--seed", "42", "--workers", "2", "--out", str(tmp_path / "b")]) == 0
    for name in ("responses.csv", "truth.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    assert (tmp_path / "a" / "responses.csv").read_bytes() != responses.read_bytes()


def test_estimate_and_manifest(small_inputs):
    base, lat, weights, responses = small_inputs
    before = responses.read_bytes()
    out = base / "est"
    argv = ["estimate", "--responses", str(responses), "--lattice", str(lat), "--weights", str(weights),
            "--party-shares", "0.4,0.4,0.2", "--dem-share", "--out", str(out)]
    assert run(argv) == 0
    assert responses.read_bytes() == before
    lines = (out / "series.csv").read_text().splitlines()
    assert len(lines) == 1 + 3 * 45
    kinds = {line.split(",")[1] for line in lines[1:]}
    assert kinds == {"DEMO", "DEMO_PARTY", "DEM_SHARE"}
    manifest = [json.loads(x) for x in (out / "manifest.jsonl").read_text().splitlines()]
    assert len(manifest) == 1
    m = manifest[0]
    assert m["subcommand"] == "estimate" and len(m["config_hash"]) == 64
    assert str(responses) in m["inputs"]


def test_demo_party_without_party_weights(small_inputs, capsys):
    base, lat, weights, responses = small_inputs
    code = run(["estimate", "--responses", str(responses), "--lattice", str(lat), "--weights", str(weights),
                "--model", "demo+party", "--out", str(base / "x")])
    assert code == 1
    assert "party" in capsys.readouterr().err


def test_exit_codes(tmp_path, small_inputs, capsys):
    base, lat, weights, responses = small_inputs
    assert run(["estimate", "--bogus"]) == 1
    assert run(["frobnicate"]) == 1
    assert run(["estimate", "--responses", str(tmp_path / "nope.csv"), "--weights", str(weights),
                "--lattice", str(lat), "--out", str(tmp_path / "o")]) == 1
    bad = tmp_path / "bad.csv"
    bad.write_text(",".join(HEADER) + "\nr1,3,male,white,18-29,hs_grad,CA,DEM,MAYBE\n")
    assert run(["validate", "--responses", str(bad)]) == 1
    assert "MAYBE" in capsys.readouterr().err
    assert run(["bootstrap", "--responses", str(responses), "--lattice", str(lat), "--weights", str(weights),
                "--replicates", "0", "--out", str(tmp_path / "o")]) == 1


def test_nonconvergence_exit_2(tmp_path, lattice, monkeypatch):
    import mrpswing.cli as cli
    from mrpswing.model import ModelSpec

    rows = [make_row(f"r{i}", 5, intent="CAND_A" if i % 3 else "CAND_B") for i in range(200)]
    responses = tmp_path / "r.csv"
    responses.write_text(",".join(HEADER) + "\n" + "\n".join(",".join(r[h] for h in HEADER) for r in rows) + "\n")
    weights = tmp_path / "w.csv"
    write_weights_csv(weights, product_weights(lattice, {}))
    monkeypatch.setattr(cli, "ModelSpec", lambda lat, **kw: ModelSpec(lat, max_inner=1, grad_tol=1e-30, **kw))
    code = run(["estimate", "--responses", str(responses), "--weights", str(weights), "--model", "demo",
                "--out", str(tmp_path / "o")])
    assert code == 2


def test_validate_ok(small_inputs, capsys):
    base, lat, weights, responses = small_inputs
    assert run(["validate", "--lattice", str(lat), "--weights", str(weights), "--responses", str(responses),
                "--party-shares", "DEM=0.4,REP=0.4,OTHER=0.2", "--config", str(base / "sim.json")]) == 0
    out = capsys.readouterr().out
    assert "weights ok" in out and "responses ok" in out
    assert run(["validate"]) == 1


def test_bootstrap_cli(small_inputs):
    base, lat, weights, responses = small_inputs
    out = base / "boot"
    assert run(["bootstrap", "--responses", str(responses), "--lattice", str(lat), "--weights", str(weights),
                "--model", "demo", "--min-n", "50", "--replicates", "5", "--seed", "1", "--dump-replicates",
                "--out", str(out)]) == 0
    header = (out / "series.csv").read_text().splitlines()[0]
    assert header.endswith("ci_lo_raw,ci_hi_raw")
    assert len((out / "replicates.csv").read_text().splitlines()) == 1 + 5 * 45


def test_diagnose_transitions(small_inputs):
    base, lat, _, responses = small_inputs
    out = base / "diag"
    assert run(["diagnose", "--responses", str(responses), "--lattice", str(lat),
                "--before", "16,4", "--after", "21,4", "--out", str(out)]) == 0
    assert (out / "transitions.csv").read_text().startswith("before\\after,CAND_A")
    stats = json.loads((out / "panel_stats.json").read_text())
    assert stats
    assert run(["diagnose", "--responses", str(responses), "--lattice", str(lat),
                "--before", "16,4", "--after", "18,4", "--out", str(out)]) == 1


@pytest.fixture(scope="module")
def full_scale(tmp_path_factory):
    base = tmp_path_factory.mktemp("full")
    cfg = _write_json(base / "sim.json", swing_scenario())
    assert run(["simulate", "--config", str(cfg), "--out", str(base / "sim")]) == 0
    sc = swing_scenario()
    from mrpswing.simulate import config_from_dict
    write_weights_csv(base / "w.csv", config_from_dict(sc).population)
    return base


def test_pipeline_swing_reduction(full_scale):
    base = full_scale
    assert run(["estimate", "--responses", str(base / "sim" / "responses.csv"), "--weights", str(base / "w.csv"),
                "--party-shares", "0.4,0.4,0.2", "--out", str(base / "est")]) == 0
    assert run(["diagnose", "--series", str(base / "est" / "series.csv"), "--drop", "16,21",
                "--out", str(base / "diag")]) == 0
    stats = json.loads((base / "diag" / "swing_stats.json").read_text())
    assert stats["swing_reduction"] >= 2
    assert stats["DEMO"]["drop"] > 0.02
    assert np.isfinite(stats["DEMO_PARTY"]["total_variation"])
