"""Command line entry point.

Exit codes: 0 success, 1 invalid input, 2 computation failure.
"""

from __future__ import annotations

import argparse
import datetime as dt
import hashlib
import json
import logging
import sys
from importlib import metadata
from pathlib import Path


from .bootstrap import BootstrapConfig, attach_bands, cluster_bootstrap, write_replicates_csv
from .diagnostics import swing_reduction, swing_stats, total_variation, transition_matrix
from .errors import ComputationError, ConfigError, ValidationError
from .estimate import DEM_SHARE, DEMO, DEMO_PARTY, daily_series, partisan_share_series, read_series_csv, write_series_csv
from .lattice import (
    FactorSpec,
    PartyShares,
    build_lattice,
    default_lattice,
    extend_with_party,
    read_weights_csv,
)
from .model import ModelSpec
from .panel import N_DAYS, filter_first_before, fix_partisanship, panel_stats, read_responses_csv, write_responses_csv
from .simulate import load_config, simulate_panel, true_series, write_truth_csv

MODEL_CHOICES = {"demo": (DEMO,), "demo+party": (DEMO_PARTY,), "both": (DEMO, DEMO_PARTY)}


class _ArgumentError(ValidationError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _ArgumentError(f"{self.prog}: {message}")


def _window_pair(text: str) -> tuple[int, int]:
    try:
        t, w = (int(x) for x in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected 't,w', got {text!r}") from None
    if not 0 <= t < N_DAYS or w < 1:
        raise argparse.ArgumentTypeError(f"window {text!r} out of range")
    return t, w


def _day_pair(text: str) -> tuple[int, int]:
    try:
        a, b = (int(x) for x in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected 't0,t1', got {text!r}") from None
    if not (0 <= a < N_DAYS and 0 <= b < N_DAYS):
        raise argparse.ArgumentTypeError(f"days {text!r} out of range")
    return a, b


def _u64(text: str) -> int:
    v = int(text)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def _positive(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text!r}")
    return v


def _nonnegative(text: str) -> int:
    v = int(text)
    if v < 0:
        raise argparse.ArgumentTypeError(f"expected a nonnegative integer, got {text!r}")
    return v


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mrpswing", description="MRP poll adjustment with partisan poststratification.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def inputs(p, weights=True):
        p.add_argument("--responses", type=Path, required=True)
        p.add_argument("--lattice", type=Path, help="JSON file with a 'factors' list (default: 2x4x4x4x51)")
        p.add_argument("--election-date", type=dt.date.fromisoformat, help="maps an ISO 'date' column to days")
        if weights:
            p.add_argument("--weights", type=Path, required=True)
            p.add_argument("--party-shares", help="'DEM,REP,OTHER' shares or a JSON file")

    def estimation(p):
        p.add_argument("--model", choices=sorted(MODEL_CHOICES), default="both")
        p.add_argument("--window", type=_positive, default=4)
        p.add_argument("--min-n", type=_nonnegative, default=100)
        p.add_argument("--cut-day", type=int, help="keep respondents whose first response precedes this day")
        p.add_argument("--all-responses", action="store_true", help="use every in-window response, not the latest")
        p.add_argument("--dem-share", action="store_true", help="also emit the DEM share of two-party identifiers")
        p.add_argument("--workers", type=_positive, default=1)

    p = sub.add_parser("estimate", help="daily poststratified series")
    inputs(p)
    estimation(p)
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("bootstrap", help="daily series with cluster bootstrap bands")
    inputs(p)
    estimation(p)
    p.add_argument("--replicates", type=_positive, default=200)
    p.add_argument("--seed", type=_u64, default=0)
    p.add_argument("--dump-replicates", action="store_true")
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("simulate", help="synthetic panel and its truth series")
    p.add_argument("--config", type=Path, required=True)
    p.add_argument("--seed", type=_u64)
    p.add_argument("--workers", type=_positive, default=1)
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("diagnose", help="swing statistics and transitions")
    p.add_argument("--series", type=Path)
    p.add_argument("--responses", type=Path)
    p.add_argument("--lattice", type=Path)
    p.add_argument("--election-date", type=dt.date.fromisoformat)
    p.add_argument("--before", type=_window_pair)
    p.add_argument("--after", type=_window_pair)
    p.add_argument("--drop", type=_day_pair, metavar="T0,T1", help="days for the drop statistic")
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("validate", help="schema-check inputs")
    p.add_argument("--responses", type=Path)
    p.add_argument("--weights", type=Path)
    p.add_argument("--party-shares")
    p.add_argument("--config", type=Path)
    p.add_argument("--lattice", type=Path)
    p.add_argument("--election-date", type=dt.date.fromisoformat)
    return parser


def _load_lattice(path: Path | None):
    if path is None:
        return default_lattice()
    with open(path, encoding="utf-8") as fh:
        try:
            d = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    try:
        return build_lattice(FactorSpec(f["name"], tuple(f["levels"])) for f in d["factors"])
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"{path}: malformed lattice ({exc!r})") from None


def _party_shares(text: str) -> PartyShares:
    path = Path(text)
    if path.exists():
        with open(path, encoding="utf-8") as fh:
            try:
                return PartyShares.from_mapping(json.load(fh))
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    parts = [x.strip() for x in text.split(",")]
    try:
        if all("=" in x for x in parts):
            return PartyShares.from_mapping({k.strip(): float(v) for k, v in (x.split("=") for x in parts)})
        return PartyShares(tuple(float(x) for x in parts))
    except ValueError:
        raise ConfigError(f"cannot parse party shares {text!r}; expected e.g. 0.4,0.4,0.2") from None


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "unknown"


def _manifest(args, out_dir: Path, inputs: list[Path]) -> None:
    config = {k: str(v) for k, v in sorted(vars(args).items()) if k not in ("out", "verbose")}
    line = {
        "subcommand": args.command,
        "config_hash": hashlib.sha256(json.dumps(config, sort_keys=True).encode()).hexdigest(),
        "config": config,
        "seed": getattr(args, "seed", None),
        "inputs": {str(p): _sha256(p) for p in inputs if p is not None},
        "version": _version(),
    }
    with open(out_dir / "manifest.jsonl", "a", encoding="utf-8") as fh:
        fh.write(json.dumps(line, sort_keys=True) + "\n")


def _prepare(args):
    lattice = _load_lattice(args.lattice)
    weights = read_weights_csv(args.weights, lattice)
    kinds = MODEL_CHOICES[args.model]
    if DEMO_PARTY in kinds and not weights.has_party:
        if args.party_shares is None:
            raise ValidationError(
                "model demo+party needs a party-extended weight table: the weights file has no party "
                "dimension and --party-shares was not given"
            )
        weights = extend_with_party(weights, _party_shares(args.party_shares))
    panel = read_responses_csv(args.responses, lattice, election_date=args.election_date)
    if args.cut_day is not None:
        panel = filter_first_before(panel, args.cut_day)
    if DEMO_PARTY in kinds or args.dem_share:
        panel = fix_partisanship(panel)
    return lattice, weights, panel, kinds


def _series_fns(args, lattice, weights):
    fns = {}
    for kind in MODEL_CHOICES[args.model]:
        spec = ModelSpec(lattice, include_party=kind == DEMO_PARTY)

        def fn(panel, kind=kind, spec=spec, workers=1):
            return daily_series(panel, spec, weights, args.window, kind, args.min_n,
                                all_responses=args.all_responses, workers=workers)

        fns[kind] = fn
    if args.dem_share:
        spec = ModelSpec(lattice)

        def share(panel, spec=spec, workers=1):
            return partisan_share_series(panel, spec, weights, args.window, args.min_n, workers=workers)

        fns[DEM_SHARE] = share
    return fns


def cmd_estimate(args) -> None:
    lattice, weights, panel, _ = _prepare(args)
    args.out.mkdir(parents=True, exist_ok=True)
    series = [fn(panel, workers=args.workers) for fn in _series_fns(args, lattice, weights).values()]
    write_series_csv(args.out / "series.csv", series)
    _manifest(args, args.out, [args.responses, args.weights, args.lattice])


def cmd_bootstrap(args) -> None:
    lattice, weights, panel, _ = _prepare(args)
    args.out.mkdir(parents=True, exist_ok=True)
    cfg = BootstrapConfig(replicates=args.replicates, seed=args.seed)
    series, results = [], {}
    for kind, fn in _series_fns(args, lattice, weights).items():
        point = fn(panel, workers=args.workers)
        res = cluster_bootstrap(panel, fn, cfg, workers=args.workers)
        series.append(attach_bands(point, res))
        results[kind] = res
    write_series_csv(args.out / "series.csv", series)
    if args.dump_replicates:
        write_replicates_csv(args.out / "replicates.csv", results)
    _manifest(args, args.out, [args.responses, args.weights, args.lattice])


def cmd_simulate(args) -> None:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    args.out.mkdir(parents=True, exist_ok=True)
    panel = simulate_panel(cfg, workers=args.workers)
    write_responses_csv(args.out / "responses.csv", panel)
    write_truth_csv(args.out / "truth.csv", true_series(cfg))
    if args.seed is None:
        args.seed = cfg.seed
    _manifest(args, args.out, [args.config])


def cmd_diagnose(args) -> None:
    if args.series is None and args.responses is None:
        raise ValidationError("diagnose needs --series and/or --responses")
    args.out.mkdir(parents=True, exist_ok=True)
    if args.series is not None:
        all_series = read_series_csv(args.series)
        stats = {}
        for kind, s in all_series.items():
            entry = {"total_variation": total_variation(s)}
            if args.drop is not None:
                entry["drop"] = swing_stats(s, *args.drop).drop
            stats[kind] = entry
        if DEMO in all_series and DEMO_PARTY in all_series:
            ratio = swing_reduction(all_series[DEMO], all_series[DEMO_PARTY])
            stats["swing_reduction"] = "INFINITE" if ratio == float("inf") else ratio
        with open(args.out / "swing_stats.json", "w", encoding="utf-8") as fh:
            json.dump(stats, fh, indent=2, sort_keys=True)
            fh.write("\n")
    if args.responses is not None:
        lattice = _load_lattice(args.lattice)
        panel = read_responses_csv(args.responses, lattice, election_date=args.election_date)
        with open(args.out / "panel_stats.json", "w", encoding="utf-8") as fh:
            json.dump(panel_stats(panel).as_dict(), fh, indent=2)
            fh.write("\n")
        if (args.before is None) != (args.after is None):
            raise ValidationError("--before and --after must be given together")
        if args.before is not None:
            transition_matrix(panel, args.before, args.after).to_csv(args.out / "transitions.csv")
    _manifest(args, args.out, [args.series, args.responses, args.lattice])


def cmd_validate(args) -> None:
    lattice = _load_lattice(args.lattice)
    checked = []
    if args.weights is not None:
        wt = read_weights_csv(args.weights, lattice)
        checked.append(f"weights ok ({'party-extended' if wt.has_party else 'demographic'})")
    if args.party_shares is not None:
        _party_shares(args.party_shares)
        checked.append("party shares ok")
    if args.responses is not None:
        panel = read_responses_csv(args.responses, lattice, election_date=args.election_date)
        checked.append(f"responses ok ({panel.n_respondents} respondents, {panel.n_responses} responses)")
    if args.config is not None:
        load_config(args.config)
        checked.append("simulation config ok")
    if not checked:
        raise ValidationError("nothing to validate; pass --responses, --weights, --party-shares or --config")
    for line in checked:
        print(line)


COMMANDS = {
    "estimate": cmd_estimate,
    "bootstrap": cmd_bootstrap,
    "simulate": cmd_simulate,
    "diagnose": cmd_diagnose,
    "validate": cmd_validate,
}


def run(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except _ArgumentError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        COMMANDS[args.command](args)
    except (ValidationError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except ComputationError as exc:
        print(f"computation error: {exc}", file=sys.stderr)
        return 2
    return 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
