"""Command-line front end.

Exit status: 0 when the command ran, 1 when it ran and found what a flag
asked it to fail on (a signal under ``--fail-on-signal``, a value out of
tolerance in ``reproduce``), 2 for bad input or usage.
"""

from __future__ import annotations

import argparse
import io
import json
import sys
from typing import Sequence

from . import __version__
from .datasets import (
    UnknownFixtureError,
    consistency_report,
    experiments,
    fixture_ids,
    load_fixture,
    load_group,
    reproduce_report,
)
from .nosig import (
    EXP2_GRAPH,
    EXP5_GRAPH,
    CausalGraph,
    EfficiencyModel,
    TestBatteryReport,
    TestEntry,
    detector_asymmetry_check,
    three_party_battery,
    totals_independence,
    two_party_battery,
)
from .qmodel import chsh_max
from .simulator import (
    calibrate,
    empirical_correlations,
    exp4_quantum_config,
    factorized_null_config,
    signaling_alternative_config,
    simulate,
)
from .stats import bonferroni, weighted_chi2
from .tables import CountTable, EventLogError, TableError, read_table, setting_totals, write_event_log

EXIT_OK, EXIT_FLAGGED, EXIT_ERROR = 0, 1, 2

_GRAPHS = {"exp2": EXP2_GRAPH, "exp5": EXP5_GRAPH}


class CliError(Exception):
    pass


# input ------------------------------------------------------------------------


def _fixture_tables(fid: str) -> tuple[list[CountTable], dict | None, str]:
    """Tables to analyze for a fixture id or group; weighted fixtures come back as a dict."""
    try:
        fx = load_fixture(fid)
        group = {fid: fx}
    except UnknownFixtureError:
        group = load_group(fid)
    first = next(iter(group.values()))
    if len(group) == 1 and not isinstance(first.data, CountTable):
        return [], dict(first.data), first.experiment
    if "full" in group:
        return [group["full"].table], None, first.experiment
    tables = [group[k].table for k in ("amarg", "bmarg") if k in group]
    if not tables:
        tables = [f.table for f in group.values()]
    return tables, None, first.experiment


def _read_input(path: str) -> CountTable:
    if path == "-":
        return read_table(io.StringIO(sys.stdin.read()))
    return read_table(path)


def _weighted_report(data: dict, multiplier: int | None) -> TestBatteryReport:
    entries = []
    for label, w in data.items():
        key = f"ph={label}"
        entries.append(TestEntry(key, "B", "X", (), weighted_chi2(w, key)))
    m = multiplier or len(entries)
    entries = [TestEntry(e.key, e.outcome, e.setting, e.conditioning, bonferroni(e.result, m)) for e in entries]
    return TestBatteryReport("weighted", tuple(entries), m)


def _single_report(name: str, result, multiplier: int | None) -> TestBatteryReport:
    m = multiplier or 1
    entry = TestEntry(result.descriptor, "*", "*", (), bonferroni(result, m))
    return TestBatteryReport(name, (entry,), m)


def _graph_for(args, experiment: str | None) -> CausalGraph | None:
    if args.graph == "auto":
        return _GRAPHS.get(experiment or "")
    if args.graph == "local":
        return None
    return _GRAPHS[args.graph]


# commands ---------------------------------------------------------------------


def cmd_analyze(args) -> int:
    if (args.input is None) == (args.fixture is None):
        raise CliError("give exactly one input: a path (or - for stdin) or --fixture ID")
    experiment = None
    weighted = None
    if args.fixture is not None:
        tables, weighted, experiment = _fixture_tables(args.fixture)
    else:
        tables = [_read_input(args.input)]
    model = EfficiencyModel(args.model)

    if weighted is not None:
        report = _weighted_report(weighted, args.correction)
    elif args.battery == "totals":
        report = _single_report("totals", totals_independence(setting_totals(tables[0])), args.correction)
    elif args.battery == "asymmetry":
        report = detector_asymmetry_check(*tables, multiplier=args.correction)
    elif len(tables[0].layout) == 3:
        if model is EfficiencyModel.COMBINED:
            two_party_battery(*tables, model=model)  # raises with the explanation
        report = three_party_battery(tables[0], _graph_for(args, experiment), args.correction)
    else:
        report = two_party_battery(*tables, model=model, multiplier=args.correction)

    _emit(report.to_json() if args.format == "json" else report.to_text())
    if args.fail_on_signal is not None and report.min_p_corrected() < args.fail_on_signal:
        print(
            f"signal: smallest corrected p = {report.min_p_corrected():.3e} < {args.fail_on_signal:g}",
            file=sys.stderr,
        )
        return EXIT_FLAGGED
    return EXIT_OK


def _config(args):
    if args.scenario == "quantum":
        return exp4_quantum_config(args.trials, args.seed, args.eta, args.visibility)
    if args.scenario == "null":
        return factorized_null_config(args.trials, args.seed)
    return signaling_alternative_config(args.trials, args.seed, args.skew)


def cmd_simulate(args) -> int:
    config = _config(args)
    out = simulate(config, keep_events=True)
    layout = out.coincidences.layout
    if args.output in (None, "-"):
        write_event_log(out.iter_events(), layout, sys.stdout)
    else:
        with open(args.output, "w", newline="") as fh:
            write_event_log(out.iter_events(), layout, fh)
    summary = (
        f"trials={out.trials} coincidences={out.coincidences.total} partial={out.partial} "
        f"lost={out.lost} singles={','.join(map(str, out.singles))}"
    )
    if out.coincidences.total and all(out.coincidences.select(dict(zip(layout.setting_names, s))) for s in layout.setting_tuples()):
        summary += f" |S|max={chsh_max(empirical_correlations(out.coincidences)):.4f}"
    print(summary, file=sys.stderr)
    return EXIT_OK


def cmd_calibrate(args) -> int:
    config = _config(args)
    model = EfficiencyModel(args.model)

    rates = calibrate(
        config,
        _Battery(model, args.correction),
        args.alpha,
        args.replications,
        workers=args.workers,
        corrected=args.corrected,
    )
    if args.format == "json":
        _emit(json.dumps({"scenario": args.scenario, "alpha": args.alpha, "replications": args.replications, "rates": rates}, indent=1))
    else:
        which = "corrected" if args.corrected else "raw"
        lines = [f"# {args.scenario}: {args.replications} replications x {args.trials} trials, {which} p < {args.alpha:g}"]
        lines += [f"{k:<12} {v:.4f}" for k, v in rates.items()]
        _emit("\n".join(lines))
    return EXIT_OK


class _Battery:
    """Picklable battery callable for worker processes."""

    def __init__(self, model: EfficiencyModel, multiplier: int | None):
        self.model = model
        self.multiplier = multiplier

    def __call__(self, table: CountTable) -> TestBatteryReport:
        return two_party_battery(table, model=self.model, multiplier=self.multiplier)


def cmd_reproduce(args) -> int:
    ids = experiments() if args.experiment == "all" else [args.experiment]
    reports = [reproduce_report(e) for e in ids]
    if args.format == "json":
        _emit(json.dumps([r.to_dict() for r in reports], indent=1))
    else:
        _emit("\n\n".join(r.to_text() for r in reports))
    return EXIT_OK if all(r.passed for r in reports) else EXIT_FLAGGED


def cmd_fixtures(args) -> int:
    if args.check:
        checks = consistency_report()
        for c in checks:
            status = "consistent" if c.consistent else "MISMATCH"
            _emit(f"{status:<10} {c.description}")
            for cell, derived, printed in c.mismatches:
                _emit(f"{'':<10}   cell {cell}: derived {derived}, printed {printed}")
        return EXIT_OK
    if args.show:
        fx = load_fixture(args.show)
        if isinstance(fx.data, CountTable):
            _emit(fx.data.dumps(id=fx.id, experiment=fx.experiment, caption=fx.caption))
        else:
            rows = {k: {"n": w.n, "e2": w.e2} for k, w in fx.data.items()}
            _emit(json.dumps({"id": fx.id, "caption": fx.caption, "rows": rows}, indent=1))
        return EXIT_OK
    for fid in fixture_ids():
        _emit(f"{fid:<22} {load_fixture(fid).caption}")
    return EXIT_OK


def _emit(text: str) -> None:
    sys.stdout.write(text + "\n")


# parser -----------------------------------------------------------------------


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {v}")
    return v


def _nonneg_int(text: str) -> int:
    v = int(float(text)) if "e" in text.lower() else int(text)
    if v < 0:
        raise argparse.ArgumentTypeError(f"must be >= 0, got {v}")
    return v


def _probability(text: str) -> float:
    v = float(text)
    if not 0.0 <= v <= 1.0:
        raise argparse.ArgumentTypeError(f"must lie in [0, 1], got {v}")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="bellnosig", description="No-signaling tests for Bell-test coincidence counts.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def fmt(sp):
        sp.add_argument("--format", choices=("table", "json"), default="table")

    def model(sp):
        sp.add_argument("--model", choices=[m.value for m in EfficiencyModel], default=EfficiencyModel.SETTING_LOCAL.value)
        sp.add_argument("--correction", type=_positive_int, metavar="N", help="Bonferroni multiplier (default: battery size)")

    a = sub.add_parser("analyze", help="run a no-signaling battery on a table or event log")
    a.add_argument("input", nargs="?", help="event log or table file; - reads stdin")
    a.add_argument("--fixture", metavar="ID", help="bundled fixture id or group, e.g. exp4.hrn1")
    model(a)
    a.add_argument("--battery", choices=("nosig", "asymmetry", "totals"), default="nosig")
    a.add_argument("--graph", choices=("auto", "local", "exp2", "exp5"), default="auto", help="causal graph for three parties")
    a.add_argument("--fail-on-signal", type=_probability, metavar="P", help="exit 1 if any corrected p < P")
    fmt(a)
    a.set_defaults(func=cmd_analyze)

    def scenario(sp, default_trials):
        sp.add_argument("--scenario", choices=("quantum", "null", "signaling"), default="quantum")
        sp.add_argument("--trials", type=_nonneg_int, default=default_trials)
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--eta", type=float, default=1.0, help="detection efficiency (quantum scenario)")
        sp.add_argument("--visibility", type=float, default=1.0, help="visibility (quantum scenario)")
        sp.add_argument("--skew", type=float, default=0.05, help="relative efficiency skew (signaling scenario)")

    s = sub.add_parser("simulate", help="write a simulated event log")
    scenario(s, 10_000)
    s.add_argument("-o", "--output", help="output path (default stdout)")
    s.set_defaults(func=cmd_simulate)

    c = sub.add_parser("calibrate", help="rejection rates of the two-party battery over replications")
    scenario(c, 100_000)
    model(c)
    c.add_argument("--replications", type=_positive_int, default=200)
    c.add_argument("--alpha", type=_probability, default=0.05)
    c.add_argument("--corrected", action="store_true", help="reject on corrected rather than raw p")
    c.add_argument("--workers", type=_positive_int, default=1)
    fmt(c)
    c.set_defaults(func=cmd_calibrate)

    r = sub.add_parser("reproduce", help="recompute published statistics of an experiment")
    r.add_argument("experiment", help="experiment number, or all")
    fmt(r)
    r.set_defaults(func=cmd_reproduce)

    f = sub.add_parser("fixtures", help="list bundled fixtures")
    f.add_argument("--show", metavar="ID", help="print one fixture")
    f.add_argument("--check", action="store_true", help="cross-check printed marginals and totals")
    f.set_defaults(func=cmd_fixtures)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except EventLogError as exc:
        src = getattr(args, "input", None) or "<input>"
        print(f"bellnosig: {'<stdin>' if src == '-' else src}: {exc}", file=sys.stderr)
    except (CliError, UnknownFixtureError, TableError, ValueError, OSError) as exc:
        print(f"bellnosig: {exc}", file=sys.stderr)
    return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
