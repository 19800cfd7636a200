"""Published count tables from the analysed Bell experiments, and their reanalysis.

Each fixture is one printed table, transcribed verbatim (typos included)
into ``data/<id>.json``.  :func:`reproduce_report` recomputes every
published statistic of an experiment and compares it with the printed
value; :func:`consistency_report` cross-checks marginals printed separately
against the full tables and totals they should sum to.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from decimal import Decimal
from functools import lru_cache
from importlib import resources
from typing import Callable, Mapping

from ..nosig import (
    EXP2_GRAPH,
    EXP5_GRAPH,
    TestBatteryReport,
    correlation_consistency_check,
    detector_asymmetry_check,
    product_condition_check,
    three_party_battery,
    totals_independence,
    two_party_battery,
)
from ..stats import Chi2Result, WeightedCounts, pearson_chi2, uniformity_chi2, weighted_chi2
from ..tables import CountTable, MarginalPattern, marginalize, setting_totals, slice_table

WEIGHTED_FORMAT_TAG = "bellnosig-weighted/1"


class UnknownFixtureError(KeyError):
    def __str__(self) -> str:
        return str(self.args[0])


@dataclass(frozen=True)
class PublishedValue:
    """A printed statistic with the tolerance it must be reproduced to.

    The tolerance is ``max(tol_abs, tol_rel * |value|)``.  ``value`` is None
    when a quantity is recomputed but was not printed.
    """

    key: str
    value: float | None
    tol_abs: float = 0.0
    tol_rel: float = 0.0
    source: str = ""
    printed_label: str | None = None
    flag: str | None = None

    @property
    def tolerance(self) -> float:
        if self.value is None:
            return math.nan
        return max(self.tol_abs, self.tol_rel * abs(self.value))

    @classmethod
    def from_dict(cls, d: Mapping) -> "PublishedValue":
        return cls(
            d["key"],
            d["value"],
            d.get("tol_abs", 0.0),
            d.get("tol_rel", 0.0),
            d.get("source", ""),
            d.get("printed_label"),
            d.get("flag"),
        )


@dataclass(frozen=True)
class Fixture:
    id: str
    experiment: str
    caption: str
    data: CountTable | Mapping[str, WeightedCounts]
    published_values: tuple[PublishedValue, ...] = field(default=(), repr=False)

    @property
    def table(self) -> CountTable:
        if not isinstance(self.data, CountTable):
            raise TypeError(f"fixture {self.id} holds weighted counts, not a count table")
        return self.data


@lru_cache(maxsize=None)
def _index() -> dict[str, str]:
    files = resources.files(__package__).joinpath("data")
    out = {}
    for entry in files.iterdir():
        name = entry.name
        if name.endswith(".json") and name != "experiments.json":
            out[name[: -len(".json")]] = name
    return out


def _read(name: str) -> dict:
    return json.loads(resources.files(__package__).joinpath("data", name).read_text(encoding="utf-8"))


@lru_cache(maxsize=None)
def _experiments() -> dict:
    return _read("experiments.json")


def fixture_ids() -> list[str]:
    return sorted(_index(), key=_fixture_sort_key)


def _fixture_sort_key(fid: str):
    exp, _, rest = fid.partition(".")
    return int(exp[3:]), rest


def experiments() -> list[str]:
    return sorted(_experiments(), key=int)


def published_values(experiment: str | int) -> tuple[PublishedValue, ...]:
    exp = _experiment_entry(experiment)
    return tuple(PublishedValue.from_dict(c) for c in exp["checks"])


def _experiment_entry(experiment: str | int) -> dict:
    key = str(experiment).removeprefix("exp")
    try:
        return _experiments()[key]
    except KeyError:
        raise UnknownFixtureError(f"unknown experiment {experiment!r}; known: {', '.join(experiments())}") from None


@lru_cache(maxsize=None)
def load_fixture(fixture_id: str) -> Fixture:
    """Load one printed table, e.g. ``"exp4.hrn1.amarg"``."""
    index = _index()
    if fixture_id not in index:
        raise UnknownFixtureError(f"unknown fixture {fixture_id!r}; known fixtures: {', '.join(fixture_ids())}")
    doc = _read(index[fixture_id])
    if doc.get("format") == WEIGHTED_FORMAT_TAG:
        data = {
            r["phase"]: WeightedCounts.from_errors(r["n"], r["e"], f"ph={r['phase']}") for r in doc["rows"]
        }
        exp, caption = doc["experiment"], doc["caption"]
    else:
        data = CountTable.from_dict(doc)
        exp, caption = doc["experiment"], doc["caption"]
    return Fixture(fixture_id, exp, caption, data, published_values(exp))


def load_group(prefix: str) -> dict[str, Fixture]:
    """All fixtures whose id starts with ``prefix.``, keyed by the remaining suffix."""
    prefix = prefix.rstrip(".")
    found = {fid[len(prefix) + 1 :]: load_fixture(fid) for fid in fixture_ids() if fid.startswith(prefix + ".")}
    if not found:
        raise UnknownFixtureError(f"no fixtures under {prefix!r}; known fixtures: {', '.join(fixture_ids())}")
    return found


def _t(fid: str) -> CountTable:
    return load_fixture(fid).table


# reproduction -----------------------------------------------------------------


@dataclass(frozen=True)
class ReproducedValue:
    key: str
    computed: float
    published: float | None
    tolerance: float
    source: str = ""
    printed_label: str | None = None
    flag: str | None = None

    @property
    def delta(self) -> float:
        return math.nan if self.published is None else abs(self.computed - self.published)

    @property
    def passed(self) -> bool | None:
        if self.published is None:
            return None
        return self.delta <= self.tolerance + 1e-12

    @property
    def matches_printed_precision(self) -> bool | None:
        """Whether the computed value, rounded or truncated to the printed decimals, equals the printed value."""
        if self.published is None:
            return None
        places = max(0, -Decimal(repr(self.published)).as_tuple().exponent)
        scale = 10**places
        pub = round(self.published * scale)
        return round(self.computed * scale) == pub or math.floor(self.computed * scale + 1e-9) == pub

    def to_dict(self) -> dict:
        return {
            "key": self.key,
            "computed": self.computed,
            "published": self.published,
            "delta": None if self.published is None else self.delta,
            "tolerance": None if self.published is None else self.tolerance,
            "passed": self.passed,
            "matches_printed_precision": self.matches_printed_precision,
            "printed_label": self.printed_label,
            "flag": self.flag,
            "source": self.source,
        }


@dataclass(frozen=True)
class ExperimentReport:
    experiment: str
    title: str
    values: tuple[ReproducedValue, ...]
    batteries: Mapping[str, TestBatteryReport] = field(default_factory=dict, repr=False)
    notes: tuple[str, ...] = ()

    def __getitem__(self, key: str) -> ReproducedValue:
        for v in self.values:
            if v.key == key:
                return v
        raise KeyError(key)

    @property
    def passed(self) -> bool:
        return all(v.passed is not False for v in self.values)

    @property
    def failures(self) -> list[ReproducedValue]:
        return [v for v in self.values if v.passed is False]

    def to_dict(self) -> dict:
        return {
            "experiment": self.experiment,
            "title": self.title,
            "passed": self.passed,
            "values": [v.to_dict() for v in self.values],
            "notes": list(self.notes),
        }

    def to_text(self) -> str:
        lines = [f"experiment {self.experiment}: {self.title}"]
        lines.append(f"  {'key':34s} {'computed':>12s} {'published':>10s} {'|delta|':>9s} {'tol':>8s}  result")
        for v in self.values:
            if v.published is None:
                lines.append(f"  {v.key:34s} {v.computed:12.6g} {'-':>10s} {'-':>9s} {'-':>8s}  info")
                continue
            verdict = "ok" if v.passed else "FAIL"
            if not v.passed and v.matches_printed_precision:
                verdict += " (matches at printed precision)"
            lines.append(
                f"  {v.key:34s} {v.computed:12.6g} {v.published:10.6g} {v.delta:9.3g} {v.tolerance:8.3g}  {verdict}"
            )
            if v.flag:
                lines.append(f"  {'':34s} note: {v.flag}")
        for n in self.notes:
            lines.append(f"  note: {n}")
        return "\n".join(lines)


def _battery_values(report: TestBatteryReport, prefix: str = "") -> dict[str, float]:
    return {prefix + e.key: e.chi2 for e in report}


def _compute_exp1():
    t = _t("exp1.occurrences")
    counts = [t.count((s, s), ("*", "*")) for s in t.layout.parties[0].settings]
    res = uniformity_chi2(counts, "uniformity")
    return {"occurrences total": float(sum(counts)), "uniformity": res.chi2}, {}


def _compute_exp2():
    rep = three_party_battery(_t("exp2.full"), EXP2_GRAPH)
    return _battery_values(rep), {"full": rep}


def _compute_exp4():
    values, batteries = {}, {}
    for run in ("hrn1", "qrn1", "hrn2", "db2"):
        if run == "qrn1":
            full = _t("exp4.qrn1.full")
            rep = two_party_battery(full)
            tot = totals_independence(setting_totals(full))
            sub = slice_table(full, [{"X": 1, "Y": 0}, {"X": 1, "Y": 1}], [{"A": 0, "B": 0}, {"A": 1, "B": 0}])
            values["qrn1:AB=00,10|XY=10,11"] = pearson_chi2(sub).chi2
        else:
            rep = two_party_battery(_t(f"exp4.{run}.amarg"), _t(f"exp4.{run}.bmarg"))
            tot = totals_independence(_t(f"exp4.{run}.totals"))
        values.update(_battery_values(rep, run + ":"))
        values[f"{run}:X~Y|totals"] = tot.chi2
        batteries[run] = rep
    return values, batteries


def _compute_exp5():
    full = _t("exp5.full")
    rep = three_party_battery(full, EXP5_GRAPH)
    values = _battery_values(rep)
    bc = slice_table(
        full, [{"X": 0, "Y": 1, "Z": 0}, {"X": 1, "Y": 1, "Z": 0}], [{"B": 0, "C": 0}, {"B": 0, "C": 1}]
    )
    values["BC=00,01|XYZ=010,110"] = pearson_chi2(bc).chi2
    a = slice_table(full, [{"X": 1, "Y": 0, "Z": 0}, {"X": 1, "Y": 1, "Z": 1}], [{"A": 0}, {"A": 1}])
    values["A|XYZ=100,111"] = pearson_chi2(a).chi2
    prod = product_condition_check(_t("exp5.totals"), ["000", "010", "101", "111"])
    values[prod.descriptor] = prod.chi2
    return values, {"full": rep}


def _compute_exp6():
    values, batteries = {}, {}
    for run in ("hrn", "qrn"):
        a, b = _t(f"exp6.{run}.amarg"), _t(f"exp6.{run}.bmarg")
        rep = two_party_battery(a, b)
        asym = detector_asymmetry_check(a, b)
        values.update(_battery_values(rep, run + ":"))
        values.update(_battery_values(asym, run + ":"))
        values[f"{run}:X~Y|totals"] = totals_independence(_t(f"exp6.{run}.totals")).chi2
        batteries[run] = rep
        batteries[run + ":asymmetry"] = asym
    return values, batteries


def _compute_exp9():
    rep = two_party_battery(_t("exp9.amarg"), _t("exp9.bmarg"))
    values = _battery_values(rep)
    values["X~Y|totals"] = totals_independence(_t("exp9.totals")).chi2
    values["X~Y|trials"] = totals_independence(_t("exp9.trials")).chi2
    return values, {"marginals": rep}


def _compute_exp10():
    data = load_fixture("exp10.weighted").data
    return {f"ph={ph}": weighted_chi2(w).chi2 for ph, w in data.items()}, {}


def _compute_exp12():
    full = _t("exp12.full")
    rep = two_party_battery(full)
    values = _battery_values(rep)
    values["X~Y|totals"] = totals_independence(setting_totals(full)).chi2
    values["M=NE|XY=01,10"] = correlation_consistency_check(full, [("0", "1"), ("1", "0")]).chi2
    return values, {"full": rep}


#: Look-elsewhere multiplier used for the experiment 13 bin battery.
EXP13_MULTIPLIER = 32


def _compute_exp13():
    rep = two_party_battery(_t("exp13.amarg"), _t("exp13.bmarg"), multiplier=EXP13_MULTIPLIER)
    values = _battery_values(rep)
    r = rep["A[11]~Y|X=0"].result
    values["A[11]~Y|X=0:p_raw"] = r.p_raw
    values["A[11]~Y|X=0:p_corrected"] = r.p_corrected
    values["X~Y|totals"] = totals_independence(_t("exp13.totals")).chi2
    return values, {"bins": rep}


_COMPUTE: dict[str, Callable[[], tuple[dict[str, float], dict[str, TestBatteryReport]]]] = {
    "1": _compute_exp1,
    "2": _compute_exp2,
    "4": _compute_exp4,
    "5": _compute_exp5,
    "6": _compute_exp6,
    "9": _compute_exp9,
    "10": _compute_exp10,
    "12": _compute_exp12,
    "13": _compute_exp13,
}


def reproduce_report(experiment: str | int) -> ExperimentReport:
    """Recompute every printed statistic of ``experiment`` and compare with the printed value."""
    entry = _experiment_entry(experiment)
    key = str(experiment).removeprefix("exp")
    computed, batteries = _COMPUTE[key]()
    values = []
    for pv in published_values(key):
        if pv.key not in computed:
            raise KeyError(f"experiment {key}: no computed value for {pv.key!r}")
        values.append(
            ReproducedValue(pv.key, float(computed[pv.key]), pv.value, pv.tolerance, pv.source, pv.printed_label, pv.flag)
        )
    return ExperimentReport(key, entry["title"], tuple(values), batteries, tuple(entry.get("notes", ())))


# consistency -----------------------------------------------------------------


@dataclass(frozen=True)
class ConsistencyCheck:
    description: str
    mismatches: tuple[tuple[str, int, int], ...]

    @property
    def consistent(self) -> bool:
        return not self.mismatches


def _compare(description: str, derived: CountTable, printed: CountTable) -> ConsistencyCheck:
    if derived.layout != printed.layout:
        raise ValueError(f"{description}: layouts differ")
    bad = []
    for s, o, n in derived.items():
        p = printed.count(s, o)
        if p != n:
            bad.append((f"{''.join(s)}/{''.join(o)}", int(n), int(p)))
    return ConsistencyCheck(description, tuple(bad))


_THREE_PARTY_MARGINALS = {"ab": "AB*", "ac": "A*C", "bc": "*BC", "a": "A**", "b": "*B*", "c": "**C", "totals": "***"}


def consistency_report() -> list[ConsistencyCheck]:
    """Recompute every printed marginal and total from the most detailed table available.

    Each mismatch is (cell, derived, printed).
    """
    out = []
    for exp in ("exp2", "exp5"):
        full = _t(f"{exp}.full")
        for suffix, pattern in _THREE_PARTY_MARGINALS.items():
            out.append(_compare(f"{exp}.{suffix} vs {exp}.full", marginalize(full, MarginalPattern.parse(pattern)), _t(f"{exp}.{suffix}")))
    for exp, full_id in (("exp4.qrn1", "exp4.qrn1.full"), ("exp12", "exp12.full")):
        full = _t(full_id)
        out.append(_compare(f"{exp}.amarg vs {full_id}", marginalize(full, MarginalPattern.parse("A*")), _t(f"{exp}.amarg")))
        out.append(_compare(f"{exp}.bmarg vs {full_id}", marginalize(full, MarginalPattern.parse("*B")), _t(f"{exp}.bmarg")))
        out.append(_compare(f"{exp}.totals vs {full_id}", setting_totals(full), _t(f"{exp}.totals")))
    groups = ["exp4.hrn1", "exp4.hrn2", "exp4.db2", "exp6.hrn", "exp6.qrn", "exp9", "exp13"]
    for g in groups:
        for part in ("amarg", "bmarg"):
            out.append(_compare(f"{g}.{part} sums vs {g}.totals", setting_totals(_t(f"{g}.{part}")), _t(f"{g}.totals")))
    return out


__all__ = [
    "ConsistencyCheck",
    "EXP13_MULTIPLIER",
    "ExperimentReport",
    "Fixture",
    "PublishedValue",
    "ReproducedValue",
    "UnknownFixtureError",
    "consistency_report",
    "experiments",
    "fixture_ids",
    "load_fixture",
    "load_group",
    "published_values",
    "reproduce_report",
]
