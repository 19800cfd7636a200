"""No-signaling test batteries under explicit detection-efficiency models.

Each battery slices a coincidence table into contingency tables, runs
Pearson's test on each, and applies a Bonferroni correction whose multiplier
is, by default, the number of tests the battery emitted.

Test keys read ``"<outcome>~<setting>|<conditioning>"``; for example
``"A~Y|X=1,Z=0"`` tests Alice's outcome against Bob's choice with X=1 and
Z=0 held fixed.  Multi-bin outcomes tested bin-against-reference appear as
``"A[11]~Y|X=0"``.
"""

from __future__ import annotations

import enum
import itertools
import json
import re
import warnings
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Sequence

from .qmodel import CorrelationModel
from .stats import Chi2Result, DegenerateTableError, bonferroni, pearson_chi2
from .tables import STAR, ContingencyTable, CountTable, TableError, slice_table


class EfficiencyModel(enum.Enum):
    """How detection probability is assumed to factorize.

    SETTING_LOCAL
        p = p~ * eta_a(X) * eta_b(Y): setting-dependent losses only.
    OUTCOME_LOCAL
        p = p~ * eta_a(A) * eta_b(B): outcome-dependent losses only.
    COMBINED
        p = p~ * eta_a(X, A) * eta_b(Y, B): testable only against an ideal
        quantum model, see :func:`outcome_efficiency_check`.
    """

    SETTING_LOCAL = "setting-local"
    OUTCOME_LOCAL = "outcome-local"
    COMBINED = "combined"


ALLOWED = "ALLOWED"
FORBIDDEN = "FORBIDDEN"


class MissingSettingsError(TableError):
    pass


@dataclass(frozen=True)
class CausalGraph:
    """Directed influence edges between variables (choices and outcomes).

    A choice may influence an outcome iff the outcome is reachable from it.
    """

    edges: frozenset
    name: str = ""

    def __post_init__(self):
        edges = frozenset((str(a), str(b)) for a, b in self.edges)
        object.__setattr__(self, "edges", edges)
        # Kahn's algorithm: leftover nodes mean a cycle
        nodes = {v for e in edges for v in e}
        indeg = {v: 0 for v in nodes}
        for _, b in edges:
            indeg[b] += 1
        queue = [v for v, d in indeg.items() if d == 0]
        seen = 0
        while queue:
            v = queue.pop()
            seen += 1
            for a, b in edges:
                if a == v:
                    indeg[b] -= 1
                    if indeg[b] == 0:
                        queue.append(b)
        if seen != len(nodes):
            raise ValueError(f"causal graph {self.name or ''} has a cycle")

    @classmethod
    def local(cls, pairs: Iterable[tuple[str, str]] = (("X", "A"), ("Y", "B"), ("Z", "C")), name: str = "local"):
        return cls(frozenset(pairs), name)

    def influences(self, source: str, target: str) -> bool:
        frontier, seen = [source], {source}
        while frontier:
            v = frontier.pop()
            for a, b in self.edges:
                if a == v and b not in seen:
                    if b == target:
                        return True
                    seen.add(b)
                    frontier.append(b)
        return False

    def check_layout(self, variables: Iterable[str]) -> None:
        known = set(variables)
        unknown = {v for e in self.edges for v in e} - known
        if unknown:
            raise ValueError(f"graph references undeclared variables {sorted(unknown)}")


#: Causal order of the three-party time-correlation experiment (experiment 2).
EXP2_GRAPH = CausalGraph(
    frozenset({("X", "A"), ("A", "B"), ("Y", "B"), ("Y", "C"), ("Z", "C")}), "exp2"
)
#: Bilocality experiment (experiment 5): each outcome depends on its own choice only.
EXP5_GRAPH = CausalGraph.local(name="exp5")


@dataclass(frozen=True)
class TestEntry:
    key: str
    outcome: str
    setting: str
    conditioning: tuple[tuple[str, str], ...]
    result: Chi2Result | None
    status: str = ALLOWED
    error: str | None = None
    table: ContingencyTable | None = field(default=None, compare=False, repr=False)

    @property
    def chi2(self) -> float:
        return self.result.chi2 if self.result else float("nan")


_NUM = re.compile(r"(\d+)")


def _natural(key: str):
    return [int(t) if t.isdigit() else t for t in _NUM.split(key)]


@dataclass(frozen=True)
class TestBatteryReport:
    name: str
    entries: tuple[TestEntry, ...]
    multiplier: int
    notes: tuple[str, ...] = ()

    def __iter__(self):
        return iter(self.entries)

    def __len__(self) -> int:
        return len(self.entries)

    def __getitem__(self, key: str) -> TestEntry:
        for e in self.entries:
            if e.key == key:
                return e
        raise KeyError(f"{key!r} not in battery {self.name!r}; keys: {[e.key for e in self.entries]}")

    def keys(self) -> list[str]:
        return [e.key for e in self.entries]

    def chi2(self, key: str) -> float:
        return self[key].chi2

    def results(self) -> list[Chi2Result]:
        return [e.result for e in self.entries if e.result is not None]

    def min_p_corrected(self) -> float:
        return min((r.p_corrected for r in self.results()), default=1.0)

    def to_dict(self) -> dict:
        entries = []
        for e in self.entries:
            d = {
                "key": e.key,
                "outcome": e.outcome,
                "setting": e.setting,
                "conditioning": [list(c) for c in e.conditioning],
                "status": e.status,
            }
            if e.result is not None:
                d.update(e.result.to_dict())
            if e.error:
                d["error"] = e.error
            entries.append(d)
        return {"battery": self.name, "multiplier": self.multiplier, "notes": list(self.notes), "entries": entries}

    @classmethod
    def from_dict(cls, d: Mapping) -> "TestBatteryReport":
        entries = []
        for e in d["entries"]:
            result = Chi2Result.from_dict(e) if "chi2" in e else None
            entries.append(
                TestEntry(
                    e["key"],
                    e["outcome"],
                    e["setting"],
                    tuple(tuple(c) for c in e["conditioning"]),
                    result,
                    e.get("status", ALLOWED),
                    e.get("error"),
                )
            )
        return cls(d["battery"], tuple(entries), int(d["multiplier"]), tuple(d.get("notes", ())))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)

    def to_text(self) -> str:
        head = f"{'test':<18} {'status':<9} {'chi2':>12} {'dof':>4} {'p_raw':>11} {'p_corr':>11}"
        lines = [f"# {self.name}: {len(self)} tests, Bonferroni multiplier {self.multiplier}", head, "-" * len(head)]
        for e in self.entries:
            if e.result is None:
                lines.append(f"{e.key:<18} {e.status:<9} {'aborted: ' + (e.error or ''):>12}")
                continue
            r = e.result
            lines.append(
                f"{e.key:<18} {e.status:<9} {r.chi2:>12.4f} {r.dof:>4d} {r.p_raw:>11.3e} {r.p_corrected:>11.3e}"
            )
        lines += [f"# note: {n}" for n in self.notes]
        return "\n".join(lines)

    def to_grid(self) -> str:
        """Pivot chi2 values: one row per tested pair, one column per conditioning."""
        pairs: dict[str, dict[str, float]] = {}
        cols: list[str] = []
        for e in self.entries:
            pair = e.key.split("|")[0]
            cond = "".join(v for _, v in e.conditioning)
            if cond not in cols:
                cols.append(cond)
            pairs.setdefault(pair, {})[cond] = e.chi2
        lines = [f"{'':<10}" + "".join(f"{c:>10}" for c in cols)]
        for pair, row in pairs.items():
            lines.append(f"{pair:<10}" + "".join(f"{row.get(c, float('nan')):>10.3f}" for c in cols))
        return "\n".join(lines)


def _finish(name: str, entries: list[TestEntry], multiplier: int | None, notes: Sequence[str] = ()) -> TestBatteryReport:
    entries = sorted(entries, key=lambda e: _natural(e.key))
    m = multiplier if multiplier is not None else max(1, len(entries))
    corrected = [replace(e, result=bonferroni(e.result, m)) if e.result is not None else e for e in entries]
    return TestBatteryReport(name, tuple(corrected), m, tuple(notes))


def _run(key, outcome, setting, conditioning, table_fn, status=ALLOWED) -> TestEntry:
    try:
        ct = table_fn()
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            res = pearson_chi2(ct, key)
    except DegenerateTableError as exc:
        return TestEntry(key, outcome, setting, conditioning, None, status, str(exc))
    return TestEntry(key, outcome, setting, conditioning, res, status, None, ct)


def _check_missing(tables: Sequence[CountTable]) -> None:
    layout = tables[0].layout
    missing = []
    for s in layout.setting_tuples():
        sel = dict(zip(layout.setting_names, s))
        if all(t.select(sel) == 0 for t in tables):
            missing.append("".join(s))
    if missing:
        raise MissingSettingsError(
            f"no events recorded for setting combination(s) {missing} of {''.join(layout.setting_names)}"
        )


def _cond_key(conditioning: Sequence[tuple[str, str]]) -> str:
    return ",".join(f"{k}={v}" for k, v in conditioning)


def _outcome_tests(
    table: CountTable,
    outcome: str,
    setting: str,
    conditioning: tuple[tuple[str, str], ...],
    row_values: Sequence[str],
    reference: str | None,
    full_bins: bool,
    status: str = ALLOWED,
) -> list[TestEntry]:
    """Tests of one outcome variable against one setting variable at fixed conditioning."""
    _, party = table.layout.party(outcome)
    labels = list(party.outcomes)
    fixed = dict(conditioning)
    rows = [{**fixed, setting: v} for v in row_values]
    cond = _cond_key(conditioning)
    if len(labels) == 2 or full_bins:
        key = f"{outcome}~{setting}|{cond}"
        cols = [{outcome: o} for o in labels]
        return [_run(key, outcome, setting, conditioning, lambda: slice_table(table, rows, cols), status)]
    ref = reference if reference is not None else party.no_detection
    if ref is None or ref not in labels:
        raise TableError(f"outcome {outcome} has {len(labels)} labels; give a reference bin or use full_bins")
    out = []
    for b in labels:
        if b == ref:
            continue
        key = f"{outcome}[{b}]~{setting}|{cond}"
        cols = [{outcome: b}, {outcome: ref}]
        out.append(_run(key, outcome, setting, conditioning, lambda cols=cols: slice_table(table, rows, cols), status))
    return out


def two_party_battery(
    *tables: CountTable,
    model: EfficiencyModel = EfficiencyModel.SETTING_LOCAL,
    reference: str | None = None,
    full_bins: bool = False,
    multiplier: int | None = None,
) -> TestBatteryReport:
    """Independence of each party's outcome from the remote choice, at each local choice.

    Several tables over the same parties may be given (for instance the two
    single-starred marginals an article prints instead of the full table);
    each test uses the first table in which its outcome is resolved.

    For binary outcomes this emits four tests: A vs Y at X=0,1 and B vs X at
    Y=0,1.  Outcomes with more labels are tested bin by bin against
    ``reference`` (default: the party's no-detection label), or, with
    ``full_bins``, in one 2 x k table per conditioning.
    """
    if not tables:
        raise TypeError("two_party_battery needs at least one table")
    model = EfficiencyModel(model)
    if model is EfficiencyModel.COMBINED:
        raise ValueError(
            "no model-free no-signaling test exists when efficiency depends on both choice "
            "and outcome; use outcome_efficiency_check with ideal-model equalities"
        )
    layout = tables[0].layout
    if len(layout) != 2:
        raise TableError(f"two_party_battery needs 2 parties, got {len(layout)}")
    names = (layout.outcome_names, layout.setting_names)
    for t in tables[1:]:
        if (t.layout.outcome_names, t.layout.setting_names) != names:
            raise TableError("all tables must describe the same parties")
    for p in layout.parties:
        if p.settings == (STAR,) or len(p.settings) != 2:
            raise TableError(f"party {p.name}: need binary settings, got {p.settings}")
    _check_missing(tables)

    entries: list[TestEntry] = []
    for i, j in ((0, 1), (1, 0)):
        source = next((t for t in tables if not t.layout.parties[i].outcome_starred), None)
        if source is None:
            continue
        me, other = source.layout.parties[i], source.layout.parties[j]
        for x in me.settings:
            entries += _outcome_tests(
                source, me.name, other.setting, ((me.setting, x),), other.settings, reference, full_bins
            )
    if not entries:
        raise TableError("every outcome is starred in the given tables; nothing to test")
    return _finish(f"two-party/{model.value}", entries, multiplier)


def three_party_battery(
    table: CountTable,
    graph: CausalGraph | None = None,
    multiplier: int | None = None,
    notes: Sequence[str] = (),
) -> TestBatteryReport:
    """Every (choice, outcome) pair tested at each fixed value of the other two choices.

    Pairs whose outcome is reachable from the choice in ``graph`` are ALLOWED
    (signaling there is permitted by the causal order), the rest FORBIDDEN.
    Same-party pairs are always ALLOWED.
    """
    layout = table.layout
    if len(layout) != 3:
        raise TableError(f"three_party_battery needs 3 parties, got {len(layout)}")
    for p in layout.parties:
        if len(p.settings) != 2 or len(p.outcomes) != 2:
            raise TableError(f"party {p.name}: need binary settings and outcomes")
    graph = graph or CausalGraph.local(zip(layout.setting_names, layout.outcome_names))
    graph.check_layout(layout.setting_names + layout.outcome_names)
    _check_missing([table])

    entries = []
    for pi, chooser in enumerate(layout.parties):
        others = [p for k, p in enumerate(layout.parties) if k != pi]
        for q in layout.parties:
            local = q is chooser
            status = ALLOWED if local or graph.influences(chooser.setting, q.name) else FORBIDDEN
            for vals in itertools.product(*(p.settings for p in others)):
                conditioning = tuple((p.setting, v) for p, v in zip(others, vals))
                entries += _outcome_tests(
                    table, q.name, chooser.setting, conditioning, chooser.settings, None, False, status
                )
    return _finish(f"three-party/{graph.name or 'graph'}", entries, multiplier, notes)


def _settings_label(layout, s: Sequence[str]) -> dict[str, str]:
    s = tuple(str(v) for v in s)
    if len(s) != len(layout):
        raise TableError(f"setting tuple {s} has wrong arity for {len(layout)} parties")
    return dict(zip(layout.setting_names, s))


def product_condition_check(
    totals: CountTable, quadruple: Sequence[Sequence[str]], descriptor: str | None = None
) -> Chi2Result:
    """Test N(s1) N(s4) = N(s2) N(s3) for coincidence totals via the 2 x 2 table (N1, N2; N3, N4).

    The identity is forced when detection efficiency factorizes over the
    parties' local settings, which requires that for every party the pair of
    values in (s1, s4) equals the pair in (s2, s3).
    """
    if len(quadruple) != 4:
        raise ValueError("need exactly four setting tuples")
    layout = totals.layout
    sels = [_settings_label(layout, s) for s in quadruple]
    keys = ["".join(s.values()) for s in sels]
    if len(set(keys)) != 4:
        raise ValueError(f"setting tuples must be distinct, got {keys}")
    for k, name in enumerate(layout.setting_names):
        if sorted((keys[0][k], keys[3][k])) != sorted((keys[1][k], keys[2][k])):
            raise ValueError(
                f"{keys} does not form a factorization identity: setting {name} differs between "
                f"(s1, s4) and (s2, s3)"
            )
    n = [totals.select(s) for s in sels]
    zero = [k for k, v in zip(keys, n) if v == 0]
    if zero:
        raise DegenerateTableError(f"zero total at setting(s) {zero}")
    names = "".join(layout.setting_names)
    label = descriptor or f"{names} totals {keys[0]},{keys[1]};{keys[2]},{keys[3]}"
    ct = ContingencyTable([[n[0], n[1]], [n[2], n[3]]], keys[:2], keys[2:])
    return pearson_chi2(ct, label)


def totals_independence(table: CountTable) -> Chi2Result:
    """Two-party product condition N(00) N(11) = N(01) N(10) on coincidence totals."""
    layout = table.layout
    if len(layout) != 2:
        raise TableError("totals_independence is for two parties; use product_condition_check")
    (x0, x1), (y0, y1) = (p.settings for p in layout.parties)
    key = f"{layout.setting_names[0]}~{layout.setting_names[1]}|totals"
    return product_condition_check(table, [(x0, y0), (x0, y1), (x1, y0), (x1, y1)], key)


@dataclass(frozen=True)
class EqualitySpec:
    """Two ideal-model equalities p~(o1|s1) = p~(o1|s2) and p~(o2|s1) = p~(o2|s2)."""

    settings: tuple[tuple[str, ...], tuple[str, ...]]
    outcomes: tuple[tuple[str, ...], tuple[str, ...]]

    def __post_init__(self):
        s = tuple(tuple(str(v) for v in t) for t in self.settings)
        o = tuple(tuple(str(v) for v in t) for t in self.outcomes)
        object.__setattr__(self, "settings", s)
        object.__setattr__(self, "outcomes", o)
        if len(s) != 2 or len(o) != 2:
            raise ValueError("need two setting tuples and two outcome tuples")
        diff = [k for k, (a, b) in enumerate(zip(*s)) if a != b]
        if len(diff) != 1:
            raise ValueError(f"settings {s} must differ in exactly one party's choice")
        k = diff[0]
        if o[0] == o[1]:
            raise ValueError("the two outcome tuples must differ")
        if o[0][k] != o[1][k]:
            raise ValueError(
                f"outcomes {o} must share the outcome of the party whose choice changes, "
                "or its choice-and-outcome efficiency does not cancel"
            )


def outcome_efficiency_check(table: CountTable, spec: EqualitySpec, descriptor: str | None = None) -> Chi2Result:
    """Independence test of the subtable rows (s1, s2) x columns (o1, o2).

    Under p = p~ eta_a(X, A) eta_b(Y, B) and the equalities in ``spec``, the
    efficiency and setting-frequency factors cancel in the cross ratio, so
    the subtable must look independent.
    """
    layout = table.layout
    try:
        cells = [[table.count(s, o) for o in spec.outcomes] for s in spec.settings]
    except TableError as exc:
        raise TableError(f"equality spec references absent cells: {exc}") from None
    rows = ["".join(s) for s in spec.settings]
    cols = ["".join(o) for o in spec.outcomes]
    label = descriptor or f"{''.join(layout.outcome_names)}={cols[0]},{cols[1]}|{''.join(layout.setting_names)}={rows[0]},{rows[1]}"
    return pearson_chi2(ContingencyTable(cells, rows, cols), label)


def ideal_equalities_hold(model: CorrelationModel, spec: EqualitySpec, tol: float = 1e-12) -> bool:
    """Whether the ideal quantum model satisfies the equalities of ``spec``.

    Outcome label "0" is +1 along the setting's direction and "1" is -1.
    """
    p = model.probabilities()
    ok = True
    for o in spec.outcomes:
        a, b = (int(v) for v in o)
        vals = [p[int(s[0]), int(s[1]), a, b] for s in spec.settings]
        ok &= abs(vals[0] - vals[1]) <= tol
    return bool(ok)


def detector_asymmetry_check(
    *tables: CountTable, outcome: str | None = None, multiplier: int | None = None
) -> TestBatteryReport:
    """Outcome of the second party against its own choice, at each fixed remote choice.

    With ideal angles and state, unequal efficiencies of the first party's
    detectors change the second party's marginal only through the first
    party's choice, so at fixed X the outcome B must not depend on Y.
    """
    layout = tables[0].layout
    if len(layout) != 2:
        raise TableError("detector_asymmetry_check needs 2 parties")
    outcome = outcome or layout.outcome_names[1]
    k, me = layout.party(outcome)
    source = next((t for t in tables if not t.layout.parties[k].outcome_starred), None)
    if source is None:
        raise TableError(f"outcome {outcome} is starred in every table")
    other = layout.parties[1 - k]
    entries = []
    for x in other.settings:
        entries += _outcome_tests(source, me.name, me.setting, ((other.setting, x),), me.settings, None, False)
    return _finish("detector-asymmetry", entries, multiplier)


def correlation_counts(table: CountTable, settings: Sequence[str]) -> tuple[int, int]:
    """(M, N) at one setting tuple: M = N_agree - N_disagree = N * E."""
    layout = table.layout
    sel = _settings_label(layout, settings)
    for p in layout.parties:
        if len(p.outcomes) != 2:
            raise TableError(f"party {p.name}: correlation needs binary outcomes")
    agree = disagree = 0
    for o in layout.outcome_tuples():
        n = table.select(sel, dict(zip(layout.outcome_names, o)))
        parity = sum(p.outcomes.index(v) for p, v in zip(layout.parties, o)) % 2
        if parity == 0:
            agree += n
        else:
            disagree += n
    return agree - disagree, agree + disagree


def correlation_consistency_check(table: CountTable, pair: Sequence[Sequence[str]]) -> Chi2Result:
    """Compare two settings' correlations via the 2 x 2 table ((M1, N1); (M2, N2)) with M = N E."""
    if len(pair) != 2:
        raise ValueError("need two setting tuples")
    s1, s2 = ("".join(str(v) for v in s) for s in pair)
    if s1 == s2:
        raise ValueError("the two setting tuples must differ")
    (m1, n1), (m2, n2) = (correlation_counts(table, s) for s in pair)
    if m1 < 0 or m2 < 0:
        raise ValueError(f"negative M ({m1}, {m2}): the test needs positive correlations at both settings")
    names = "".join(table.layout.setting_names)
    ct = ContingencyTable([[m1, n1], [m2, n2]], [s1, s2], ["M", "N"])
    return pearson_chi2(ct, f"M=NE|{names}={s1},{s2}")


__all__ = [
    "ALLOWED",
    "FORBIDDEN",
    "CausalGraph",
    "EXP2_GRAPH",
    "EXP5_GRAPH",
    "EfficiencyModel",
    "EqualitySpec",
    "MissingSettingsError",
    "TestBatteryReport",
    "TestEntry",
    "correlation_consistency_check",
    "correlation_counts",
    "detector_asymmetry_check",
    "ideal_equalities_hold",
    "outcome_efficiency_check",
    "product_condition_check",
    "three_party_battery",
    "totals_independence",
    "two_party_battery",
]
