"""Coincidence count tables for two- and three-party Bell tests.

A :class:`CountTable` holds exact integer counts indexed by the tuple of
setting labels and the tuple of outcome labels, one label per party.  A party
whose outcome (or setting) has been summed over carries the single label
:data:`STAR`, so a marginal table is just another :class:`CountTable`.
"""

from __future__ import annotations

import csv
import io
import json
import re
from dataclasses import dataclass, field
from itertools import product
from typing import IO, Iterable, Iterator, Mapping, Sequence

import numpy as np

STAR = "*"
#: Token written in event logs for an outcome that was not detected.
NO_DETECTION_TOKEN = "-"

FORMAT_TAG = "bellnosig-table/1"


class TableError(ValueError):
    """Raised for counts or specs that do not conform to a layout."""


class EventLogError(TableError):
    """Parse failure in a delimited event log, with line/column position."""

    def __init__(self, message: str, line: int, column: int | None = None):
        self.line = line
        self.column = column
        where = f"line {line}" if column is None else f"line {line}, column {column}"
        super().__init__(f"{where}: {message}")


def _labels(values: Iterable) -> tuple[str, ...]:
    return tuple(str(v) for v in values)


@dataclass(frozen=True)
class Party:
    """One observer: an outcome variable and the setting variable that drives it."""

    name: str
    setting: str
    settings: tuple[str, ...] = ("0", "1")
    outcomes: tuple[str, ...] = ("0", "1")
    no_detection: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "settings", _labels(self.settings))
        object.__setattr__(self, "outcomes", _labels(self.outcomes))
        if self.name == self.setting:
            raise TableError(f"party {self.name!r}: setting and outcome share a name")
        for kind, alphabet in (("setting", self.settings), ("outcome", self.outcomes)):
            if not alphabet:
                raise TableError(f"party {self.name!r}: empty {kind} alphabet")
            if len(set(alphabet)) != len(alphabet):
                raise TableError(f"party {self.name!r}: duplicate {kind} labels {alphabet}")
        if self.no_detection is not None:
            object.__setattr__(self, "no_detection", str(self.no_detection))
            if self.no_detection not in self.outcomes:
                raise TableError(
                    f"party {self.name!r}: no-detection label {self.no_detection!r} "
                    f"not among outcomes {self.outcomes}"
                )

    @property
    def outcome_starred(self) -> bool:
        return self.outcomes == (STAR,)

    @property
    def setting_starred(self) -> bool:
        return self.settings == (STAR,)


@dataclass(frozen=True)
class PartyLayout:
    parties: tuple[Party, ...]

    def __post_init__(self):
        object.__setattr__(self, "parties", tuple(self.parties))
        if len(self.parties) < 2:
            raise TableError("a layout needs at least two parties")
        names = [p.name for p in self.parties] + [p.setting for p in self.parties]
        if len(set(names)) != len(names):
            raise TableError(f"variable names must be unique, got {names}")

    @classmethod
    def binary(cls, outcomes: str = "AB", settings: str = "XY") -> "PartyLayout":
        """Layout with binary settings and outcomes, e.g. ``binary("ABC", "XYZ")``."""
        if len(outcomes) != len(settings):
            raise TableError("need one setting variable per outcome variable")
        return cls(tuple(Party(a, x) for a, x in zip(outcomes, settings)))

    def __len__(self) -> int:
        return len(self.parties)

    @property
    def outcome_names(self) -> tuple[str, ...]:
        return tuple(p.name for p in self.parties)

    @property
    def setting_names(self) -> tuple[str, ...]:
        return tuple(p.setting for p in self.parties)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(len(p.settings) for p in self.parties) + tuple(
            len(p.outcomes) for p in self.parties
        )

    def party(self, variable: str) -> tuple[int, Party]:
        """Locate a party by its outcome or setting variable name."""
        for i, p in enumerate(self.parties):
            if variable in (p.name, p.setting):
                return i, p
        raise TableError(f"unknown variable {variable!r}; layout has {self.setting_names + self.outcome_names}")

    def setting_tuples(self) -> Iterator[tuple[str, ...]]:
        return product(*(p.settings for p in self.parties))

    def outcome_tuples(self) -> Iterator[tuple[str, ...]]:
        return product(*(p.outcomes for p in self.parties))

    def index(self, settings: Sequence, outcomes: Sequence) -> tuple[int, ...]:
        settings, outcomes = _labels(settings), _labels(outcomes)
        if len(settings) != len(self) or len(outcomes) != len(self):
            raise TableError(
                f"expected {len(self)} settings and {len(self)} outcomes, "
                f"got {settings} / {outcomes}"
            )
        idx = []
        for p, s in zip(self.parties, settings):
            if s not in p.settings:
                raise TableError(f"setting {p.setting}={s!r} not in {p.settings}")
            idx.append(p.settings.index(s))
        for p, o in zip(self.parties, outcomes):
            if o not in p.outcomes:
                raise TableError(f"outcome {p.name}={o!r} not in {p.outcomes}")
            idx.append(p.outcomes.index(o))
        return tuple(idx)

    def to_dict(self) -> dict:
        out = []
        for p in self.parties:
            d = {"name": p.name, "setting": p.setting, "settings": list(p.settings), "outcomes": list(p.outcomes)}
            if p.no_detection is not None:
                d["no_detection"] = p.no_detection
            out.append(d)
        return {"parties": out}

    @classmethod
    def from_dict(cls, d: Mapping) -> "PartyLayout":
        return cls(tuple(Party(**p) for p in d["parties"]))


class CountTable:
    """Immutable integer counts N(outcomes | settings).

    Counts live in a dense array whose first ``n`` axes are the parties'
    settings and last ``n`` axes their outcomes.  Setting tuples without
    events are kept as zero rows.
    """

    __slots__ = ("layout", "_counts")

    def __init__(self, layout: PartyLayout, counts):
        arr = np.asarray(counts)
        if arr.shape != layout.shape:
            raise TableError(f"counts shape {arr.shape} does not match layout shape {layout.shape}")
        if arr.size and not np.all(np.equal(np.mod(arr, 1), 0)):
            raise TableError("counts must be integers")
        arr = arr.astype(np.int64)
        if np.any(arr < 0):
            raise TableError("counts must be nonnegative")
        arr.setflags(write=False)
        self.layout = layout
        self._counts = arr

    # construction -----------------------------------------------------------

    @classmethod
    def zeros(cls, layout: PartyLayout) -> "CountTable":
        return cls(layout, np.zeros(layout.shape, dtype=np.int64))

    @classmethod
    def from_cells(cls, layout: PartyLayout, cells: Mapping[tuple, int]) -> "CountTable":
        """Build from ``{(settings, outcomes): count}``; absent cells are zero."""
        arr = np.zeros(layout.shape, dtype=np.int64)
        for (settings, outcomes), n in cells.items():
            arr[layout.index(settings, outcomes)] += int(n)
        return cls(layout, arr)

    @classmethod
    def from_grid(
        cls,
        layout: PartyLayout,
        rows: Sequence[Sequence],
        columns: Sequence[Sequence],
        values: Sequence[Sequence[int]],
    ) -> "CountTable":
        """Build from a printed-style grid: rows are setting tuples, columns outcome tuples."""
        if len(values) != len(rows):
            raise TableError(f"{len(values)} value rows for {len(rows)} setting rows")
        arr = np.zeros(layout.shape, dtype=np.int64)
        for r, (settings, line) in enumerate(zip(rows, values)):
            if len(line) != len(columns):
                raise TableError(f"row {r}: {len(line)} values for {len(columns)} columns")
            for outcomes, n in zip(columns, line):
                arr[layout.index(settings, outcomes)] += int(n)
        return cls(layout, arr)

    # access -------------------------------------------------------------------

    @property
    def array(self) -> np.ndarray:
        return self._counts

    @property
    def total(self) -> int:
        return int(self._counts.sum())

    def count(self, settings: Sequence, outcomes: Sequence) -> int:
        return int(self._counts[self.layout.index(settings, outcomes)])

    def items(self) -> Iterator[tuple[tuple[str, ...], tuple[str, ...], int]]:
        for s in self.layout.setting_tuples():
            for o in self.layout.outcome_tuples():
                yield s, o, self.count(s, o)

    def select(self, settings: Mapping | None = None, outcomes: Mapping | None = None) -> int:
        """Sum of counts whose variables match the given ``{variable: label}`` constraints.

        Unmentioned variables are summed over.  A value may also be a
        collection of labels, any of which matches.
        """
        n = len(self.layout)
        index: list = [slice(None)] * (2 * n)
        for constraints, offset, kind in ((settings, 0, "setting"), (outcomes, n, "outcome")):
            for var, label in (constraints or {}).items():
                i, p = self.layout.party(var)
                alphabet = p.settings if offset == 0 else p.outcomes
                expected = p.setting if offset == 0 else p.name
                if var != expected:
                    raise TableError(f"{var!r} is not a {kind} variable")
                wanted = [label] if isinstance(label, (str, int)) else list(label)
                pos = []
                for lab in _labels(wanted):
                    if lab not in alphabet:
                        raise TableError(f"{kind} {var}={lab!r} not in {alphabet}")
                    pos.append(alphabet.index(lab))
                index[offset + i] = pos
        sub = self._counts
        for axis, ix in enumerate(index):
            if not isinstance(ix, slice):
                sub = np.take(sub, ix, axis=axis)
        return int(sub.sum())

    def __eq__(self, other) -> bool:
        if not isinstance(other, CountTable):
            return NotImplemented
        return self.layout == other.layout and np.array_equal(self._counts, other._counts)

    def __hash__(self):
        return hash((self.layout, self._counts.tobytes()))

    def __repr__(self) -> str:
        names = "".join(self.layout.outcome_names)
        return f"CountTable({names}|{''.join(self.layout.setting_names)}, N={self.total})"

    # serialization ------------------------------------------------------------

    def to_dict(self, **meta) -> dict:
        rows = [list(s) for s in self.layout.setting_tuples()]
        cols = [list(o) for o in self.layout.outcome_tuples()]
        values = [[self.count(s, o) for o in cols] for s in rows]
        return {"format": FORMAT_TAG, **meta, "layout": self.layout.to_dict(), "rows": rows, "columns": cols, "values": values}

    @classmethod
    def from_dict(cls, d: Mapping) -> "CountTable":
        if d.get("format") != FORMAT_TAG:
            raise TableError(f"not a {FORMAT_TAG} document (format={d.get('format')!r})")
        layout = PartyLayout.from_dict(d["layout"])
        return cls.from_grid(layout, d["rows"], d["columns"], d["values"])

    def dumps(self, **meta) -> str:
        return json.dumps(self.to_dict(**meta), indent=1)

    @classmethod
    def loads(cls, text: str) -> "CountTable":
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class MarginalPattern:
    """Per-party KEEP (True) or STAR (False) flags for outcomes and settings."""

    outcomes: tuple[bool, ...]
    settings: tuple[bool, ...] = field(default=())

    def __post_init__(self):
        object.__setattr__(self, "outcomes", tuple(bool(k) for k in self.outcomes))
        settings = tuple(bool(k) for k in self.settings) or (True,) * len(self.outcomes)
        object.__setattr__(self, "settings", settings)
        if len(settings) != len(self.outcomes):
            raise TableError("outcome and setting flags must have the same arity")
        if not any(self.outcomes + self.settings):
            raise TableError("a pattern must keep at least one coordinate")

    @classmethod
    def parse(cls, outcomes: str, settings: str | None = None) -> "MarginalPattern":
        """``parse("A**")`` keeps the first outcome; ``*`` stars a coordinate."""
        keep_o = tuple(c != STAR for c in outcomes)
        keep_s = tuple(c != STAR for c in settings) if settings is not None else ()
        return cls(keep_o, keep_s)


def build_count_table(events: Iterable[tuple[Sequence, Sequence]], layout: PartyLayout) -> CountTable:
    """Count ``(settings, outcomes)`` events into a table over ``layout``."""
    arr = np.zeros(layout.shape, dtype=np.int64)
    for k, (settings, outcomes) in enumerate(events):
        try:
            arr[layout.index(settings, outcomes)] += 1
        except TableError as exc:
            raise TableError(f"event {k}: {exc}") from None
    return CountTable(layout, arr)


def marginalize(table: CountTable, pattern: MarginalPattern) -> CountTable:
    """Sum a table over every STAR-ed outcome and setting."""
    n = len(table.layout)
    if len(pattern.outcomes) != n:
        raise TableError(f"pattern arity {len(pattern.outcomes)} does not match {n} parties")
    axes = tuple(i for i, keep in enumerate(pattern.settings) if not keep)
    axes += tuple(n + i for i, keep in enumerate(pattern.outcomes) if not keep)
    arr = table.array.sum(axis=axes, keepdims=True)
    parties = []
    for p, keep_s, keep_o in zip(table.layout.parties, pattern.settings, pattern.outcomes):
        parties.append(
            Party(
                p.name,
                p.setting,
                p.settings if keep_s else (STAR,),
                p.outcomes if keep_o else (STAR,),
                p.no_detection if keep_o else None,
            )
        )
    return CountTable(PartyLayout(tuple(parties)), arr)


def setting_totals(table: CountTable) -> CountTable:
    """Coincidence totals per setting tuple (all outcomes starred)."""
    return marginalize(table, MarginalPattern((False,) * len(table.layout)))


def totals_vector(table: CountTable) -> dict[tuple[str, ...], int]:
    """``{settings: total}`` in layout order."""
    return {s: table.select(dict(zip(table.layout.setting_names, s))) for s in table.layout.setting_tuples()}


class ContingencyTable:
    """An r x c table of (possibly weighted) counts with row/column labels."""

    def __init__(self, cells, row_labels: Sequence[str] | None = None, col_labels: Sequence[str] | None = None):
        arr = np.array(cells, dtype=float)
        if arr.ndim != 2 or min(arr.shape) < 2:
            raise TableError(f"need a 2-D table with at least 2 rows and columns, got shape {arr.shape}")
        if np.any(arr < 0) or not np.all(np.isfinite(arr)):
            raise TableError("cells must be finite and nonnegative")
        arr.setflags(write=False)
        self.cells = arr
        self.row_labels = tuple(row_labels) if row_labels else tuple(str(i) for i in range(arr.shape[0]))
        self.col_labels = tuple(col_labels) if col_labels else tuple(str(i) for i in range(arr.shape[1]))
        if len(self.row_labels) != arr.shape[0] or len(self.col_labels) != arr.shape[1]:
            raise TableError("label count does not match table shape")

    @property
    def shape(self) -> tuple[int, int]:
        return self.cells.shape

    def __array__(self, dtype=None, copy=None):
        return self.cells if dtype is None else self.cells.astype(dtype)

    def __repr__(self) -> str:
        return f"{type(self).__name__}({self.cells.tolist()}, rows={self.row_labels}, cols={self.col_labels})"


class Table2x2(ContingencyTable):
    def __init__(self, cells, row_labels=None, col_labels=None):
        super().__init__(cells, row_labels, col_labels)
        if self.shape != (2, 2):
            raise TableError(f"Table2x2 needs shape (2, 2), got {self.shape}")


def _describe(sel: Mapping) -> str:
    return ",".join(f"{k}={v}" for k, v in sel.items())


def slice_table(
    table: CountTable, row_spec: Sequence[Mapping], col_spec: Sequence[Mapping]
) -> ContingencyTable:
    """Contingency table whose cell (i, j) sums counts matching ``row_spec[i]`` and ``col_spec[j]``.

    Row specs constrain setting variables and column specs outcome variables,
    each as ``{variable: label}``; anything unmentioned is summed over.
    """
    rows = [dict((k, str(v)) for k, v in r.items()) for r in row_spec]
    cols = [dict((k, str(v)) for k, v in c.items()) for c in col_spec]
    for name, specs in (("row", rows), ("column", cols)):
        keys = [tuple(sorted(s.items())) for s in specs]
        if len(set(keys)) != len(keys):
            raise TableError(f"{name} specs must be distinct, got {specs}")
    cells = [[table.select(r, c) for c in cols] for r in rows]
    cls = Table2x2 if (len(rows), len(cols)) == (2, 2) else ContingencyTable
    return cls(cells, [_describe(r) for r in rows], [_describe(c) for c in cols])


def slice_2x2(table: CountTable, row_spec: Sequence[Mapping], col_spec: Sequence[Mapping]) -> Table2x2:
    if len(row_spec) != 2 or len(col_spec) != 2:
        raise TableError("slice_2x2 needs exactly two row specs and two column specs")
    return slice_table(table, row_spec, col_spec)


# event logs -----------------------------------------------------------------

_LAYOUT_LINE = re.compile(r"^#\s*layout:\s*(\{.*\})\s*$")


def write_event_log(
    events: Iterable[tuple[Sequence, Sequence]], layout: PartyLayout, fh: IO[str], delimiter: str = ","
) -> int:
    """Write events as delimited text and return the number written.

    The first line carries the layout as ``# layout: {json}``, the second the
    header (setting variables then outcome variables).  Undetected outcomes
    are written as :data:`NO_DETECTION_TOKEN`.
    """
    fh.write(f"# layout: {json.dumps(layout.to_dict(), separators=(',', ':'))}\n")
    writer = csv.writer(fh, delimiter=delimiter, lineterminator="\n")
    writer.writerow(layout.setting_names + layout.outcome_names)
    n = 0
    for settings, outcomes in events:
        out = [
            NO_DETECTION_TOKEN if (p.no_detection is not None and str(o) == p.no_detection) else str(o)
            for p, o in zip(layout.parties, outcomes)
        ]
        writer.writerow(list(_labels(settings)) + out)
        n += 1
    return n


def _natural_key(label: str):
    return (0, int(label)) if re.fullmatch(r"[+-]?\d+", label) else (1, label)


def read_event_log(source: str | IO[str], layout: PartyLayout | None = None, delimiter: str = ",") -> CountTable:
    """Parse an event log into a :class:`CountTable`.

    ``source`` is a path or an open text stream.  Without an explicit or
    embedded layout, parties are paired positionally (i-th setting column
    with i-th outcome column) and alphabets are the observed labels.
    """
    if isinstance(source, str):
        with open(source, newline="") as fh:
            return read_event_log(fh, layout, delimiter)

    lines = source.read().splitlines()
    lineno = 0
    embedded = None
    while lineno < len(lines) and (not lines[lineno].strip() or lines[lineno].lstrip().startswith("#")):
        m = _LAYOUT_LINE.match(lines[lineno].strip())
        if m:
            try:
                embedded = PartyLayout.from_dict(json.loads(m.group(1)))
            except (ValueError, KeyError, TypeError) as exc:
                raise EventLogError(f"bad layout line: {exc}", lineno + 1) from None
        lineno += 1
    if lineno >= len(lines):
        raise EventLogError("missing header row", lineno + 1)
    header = next(csv.reader([lines[lineno]], delimiter=delimiter))
    header = [h.strip() for h in header]
    if len(header) % 2 or len(header) < 4:
        raise EventLogError(f"header must name n settings then n outcomes (n >= 2), got {header}", lineno + 1)
    layout = layout or embedded
    n = len(header) // 2
    if layout is not None:
        expected = list(layout.setting_names + layout.outcome_names)
        if header != expected:
            raise EventLogError(f"header {header} does not match layout variables {expected}", lineno + 1)

    records = []
    for k, row in enumerate(csv.reader(lines[lineno + 1 :], delimiter=delimiter), start=lineno + 2):
        if not row or all(not f.strip() for f in row):
            continue
        if len(row) != len(header):
            raise EventLogError(f"expected {len(header)} fields, got {len(row)}", k)
        records.append((k, [f.strip() for f in row]))

    if layout is None:
        parties = []
        for i in range(n):
            settings = sorted({r[i] for _, r in records}, key=_natural_key) or ["0", "1"]
            outs = {r[n + i] for _, r in records}
            no_det = "0" if NO_DETECTION_TOKEN in outs else None
            outs.discard(NO_DETECTION_TOKEN)
            if no_det is not None:
                outs.add(no_det)
            outcomes = sorted(outs, key=_natural_key) or ["0", "1"]
            parties.append(Party(header[n + i], header[i], tuple(settings), tuple(outcomes), no_det))
        layout = PartyLayout(tuple(parties))

    arr = np.zeros(layout.shape, dtype=np.int64)
    for k, row in records:
        idx = []
        for i, p in enumerate(layout.parties):
            if row[i] not in p.settings:
                raise EventLogError(f"setting {p.setting}={row[i]!r} not in {p.settings}", k, i + 1)
            idx.append(p.settings.index(row[i]))
        for i, p in enumerate(layout.parties):
            value = row[n + i]
            if value == NO_DETECTION_TOKEN:
                if p.no_detection is None:
                    raise EventLogError(f"party {p.name} has no no-detection label", k, n + i + 1)
                value = p.no_detection
            if value not in p.outcomes:
                raise EventLogError(f"outcome {p.name}={value!r} not in {p.outcomes}", k, n + i + 1)
            idx.append(p.outcomes.index(value))
        arr[tuple(idx)] += 1
    return CountTable(layout, arr)


def read_table(source: str | IO[str]) -> CountTable:
    """Read either a fixture document (JSON) or an event log, by sniffing the content."""
    if isinstance(source, str):
        with open(source, newline="") as fh:
            return read_table(fh)
    text = source.read()
    if text.lstrip().startswith("{"):
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise EventLogError(exc.msg, exc.lineno, exc.colno) from None
        return CountTable.from_dict(doc)
    return read_event_log(io.StringIO(text))
