import io
import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bellnosig.tables import (
    STAR,
    ContingencyTable,
    CountTable,
    EventLogError,
    MarginalPattern,
    Party,
    PartyLayout,
    Table2x2,
    TableError,
    build_count_table,
    marginalize,
    read_event_log,
    read_table,
    setting_totals,
    slice_2x2,
    slice_table,
    totals_vector,
    write_event_log,
)

AB = PartyLayout.binary()
ABC = PartyLayout.binary("ABC", "XYZ")


def _random_table(layout, seed=0, high=50):
    rng = np.random.default_rng(seed)
    return CountTable(layout, rng.integers(0, high, size=layout.shape))


def test_layout_shape_and_names():
    assert AB.shape == (2, 2, 2, 2)
    assert AB.outcome_names == ("A", "B")
    assert ABC.setting_names == ("X", "Y", "Z")
    assert list(AB.setting_tuples())[1] == ("0", "1")


def test_layout_needs_two_parties():
    with pytest.raises(TableError):
        PartyLayout((Party("A", "X"),))


def test_party_rejects_duplicate_labels():
    with pytest.raises(TableError):
        Party("A", "X", ("0", "0"))


def test_layout_roundtrip():
    lay = PartyLayout((Party("A", "X", ("0", "1"), tuple("0123"), "0"), Party("B", "Y")))
    assert PartyLayout.from_dict(lay.to_dict()) == lay


def test_index_rejects_unknown_label():
    with pytest.raises(TableError):
        AB.index(("0", "2"), ("0", "0"))


def test_counts_must_be_nonnegative_integers():
    with pytest.raises(TableError):
        CountTable(AB, -np.ones(AB.shape))
    with pytest.raises(TableError):
        CountTable(AB, np.full(AB.shape, 0.5))
    with pytest.raises(TableError):
        CountTable(AB, np.zeros((2, 2)))


def test_count_table_is_read_only():
    t = CountTable.zeros(AB)
    with pytest.raises(ValueError):
        t.array[0, 0, 0, 0] = 1


def test_build_from_events_counts_each_event():
    events = [(("0", "1"), ("1", "1")), (("0", "1"), ("1", "1")), (("1", "0"), ("0", "1"))]
    t = build_count_table(events, AB)
    assert t.total == 3
    assert t.count(("0", "1"), ("1", "1")) == 2


def test_build_reports_offending_event():
    with pytest.raises(TableError, match="event 1"):
        build_count_table([(("0", "0"), ("0", "0")), (("0", "7"), ("0", "0"))], AB)


def test_select_sums_over_unmentioned():
    t = _random_table(AB)
    assert t.select({"X": "0"}) == int(t.array[0].sum())
    assert t.select({"X": "1"}, {"B": ["0", "1"]}) == int(t.array[1].sum())
    with pytest.raises(TableError):
        t.select({"Q": "0"})


def test_from_grid_matches_from_cells():
    rows = [["0", "0"], ["1", "1"]]
    cols = [["0", "1"], ["1", "0"]]
    g = CountTable.from_grid(AB, rows, cols, [[1, 2], [3, 4]])
    c = CountTable.from_cells(AB, {(("0", "0"), ("0", "1")): 1, (("0", "0"), ("1", "0")): 2,
                                   (("1", "1"), ("0", "1")): 3, (("1", "1"), ("1", "0")): 4})
    assert g == c and hash(g) == hash(c)


def test_json_roundtrip():
    t = _random_table(ABC, 3)
    assert CountTable.loads(t.dumps(note="x")) == t


def test_marginalize_stars_outcome():
    t = _random_table(AB, 1)
    m = marginalize(t, MarginalPattern.parse("A*"))
    assert m.layout.parties[1].outcomes == (STAR,)
    assert m.count(("0", "1"), ("1", STAR)) == t.array[0, 1, 1, :].sum()


def test_marginal_pattern_validation():
    with pytest.raises(TableError):
        MarginalPattern.parse("**", "**")
    with pytest.raises(TableError):
        marginalize(_random_table(AB), MarginalPattern.parse("A**"))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000), st.permutations([0, 1, 2]))
def test_marginalization_order_independent(seed, order):
    t = _random_table(ABC, seed)
    current = t
    keep = [True, True, True]
    for k in order[:2]:
        keep[k] = False
        current = marginalize(current, MarginalPattern(tuple(keep)))
    assert current == marginalize(t, MarginalPattern(tuple(keep)))
    assert current.total == t.total


def test_setting_totals_and_vector():
    t = _random_table(AB, 5)
    tot = setting_totals(t)
    vec = totals_vector(t)
    for s, n in vec.items():
        assert tot.count(s, (STAR, STAR)) == n
    assert sum(vec.values()) == t.total


def test_slice_table_2x2():
    t = _random_table(AB, 7)
    ct = slice_table(t, [{"X": 0, "Y": 0}, {"X": 0, "Y": 1}], [{"A": 0}, {"A": 1}])
    assert isinstance(ct, Table2x2)
    assert ct.cells[1, 0] == t.array[0, 1, 0, :].sum()
    assert tuple(ct.row_labels) == ("X=0,Y=0", "X=0,Y=1")


def test_slice_table_rejects_repeated_specs():
    with pytest.raises(TableError):
        slice_table(_random_table(AB), [{"X": 0}, {"X": 0}], [{"A": 0}, {"A": 1}])


def test_slice_2x2_rejects_other_shapes():
    with pytest.raises(TableError):
        slice_2x2(_random_table(AB), [{"X": 0}], [{"A": 0}, {"A": 1}])


def test_contingency_table_checks():
    with pytest.raises(TableError):
        ContingencyTable([[1, -1], [0, 0]])
    with pytest.raises(TableError):
        Table2x2([[1, 2, 3], [4, 5, 6]])
    assert np.asarray(ContingencyTable([[1, 2], [3, 4]])).sum() == 10


def test_event_log_roundtrip_with_no_detection():
    lay = PartyLayout((Party("A", "X", ("0", "1"), ("0", "1", "2"), "0"), Party("B", "Y")))
    events = [(("0", "1"), ("0", "1")), (("1", "1"), ("2", "0")), (("1", "0"), ("1", "1"))]
    buf = io.StringIO()
    assert write_event_log(events, lay, buf) == 3
    text = buf.getvalue()
    assert "\n0,1,-,1\n" in text
    back = read_event_log(io.StringIO(text))
    assert back == build_count_table(events, lay)


def test_event_log_infers_alphabets():
    text = "X,Y,A,B\n0,0,1,-\n1,1,0,1\n"
    t = read_event_log(io.StringIO(text))
    assert t.layout.parties[1].no_detection == "0"
    assert t.total == 2


def test_event_log_errors_carry_position():
    with pytest.raises(EventLogError) as err:
        read_event_log(io.StringIO("X,Y,A,B\n0,0,1,1\n0,1,1\n"))
    assert err.value.line == 3
    lay = AB
    with pytest.raises(EventLogError) as err:
        read_event_log(io.StringIO("X,Y,A,B\n0,0,1,1\n0,1,1,5\n"), lay)
    assert (err.value.line, err.value.column) == (3, 4)
    with pytest.raises(EventLogError, match="header"):
        read_event_log(io.StringIO("X,Y,Z\n"))
    with pytest.raises(EventLogError, match="no-detection"):
        read_event_log(io.StringIO("X,Y,A,B\n0,0,-,1\n"), lay)


def test_read_table_sniffs_format():
    t = _random_table(AB, 9)
    assert read_table(io.StringIO(t.dumps())) == t
    events = [(s, o) for s, o, n in t.items() for _ in range(n)]
    buf = io.StringIO()
    write_event_log(events, AB, buf)
    assert read_table(io.StringIO(buf.getvalue())) == t


def test_items_covers_all_cells():
    t = _random_table(AB, 11)
    cells = list(t.items())
    assert len(cells) == 16
    assert sum(n for _, _, n in cells) == t.total
    assert set((s, o) for s, o, _ in cells) == set(itertools.product(AB.setting_tuples(), AB.outcome_tuples()))
