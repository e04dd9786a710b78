import pytest
from hypothesis import given, strategies as st

from apiseq.features import (SEED_APIS, ApiIdMap, FrozenMapError, NGramSet, dump_grams, gram_set_of_file,
                             grams_of, load_grams)
from oracles import ref_windows

ONE_TO_12 = list(range(1, 13))


def test_seed_ids():
    m = ApiIdMap.seeded()
    assert m["ReadFile"] == 1 and m["CreateFile"] == 5 and m["LoadLibrary"] == 12
    assert [m.name_of(i) for i in range(1, 13)] == list(SEED_APIS)


def test_map_grows_and_freezes():
    m = ApiIdMap.seeded()
    assert m.id_of("Sleep") == 13
    assert m.id_of("Sleep") == 13
    frozen = m.copy().freeze()
    assert frozen.id_of("ReadFile") == 1
    with pytest.raises(FrozenMapError):
        frozen.id_of("NewApi")
    assert "NewApi" not in m


def test_map_text_round_trip(tmp_path):
    m = ApiIdMap(["a", "b", "c"])
    p = tmp_path / "map.txt"
    m.save(p)
    assert ApiIdMap.load(p) == m
    with pytest.raises(ValueError):
        ApiIdMap.from_text("2 b\n")


def test_sliding_grams_listing():
    g = grams_of(ONE_TO_12, 3)
    assert g[:3] == [(1, 2, 3), (2, 3, 4), (3, 4, 5)]
    assert len(g) == 10


def test_short_sequence():
    assert grams_of([7], 2) == []
    assert grams_of([], 4) == []


def test_bad_gram_size():
    with pytest.raises(ValueError):
        grams_of([1, 2, 3], 5)
    with pytest.raises(ValueError):
        gram_set_of_file([], ApiIdMap(), 1)


def test_file_set_examples():
    m = ApiIdMap.seeded()
    one = gram_set_of_file([SEED_APIS], m, 3)
    assert one.grams == frozenset(ref_windows(ONE_TO_12, 3))
    assert len(one) == 10 and one.total_gram_occurrences == 10
    two = gram_set_of_file([SEED_APIS, SEED_APIS], m, 3)
    assert two.grams == one.grams and two.total_gram_occurrences == 20 and two.source_path_count == 2
    empty = gram_set_of_file([], m, 3)
    assert empty == NGramSet(3, frozenset(), 0, 0)


def test_grams_do_not_cross_paths():
    m = ApiIdMap.seeded()
    s = gram_set_of_file([SEED_APIS[:2], SEED_APIS[2:4]], m, 2)
    assert s.grams == {(1, 2), (3, 4)}


def test_gram_dump_round_trip():
    grams = [(3, 1), (1, 2), (10, 11)]
    text = dump_grams(grams)
    assert text.splitlines() == ["1,2", "3,1", "10,11"]
    assert sorted(load_grams(text)) == sorted(grams)


_seq = st.lists(st.integers(1, 20), max_size=40)


@given(_seq, st.sampled_from([2, 3, 4]))
def test_count_formula_and_oracle(seq, n):
    g = grams_of(seq, n)
    assert len(g) == max(0, len(seq) - n + 1)
    assert g == ref_windows(seq, n)
    assert all(len(x) == n for x in g)


@given(st.lists(st.integers(1, 1000), unique=True, max_size=30), st.sampled_from([2, 3, 4]))
def test_reversal(seq, n):
    rev = grams_of(seq[::-1], n)
    assert rev == [g[::-1] for g in grams_of(seq, n)][::-1]


@given(st.lists(st.lists(st.sampled_from(SEED_APIS), max_size=15), max_size=6), st.sampled_from([2, 3, 4]),
       st.randoms())
def test_set_properties(paths, n, rnd):
    m = ApiIdMap.seeded()
    s = gram_set_of_file(paths, m, n)
    assert len(s) <= s.total_gram_occurrences
    all_grams = [g for p in paths for g in grams_of([m[a] for a in p], n)]
    assert (len(s) == s.total_gram_occurrences) == (len(set(all_grams)) == len(all_grams))
    shuffled = list(paths)
    rnd.shuffle(shuffled)
    assert gram_set_of_file(shuffled, m, n).grams == s.grams
    # dedup is idempotent
    assert frozenset(s.grams) == frozenset(set(s.grams))
