from collections import Counter

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from jointslu.metrics import EntitySet, edit_distance, parse_tag, reference_set, slu_scores, wer
from oracles import exhaustive_scores, levenshtein_recursive


def test_wer_identical():
    assert wer("a b c", "a b c") == 0.0


def test_wer_deletion():
    assert wer("a c", "a b c") == pytest.approx(1 / 3)


def test_wer_empty_reference():
    assert wer("x y", "") == 2.0


@settings(max_examples=100, deadline=None)
@given(st.lists(st.sampled_from("abc"), max_size=7), st.lists(st.sampled_from("abc"), max_size=7))
def test_edit_distance_matches_recursive(h, r):
    assert edit_distance(h, r) == levenshtein_recursive(tuple(h), tuple(r))


def test_parse_tag():
    s = parse_tag(["IN-weather_query", "c", "o", "l", "d", "b-weather_descriptor", "t", "o", "d", "a", "y", "b-date"])
    assert s.intent == "weather_query"
    assert s.entities == Counter({("weather_descriptor", "cold"): 1, ("date", "today"): 1})
    assert s.malformed == 0


def test_parse_tag_malformed():
    s = parse_tag(["IN-x", "b-date", "a", "IN-y", "b-t", "z", "z"])
    assert s.entities == Counter({("t", "a"): 1})
    assert s.malformed == 3
    assert parse_tag([]).intent is None
    assert parse_tag(["a", "b-t"]).intent is None


def test_half_recall_example():
    ref = reference_set("w", [("date", "today"), ("weather_descriptor", "cold")])
    hyp = reference_set("w", [("date", "today")])
    sc = slu_scores([hyp], [ref])
    assert (sc.precision, sc.recall, sc.intent_acc) == (1.0, 0.5, 1.0)
    assert sc.slu_f1 == pytest.approx(2 / 3, abs=1e-15)


def test_perfect():
    refs = [reference_set("a", [("x", "1")]), reference_set("b", [])]
    assert slu_scores(refs, refs).as_dict() == {"precision": 1.0, "recall": 1.0, "slu_f1": 1.0, "intent_acc": 1.0}


def test_empty_sides():
    none = reference_set("a", [])
    some = reference_set("a", [("x", "1")])
    assert slu_scores([none], [some]).as_dict()["slu_f1"] == 0.0
    assert slu_scores([some], [none]).precision == 0.0
    with pytest.raises(ValueError):
        slu_scores([none], [])


entity = st.tuples(st.sampled_from(["date", "time"]), st.sampled_from(["1", "2"]))
eset = st.builds(lambda i, es: reference_set(i, es), st.sampled_from(["p", "q"]), st.lists(entity, max_size=3))


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(eset, eset), min_size=1, max_size=4))
def test_matches_exhaustive_matcher(pairs):
    hyps, refs = [h for h, _ in pairs], [r for _, r in pairs]
    sc = slu_scores(hyps, refs)
    p, r, f1, acc = exhaustive_scores(hyps, refs)
    assert (sc.precision, sc.recall, sc.intent_acc) == pytest.approx((p, r, acc), abs=1e-15)
    assert sc.slu_f1 == pytest.approx(f1, abs=1e-15)
    if sc.precision + sc.recall:
        assert abs(sc.slu_f1 - 2 * sc.precision * sc.recall / (sc.precision + sc.recall)) <= 1e-12


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(eset, eset), min_size=1, max_size=5), st.randoms())
def test_order_invariant(pairs, rnd):
    shuffled = list(pairs)
    rnd.shuffle(shuffled)
    a = slu_scores([h for h, _ in pairs], [r for _, r in pairs]).as_dict()
    b = slu_scores([h for h, _ in shuffled], [r for _, r in shuffled]).as_dict()
    assert a == pytest.approx(b, abs=1e-15)


def test_entity_set_default():
    assert EntitySet("x").entities == Counter()
