import io
import random

import pytest
from hypothesis import given, strategies as st

from multicorrect.core import (
    BeamSet,
    ErrorRate,
    RecordError,
    UndefinedRateError,
    beamset_to_record,
    corpus_wer,
    detokenize,
    levenshtein,
    read_beamsets,
    tokenize,
    wer,
    werr,
    write_record,
)

from conftest import brute_edit_distance


def test_tokenize_whitespace():
    assert tokenize("I have cat") == ("I", "have", "cat")
    assert tokenize("") == ()
    assert tokenize("  a   b ") == ("a", "b")


def test_tokenize_character():
    assert tokenize("BBDEF", "character") == tuple("BBDEF")
    assert tokenize("a b\tc", "character") == ("a", "b", "c")


def test_tokenize_rejects_unknown_mode():
    with pytest.raises(ValueError):
        tokenize("x", "subword")


@given(st.lists(st.text(alphabet="abcxyz", min_size=1, max_size=4), max_size=8))
def test_whitespace_round_trip(words):
    assert tokenize(detokenize(words)) == tuple(words)


@pytest.mark.parametrize(
    "hyp,ref,edits,rate",
    [
        ("a b c", "a b c", 0, 0.0),
        ("a x c", "a b c", 1, 1 / 3),
        ("a b", "a b c d", 2, 0.5),
    ],
)
def test_wer_examples(hyp, ref, edits, rate):
    r = wer(hyp.split(), ref.split())
    assert r.edits == edits == brute_edit_distance(hyp.split(), ref.split())
    assert r.rate == pytest.approx(rate)


def test_wer_empty_reference():
    assert wer([], []).rate == 0
    r = wer(["a", "b"], [])
    assert r.edits == 2
    assert not r.defined
    with pytest.raises(UndefinedRateError):
        r.rate


def test_werr_examples():
    assert werr(0.10, 0.09) == pytest.approx(0.10)
    assert werr(ErrorRate(431, 10000), ErrorRate(384, 10000)) == pytest.approx(0.1090, abs=1e-4)
    assert werr(0.2, 0.2) == 0
    with pytest.raises(UndefinedRateError):
        werr(ErrorRate(0, 10), ErrorRate(1, 10))


def test_levenshtein_against_brute_force():
    rng = random.Random(7)
    for _ in range(500):
        a = [rng.choice("abcd") for _ in range(rng.randint(0, 7))]
        b = [rng.choice("abcd") for _ in range(rng.randint(0, 7))]
        c = [rng.choice("abcd") for _ in range(rng.randint(0, 7))]
        d_ab = levenshtein(a, b)
        assert d_ab == brute_edit_distance(a, b)
        assert d_ab == levenshtein(b, a)
        assert levenshtein(a, c) <= d_ab + levenshtein(b, c)


def test_corpus_wer_pools_counts():
    pairs = [(["a"], ["a", "b", "c", "d"]), (["x"], ["y"])]
    total = corpus_wer(pairs)
    assert (total.edits, total.ref_len) == (4, 5)
    assert total.rate == pytest.approx(4 / 5)
    # not the mean of per-sentence rates (0.75 and 1.0)
    assert total.rate != pytest.approx((0.75 + 1.0) / 2)


def test_beamset_requires_candidates():
    with pytest.raises(ValueError):
        BeamSet("u", ())


def test_beam_records_round_trip():
    bs = BeamSet("u1", (("a", "b"), ("a", "c")), ("a", "b"))
    buf = io.StringIO()
    write_record(buf, {"header": {"seed": 1}})
    write_record(buf, beamset_to_record(bs))
    buf.seek(0)
    assert list(read_beamsets(buf)) == [bs]


@pytest.mark.parametrize(
    "line",
    [
        "not json",
        '{"utterance_id": "u"}',
        '{"utterance_id": "u", "candidates": []}',
        '{"utterance_id": "u", "candidates": ["a"], "reference": 3}',
    ],
)
def test_malformed_beam_records_report_line(line):
    buf = io.StringIO('{"utterance_id": "ok", "candidates": ["a"]}\n' + line + "\n")
    with pytest.raises(RecordError) as err:
        list(read_beamsets(buf))
    assert err.value.line == 2
