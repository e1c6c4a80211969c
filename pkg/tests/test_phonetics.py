import io
import logging
import random

import pytest
from hypothesis import given, strategies as st

from multicorrect.core import EMPTY, RecordError
from multicorrect.phonetics import Lexicon, load_lexicon, phonemes, pron_similarity

from conftest import brute_edit_distance


def test_load_and_lookup(small_lex):
    assert phonemes("cat", small_lex) == ("K", "AE", "T")
    assert phonemes("zx", small_lex) == ("z", "x")
    assert phonemes(EMPTY, small_lex) == ()


def test_empty_stream():
    lex = load_lexicon(io.StringIO(""))
    assert len(lex) == 0
    assert lex.phonemes("ab") == ("a", "b")


def test_missing_tab_is_an_error():
    with pytest.raises(RecordError) as err:
        load_lexicon(io.StringIO("dog\tD AO G\ncat K AE T\n"))
    assert err.value.line == 2


def test_duplicates_last_wins(caplog):
    with caplog.at_level(logging.WARNING):
        lex = load_lexicon(io.StringIO("cat\tK AE T\ncat\tK AA T\n"))
    assert lex.phonemes("cat") == ("K", "AA", "T")
    assert "duplicate" in caplog.text


def test_similarity_examples():
    assert pron_similarity(("K", "AE", "T"), ("K", "AE", "T")) == 0
    assert pron_similarity(("K", "AE", "T"), ("HH", "AE", "T")) == -1
    assert pron_similarity(("B",), ()) == -1


def test_similarity_matches_oracle_and_is_symmetric():
    rng = random.Random(3)
    for _ in range(400):
        a = [rng.choice("PQRS") for _ in range(rng.randint(0, 6))]
        b = [rng.choice("PQRS") for _ in range(rng.randint(0, 6))]
        s = pron_similarity(a, b)
        assert s == -brute_edit_distance(a, b)
        assert s == pron_similarity(b, a)
        assert (s == 0) == (a == b)


@given(st.text(alphabet="abc", min_size=1, max_size=5))
def test_empty_token_scores_minus_length(tok):
    lex = Lexicon()
    assert lex.similarity(EMPTY, tok) == -len(tok)


def test_homophones_score_zero(lex):
    assert lex.similarity("B", "b") == 0
    assert lex.similarity("to", "two") == 0
    assert lex.similarity("cat", "hat") == -1


def test_bundled_lexicon_size(lex):
    assert 55 <= len(lex) <= 70
