import pytest

from multicorrect.align import AlignmentGrid, align_candidates
from multicorrect.baselines import (
    FIRST_BEAM,
    RANDOM,
    WER_ORACLE,
    CANDIDATE_PREDICTOR,
    SelectionStrategy,
    rover_vote,
    select_candidate,
    vote_column,
)
from multicorrect.core import EMPTY, BeamSet, wer

E = EMPTY


def beams(*texts, ref=None, uid="u"):
    return BeamSet(uid, tuple(tuple(t.split()) for t in texts), tuple(ref.split()) if ref else None)


def test_vote_column():
    assert vote_column(("A", "A", "B")) == "A"
    assert vote_column((E, E, "C")) is E
    assert vote_column(("x", "y", "z")) == "x"
    assert vote_column(("x", "y", "y", "x")) == "x"


def test_rover_intro_example(lex):
    g = align_candidates(beams("I have cat", "I have hat", "I have bat"), lex)
    assert g.rows == (("I", "have", "cat"), ("I", "have", "hat"), ("I", "have", "bat"))
    assert rover_vote(g) == ("I", "have", "cat")


def test_rover_drops_empty_majority():
    g = AlignmentGrid((("a", E), ("a", E), ("a", "c")))
    assert rover_vote(g) == ("a",)


def test_rover_identical_rows_and_length_bound(lex):
    g = AlignmentGrid((("a", E, "b"),) * 3)
    assert rover_vote(g) == ("a", "b")
    g = align_candidates(beams("the cat sat", "a cat sat on", "the hat"), lex)
    assert len(rover_vote(g)) <= g.width


def test_select_candidate_strategies():
    bs = beams("a b x", "a c", "a b c", ref="a b c")
    assert select_candidate(bs, SelectionStrategy(FIRST_BEAM)) == 0
    assert select_candidate(bs, SelectionStrategy(WER_ORACLE)) == 2
    r = [select_candidate(bs, SelectionStrategy(RANDOM, seed=4)) for _ in range(3)]
    assert len(set(r)) == 1 and 0 <= r[0] < 3


def test_oracle_never_worse_than_another_candidate():
    bs = beams("a b", "a x y", "b", "a b c d", ref="a b c")
    k = select_candidate(bs, SelectionStrategy(WER_ORACLE))
    best = wer(bs.candidates[k], bs.reference).edits
    assert all(best <= wer(c, bs.reference).edits for c in bs.candidates)


def test_missing_prerequisites_name_the_strategy():
    with pytest.raises(ValueError, match="wer_oracle"):
        select_candidate(beams("a"), SelectionStrategy(WER_ORACLE))
    with pytest.raises(ValueError, match="candidate_predictor"):
        select_candidate(beams("a"), SelectionStrategy(CANDIDATE_PREDICTOR))
    with pytest.raises(ValueError):
        SelectionStrategy(RANDOM)
    with pytest.raises(ValueError):
        SelectionStrategy("lm_rescoring")


def test_candidate_predictor_selection_uses_model(lex):
    from multicorrect.model import CorrectionModel, ModelConfig, Vocab, predict_losses_for

    vocab = Vocab(["a", "b", "c"])
    model = CorrectionModel(ModelConfig(vocab_size=len(vocab), hidden_size=16, attention_heads=2,
                                        encoder_layers=1, decoder_layers=1, beam_n=3, dropout=0.0))
    bs = beams("a b", "a c", "b c")
    k = select_candidate(bs, SelectionStrategy(CANDIDATE_PREDICTOR), model, lex, vocab)
    losses = predict_losses_for(model, [bs], lex, vocab)[0]
    assert k == min(range(3), key=lambda i: (losses[i], i))
