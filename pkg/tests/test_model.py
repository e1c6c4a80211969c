import io
import math

import numpy as np
import pytest
import torch

from multicorrect.align import AlignmentGrid, align_candidates
from multicorrect.baselines import CANDIDATE_PREDICTOR, FIRST_BEAM, SelectionStrategy
from multicorrect.core import EMPTY, BeamSet
from multicorrect.model import (
    CorrectionModel,
    ModelConfig,
    TrainConfig,
    Trainer,
    Vocab,
    _choose,
    collate,
    compute_losses,
    correct_batch,
    decode_parallel,
    gradient_check,
    infer,
    load_checkpoint,
    make_examples,
    predict_candidate_loss,
    predict_durations,
    prenet_encode,
    round_durations,
    save_checkpoint,
    tiny_config,
    tiny_examples,
    training_step,
)
from multicorrect.noising import NoiseProfile, build_homophone_table, rng_for, simulate_beams

WORDS = ["the", "cat", "hat", "sat", "on", "mat", "a", "dog", "sees", "sea", "my", "big"]
VOCAB = Vocab(WORDS)


def cfg(**kw):
    base = dict(vocab_size=len(VOCAB), hidden_size=32, encoder_layers=1, decoder_layers=1,
                attention_heads=4, feed_forward_size=64, beam_n=4, dropout=0.0, seed=0)
    base.update(kw)
    return ModelConfig(**base)


def grid_of(*rows):
    return AlignmentGrid(tuple(tuple(None if t == "-" else t for t in r.split()) for r in rows))


GRID = grid_of("the cat sat on the mat -", "the hat sat on the mat -", "the cat sat - the mat a", "a cat sat on the mat -")


def test_config_validation():
    with pytest.raises(ValueError):
        ModelConfig(vocab_size=10, hidden_size=30, attention_heads=4)
    with pytest.raises(ValueError):
        ModelConfig(vocab_size=10, beam_n=0)


def test_parameter_count_depends_only_on_config():
    a = CorrectionModel(cfg(hidden_size=64, seed=1)).num_parameters()
    b = CorrectionModel(cfg(hidden_size=64, seed=2)).num_parameters()
    assert a == b
    assert CorrectionModel(cfg(hidden_size=64, encoder_layers=2)).num_parameters() > a


def test_prenet_shapes():
    model = CorrectionModel(cfg(hidden_size=64)).eval()
    with torch.no_grad():
        assert prenet_encode(GRID, model, VOCAB).shape == (7, 64)
    with pytest.raises(ValueError):
        prenet_encode(grid_of("the cat", "the hat"), model, VOCAB)


def test_identical_rows_permutation_invariant():
    model = CorrectionModel(cfg()).eval()
    g = grid_of(*["the cat sat"] * 4)
    with torch.no_grad():
        a = prenet_encode(g, model, VOCAB)
        b = prenet_encode(AlignmentGrid(tuple(reversed(g.rows))), model, VOCAB)
        losses = predict_candidate_loss(a, g, model, VOCAB)
    assert torch.equal(a, b)
    assert torch.allclose(losses, losses[0].expand(4))


def test_single_candidate_prenet_is_projection():
    model = CorrectionModel(cfg(beam_n=1)).eval()
    g = grid_of("the cat sat")
    with torch.no_grad():
        enc = prenet_encode(g, model, VOCAB)
        ids = torch.tensor([[VOCAB.encode(t) for t in g.rows[0]]])
        proj = model.prenet(model.embed(ids))
    assert enc.shape == (3, 32)
    assert model.prenet.in_features == model.config.hidden_size
    assert proj.shape == (1, 3, 32)


def test_predictor_shapes_and_determinism():
    m1, m2 = CorrectionModel(cfg()).eval(), CorrectionModel(cfg()).eval()
    with torch.no_grad():
        enc = prenet_encode(GRID, m1, VOCAB)
        d1 = predict_durations(enc, GRID, m1, VOCAB)
        d2 = predict_durations(prenet_encode(GRID, m2, VOCAB), GRID, m2, VOCAB)
        c = predict_candidate_loss(enc, GRID, m1, VOCAB)
    assert d1.shape == (4, 7)
    assert torch.equal(d1, d2)
    assert c.shape == (4,)
    with pytest.raises(ValueError):
        predict_durations(enc[:5], GRID, m1, VOCAB)


def test_choose_argmin():
    bs = BeamSet("u", (("a",),) * 4)
    assert _choose(CANDIDATE_PREDICTOR, bs, [0.9, 0.4, 0.7, 0.5], 0) == 1
    assert _choose(CANDIDATE_PREDICTOR, bs, [0.4, 0.4, 0.7, 0.5], 0) == 0


def test_decoder_shape_position_sensitivity_and_determinism():
    model = CorrectionModel(cfg()).eval()
    with torch.no_grad():
        enc = prenet_encode(GRID, model, VOCAB)
        a = decode_parallel(("the", "cat", "sat"), enc, model, VOCAB)
        b = decode_parallel(("cat", "the", "sat"), enc, model, VOCAB)
        a2 = decode_parallel(("the", "cat", "sat"), enc, model, VOCAB)
    assert a.shape == (3, len(VOCAB))
    assert torch.equal(a, a2)
    assert not torch.allclose(a[2], b[2])
    with pytest.raises(ValueError):
        decode_parallel((), enc, model, VOCAB)


def test_round_durations():
    assert round_durations([0.6, 1.4, 0.2]) == [1, 1, 0]
    assert round_durations([-0.3, 2.5]) == [0, 3]
    assert round_durations([0.1, 0.2, 0.4, 0.3]) == [0, 0, 1, 0]
    # empty cells never get the forced duration
    assert round_durations([0.1, 0.45, 0.2], ["a", None, "b"]) == [0, 0, 1]


def overfit_set(n=16, seed=0, identical=False):
    table = build_homophone_table(__import__("multicorrect.phonetics", fromlist=["x"]).Lexicon(), 0, vocab=WORDS)
    profile = NoiseProfile(0.0 if identical else 0.2, (0.3, 0.3, 0.4), seed)
    rng = rng_for(seed, "overfit")
    out = []
    for i in range(n):
        tgt = tuple(WORDS[j] for j in rng.integers(len(WORDS), size=int(rng.integers(3, 7))))
        out.append(simulate_beams(tgt, 4, profile, table, rng, f"o{i}"))
    return out


@pytest.fixture(scope="module")
def overfit():
    from multicorrect.phonetics import Lexicon

    lex = Lexicon()
    beams = overfit_set()
    examples = make_examples(beams, lex, 4)
    model = CorrectionModel(cfg())
    trainer = Trainer(model, VOCAB, examples, TrainConfig(steps=200, batch_size=16, lr=2e-3))
    hist = trainer.run()
    return lex, beams, examples, model, hist


def test_overfit_ce_halves(overfit):
    hist = overfit[4]
    assert hist[-1]["ce"] <= 0.5 * hist[0]["ce"]


def test_lambda_zero_gives_plain_ce():
    vocab, examples = tiny_examples(12, 3, 0)
    model = CorrectionModel(tiny_config())
    batch = collate(examples, vocab, 3)
    with torch.no_grad():
        losses = compute_losses(model, batch, lambda_dur=0.0, lambda_cand=0.0)
    assert float(losses.total) == pytest.approx(float(losses.decoder_ce))


def test_clean_candidates_drive_ce_to_zero():
    from multicorrect.phonetics import Lexicon

    beams = overfit_set(identical=True)
    examples = make_examples(beams, Lexicon(), 4)
    assert all(set(d) == {1} for ex in examples for d in ex.durations)
    trainer = Trainer(CorrectionModel(cfg()), VOCAB, examples, TrainConfig(steps=200, batch_size=16, lr=2e-3))
    hist = trainer.run()
    assert hist[-1]["ce"] < 0.05


def test_memorized_beams_are_reproduced():
    from multicorrect.phonetics import Lexicon

    lex = Lexicon()
    beams = overfit_set(n=8, identical=True)
    examples = make_examples(beams, lex, 4)
    model = CorrectionModel(cfg())
    Trainer(model, VOCAB, examples, TrainConfig(steps=300, batch_size=8, lr=2e-3)).run()
    for bs in beams:
        assert infer(bs, lex, model, VOCAB) == bs.reference


def test_trained_duration_predictor_separates_rows(overfit):
    lex, beams, examples, model, _ = overfit
    model.eval()
    with torch.no_grad():
        differs = 0
        for ex in examples:
            enc = prenet_encode(ex.grid, model, VOCAB)
            d = predict_durations(enc, ex.grid, model, VOCAB)
            for j in range(ex.grid.width):
                col = ex.grid.column(j)
                for r in range(1, 4):
                    if col[r] != col[0] and not torch.isclose(d[0, j], d[r, j]):
                        differs += 1
    assert differs > 0


def test_length_contract_with_gold_durations(overfit):
    _, _, examples, _, _ = overfit
    batch = collate(examples, VOCAB, 4)
    T = batch.targets.shape[1]
    for row, ex in enumerate(e for e in examples for _ in range(4)):
        assert int((~batch.dec_pad[row]).sum()) == len(ex.target) <= T


def test_candidate_labels_are_fresh():
    vocab, examples = tiny_examples(12, 3, 4, count=3)
    model = CorrectionModel(tiny_config())
    opt = torch.optim.SGD(model.parameters(), lr=0.0)
    training_step(model, examples, vocab, opt, clip_norm=None)
    stored = torch.tensor([ex.candidate_labels for ex in examples])
    with torch.no_grad():
        again = compute_losses(model, collate(examples, vocab, 3)).row_ce
    assert torch.allclose(stored, again.float(), atol=1e-6)


def test_zero_step_leaves_loss_unchanged():
    vocab, examples = tiny_examples(12, 3, 1)
    model = CorrectionModel(tiny_config())
    before = [p.clone() for p in model.parameters()]
    batch = collate(examples, vocab, 3)
    with torch.no_grad():
        l0 = float(compute_losses(model, batch).total)
    training_step(model, examples, vocab, torch.optim.SGD(model.parameters(), lr=0.0), clip_norm=None)
    assert all(torch.equal(a, b) for a, b in zip(before, model.parameters()))
    with torch.no_grad():
        assert float(compute_losses(model, batch).total) == l0


def test_gradient_check_tiny_model():
    assert gradient_check(seed=0) <= 1e-4


def test_loss_is_finite_across_seeds():
    for seed in range(100):
        vocab, examples = tiny_examples(12, 3, seed)
        model = CorrectionModel(tiny_config(seed=seed))
        with torch.no_grad():
            losses = compute_losses(model, collate(examples, vocab, 3))
        assert math.isfinite(float(losses.total))


def test_checkpoint_round_trip_and_resume(tmp_path):
    vocab, examples = tiny_examples(12, 3, 2, count=6)
    tc = TrainConfig(steps=6, batch_size=2, lr=1e-2, seed=3)
    conf = tiny_config(dropout=0.1)

    full = Trainer(CorrectionModel(conf), vocab, examples, tc)
    hist_full = full.run()

    part = Trainer(CorrectionModel(conf), vocab, examples, tc)
    part.run(until=3)
    path = tmp_path / "ck.pt"
    save_checkpoint(path, part.model, vocab, part)

    model, vocab2, blob = load_checkpoint(path)
    assert vocab2.itos == vocab.itos
    resumed = Trainer(model, vocab2, examples, tc)
    resumed.restore(blob["trainer"])
    hist_rest = resumed.run()
    assert [h["total"] for h in hist_rest] == [h["total"] for h in hist_full[3:]]


def test_checkpoint_rejects_garbage(tmp_path):
    p = tmp_path / "x.pt"
    torch.save({"format": "other"}, p)
    with pytest.raises(ValueError):
        load_checkpoint(p)


def test_fewer_candidates_are_padded():
    from multicorrect.phonetics import Lexicon

    model = CorrectionModel(cfg())
    out = correct_batch(model, VOCAB, [BeamSet("u", (("the", "cat"),))], Lexicon(), SelectionStrategy(CANDIDATE_PREDICTOR))
    assert out[0].chosen == 0
    assert len(out[0].predicted_losses) == 1
