"""Synthetic end-to-end comparison: multi-candidate vs single-candidate correction.

A toy grammar over the bundled lexicon supplies clean sentences; noising
produces 4-best beam sets; several correction models are trained on the same
budget and scored against the uncorrected first beam.
"""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np
import torch

from .align import align_with
from .baselines import CANDIDATE_PREDICTOR, FIRST_BEAM, RANDOM, WER_ORACLE, SelectionStrategy, rover_vote
from .core import BeamSet, ErrorRate, Sentence, corpus_wer, werr
from .model import CorrectionModel, ModelConfig, TrainConfig, Trainer, Vocab, correct_batch, make_examples
from .noising import NoiseProfile, build_homophone_table, rng_for, simulate_beams
from .phonetics import Lexicon, default_lexicon

logger = logging.getLogger(__name__)

GRAMMAR = {
    "DET": ["the", "a", "my", "their"],
    "ADJ": ["big", "red", "blue"],
    "NOUN": ["cat", "hat", "bat", "mat", "rat", "dog", "log", "pig", "son", "sun", "knight", "sea", "eye"],
    "PRON": ["I", "we"],
    "VERB": ["sees", "has", "sat", "runs", "won", "read", "write", "buy"],
    "PREP": ["on", "in", "by", "with", "for", "to"],
}


def _noun_phrase(rng) -> List[str]:
    if rng.random() < 0.15:
        return [GRAMMAR["PRON"][rng.integers(2)]]
    out = [GRAMMAR["DET"][rng.integers(4)]]
    if rng.random() < 0.4:
        out.append(GRAMMAR["ADJ"][rng.integers(3)])
    out.append(GRAMMAR["NOUN"][rng.integers(len(GRAMMAR["NOUN"]))])
    return out


def _clause(rng) -> List[str]:
    out = _noun_phrase(rng) + [GRAMMAR["VERB"][rng.integers(len(GRAMMAR["VERB"]))]] + _noun_phrase(rng)
    if rng.random() < 0.5:
        out += [GRAMMAR["PREP"][rng.integers(len(GRAMMAR["PREP"]))]] + _noun_phrase(rng)
    return out


def grammar_sentence(rng: np.random.Generator) -> Sentence:
    out = _clause(rng)
    if rng.random() < 0.25:
        out += ["and"] + _clause(rng)
    return tuple(out)


def word_vocabulary(lex: Lexicon) -> List[str]:
    """Lexicon entries longer than one character (the single letters are alignment fixtures)."""
    return sorted(t for t in lex.entries if len(t) > 1 or t in ("I", "a"))


def synthetic_corpus(n: int, beam_n: int, profile: NoiseProfile, lex: Lexicon, prefix: str, max_distance: int = 1) -> List[BeamSet]:
    table = build_homophone_table(lex, max_distance, vocab=word_vocabulary(lex))
    out = []
    for i in range(n):
        uid = f"{prefix}{i:06d}"
        rng = rng_for(profile.seed, uid)
        out.append(simulate_beams(grammar_sentence(rng), beam_n, profile, table, rng, uid))
    return out


@dataclass
class ExperimentConfig:
    n_train: int = 5000
    n_test: int = 500
    beam_n: int = 4
    target_wer: float = 0.15
    op_distribution: tuple = (0.2, 0.3, 0.5)
    data_seed: int = 1234
    model_seed: int = 0
    train: TrainConfig = field(default_factory=lambda: TrainConfig(steps=1500, batch_size=32, lr=1e-3))
    model: ModelConfig = field(
        default_factory=lambda: ModelConfig(
            hidden_size=64, encoder_layers=2, decoder_layers=2, attention_heads=4, feed_forward_size=128, dropout=0.0
        )
    )


def _corpus_rate(hyps: Sequence[Sentence], beamsets: Sequence[BeamSet]) -> ErrorRate:
    return corpus_wer(zip(hyps, (bs.reference for bs in beamsets)))


def train_model(train: List[BeamSet], lex: Lexicon, vocab: Vocab, cfg: ExperimentConfig, beam_n: int, align_method: str = "scored"):
    mcfg = ModelConfig(**{**asdict(cfg.model), "vocab_size": len(vocab), "beam_n": beam_n, "seed": cfg.model_seed})
    examples = make_examples(train, lex, beam_n, align_method)
    model = CorrectionModel(mcfg)
    tcfg = TrainConfig(**{**asdict(cfg.train), "seed": cfg.model_seed, "align_method": align_method})
    trainer = Trainer(model, vocab, examples, tcfg)
    history = trainer.run()
    return model, history


def run_experiment(
    cfg: Optional[ExperimentConfig] = None,
    lex: Optional[Lexicon] = None,
    variants: Sequence[str] = ("multi", "single", "naive"),
) -> Dict:
    """Train the requested variants and return a WER report.

    Variants: ``multi`` (scored alignment, n candidates), ``single`` (first
    beam only), ``naive`` (right-padded candidates), ``augment`` (single-input
    model trained on every candidate paired with the reference).
    """
    cfg = cfg or ExperimentConfig()
    lex = lex or default_lexicon()
    torch.set_num_threads(1)
    profile = NoiseProfile(cfg.target_wer, cfg.op_distribution, cfg.data_seed)
    train = synthetic_corpus(cfg.n_train, cfg.beam_n, profile, lex, "train")
    test = synthetic_corpus(cfg.n_test, cfg.beam_n, profile, lex, "test")
    vocab = Vocab(sorted(set(word_vocabulary(lex)) | {t for bs in train for c in bs.candidates for t in c}))

    base = _corpus_rate([bs.candidates[0] for bs in test], test)
    report: Dict = {
        "config": {
            "n_train": cfg.n_train,
            "n_test": cfg.n_test,
            "beam_n": cfg.beam_n,
            "target_wer": cfg.target_wer,
            "op_distribution": list(cfg.op_distribution),
            "data_seed": cfg.data_seed,
            "model_seed": cfg.model_seed,
            "train": asdict(cfg.train),
            "model": asdict(cfg.model),
        },
        "wer": {"no_correction": base.rate},
        "train_wer_first_beam": _corpus_rate([bs.candidates[0] for bs in train], train).rate,
        "seconds": {},
        "final_loss": {},
    }
    for method in ("scored", "naive"):
        hyps = [rover_vote(align_with(bs, lex, method)) for bs in test]
        report["wer"][f"rover_{method}"] = _corpus_rate(hyps, test).rate

    def evaluate(model, align_method, strategy):
        out = correct_batch(model, vocab, test, lex, strategy, align_method)
        return _corpus_rate([c.text for c in out], test).rate

    for variant in variants:
        t0 = time.time()
        if variant == "multi":
            model, hist = train_model(train, lex, vocab, cfg, cfg.beam_n, "scored")
            for kind in (CANDIDATE_PREDICTOR, FIRST_BEAM, RANDOM, WER_ORACLE):
                strat = SelectionStrategy(kind, seed=cfg.model_seed if kind == RANDOM else None)
                report["wer"][f"multi_{kind}"] = evaluate(model, "scored", strat)
        elif variant == "single":
            model, hist = train_model(train, lex, vocab, cfg, 1)
            report["wer"]["single"] = evaluate(model, "scored", SelectionStrategy(FIRST_BEAM))
        elif variant == "naive":
            model, hist = train_model(train, lex, vocab, cfg, cfg.beam_n, "naive")
            report["wer"]["naive_candidate_predictor"] = evaluate(model, "naive", SelectionStrategy(CANDIDATE_PREDICTOR))
        elif variant == "augment":
            aug = [
                BeamSet(f"{bs.utterance_id}/{k}", (c,), bs.reference)
                for bs in train
                for k, c in enumerate(bs.candidates)
            ]
            model, hist = train_model(aug, lex, vocab, cfg, 1)
            report["wer"]["augment"] = evaluate(model, "scored", SelectionStrategy(FIRST_BEAM))
        else:
            raise ValueError(f"unknown variant {variant!r}")
        report["seconds"][variant] = round(time.time() - t0, 1)
        report["final_loss"][variant] = hist[-1]
        logger.info("variant %s done in %.1fs", variant, report["seconds"][variant])

    report["werr"] = {k: werr(base, v) for k, v in report["wer"].items() if k != "no_correction"}
    return report
