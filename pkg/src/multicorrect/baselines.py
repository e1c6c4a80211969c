"""ROVER-style occurrence voting and candidate selection strategies."""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING, List, Optional

import numpy as np

from .align import AlignmentGrid
from .core import EMPTY, BeamSet, Sentence, wer

if TYPE_CHECKING:
    from .phonetics import Lexicon


def vote_column(column) -> Optional[str]:
    """Most frequent cell of a column; ties go to the cell seen at the lowest row."""
    counts = {}
    first_seen = {}
    for i, cell in enumerate(column):
        counts[cell] = counts.get(cell, 0) + 1
        first_seen.setdefault(cell, i)
    return max(counts, key=lambda c: (counts[c], -first_seen[c]))


def rover_vote(grid: AlignmentGrid) -> Sentence:
    out = []
    for j in range(grid.width):
        winner = vote_column(grid.column(j))
        if winner is not EMPTY:
            out.append(winner)
    return tuple(out)


CANDIDATE_PREDICTOR = "candidate_predictor"
WER_ORACLE = "wer_oracle"
FIRST_BEAM = "first_beam"
RANDOM = "random"
STRATEGIES = (CANDIDATE_PREDICTOR, WER_ORACLE, FIRST_BEAM, RANDOM)


@dataclass(frozen=True)
class SelectionStrategy:
    kind: str
    seed: Optional[int] = None

    def __post_init__(self):
        if self.kind not in STRATEGIES:
            raise ValueError(f"unknown selection strategy {self.kind!r}")
        if self.kind == RANDOM and self.seed is None:
            raise ValueError("the random strategy needs a seed")


def random_index(beams: BeamSet, seed: int) -> int:
    # local import keeps this module free of the noising dependency at import time
    from .noising import rng_for

    return int(rng_for(seed, beams.utterance_id).integers(beams.n))


def oracle_index(beams: BeamSet) -> int:
    errs = [wer(c, beams.reference).edits for c in beams.candidates]
    return int(np.argmin(errs))


def select_candidate(beams: BeamSet, strategy: SelectionStrategy, model=None, lex: "Lexicon" = None, vocab=None) -> int:
    kind = strategy.kind
    if kind == FIRST_BEAM:
        return 0
    if kind == RANDOM:
        return random_index(beams, strategy.seed)
    if kind == WER_ORACLE:
        if beams.reference is None:
            raise ValueError(f"strategy {kind!r} needs a reference for {beams.utterance_id}")
        return oracle_index(beams)
    if model is None or lex is None or vocab is None:
        raise ValueError(f"strategy {kind!r} needs a trained model, its vocabulary and a lexicon")
    from .model import predict_losses_for

    losses = predict_losses_for(model, [beams], lex, vocab)[0]
    return int(np.argmin(losses))
