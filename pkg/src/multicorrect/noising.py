"""Error statistics, homophone-aware noising and pseudo beam simulation."""

from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .align import Op, best_path
from .core import BeamSet, ErrorRate, Sentence, wer
from .phonetics import Lexicon

logger = logging.getLogger(__name__)

OP_NAMES = ("insertion", "deletion", "substitution")


@dataclass(frozen=True)
class NoiseProfile:
    target_wer: float
    op_distribution: Tuple[float, float, float] = (1 / 3, 1 / 3, 1 / 3)  # ins, del, sub
    seed: int = 0

    def __post_init__(self):
        dist = tuple(float(p) for p in self.op_distribution)
        object.__setattr__(self, "op_distribution", dist)
        if len(dist) != 3 or any(p < 0 for p in dist) or abs(sum(dist) - 1.0) > 1e-9:
            raise ValueError(f"op_distribution must be 3 nonnegative probabilities summing to 1, got {dist}")
        if not 0.0 <= self.target_wer < 1.0:
            raise ValueError(f"target_wer must lie in [0, 1), got {self.target_wer}")

    def to_dict(self) -> dict:
        return {"target_wer": self.target_wer, **dict(zip(OP_NAMES, self.op_distribution)), "seed": self.seed}

    @classmethod
    def from_dict(cls, d: Mapping) -> "NoiseProfile":
        try:
            return cls(
                float(d["target_wer"]),
                tuple(float(d[k]) for k in OP_NAMES),
                int(d.get("seed", 0)),
            )
        except KeyError as exc:
            raise ValueError(f"noise profile is missing {exc.args[0]!r}") from None

    @classmethod
    def load(cls, path) -> "NoiseProfile":
        with open(path, encoding="utf-8") as f:
            return cls.from_dict(json.load(f))


@dataclass(frozen=True)
class HomophoneTable:
    """Per-token replacement lists, nearest pronunciation first.

    `neighbors[tok]` is a tuple of (replacement, phoneme distance) sorted by
    (distance, replacement). `vocab` is the draw pool for insertions and for
    substitutions of tokens without neighbors.
    """

    neighbors: Mapping[str, Tuple[Tuple[str, int], ...]]
    vocab: Tuple[str, ...] = ()
    max_distance: int = 0

    def replacements(self, tok: str) -> Tuple[str, ...]:
        return tuple(t for t, _ in self.neighbors.get(tok, ()))


def build_homophone_table(lex: Lexicon, max_distance: int = 1, vocab: Optional[Iterable[str]] = None) -> HomophoneTable:
    if max_distance < 0:
        raise ValueError("max_distance must be >= 0")
    tokens = sorted(vocab) if vocab is not None else sorted(lex.entries)
    neighbors: Dict[str, Tuple[Tuple[str, int], ...]] = {}
    for tok in tokens:
        near = []
        for other in tokens:
            if other == tok:
                continue
            dist = -lex.similarity(tok, other)
            if dist <= max_distance:
                near.append((dist, other))
        if near:
            near.sort()
            neighbors[tok] = tuple((o, d) for d, o in near)
    return HomophoneTable(neighbors, tuple(tokens), max_distance)


def rng_for(seed: int, key: str = "") -> np.random.Generator:
    """Independent, reproducible stream for (seed, key), e.g. key = utterance id."""
    digest = hashlib.blake2b(key.encode("utf-8"), digest_size=8).digest()
    return np.random.default_rng(np.random.SeedSequence([seed, int.from_bytes(digest, "little")]))


def _substitute(tok: str, table: HomophoneTable, rng: np.random.Generator, stats: Optional[Dict[str, int]]) -> str:
    near = table.neighbors.get(tok)
    if near:
        exact = [t for t, d in near if d == 0]
        pool = exact or [t for t, _ in near]
        return pool[int(rng.integers(len(pool)))]
    if stats is not None:
        stats["fallback_substitutions"] = stats.get("fallback_substitutions", 0) + 1
    pool = [t for t in table.vocab if t != tok]
    if not pool:
        return tok
    return pool[int(rng.integers(len(pool)))]


def apply_noise(
    sent: Sequence[str],
    profile: NoiseProfile,
    table: HomophoneTable,
    rng: np.random.Generator,
    rate: Optional[float] = None,
    stats: Optional[Dict[str, int]] = None,
) -> Sentence:
    """Corrupt each position independently with probability `rate` (default: profile.target_wer)."""
    rate = profile.target_wer if rate is None else rate
    if rate <= 0:
        return tuple(sent)
    out: List[str] = []
    for tok in sent:
        if rng.random() >= rate:
            out.append(tok)
            continue
        op = int(rng.choice(3, p=profile.op_distribution))
        if op == 0:
            out.append(tok)
            if table.vocab:
                out.append(table.vocab[int(rng.integers(len(table.vocab)))])
        elif op == 1:
            pass
        else:
            out.append(_substitute(tok, table, rng, stats))
    return tuple(out)


JITTER = 0.3


def simulate_beams(
    target: Sequence[str],
    n: int,
    profile: NoiseProfile,
    table: HomophoneTable,
    rng: np.random.Generator,
    utterance_id: str = "",
) -> BeamSet:
    """n independently noised copies of `target`, lowest error rate first."""
    if n < 1:
        raise ValueError("n must be >= 1")
    w = profile.target_wer
    rates = np.sort(rng.uniform(w * (1 - JITTER), w * (1 + JITTER), size=n))
    rates = np.minimum(rates, 0.999)
    cands = tuple(apply_noise(target, profile, table, rng, rate=float(r)) for r in rates)
    return BeamSet(utterance_id, cands, tuple(target))


def measure_error_stats(
    pairs: Iterable[Tuple[Sequence[str], Sequence[str]]],
    lex: Optional[Lexicon] = None,
    seed: int = 0,
) -> NoiseProfile:
    """Corpus WER and insertion/deletion/substitution mix of (hypothesis, reference) pairs."""
    lex = lex if lex is not None else Lexicon()
    counts = [0, 0, 0]
    total = ErrorRate(0, 0)
    n_pairs = 0
    for hyp, ref in pairs:
        n_pairs += 1
        total = total + wer(hyp, ref)
        for op in best_path(ref, hyp, lex).ops:
            if op.kind == Op.INSERTION:
                counts[0] += 1
            elif op.kind == Op.DELETION:
                counts[1] += 1
            elif op.kind == Op.SUBSTITUTION:
                counts[2] += 1
    if n_pairs == 0:
        raise ValueError("measure_error_stats needs at least one pair")
    n_ops = sum(counts)
    if n_ops == 0:
        logger.warning("no edits observed; falling back to a uniform operation distribution")
        dist = (1 / 3, 1 / 3, 1 / 3)
    else:
        dist = tuple(c / n_ops for c in counts)
    rate = total.rate if total.defined else math.nan
    if not 0 <= rate < 1:
        raise ValueError(f"measured WER {rate} is outside [0, 1)")
    return NoiseProfile(rate, dist, seed)


def expand_pairs(beams: BeamSet) -> List[Tuple[Sentence, Sentence]]:
    """Pair every candidate with the reference (candidates-as-augmentation)."""
    if beams.reference is None:
        raise ValueError(f"{beams.utterance_id}: expand_pairs needs a reference")
    return [(c, beams.reference) for c in beams.candidates]
