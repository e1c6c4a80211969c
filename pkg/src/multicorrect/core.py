"""Shared types, tokenization, record I/O and WER/WERR scoring."""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import IO, Iterable, Iterator, Optional, Sequence, Tuple

# The empty token. Rows of an alignment hold either a surface token (str) or EMPTY.
# Tokenization never yields it, and it cannot collide with any string token.
EMPTY = None

Token = str
Sentence = Tuple[str, ...]

WHITESPACE = "whitespace"
CHARACTER = "character"
TOKENIZE_MODES = (WHITESPACE, CHARACTER)


class RecordError(ValueError):
    """A malformed input record. Carries the 1-based line number when known."""

    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        prefix = f"line {line}: " if line is not None else ""
        super().__init__(prefix + message)


class UndefinedRateError(ArithmeticError):
    pass


def tokenize(text: str, mode: str = WHITESPACE) -> Sentence:
    if mode == WHITESPACE:
        return tuple(text.split())
    if mode == CHARACTER:
        return tuple(ch for ch in text if not ch.isspace())
    raise ValueError(f"unknown tokenization mode {mode!r}")


def detokenize(tokens: Iterable[str], mode: str = WHITESPACE) -> str:
    if mode == CHARACTER:
        return "".join(tokens)
    return " ".join(tokens)


def levenshtein(a: Sequence, b: Sequence) -> int:
    """Unit-cost edit distance between two sequences (two-row DP)."""
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, x in enumerate(a, 1):
        cur = [i]
        for j, y in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (x != y)))
        prev = cur
    return prev[-1]


@dataclass(frozen=True)
class ErrorRate:
    """Edit count against a reference length.

    Adding two ErrorRates pools edits and lengths, so a sum over a corpus gives
    the corpus rate (not the mean of sentence rates).
    """

    edits: int
    ref_len: int

    def __post_init__(self):
        if self.edits < 0 or self.ref_len < 0:
            raise ValueError("edits and ref_len must be nonnegative")

    @property
    def defined(self) -> bool:
        return self.ref_len > 0 or self.edits == 0

    @property
    def rate(self) -> float:
        if self.ref_len == 0:
            if self.edits == 0:
                return 0.0
            raise UndefinedRateError(
                f"{self.edits} edits against an empty reference: rate undefined"
            )
        return self.edits / self.ref_len

    def __add__(self, other: "ErrorRate") -> "ErrorRate":
        return ErrorRate(self.edits + other.edits, self.ref_len + other.ref_len)

    def to_dict(self) -> dict:
        return {
            "edits": self.edits,
            "ref_len": self.ref_len,
            "wer": self.rate if self.defined else None,
        }


def wer(hyp: Sequence[str], ref: Sequence[str]) -> ErrorRate:
    return ErrorRate(levenshtein(hyp, ref), len(ref))


def corpus_wer(pairs: Iterable[Tuple[Sequence[str], Sequence[str]]]) -> ErrorRate:
    total = ErrorRate(0, 0)
    for hyp, ref in pairs:
        total = total + wer(hyp, ref)
    return total


def werr(base, new) -> float:
    """Relative WER reduction of `new` against `base`.

    Both arguments may be ErrorRate instances or plain rates.
    """
    b = base.rate if isinstance(base, ErrorRate) else float(base)
    n = new.rate if isinstance(new, ErrorRate) else float(new)
    if b == 0:
        raise UndefinedRateError("baseline WER is 0: reduction undefined")
    return (b - n) / b


@dataclass(frozen=True)
class BeamSet:
    """The n-best candidates for one utterance, in ASR beam order."""

    utterance_id: str
    candidates: Tuple[Sentence, ...]
    reference: Optional[Sentence] = None

    def __post_init__(self):
        if len(self.candidates) < 1:
            raise ValueError(f"{self.utterance_id}: a beam set needs at least one candidate")
        object.__setattr__(self, "candidates", tuple(tuple(c) for c in self.candidates))
        if self.reference is not None:
            object.__setattr__(self, "reference", tuple(self.reference))

    @property
    def n(self) -> int:
        return len(self.candidates)


# --- line-delimited JSON records ------------------------------------------------
#
# Beam record:   {"utterance_id": str, "candidates": [str, ...], "reference": str | null}
# Text record:   {"utterance_id": str, "text": str}
# A record carrying a "header" key is run metadata and is skipped by readers.


def read_records(stream: IO[str]) -> Iterator[Tuple[int, dict]]:
    """Yield (line number, record) for every non-blank, non-header line."""
    for lineno, line in enumerate(stream, 1):
        line = line.strip()
        if not line:
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise RecordError(f"invalid JSON ({exc.msg})", lineno) from None
        if not isinstance(rec, dict):
            raise RecordError("record must be a JSON object", lineno)
        if "header" in rec:
            continue
        yield lineno, rec


def write_record(stream: IO[str], rec: dict) -> None:
    stream.write(json.dumps(rec, ensure_ascii=False, sort_keys=True) + "\n")


def _require(rec: dict, key: str, typ, lineno):
    if key not in rec:
        raise RecordError(f"missing field {key!r}", lineno)
    val = rec[key]
    if not isinstance(val, typ):
        raise RecordError(f"field {key!r} has wrong type", lineno)
    return val


def beamset_from_record(rec: dict, mode: str = WHITESPACE, lineno: Optional[int] = None) -> BeamSet:
    uid = _require(rec, "utterance_id", str, lineno)
    cands = _require(rec, "candidates", list, lineno)
    if not cands or not all(isinstance(c, str) for c in cands):
        raise RecordError("candidates must be a non-empty list of strings", lineno)
    ref = rec.get("reference")
    if ref is not None and not isinstance(ref, str):
        raise RecordError("reference must be a string or null", lineno)
    return BeamSet(
        uid,
        tuple(tokenize(c, mode) for c in cands),
        tokenize(ref, mode) if ref is not None else None,
    )


def beamset_to_record(beams: BeamSet, mode: str = WHITESPACE) -> dict:
    return {
        "utterance_id": beams.utterance_id,
        "candidates": [detokenize(c, mode) for c in beams.candidates],
        "reference": detokenize(beams.reference, mode) if beams.reference is not None else None,
    }


def read_beamsets(stream: IO[str], mode: str = WHITESPACE) -> Iterator[BeamSet]:
    for lineno, rec in read_records(stream):
        yield beamset_from_record(rec, mode, lineno)
