"""Duration labels: how many target tokens each source position expands into."""

from __future__ import annotations

from typing import List, Optional, Sequence, Tuple

from .align import Cell, Op, best_path, strip_empty
from .core import EMPTY, RecordError
from .phonetics import Lexicon


class UnalignableError(ValueError):
    pass


def extract_durations(row: Sequence[Cell], target: Sequence[str], lex: Lexicon) -> Tuple[int, ...]:
    """Per-column durations of one grid row against the target sentence.

    The bare candidate is aligned to the target. Matched and substituted tokens
    get 1, deleted tokens 0. Each inserted target token goes to the nearest
    surviving source token on its left or right, whichever sounds closer to it
    (the left one on ties, the only one at a boundary). Empty cells get 0.
    """
    if any(t is EMPTY for t in target):
        raise ValueError("target must not contain the empty token")
    source = strip_empty(row)
    if not source and target:
        raise UnalignableError("empty candidate cannot be aligned to a non-empty target")

    path = best_path(source, target, lex)
    durs = [0] * len(source)
    survived = [False] * len(source)
    # pending insertions: (index of last surviving source token or -1, inserted token)
    pending: List[Tuple[int, str]] = []
    src_i = 0
    last_alive = -1
    for op in path.ops:
        if op.kind in (Op.IDENTITY, Op.SUBSTITUTION):
            durs[src_i] = 1
            survived[src_i] = True
            last_alive = src_i
            src_i += 1
        elif op.kind == Op.DELETION:
            src_i += 1
        else:
            pending.append((last_alive, op.b_tok))

    alive = [i for i, s in enumerate(survived) if s]
    for left, tok in pending:
        right = next((i for i in alive if i > left), None)
        if left < 0:
            owner = right
        elif right is None:
            owner = left
        else:
            sl = lex.similarity(source[left], tok)
            sr = lex.similarity(source[right], tok)
            owner = left if sl >= sr else right
        durs[owner] += 1

    out: List[int] = []
    it = iter(durs)
    for cell in row:
        out.append(0 if cell is EMPTY else next(it))
    return tuple(out)


def adjust_source(row: Sequence[Cell], durations: Sequence[int]) -> Tuple[str, ...]:
    """Repeat each token by its duration; duration 0 and empty cells vanish."""
    if len(row) != len(durations):
        raise ValueError(f"row length {len(row)} != durations length {len(durations)}")
    out: List[str] = []
    for tok, d in zip(row, durations):
        if d < 0:
            raise ValueError(f"negative duration {d}")
        if tok is not EMPTY:
            out.extend([tok] * int(d))
    return tuple(out)


def grid_durations(rows: Sequence[Sequence[Cell]], target: Sequence[str], lex: Lexicon) -> List[Tuple[int, ...]]:
    return [extract_durations(r, target, lex) for r in rows]


# --- duration records ---------------------------------------------------------
#
# {"utterance_id": str, "target": [token, ...], "durations": [[int, ...], ...]}
# one duration list per grid row; each must sum to len(target).


def durations_to_record(uid: str, target: Sequence[str], durations: Sequence[Sequence[int]]) -> dict:
    return {"utterance_id": uid, "target": list(target), "durations": [list(d) for d in durations]}


def durations_from_record(rec: dict, lineno: Optional[int] = None):
    uid = rec.get("utterance_id")
    target = rec.get("target")
    durs = rec.get("durations")
    if not isinstance(uid, str):
        raise RecordError("missing or non-string 'utterance_id'", lineno)
    if not isinstance(target, list) or not isinstance(durs, list):
        raise RecordError("'target' and 'durations' must be lists", lineno)
    for r, d in enumerate(durs):
        if not isinstance(d, list) or not all(isinstance(x, int) and x >= 0 for x in d):
            raise RecordError(f"row {r}: durations must be nonnegative integers", lineno)
        if sum(d) != len(target):
            raise RecordError(f"row {r}: durations sum to {sum(d)}, target has {len(target)} tokens", lineno)
    return uid, tuple(target), [tuple(d) for d in durs]
