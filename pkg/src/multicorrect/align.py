"""Pairwise and multi-candidate alignment.

Two candidates are aligned along a minimum-edit-distance path. Among all such
paths the one with the most identical columns wins, then the one whose aligned
token pairs sound most alike; remaining ties go to the path that prefers
Identity, then Substitution, then Insertion, then Deletion, reading left to
right.  Multiple candidates are aligned pairwise against the first candidate
and merged around its tokens.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple

from .core import EMPTY, BeamSet, RecordError, levenshtein
from .phonetics import Lexicon

Cell = Optional[str]
Row = Tuple[Cell, ...]


class Op(enum.IntEnum):
    # value doubles as tie-break rank: lower wins
    IDENTITY = 0
    SUBSTITUTION = 1
    INSERTION = 2
    DELETION = 3


class EditOp(NamedTuple):
    kind: Op
    a_tok: Cell
    b_tok: Cell


@dataclass(frozen=True)
class EditPath:
    ops: Tuple[EditOp, ...]
    G: int
    P: int

    @property
    def distance(self) -> int:
        return sum(op.kind != Op.IDENTITY for op in self.ops)

    @property
    def kinds(self) -> Tuple[Op, ...]:
        return tuple(op.kind for op in self.ops)


def score_ops(ops: Sequence[EditOp], lex: Lexicon) -> EditPath:
    ops = tuple(ops)
    g = sum(op.kind == Op.IDENTITY for op in ops)
    p = sum(lex.similarity(op.a_tok, op.b_tok) for op in ops)
    return EditPath(ops, g, p)


@dataclass(frozen=True)
class PairAlignment:
    row_a: Row
    row_b: Row
    path: Optional[EditPath] = field(default=None, compare=False)

    def __post_init__(self):
        if len(self.row_a) != len(self.row_b):
            raise ValueError("pair alignment rows differ in length")


@dataclass(frozen=True)
class AlignmentGrid:
    rows: Tuple[Row, ...]
    anchor_index: int = 0

    def __post_init__(self):
        rows = tuple(tuple(r) for r in self.rows)
        object.__setattr__(self, "rows", rows)
        if rows and len({len(r) for r in rows}) != 1:
            raise ValueError("alignment grid rows differ in length")

    @property
    def n(self) -> int:
        return len(self.rows)

    @property
    def width(self) -> int:
        return len(self.rows[0]) if self.rows else 0

    def column(self, j: int) -> Row:
        return tuple(r[j] for r in self.rows)

    def stripped(self, i: int) -> Tuple[str, ...]:
        return strip_empty(self.rows[i])


def strip_empty(row: Sequence[Cell]) -> Tuple[str, ...]:
    return tuple(t for t in row if t is not EMPTY)


def edit_distance(a: Sequence[str], b: Sequence[str]) -> int:
    return levenshtein(a, b)


def _distance_table(a, b) -> List[List[int]]:
    n, m = len(a), len(b)
    d = [[0] * (m + 1) for _ in range(n + 1)]
    for i in range(n + 1):
        d[i][0] = i
    for j in range(m + 1):
        d[0][j] = j
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            d[i][j] = min(
                d[i - 1][j] + 1,
                d[i][j - 1] + 1,
                d[i - 1][j - 1] + (a[i - 1] != b[j - 1]),
            )
    return d


class PathEnumeration(NamedTuple):
    paths: List[EditPath]
    truncated: bool


def enumerate_min_paths(
    a: Sequence[str], b: Sequence[str], lex: Optional[Lexicon] = None, cap: int = 10_000
) -> PathEnumeration:
    """All minimum-edit-distance paths between `a` and `b`, each scored.

    Exponential in the worst case; meant as a checker for small inputs. If more
    than `cap` paths exist only the first `cap` are returned and `truncated` is set.
    """
    if cap < 1:
        raise ValueError("cap must be positive")
    lex = lex if lex is not None else Lexicon()
    d = _distance_table(a, b)
    out: List[EditPath] = []
    # DFS backwards from the end cell; `suffix` holds ops in reverse order
    stack: List[Tuple[int, int, Tuple[EditOp, ...]]] = [(len(a), len(b), ())]
    while stack:
        i, j, suffix = stack.pop()
        if i == 0 and j == 0:
            if len(out) == cap:
                return PathEnumeration(out, True)
            out.append(score_ops(reversed(suffix), lex))
            continue
        if i > 0 and j > 0:
            same = a[i - 1] == b[j - 1]
            if d[i][j] == d[i - 1][j - 1] + (not same):
                kind = Op.IDENTITY if same else Op.SUBSTITUTION
                stack.append((i - 1, j - 1, suffix + (EditOp(kind, a[i - 1], b[j - 1]),)))
        if j > 0 and d[i][j] == d[i][j - 1] + 1:
            stack.append((i, j - 1, suffix + (EditOp(Op.INSERTION, EMPTY, b[j - 1]),)))
        if i > 0 and d[i][j] == d[i - 1][j] + 1:
            stack.append((i - 1, j, suffix + (EditOp(Op.DELETION, a[i - 1], EMPTY),)))
    return PathEnumeration(out, False)


def best_path(
    a: Sequence[str],
    b: Sequence[str],
    lex: Lexicon,
    use_token_score: bool = True,
    use_pron_score: bool = True,
) -> EditPath:
    """Minimum-edit path maximizing (G, P), found by a suffix dynamic program.

    G and P are sums of per-column terms, so maximizing the tuple
    (-cost, G, P) lexicographically cell by cell is exact. The forward walk
    then takes the highest-priority operation among those that stay optimal,
    which gives the left-to-right operation-priority tie-break.
    """
    n, m = len(a), len(b)
    tg = 1 if use_token_score else 0
    sim = lex.similarity if use_pron_score else (lambda x, y: 0)

    # best[i][j]: optimal (-cost, G, P) for aligning a[i:] with b[j:]
    best: List[List[Tuple[int, int, int]]] = [[(0, 0, 0)] * (m + 1) for _ in range(n + 1)]
    for i in range(n, -1, -1):
        row = best[i]
        nxt = best[i + 1] if i < n else None
        ai = a[i] if i < n else None
        for j in range(m, -1, -1):
            if i == n and j == m:
                continue
            cands = []
            if nxt is not None and j < m:
                c, g, p = nxt[j + 1]
                if ai == b[j]:
                    cands.append((c, g + tg, p))
                else:
                    cands.append((c - 1, g, p + sim(ai, b[j])))
            if j < m:
                c, g, p = row[j + 1]
                cands.append((c - 1, g, p + sim(EMPTY, b[j])))
            if nxt is not None:
                c, g, p = nxt[j]
                cands.append((c - 1, g, p + sim(ai, EMPTY)))
            row[j] = max(cands)

    ops: List[EditOp] = []
    i = j = 0
    while i < n or j < m:
        target = best[i][j]
        if i < n and j < m:
            c, g, p = best[i + 1][j + 1]
            if a[i] == b[j]:
                if (c, g + tg, p) == target:
                    ops.append(EditOp(Op.IDENTITY, a[i], b[j]))
                    i, j = i + 1, j + 1
                    continue
            elif (c - 1, g, p + sim(a[i], b[j])) == target:
                ops.append(EditOp(Op.SUBSTITUTION, a[i], b[j]))
                i, j = i + 1, j + 1
                continue
        if j < m:
            c, g, p = best[i][j + 1]
            if (c - 1, g, p + sim(EMPTY, b[j])) == target:
                ops.append(EditOp(Op.INSERTION, EMPTY, b[j]))
                j += 1
                continue
        ops.append(EditOp(Op.DELETION, a[i], EMPTY))
        i += 1
    # G and P are reported with full scoring even when a term was disabled
    return score_ops(ops, lex)


def ops_to_rows(ops: Sequence[EditOp]) -> Tuple[Row, Row]:
    return tuple(op.a_tok for op in ops), tuple(op.b_tok for op in ops)


def align_pair(
    a: Sequence[str],
    b: Sequence[str],
    lex: Lexicon,
    use_token_score: bool = True,
    use_pron_score: bool = True,
) -> PairAlignment:
    path = best_path(a, b, lex, use_token_score, use_pron_score)
    row_a, row_b = ops_to_rows(path.ops)
    return PairAlignment(row_a, row_b, path)


def merge_alignments(anchor: Sequence[str], pairs: Sequence[PairAlignment]) -> AlignmentGrid:
    """Merge pairwise alignments that share `anchor` as their first row.

    Each pair is cut into gaps (tokens facing an empty anchor cell, i.e. the
    other candidate's insertions) around the anchor tokens. Gap g of the merged
    grid is as wide as the widest gap g among the pairs; shorter gaps are
    left-justified and padded with the empty token.
    """
    k = len(anchor)
    per_pair_gaps: List[List[List[str]]] = []
    per_pair_cols: List[List[Cell]] = []
    for pa in pairs:
        if strip_empty(pa.row_a) != tuple(anchor):
            raise ValueError("pair alignment does not share the anchor candidate")
        gaps: List[List[str]] = [[] for _ in range(k + 1)]
        cols: List[Cell] = []
        for x, y in zip(pa.row_a, pa.row_b):
            if x is EMPTY:
                gaps[len(cols)].append(y)
            else:
                cols.append(y)
        per_pair_gaps.append(gaps)
        per_pair_cols.append(cols)

    widths = [max((len(g[t]) for g in per_pair_gaps), default=0) for t in range(k + 1)]
    rows: List[List[Cell]] = [[] for _ in range(len(pairs) + 1)]
    for t in range(k + 1):
        w = widths[t]
        if w:
            rows[0].extend([EMPTY] * w)
            for r, gaps in enumerate(per_pair_gaps, 1):
                rows[r].extend(gaps[t] + [EMPTY] * (w - len(gaps[t])))
        if t < k:
            rows[0].append(anchor[t])
            for r, cols in enumerate(per_pair_cols, 1):
                rows[r].append(cols[t])
    return AlignmentGrid(tuple(tuple(r) for r in rows), anchor_index=0)


def align_candidates(
    beams: BeamSet,
    lex: Lexicon,
    use_token_score: bool = True,
    use_pron_score: bool = True,
) -> AlignmentGrid:
    """Align all candidates of a beam set, using candidate 0 as the anchor."""
    anchor = beams.candidates[0]
    pairs = [
        align_pair(anchor, cand, lex, use_token_score, use_pron_score)
        for cand in beams.candidates[1:]
    ]
    return merge_alignments(anchor, pairs)


def naive_pad_align(beams: BeamSet) -> AlignmentGrid:
    width = max(len(c) for c in beams.candidates)
    return AlignmentGrid(
        tuple(tuple(c) + (EMPTY,) * (width - len(c)) for c in beams.candidates),
        anchor_index=0,
    )


ALIGNERS = ("scored", "naive", "no-pron", "ops-only")


def align_with(beams: BeamSet, lex: Lexicon, method: str = "scored") -> AlignmentGrid:
    """Dispatch by alignment method name (the full method or one of its ablations)."""
    if method == "scored":
        return align_candidates(beams, lex)
    if method == "naive":
        return naive_pad_align(beams)
    if method == "no-pron":
        return align_candidates(beams, lex, use_pron_score=False)
    if method == "ops-only":
        return align_candidates(beams, lex, use_token_score=False, use_pron_score=False)
    raise ValueError(f"unknown alignment method {method!r}; expected one of {ALIGNERS}")


# --- grid records -----------------------------------------------------------------
#
# {"utterance_id": str, "anchor_index": int, "rows": [[token | null, ...], ...],
#  "reference": [token, ...] | null}
# The empty token is JSON null, so any surface string survives the round trip.


def grid_to_record(uid: str, grid: AlignmentGrid, reference: Optional[Sequence[str]] = None) -> dict:
    return {
        "utterance_id": uid,
        "anchor_index": grid.anchor_index,
        "rows": [list(r) for r in grid.rows],
        "reference": list(reference) if reference is not None else None,
    }


def grid_from_record(rec: dict, lineno: Optional[int] = None) -> Tuple[str, AlignmentGrid, Optional[Tuple[str, ...]]]:
    uid = rec.get("utterance_id")
    rows = rec.get("rows")
    if not isinstance(uid, str):
        raise RecordError("missing or non-string 'utterance_id'", lineno)
    if not isinstance(rows, list) or not rows:
        raise RecordError("'rows' must be a non-empty list", lineno)
    for r in rows:
        if not isinstance(r, list) or not all(t is None or (isinstance(t, str) and t) for t in r):
            raise RecordError("each row must be a list of tokens or null", lineno)
    ref = rec.get("reference")
    if ref is not None and (not isinstance(ref, list) or not all(isinstance(t, str) for t in ref)):
        raise RecordError("'reference' must be a token list or null", lineno)
    try:
        grid = AlignmentGrid(tuple(tuple(r) for r in rows), int(rec.get("anchor_index", 0)))
    except ValueError as exc:
        raise RecordError(str(exc), lineno) from None
    return uid, grid, tuple(ref) if ref is not None else None
