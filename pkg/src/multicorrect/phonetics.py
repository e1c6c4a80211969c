"""Pronunciation lexicon and phoneme-level similarity."""

from __future__ import annotations

import io
import logging
from importlib import resources
from types import MappingProxyType
from typing import IO, Dict, Mapping, Optional, Sequence, Tuple

from .core import EMPTY, RecordError, levenshtein

logger = logging.getLogger(__name__)

PhonemeSeq = Tuple[str, ...]


class Lexicon:
    """Token to phoneme mapping with grapheme fallback.

    Lookup is total: tokens missing from the table are spelled out one
    character per phoneme, and the empty token maps to no phonemes.
    """

    def __init__(self, entries: Optional[Mapping[str, Sequence[str]]] = None):
        self._entries: Dict[str, PhonemeSeq] = {
            tok: tuple(ph) for tok, ph in (entries or {}).items()
        }
        self.entries = MappingProxyType(self._entries)
        self._sim_cache: Dict[Tuple[Optional[str], Optional[str]], int] = {}

    def __len__(self):
        return len(self._entries)

    def __contains__(self, tok):
        return tok in self._entries

    def phonemes(self, tok: Optional[str]) -> PhonemeSeq:
        if tok is EMPTY:
            return ()
        hit = self._entries.get(tok)
        if hit is not None:
            return hit
        return tuple(tok)

    def similarity(self, a: Optional[str], b: Optional[str]) -> int:
        """Cached pron_similarity between the pronunciations of two tokens."""
        key = (a, b)
        hit = self._sim_cache.get(key)
        if hit is None:
            hit = pron_similarity(self.phonemes(a), self.phonemes(b))
            self._sim_cache[key] = hit
            self._sim_cache[(b, a)] = hit
        return hit


def load_lexicon(source: IO[str]) -> Lexicon:
    """Parse ``token<TAB>PH PH ...`` lines. Later duplicates override earlier ones."""
    entries: Dict[str, PhonemeSeq] = {}
    for lineno, raw in enumerate(source, 1):
        line = raw.rstrip("\r\n")
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        if "\t" not in line:
            raise RecordError("expected 'token<TAB>phonemes'", lineno)
        tok, _, phs = line.partition("\t")
        tok = tok.strip()
        phones = tuple(phs.split())
        if not tok or any(ch.isspace() for ch in tok):
            raise RecordError(f"bad token {tok!r}", lineno)
        if not phones:
            raise RecordError(f"token {tok!r} has no phonemes", lineno)
        if tok in entries:
            logger.warning("line %d: duplicate lexicon entry %r, keeping the last one", lineno, tok)
        entries[tok] = phones
    return Lexicon(entries)


def load_lexicon_file(path) -> Lexicon:
    with open(path, encoding="utf-8") as f:
        return load_lexicon(f)


def default_lexicon() -> Lexicon:
    """The bundled ~60-token test lexicon with homophone clusters."""
    text = resources.files(__package__).joinpath("data/lexicon.tsv").read_text(encoding="utf-8")
    return load_lexicon(io.StringIO(text))


def phonemes(tok: Optional[str], lex: Lexicon) -> PhonemeSeq:
    return lex.phonemes(tok)


def pron_similarity(a: Sequence[str], b: Sequence[str]) -> int:
    """Negative phoneme edit distance; 0 means identical pronunciation."""
    return -levenshtein(a, b)
