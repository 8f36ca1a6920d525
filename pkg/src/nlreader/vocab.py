"""Symbol inventories and tokenization shared by inputs and lexicon text.

One `SymbolVocab` covers script characters, punctuation, entry markup and
phoneme symbols, so the same character embedding table can encode both the
input sequence and raw lexicon entry text. The separate `PhonemeVocab` is the
decoder's output inventory (with BOS/EOS/PAD).
"""

from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np

PAD, UNK = "<pad>", "<unk>"
BOS, EOS = "<bos>", "<eos>"
ENTRY_MARKUP = ("[", "]", ";")
PUNCTUATION = ("、", "。", "，", "！", "？")

_ENTRY_TOKEN_RE = re.compile(r"\[|\]|;|[A-Za-z0-9_]+|\S")


def tokenize_entry(text: str) -> list[str]:
    """Character/symbol tokens of raw entry text.

    Bracket markup and ';' are single tokens, alphanumeric runs (phoneme
    symbols) are whole tokens, any other non-space character stands alone.
    """
    return _ENTRY_TOKEN_RE.findall(text)


def tokenize_input(text: str) -> list[str]:
    return list(text)


@dataclass(frozen=True)
class SymbolVocab:
    """Input/knowledge inventory; unknown symbols map to the reserved UNK id."""

    symbols: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "_index", {s: i for i, s in enumerate(self.symbols)})
        if self.symbols[:2] != (PAD, UNK):
            raise ValueError("symbol vocabulary must start with PAD, UNK")

    @property
    def pad_id(self) -> int:
        return 0

    @property
    def unk_id(self) -> int:
        return 1

    def __len__(self):
        return len(self.symbols)

    def id(self, symbol: str) -> int:
        return self._index.get(symbol, 1)

    def encode(self, tokens) -> np.ndarray:
        return np.array([self.id(t) for t in tokens], dtype=np.int64)

    def decode(self, ids) -> list[str]:
        return [self.symbols[int(i)] for i in ids]


@dataclass(frozen=True)
class PhonemeVocab:
    """Decoder output inventory; ids 0..2 are PAD, BOS, EOS."""

    symbols: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "_index", {s: i for i, s in enumerate(self.symbols)})
        if self.symbols[:3] != (PAD, BOS, EOS):
            raise ValueError("phoneme vocabulary must start with PAD, BOS, EOS")

    @property
    def pad_id(self) -> int:
        return 0

    @property
    def bos_id(self) -> int:
        return 1

    @property
    def eos_id(self) -> int:
        return 2

    def __len__(self):
        return len(self.symbols)

    def id(self, symbol: str) -> int:
        try:
            return self._index[symbol]
        except KeyError:
            raise KeyError(f"phoneme {symbol!r} not in output vocabulary") from None

    def encode_target(self, phonemes) -> np.ndarray:
        """Target ids ending in EOS."""
        return np.array([self.id(p) for p in phonemes] + [self.eos_id], dtype=np.int64)

    def decode(self, ids) -> tuple[str, ...]:
        out = []
        for i in ids:
            i = int(i)
            if i == self.eos_id:
                break
            if i not in (self.pad_id, self.bos_id):
                out.append(self.symbols[i])
        return tuple(out)


def build_symbol_vocab(script_chars, phonemes, extra=()) -> SymbolVocab:
    pool = set(script_chars) | set(phonemes) | set(ENTRY_MARKUP) | set(PUNCTUATION) | set(extra)
    pool.discard(PAD)
    pool.discard(UNK)
    return SymbolVocab((PAD, UNK) + tuple(sorted(pool)))


def build_phoneme_vocab(phonemes) -> PhonemeVocab:
    return PhonemeVocab((PAD, BOS, EOS) + tuple(sorted(set(phonemes))))


def vocabs_for_specs(specs) -> tuple[SymbolVocab, PhonemeVocab]:
    """Union vocabularies over one or more language specs (for transfer, pass
    both the base and the derived language)."""
    chars, phonemes = set(), set()
    for spec in specs:
        chars.update(spec.characters)
        phonemes.update(spec.phonemes)
    return build_symbol_vocab(chars, phonemes), build_phoneme_vocab(phonemes)


def vocabs_from_data(corpus, lexicon) -> tuple[SymbolVocab, PhonemeVocab]:
    """Derive vocabularies from a corpus plus lexicon when no spec is given."""
    chars, phonemes = set(), set()
    for u in corpus.utterances:
        chars.update(u.chars)
        phonemes.update(u.phonemes)
    for head, entry in lexicon.entries.items():
        chars.update(head)
        for tok in tokenize_entry(entry.entry_text):
            chars.add(tok) if len(tok) == 1 else phonemes.add(tok)
    return build_symbol_vocab(chars, phonemes), build_phoneme_vocab(phonemes)
