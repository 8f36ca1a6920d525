"""Raw-text lexicon store: load, query, edit, prune.

Entries map a headword (single character or multi-character word) to the raw
entry text that serves as external knowledge. The store is immutable; edits
and pruning return new `Lexicon` values so a loaded lexicon can be shared
read-only across threads.

File format: UTF-8 JSON Lines, one object per line with exactly the string
fields "headword" and "entry", LF line endings.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from .errors import DataFormatError


@dataclass(frozen=True)
class LexiconEntry:
    headword: str
    entry_text: str

    def __post_init__(self):
        if not self.headword or any(c.isspace() for c in self.headword):
            raise ValueError(f"bad headword {self.headword!r}: must be non-empty with no whitespace")
        if not self.entry_text:
            raise ValueError(f"empty entry text for headword {self.headword!r}")


@dataclass(frozen=True)
class LookupPolicy:
    """`character` queries single tokens; `word` uses greedy longest-match
    segmentation so every token of a matched word shares the word's entry."""

    mode: str = "character"
    max_word_len: int = 4

    def __post_init__(self):
        if self.mode not in ("character", "word"):
            raise ValueError(f"unknown lookup mode {self.mode!r}")
        if self.max_word_len < 1:
            raise ValueError(f"max_word_len must be >= 1, got {self.max_word_len}")


@dataclass(frozen=True)
class Lexicon:
    entries: dict[str, LexiconEntry] = field(default_factory=dict)

    def get(self, headword: str) -> LexiconEntry | None:
        return self.entries.get(headword)

    def headwords(self) -> list[str]:
        return sorted(self.entries)

    def __len__(self):
        return len(self.entries)

    def __contains__(self, headword: str) -> bool:
        return headword in self.entries


def load_lexicon(path) -> Lexicon:
    """Parse a JSONL lexicon file; every malformed line is a hard error."""
    entries: dict[str, LexiconEntry] = {}
    first_line: dict[str, int] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip("\n")
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise DataFormatError(f"{path}:{lineno}: not valid JSON: {e}") from None
            if not isinstance(obj, dict) or set(obj) != {"headword", "entry"}:
                raise DataFormatError(
                    f"{path}:{lineno}: each line must be an object with exactly "
                    f"the fields 'headword' and 'entry'"
                )
            head, entry = obj["headword"], obj["entry"]
            if not isinstance(head, str) or not isinstance(entry, str):
                raise DataFormatError(f"{path}:{lineno}: 'headword' and 'entry' must be strings")
            if head in entries:
                raise DataFormatError(
                    f"{path}:{lineno}: duplicate headword {head!r} "
                    f"(first defined on line {first_line[head]})"
                )
            try:
                entries[head] = LexiconEntry(head, entry)
            except ValueError as e:
                raise DataFormatError(f"{path}:{lineno}: {e}") from None
            first_line[head] = lineno
    return Lexicon(entries)


def save_lexicon(lex: Lexicon, path) -> None:
    """Write JSONL sorted by headword (deterministic bytes)."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for head in lex.headwords():
            fh.write(json.dumps({"entry": lex.entries[head].entry_text, "headword": head},
                                ensure_ascii=False, sort_keys=True))
            fh.write("\n")


def segment(lex: Lexicon, tokens, max_word_len: int) -> list[tuple[int, int, str | None]]:
    """Greedy left-to-right longest-match segmentation.

    Returns (start, end, matched_headword_or_None) spans that cover the whole
    sequence; unmatched positions become single-token spans with the token
    itself as headword when present in the lexicon, else None.
    """
    n = len(tokens)
    spans = []
    i = 0
    while i < n:
        matched = None
        for length in range(min(max_word_len, n - i), 0, -1):
            cand = "".join(tokens[i : i + length])
            if cand in lex:
                matched = (i, i + length, cand)
                break
        if matched is None:
            matched = (i, i + 1, None)
        spans.append(matched)
        i = matched[1]
    return spans


def lookup(lex: Lexicon, tokens, position: int, policy: LookupPolicy):
    """Entry text (or None) for the token at `position`, plus the matched span.

    Character mode ignores multi-character headwords. Word mode segments the
    whole sequence greedily; every token inside a matched word shares that
    word's entry, and unmatched positions fall back to the single-character
    entry.
    """
    if not 0 <= position < len(tokens):
        raise IndexError(f"position {position} out of range for {len(tokens)} tokens")
    if policy.mode == "character":
        entry = lex.get(tokens[position])
        return (entry.entry_text if entry else None), (position, position + 1)
    for start, end, head in segment(lex, tokens, policy.max_word_len):
        if start <= position < end:
            if head is None:
                return None, (start, end)
            return lex.entries[head].entry_text, (start, end)
    raise AssertionError("segmentation must cover every position")


def apply_edit(lex: Lexicon, kind: str, headword: str, entry_text: str | None = None) -> Lexicon:
    """Return a new lexicon with one entry added, modified, or removed."""
    if kind not in ("add", "modify", "remove"):
        raise ValueError(f"unknown edit kind {kind!r}")
    entries = dict(lex.entries)
    if kind == "add":
        if headword in entries:
            raise ValueError(f"cannot add {headword!r}: headword already present")
        entries[headword] = LexiconEntry(headword, entry_text)
    elif kind == "modify":
        if headword not in entries:
            raise ValueError(f"cannot modify {headword!r}: headword not present")
        entries[headword] = LexiconEntry(headword, entry_text)
    else:
        if headword not in entries:
            raise ValueError(f"cannot remove {headword!r}: headword not present")
        del entries[headword]
    return Lexicon(entries)


def prune(lex: Lexicon, keep) -> Lexicon:
    """Keep only entries whose headword is in `keep`."""
    keep = set(keep)
    return Lexicon({h: e for h, e in lex.entries.items() if h in keep})


def covered_headwords(lex: Lexicon, texts) -> set[str]:
    """Headwords attested in `texts`: single characters by membership,
    multi-character words by substring occurrence."""
    chars = set()
    joined = []
    for t in texts:
        chars.update(t)
        joined.append(t)
    out = set()
    for head in lex.entries:
        if len(head) == 1:
            if head in chars:
                out.add(head)
        elif any(head in t for t in joined):
            out.add(head)
    return out
