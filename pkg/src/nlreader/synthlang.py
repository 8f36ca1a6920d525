"""Synthetic non-phonemic languages with an exact pronunciation oracle.

A generated language assigns each character one or more readings (short
phoneme sequences). Heteronym characters pick a non-default reading whenever
one of that reading's trigger characters appears within a small context
window; the trigger characters double as the "usage hints" printed into the
lexicon entry, so the evidence for the correct reading is literally present
in the raw entry text. Rare characters get placed exactly once in a full
training corpus and drop out of half-size subsets, which is what makes
few-/zero-shot evaluation possible.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field, replace

import numpy as np

from .lexicon import Lexicon, LexiconEntry

log = logging.getLogger(__name__)

ZIPF_EXPONENT = 1.1
CHAR_BLOCK_START = 0x4E00


@dataclass(frozen=True)
class GenerationParams:
    n_regular: int = 600
    n_heteronym: int = 60
    n_rare: int = 40
    n_phonemes: int = 40
    n_words: int = 80
    min_reading_len: int = 1
    max_reading_len: int = 3
    triggers_per_reading: int = 3
    window: int = 2


@dataclass(frozen=True)
class CharacterSpec:
    char: str
    klass: str  # regular | heteronym | rare
    readings: tuple[tuple[str, ...], ...]  # readings[0] is the default
    triggers: tuple[tuple[str, ...], ...]  # parallel to readings; empty for one-reading chars


@dataclass(frozen=True)
class LanguageSpec:
    seed: int
    language_id: int
    window: int
    phonemes: tuple[str, ...]
    characters: dict[str, CharacterSpec]
    words: dict[str, tuple[str, ...]]
    frequency_order: tuple[str, ...]  # sampling rank of regular+heteronym chars

    def chars_of_class(self, klass: str) -> list[str]:
        return [c for c, spec in sorted(self.characters.items()) if spec.klass == klass]

    def top_regular(self, n: int) -> list[str]:
        out = [c for c in self.frequency_order if self.characters[c].klass == "regular"]
        return out[:n]


@dataclass(frozen=True)
class Utterance:
    chars: str
    phonemes: tuple[str, ...]
    lang: int = 0
    split: str = "train"


@dataclass(frozen=True)
class Corpus:
    utterances: list[Utterance] = field(default_factory=list)

    def train(self) -> list[Utterance]:
        return [u for u in self.utterances if u.split == "train"]

    def eval(self) -> list[Utterance]:
        return [u for u in self.utterances if u.split == "eval"]

    def __len__(self):
        return len(self.utterances)


@dataclass(frozen=True)
class EvalItem:
    """One scored utterance; focus fields mark the character under test."""

    chars: str
    phonemes: tuple[str, ...]
    lang: int = 0
    focus_char: str | None = None
    focus_reading: tuple[str, ...] | None = None


@dataclass(frozen=True)
class EvalSet:
    kind: str  # general | rare | heteronym
    items: list[EvalItem] = field(default_factory=list)


@dataclass
class ScoreReport:
    token_error_rate: float
    per_char_accuracy: float | None = None
    heteronym_error: float | None = None
    counts: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# language generation


def _draw_reading(rng, params, phonemes) -> tuple[str, ...]:
    length = int(rng.integers(params.min_reading_len, params.max_reading_len + 1))
    return tuple(str(phonemes[i]) for i in rng.integers(0, len(phonemes), size=length))


def generate_language(seed: int, params: GenerationParams = GenerationParams(),
                      language_id: int = 0) -> LanguageSpec:
    """Deterministically generate a language from a seed."""
    if min(params.n_regular, params.n_phonemes) <= 0 or params.n_heteronym < 0 or params.n_rare < 0:
        raise ValueError("inventory sizes must be positive")
    rng = np.random.default_rng(seed)
    phonemes = tuple(f"p{i}" for i in range(params.n_phonemes))
    total = params.n_regular + params.n_heteronym + params.n_rare
    pool = [chr(CHAR_BLOCK_START + i) for i in range(total)]
    order = rng.permutation(total)
    regular = [pool[i] for i in order[: params.n_regular]]
    heteronym = [pool[i] for i in order[params.n_regular : params.n_regular + params.n_heteronym]]
    rare = [pool[i] for i in order[params.n_regular + params.n_heteronym :]]

    characters: dict[str, CharacterSpec] = {}
    for c in regular:
        characters[c] = CharacterSpec(c, "regular", (_draw_reading(rng, params, phonemes),), ((),))
    for c in rare:
        characters[c] = CharacterSpec(c, "rare", (_draw_reading(rng, params, phonemes),), ((),))

    for c in heteronym:
        n_read = int(rng.integers(2, 4))
        need = n_read * params.triggers_per_reading
        if need > len(regular):
            raise ValueError(
                f"infeasible params: {need} trigger characters demanded for {c!r} "
                f"but only {len(regular)} regular characters exist"
            )
        readings: list[tuple[str, ...]] = []
        for _ in range(n_read):
            r = _draw_reading(rng, params, phonemes)
            while r in readings:
                r = _draw_reading(rng, params, phonemes)
            readings.append(r)
        picks = rng.choice(len(regular), size=need, replace=False)
        triggers = tuple(
            tuple(regular[picks[k * params.triggers_per_reading + t]]
                  for t in range(params.triggers_per_reading))
            for k in range(n_read)
        )
        characters[c] = CharacterSpec(c, "heteronym", tuple(readings), triggers)

    frequency_order = tuple(
        (regular + heteronym)[i] for i in rng.permutation(params.n_regular + params.n_heteronym)
    )

    words: dict[str, tuple[str, ...]] = {}
    spec_no_words = LanguageSpec(seed, language_id, params.window, phonemes, characters, {},
                                 frequency_order)
    attempts = 0
    while len(words) < params.n_words and attempts < params.n_words * 50:
        attempts += 1
        if heteronym and rng.random() < 0.25:
            h = heteronym[int(rng.integers(len(heteronym)))]
            hs = characters[h]
            k = int(rng.integers(1, len(hs.readings)))
            t = hs.triggers[k][int(rng.integers(len(hs.triggers[k])))]
            word = h + t if rng.random() < 0.5 else t + h
        else:
            length = int(rng.integers(2, 4))
            word = "".join(regular[i] for i in rng.integers(0, len(regular), size=length))
        if word in words:
            continue
        words[word] = reference_pronounce(spec_no_words, word)
    if len(words) < params.n_words:
        raise ValueError("infeasible params: could not generate enough distinct words")

    spec = replace(spec_no_words, words=words)
    validate_spec(spec)
    return spec


def validate_spec(spec: LanguageSpec) -> None:
    for c, cs in spec.characters.items():
        if len(cs.readings) != len(cs.triggers):
            raise ValueError(f"{c!r}: readings and triggers must be parallel")
        seen: set[str] = set()
        for trig in cs.triggers:
            for t in trig:
                if t in seen:
                    raise ValueError(f"{c!r}: trigger {t!r} appears in two readings")
                seen.add(t)
        for r in cs.readings:
            if not 1 <= len(r) <= 3:
                raise ValueError(f"{c!r}: reading length {len(r)} outside 1..3")
        if cs.klass == "heteronym" and len(cs.readings) < 2:
            raise ValueError(f"{c!r}: heteronym needs >= 2 readings")
    rare = set(spec.chars_of_class("rare"))
    for w in spec.words:
        if len(w) < 2:
            raise ValueError(f"word {w!r} must have >= 2 characters")
        if rare & set(w):
            raise ValueError(f"word {w!r} contains a rare character")


# ---------------------------------------------------------------------------
# the pronunciation oracle


def choose_reading(spec: LanguageSpec, chars: str, position: int) -> int:
    """Index of the reading the oracle assigns at `position`.

    Readings are tried in listed order; the first whose trigger set intersects
    the +-window context wins, otherwise the default (index 0).
    """
    cs = spec.characters.get(chars[position])
    if cs is None:
        raise KeyError(f"unknown character {chars[position]!r}")
    if len(cs.readings) == 1:
        return 0
    lo = max(0, position - spec.window)
    context = chars[lo:position] + chars[position + 1 : position + 1 + spec.window]
    for k, trig in enumerate(cs.triggers):
        if any(t in context for t in trig):
            return k
    return 0


def pronounce_with_spans(spec: LanguageSpec, chars: str):
    """Phoneme sequence plus the (start, end) slice each character produced."""
    out: list[str] = []
    spans: list[tuple[int, int]] = []
    for i in range(len(chars)):
        k = choose_reading(spec, chars, i)
        reading = spec.characters[chars[i]].readings[k]
        spans.append((len(out), len(out) + len(reading)))
        out.extend(reading)
    return tuple(out), spans


def reference_pronounce(spec: LanguageSpec, chars: str) -> tuple[str, ...]:
    """Exact pronunciation of a character sequence under the trigger rule."""
    return pronounce_with_spans(spec, chars)[0]


# ---------------------------------------------------------------------------
# lexicon rendering and entry grammar

_READING_RE = re.compile(r"\[([^\]]*)\]")


def render_entry(readings, triggers) -> str:
    segments = []
    for reading, trig in zip(readings, triggers):
        segments.append("[" + " ".join(reading) + "]" + "".join(trig) + ";")
    return "".join(segments)


def render_lexicon(spec: LanguageSpec) -> Lexicon:
    """Entry text per character (and word): one "[reading]hints;" segment per
    reading, default reading first."""
    entries: dict[str, LexiconEntry] = {}
    for c, cs in spec.characters.items():
        entries[c] = LexiconEntry(c, render_entry(cs.readings, cs.triggers))
    for w, reading in spec.words.items():
        entries[w] = LexiconEntry(w, render_entry((reading,), ((),)))
    return Lexicon(entries)


def parse_entry_readings(entry_text: str) -> list[tuple[str, ...]]:
    """Readings back out of an entry's bracket groups."""
    return [tuple(group.split()) for group in _READING_RE.findall(entry_text)]


# ---------------------------------------------------------------------------
# corpora


def _zipf_weights(n: int) -> np.ndarray:
    w = 1.0 / np.arange(1, n + 1) ** ZIPF_EXPONENT
    return w / w.sum()


def _sample_utterance(spec: LanguageSpec, rng, weights, p_word=0.15,
                      p_force_nondefault=0.3) -> str:
    """One utterance of 5..20 characters with Zipfian character frequencies.

    Heteronym occurrences co-sample a trigger of a random non-default reading
    with probability `p_force_nondefault` so non-default readings are
    attested in training data.
    """
    target_len = int(rng.integers(5, 21))
    words = sorted(spec.words)
    out: list[str] = []
    while len(out) < target_len:
        room = target_len - len(out)
        if words and room >= 3 and rng.random() < p_word:
            w = words[int(rng.integers(len(words)))]
            if len(w) <= room:
                out.extend(w)
                continue
        c = spec.frequency_order[int(rng.choice(len(weights), p=weights))]
        cs = spec.characters[c]
        if cs.klass == "heteronym" and rng.random() < p_force_nondefault and room >= 2:
            k = int(rng.integers(1, len(cs.readings)))
            t = cs.triggers[k][int(rng.integers(len(cs.triggers[k])))]
            pair = [t, c] if rng.random() < 0.5 else [c, t]
            out.extend(pair)
        else:
            out.append(c)
    return "".join(out[:target_len])


def sample_corpus(spec: LanguageSpec, n_utterances: int, seed: int,
                  n_eval: int = 0) -> Corpus:
    """Training corpus (plus an optional eval split without rare characters).

    Every rare character is planted exactly once, by replacing one position
    of a distinct training utterance; targets always come from the oracle.
    """
    rare = spec.chars_of_class("rare")
    if n_utterances < len(rare):
        raise ValueError(f"need at least {len(rare)} utterances to place every rare character")
    rng = np.random.default_rng(seed)
    weights = _zipf_weights(len(spec.frequency_order))

    texts = [_sample_utterance(spec, rng, weights) for _ in range(n_utterances)]
    slots = rng.choice(n_utterances, size=len(rare), replace=False)
    for c, slot in zip(rare, slots):
        t = texts[slot]
        pos = int(rng.integers(len(t)))
        texts[slot] = t[:pos] + c + t[pos + 1 :]

    utterances = [Utterance(t, reference_pronounce(spec, t), spec.language_id, "train")
                  for t in texts]
    for _ in range(n_eval):
        t = _sample_utterance(spec, rng, weights)
        utterances.append(Utterance(t, reference_pronounce(spec, t), spec.language_id, "eval"))
    return Corpus(utterances)


def _bears_rare(u: Utterance, rare: set[str]) -> bool:
    return bool(rare & set(u.chars))


def downsample(corpus: Corpus, fraction: float, seed: int, spec: LanguageSpec) -> Corpus:
    """Deterministic training subset; rare-bearing utterances are dropped
    first, and smaller fractions nest inside larger ones for the same seed.
    The eval split passes through unchanged."""
    if not 0 < fraction <= 1:
        raise ValueError(f"fraction must be in (0, 1], got {fraction}")
    train = corpus.train()
    rare = set(spec.chars_of_class("rare"))
    rng = np.random.default_rng(seed)
    perm = rng.permutation(len(train))
    ordered = [i for i in perm if not _bears_rare(train[i], rare)]
    ordered += [i for i in perm if _bears_rare(train[i], rare)]
    k = int(round(len(train) * fraction))
    chosen = sorted(ordered[:k])
    kept = [train[i] for i in chosen]
    return Corpus(kept + corpus.eval())


# ---------------------------------------------------------------------------
# special test sets


def _filler_text(rng, fillers, length: int) -> list[str]:
    return [fillers[int(rng.integers(len(fillers)))] for _ in range(length)]


def build_rare_set(spec: LanguageSpec) -> EvalSet:
    """One utterance per rare character; all other characters come from the
    50 most frequent regular characters."""
    rare = spec.chars_of_class("rare")
    if not rare:
        raise ValueError("language has no rare characters")
    rng = np.random.default_rng(spec.seed + 0x5A5E)
    fillers = spec.top_regular(50)
    items = []
    for c in rare:
        length = int(rng.integers(5, 11))
        text = _filler_text(rng, fillers, length)
        text[int(rng.integers(length))] = c
        chars = "".join(text)
        items.append(EvalItem(chars, reference_pronounce(spec, chars), spec.language_id,
                              focus_char=c))
    return EvalSet("rare", items)


def count_reading_frequencies(spec: LanguageSpec, corpus: Corpus) -> dict[str, np.ndarray]:
    """Per heteronym character: how often each reading occurs in the train split."""
    counts = {c: np.zeros(len(spec.characters[c].readings), dtype=np.int64)
              for c in spec.chars_of_class("heteronym")}
    for u in corpus.train():
        for i, c in enumerate(u.chars):
            if c in counts:
                counts[c][choose_reading(spec, u.chars, i)] += 1
    return counts


def build_heteronym_set(spec: LanguageSpec, train_corpus: Corpus,
                        per_group: int = 2) -> EvalSet:
    """Utterances forcing every reading except each character's most frequent
    one in `train_corpus`; grouped by (character, reading) for scoring.

    A predictor that always emits the training-majority reading is wrong on
    every item by construction. Heteronyms with fewer than two observed
    readings are skipped with a warning.
    """
    rng = np.random.default_rng(spec.seed + 0x4E7E)
    counts = count_reading_frequencies(spec, train_corpus)
    items = []
    for c in spec.chars_of_class("heteronym"):
        cs = spec.characters[c]
        observed = np.flatnonzero(counts[c] > 0)
        if len(observed) < 2:
            log.warning("heteronym %r has %d observed readings in training; skipped",
                        c, len(observed))
            continue
        majority = int(np.argmax(counts[c]))
        all_triggers = {t for trig in cs.triggers for t in trig}
        fillers = [f for f in spec.top_regular(60) if f not in all_triggers and f != c][:50]
        for k in range(len(cs.readings)):
            if k == majority:
                continue
            for _ in range(per_group):
                length = int(rng.integers(5, 11))
                text = _filler_text(rng, fillers, length)
                pos = int(rng.integers(length - 1))
                trig = cs.triggers[k][int(rng.integers(len(cs.triggers[k])))]
                text[pos], text[pos + 1] = (c, trig) if rng.random() < 0.5 else (trig, c)
                chars = "".join(text)
                got = choose_reading(spec, chars, chars.index(c))
                if got != k:
                    raise AssertionError(f"constructed context for {c!r} forced reading "
                                         f"{got}, wanted {k}")
                items.append(EvalItem(chars, reference_pronounce(spec, chars),
                                      spec.language_id, focus_char=c,
                                      focus_reading=cs.readings[k]))
    return EvalSet("heteronym", items)


def derive_transfer_language(spec: LanguageSpec, seed: int,
                             overlap: float = 0.5) -> LanguageSpec:
    """Same characters and word list, new readings from a partially
    overlapping phoneme inventory, heteronym structure regenerated."""
    rng = np.random.default_rng(seed)
    n = len(spec.phonemes)
    n_keep = int(round(n * overlap))
    kept = sorted(rng.choice(n, size=n_keep, replace=False))
    fresh = [f"p{n + i}" for i in range(n - n_keep)]
    phonemes = tuple([spec.phonemes[i] for i in kept] + fresh)

    params = GenerationParams(window=spec.window)
    regular = spec.chars_of_class("regular")
    characters: dict[str, CharacterSpec] = {}
    for c, cs in sorted(spec.characters.items()):
        if cs.klass in ("regular", "rare"):
            characters[c] = CharacterSpec(c, cs.klass, (_draw_reading(rng, params, phonemes),), ((),))
    for c in spec.chars_of_class("heteronym"):
        n_read = int(rng.integers(2, 4))
        readings: list[tuple[str, ...]] = []
        for _ in range(n_read):
            r = _draw_reading(rng, params, phonemes)
            while r in readings:
                r = _draw_reading(rng, params, phonemes)
            readings.append(r)
        picks = rng.choice(len(regular), size=n_read * params.triggers_per_reading, replace=False)
        triggers = tuple(
            tuple(regular[picks[k * params.triggers_per_reading + t]]
                  for t in range(params.triggers_per_reading))
            for k in range(n_read)
        )
        characters[c] = CharacterSpec(c, "heteronym", tuple(readings), triggers)

    derived = LanguageSpec(seed, spec.language_id + 1, spec.window, phonemes, characters,
                           {}, spec.frequency_order)
    words = {w: reference_pronounce(derived, w) for w in spec.words}
    derived = replace(derived, words=words)
    validate_spec(derived)
    return derived


# ---------------------------------------------------------------------------
# scoring


def levenshtein(a, b) -> int:
    """Unit-cost edit distance between two token sequences."""
    a, b = list(a), list(b)
    prev = list(range(len(b) + 1))
    for i, x in enumerate(a, start=1):
        cur = [i]
        for j, y in enumerate(b, start=1):
            cur.append(min(prev[j - 1] + (x != y), prev[j] + 1, cur[j - 1] + 1))
        prev = cur
    return prev[len(b)]


def token_error_rate(hypothesis, reference) -> float:
    """Edit distance divided by reference length; may exceed 1."""
    reference = list(reference)
    if not reference:
        raise ValueError("reference must be non-empty")
    return levenshtein(hypothesis, reference) / len(reference)


def align_reference(reference, hypothesis) -> list[str]:
    """Per-reference-position op ('match' | 'sub' | 'del') from one optimal
    alignment; the backtrace prefers diagonal, then deletion, then insertion."""
    ref, hyp = list(reference), list(hypothesis)
    n, m = len(ref), len(hyp)
    D = np.zeros((n + 1, m + 1), dtype=np.int64)
    D[:, 0] = np.arange(n + 1)
    D[0, :] = np.arange(m + 1)
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            D[i, j] = min(D[i - 1, j - 1] + (ref[i - 1] != hyp[j - 1]),
                          D[i - 1, j] + 1, D[i, j - 1] + 1)
    ops = ["del"] * n
    i, j = n, m
    while i > 0 or j > 0:
        if i > 0 and j > 0 and D[i, j] == D[i - 1, j - 1] + (ref[i - 1] != hyp[j - 1]):
            ops[i - 1] = "match" if ref[i - 1] == hyp[j - 1] else "sub"
            i, j = i - 1, j - 1
        elif i > 0 and D[i, j] == D[i - 1, j] + 1:
            ops[i - 1] = "del"
            i -= 1
        else:
            j -= 1
    return ops


def reading_is_correct(reference, hypothesis, span: tuple[int, int]) -> bool:
    """True when every reference position of `span` aligns as an exact match."""
    ops = align_reference(reference, hypothesis)
    return all(op == "match" for op in ops[span[0] : span[1]])


def corpus_token_error_rate(references, hypotheses) -> float:
    """Total edit distance over total reference length."""
    if len(references) != len(hypotheses):
        raise ValueError("reference/hypothesis count mismatch")
    dist = sum(levenshtein(h, r) for r, h in zip(references, hypotheses))
    total = sum(len(r) for r in references)
    if total == 0:
        raise ValueError("empty references")
    return dist / total


def _focus_span(spec: LanguageSpec, item: EvalItem) -> tuple[int, int]:
    pos = item.chars.index(item.focus_char)
    _, spans = pronounce_with_spans(spec, item.chars)
    return spans[pos]


def score_focus_accuracy(spec: LanguageSpec, items, hypotheses) -> float:
    """Fraction of items whose focus character's reading is emitted intact."""
    ok = sum(reading_is_correct(item.phonemes, hyp, _focus_span(spec, item))
             for item, hyp in zip(items, hypotheses))
    return ok / len(items)


def score_heteronyms(spec: LanguageSpec, items, hypotheses):
    """Error averaged per (character, reading) group, plus per-group detail."""
    groups: dict[tuple[str, tuple[str, ...]], list[bool]] = {}
    for item, hyp in zip(items, hypotheses):
        key = (item.focus_char, item.focus_reading)
        ok = reading_is_correct(item.phonemes, hyp, _focus_span(spec, item))
        groups.setdefault(key, []).append(ok)
    per_group = {k: 1.0 - float(np.mean(v)) for k, v in sorted(groups.items())}
    avg = float(np.mean(list(per_group.values())))
    return avg, per_group


# ---------------------------------------------------------------------------
# JSON serialization


def spec_to_dict(spec: LanguageSpec) -> dict:
    return {
        "seed": spec.seed,
        "language_id": spec.language_id,
        "window": spec.window,
        "phonemes": list(spec.phonemes),
        "characters": {
            c: {"class": cs.klass,
                "readings": [list(r) for r in cs.readings],
                "triggers": [list(t) for t in cs.triggers]}
            for c, cs in sorted(spec.characters.items())
        },
        "words": {w: list(r) for w, r in sorted(spec.words.items())},
        "frequency_order": list(spec.frequency_order),
    }


def spec_from_dict(d: dict) -> LanguageSpec:
    characters = {
        c: CharacterSpec(c, v["class"],
                         tuple(tuple(r) for r in v["readings"]),
                         tuple(tuple(t) for t in v["triggers"]))
        for c, v in d["characters"].items()
    }
    spec = LanguageSpec(d["seed"], d["language_id"], d["window"], tuple(d["phonemes"]),
                        characters, {w: tuple(r) for w, r in d["words"].items()},
                        tuple(d["frequency_order"]))
    validate_spec(spec)
    return spec


def corpus_to_dict(corpus: Corpus) -> dict:
    return {"utterances": [
        {"chars": u.chars, "lang": u.lang, "phonemes": list(u.phonemes), "split": u.split}
        for u in corpus.utterances
    ]}


def corpus_from_dict(d: dict) -> Corpus:
    return Corpus([Utterance(u["chars"], tuple(u["phonemes"]), u["lang"], u["split"])
                   for u in d["utterances"]])


def evalset_to_dict(es: EvalSet) -> dict:
    items = []
    for it in es.items:
        obj = {"chars": it.chars, "lang": it.lang, "phonemes": list(it.phonemes)}
        if it.focus_char is not None:
            obj["focus_char"] = it.focus_char
        if it.focus_reading is not None:
            obj["focus_reading"] = list(it.focus_reading)
        items.append(obj)
    return {"items": items, "kind": es.kind}


def evalset_from_dict(d: dict) -> EvalSet:
    items = [EvalItem(o["chars"], tuple(o["phonemes"]), o["lang"],
                      o.get("focus_char"),
                      tuple(o["focus_reading"]) if "focus_reading" in o else None)
             for o in d["items"]]
    return EvalSet(d["kind"], items)


def save_json(obj: dict, path) -> None:
    """Canonical JSON output: UTF-8, sorted keys, LF endings."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(obj, fh, ensure_ascii=False, sort_keys=True, indent=1)
        fh.write("\n")


def load_json(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)
