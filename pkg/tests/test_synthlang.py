from functools import lru_cache

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nlreader import synthlang as sl


SMALL = sl.GenerationParams(n_regular=80, n_heteronym=12, n_rare=10,
                            n_phonemes=20, n_words=15)


@pytest.fixture(scope="module")
def spec():
    return sl.generate_language(7, SMALL)


@pytest.fixture(scope="module")
def corpus(spec):
    return sl.sample_corpus(spec, 300, seed=11, n_eval=20)


def brute_force_pronounce(spec, chars):
    """Independent re-implementation of the trigger-window reading rule."""
    result = []
    for i, c in enumerate(chars):
        cs = spec.characters[c]
        neighbors = set()
        for d in range(-spec.window, spec.window + 1):
            if d != 0 and 0 <= i + d < len(chars):
                neighbors.add(chars[i + d])
        chosen = 0
        for k in range(len(cs.readings)):
            if set(cs.triggers[k]) & neighbors:
                chosen = k
                break
        result.extend(cs.readings[chosen])
    return tuple(result)


class TestGenerateLanguage:
    def test_same_seed_equal_specs(self):
        assert sl.generate_language(3, SMALL) == sl.generate_language(3, SMALL)

    def test_default_sizes(self):
        big = sl.generate_language(1)
        assert len(big.characters) == 700
        assert len(big.phonemes) == 40
        assert len(big.words) == 80

    def test_zero_heteronyms_is_valid(self):
        spec = sl.generate_language(5, sl.GenerationParams(
            n_regular=40, n_heteronym=0, n_rare=5, n_phonemes=10, n_words=5))
        assert spec.chars_of_class("heteronym") == []

    def test_infeasible_triggers_rejected(self):
        with pytest.raises(ValueError, match="infeasible"):
            sl.generate_language(0, sl.GenerationParams(
                n_regular=4, n_heteronym=2, n_rare=0, n_phonemes=10, n_words=0))

    def test_invariants(self, spec):
        sl.validate_spec(spec)
        rare = set(spec.chars_of_class("rare"))
        assert all(not rare & set(w) for w in spec.words)
        for cs in spec.characters.values():
            if cs.klass == "heteronym":
                assert 2 <= len(cs.readings) <= 3
                flat = [t for trig in cs.triggers for t in trig]
                assert len(flat) == len(set(flat))


class TestReferencePronounce:
    def test_all_regular_concatenation(self, spec):
        regs = spec.chars_of_class("regular")[:5]
        text = "".join(regs)
        expect = tuple(p for c in regs for p in spec.characters[c].readings[0])
        assert sl.reference_pronounce(spec, text) == expect

    def test_adjacent_trigger_selects_reading(self, spec):
        h = spec.chars_of_class("heteronym")[0]
        cs = spec.characters[h]
        trig = cs.triggers[1][0]
        got = sl.reference_pronounce(spec, h + trig)
        assert got[: len(cs.readings[1])] == cs.readings[1]

    def test_matches_brute_force_on_random_sequences(self, spec):
        rng = np.random.default_rng(0)
        alphabet = sorted(spec.characters)
        for _ in range(1000):
            n = int(rng.integers(1, 12))
            text = "".join(alphabet[i] for i in rng.integers(0, len(alphabet), size=n))
            assert sl.reference_pronounce(spec, text) == brute_force_pronounce(spec, text)

    def test_unknown_character(self, spec):
        with pytest.raises(KeyError):
            sl.reference_pronounce(spec, "Z")

    def test_spans_partition_output(self, spec):
        text = "".join(sorted(spec.characters)[:8])
        phonemes, spans = sl.pronounce_with_spans(spec, text)
        assert spans[0][0] == 0 and spans[-1][1] == len(phonemes)
        for (a, b), (c, d) in zip(spans, spans[1:]):
            assert b == c


class TestRenderLexicon:
    def test_regular_grammar_instance(self):
        assert sl.render_entry((("p3", "p17"),), ((),)) == "[p3 p17];"

    def test_heteronym_segment_counts(self, spec):
        lex = sl.render_lexicon(spec)
        for h in spec.chars_of_class("heteronym"):
            text = lex.get(h).entry_text
            n = len(spec.characters[h].readings)
            assert text.count("[") == n and text.count(";") == n

    def test_round_trip_readings(self, spec):
        lex = sl.render_lexicon(spec)
        for c, cs in spec.characters.items():
            assert tuple(sl.parse_entry_readings(lex.get(c).entry_text)) == cs.readings
        for w, reading in spec.words.items():
            assert sl.parse_entry_readings(lex.get(w).entry_text) == [reading]

    def test_word_and_char_entries_coexist(self, spec):
        lex = sl.render_lexicon(spec)
        assert len(lex) == len(spec.characters) + len(spec.words)


class TestSampleCorpus:
    def test_rare_chars_once_in_full(self, spec, corpus):
        for c in spec.chars_of_class("rare"):
            bearing = [u for u in corpus.train() if c in u.chars]
            assert len(bearing) == 1
            assert bearing[0].chars.count(c) == 1

    def test_eval_split_has_no_rare(self, spec, corpus):
        rare = set(spec.chars_of_class("rare"))
        assert all(not rare & set(u.chars) for u in corpus.eval())

    def test_targets_match_oracle(self, spec, corpus):
        for u in corpus.utterances:
            assert u.phonemes == sl.reference_pronounce(spec, u.chars)

    def test_lengths_in_range(self, corpus):
        assert all(5 <= len(u.chars) <= 20 for u in corpus.utterances)

    def test_distinct_seeds_differ(self, spec):
        a = sl.sample_corpus(spec, 50, seed=1)
        b = sl.sample_corpus(spec, 50, seed=2)
        assert a != b

    def test_same_seed_identical(self, spec):
        a = sl.sample_corpus(spec, 50, seed=3)
        b = sl.sample_corpus(spec, 50, seed=3)
        assert a == b

    def test_infeasible_n(self, spec):
        with pytest.raises(ValueError):
            sl.sample_corpus(spec, 5, seed=0)


class TestDownsample:
    def test_identity_at_one(self, spec, corpus):
        out = sl.downsample(corpus, 1.0, seed=5, spec=spec)
        assert out == corpus

    def test_half_drops_all_rare(self, spec, corpus):
        out = sl.downsample(corpus, 0.5, seed=5, spec=spec)
        rare = set(spec.chars_of_class("rare"))
        assert len(out.train()) == 150
        assert all(not rare & set(u.chars) for u in out.train())
        assert out.eval() == corpus.eval()

    def test_nesting(self, spec, corpus):
        half = sl.downsample(corpus, 0.5, seed=5, spec=spec)
        quarter = sl.downsample(corpus, 0.25, seed=5, spec=spec)
        half_set = {u.chars for u in half.train()}
        assert all(u.chars in half_set for u in quarter.train())

    def test_bad_fraction(self, spec, corpus):
        with pytest.raises(ValueError):
            sl.downsample(corpus, 0.0, seed=1, spec=spec)


class TestRareSet:
    def test_one_utterance_per_rare_char(self, spec):
        rs = sl.build_rare_set(spec)
        rare = spec.chars_of_class("rare")
        assert len(rs.items) == len(rare)
        for item, c in zip(rs.items, rare):
            assert item.focus_char == c
            assert sum(ch == c for ch in item.chars) == 1

    def test_no_heteronyms(self, spec):
        het = set(spec.chars_of_class("heteronym"))
        rs = sl.build_rare_set(spec)
        assert all(not het & set(item.chars) for item in rs.items)

    def test_targets_match_oracle(self, spec):
        for item in sl.build_rare_set(spec).items:
            assert item.phonemes == sl.reference_pronounce(spec, item.chars)


class TestHeteronymSet:
    def test_groups_exclude_majority(self, spec, corpus):
        hs = sl.build_heteronym_set(spec, corpus)
        counts = sl.count_reading_frequencies(spec, corpus)
        for item in hs.items:
            majority = int(np.argmax(counts[item.focus_char]))
            assert item.focus_reading != spec.characters[item.focus_char].readings[majority]

    def test_oracle_gives_intended_reading(self, spec, corpus):
        hs = sl.build_heteronym_set(spec, corpus)
        for item in hs.items:
            pos = item.chars.index(item.focus_char)
            k = sl.choose_reading(spec, item.chars, pos)
            assert spec.characters[item.focus_char].readings[k] == item.focus_reading

    def test_majority_predictor_scores_full_error(self, spec, corpus):
        hs = sl.build_heteronym_set(spec, corpus)
        counts = sl.count_reading_frequencies(spec, corpus)
        hyps = []
        for item in hs.items:
            majority = int(np.argmax(counts[item.focus_char]))
            out = []
            for i, c in enumerate(item.chars):
                if c == item.focus_char:
                    out.extend(spec.characters[c].readings[majority])
                else:
                    out.extend(spec.characters[c].readings[sl.choose_reading(spec, item.chars, i)])
            hyps.append(tuple(out))
        err, _ = sl.score_heteronyms(spec, hs.items, hyps)
        assert err == 1.0

    def test_at_least_two_items_per_group(self, spec, corpus):
        hs = sl.build_heteronym_set(spec, corpus)
        groups = {}
        for item in hs.items:
            groups.setdefault((item.focus_char, item.focus_reading), []).append(item)
        assert all(len(v) >= 2 for v in groups.values())

    def test_uniform_random_predictor_floor(self, spec, corpus):
        hs = sl.build_heteronym_set(spec, corpus)
        rng = np.random.default_rng(99)
        errors = []
        for _ in range(200):
            hyps = []
            for item in hs.items:
                out = []
                for i, c in enumerate(item.chars):
                    if c == item.focus_char:
                        readings = spec.characters[c].readings
                        out.extend(readings[int(rng.integers(len(readings)))])
                    else:
                        out.extend(spec.characters[c].readings[sl.choose_reading(spec, item.chars, i)])
                hyps.append(tuple(out))
            errors.append(sl.score_heteronyms(spec, hs.items, hyps)[0])
        mean_readings = np.mean([len(spec.characters[item.focus_char].readings)
                                 for item in hs.items])
        assert abs(np.mean(errors) - (1 - 1 / mean_readings)) < 0.05


class TestTransferLanguage:
    def test_character_sets_equal(self, spec):
        derived = sl.derive_transfer_language(spec, seed=21)
        assert set(derived.characters) == set(spec.characters)
        assert set(derived.words) == set(spec.words)
        assert derived.language_id == spec.language_id + 1

    def test_most_readings_change(self, spec):
        derived = sl.derive_transfer_language(spec, seed=21)
        changed = sum(derived.characters[c].readings[0] != spec.characters[c].readings[0]
                      for c in spec.characters)
        assert changed / len(spec.characters) >= 0.9

    def test_deterministic(self, spec):
        assert sl.derive_transfer_language(spec, 21) == sl.derive_transfer_language(spec, 21)

    def test_partially_overlapping_inventory(self, spec):
        derived = sl.derive_transfer_language(spec, seed=21)
        shared = set(derived.phonemes) & set(spec.phonemes)
        assert shared and set(derived.phonemes) != set(spec.phonemes)


def _lev_memo(a, b):
    @lru_cache(maxsize=None)
    def d(i, j):
        if i == 0:
            return j
        if j == 0:
            return i
        return min(d(i - 1, j) + 1, d(i, j - 1) + 1,
                   d(i - 1, j - 1) + (a[i - 1] != b[j - 1]))
    return d(len(a), len(b))


class TestTokenErrorRate:
    def test_identity(self):
        assert sl.token_error_rate(("a", "b"), ("a", "b")) == 0.0

    def test_empty_hypothesis(self):
        assert sl.token_error_rate((), ("a",) * 5) == 1.0

    def test_single_substitution(self):
        assert sl.token_error_rate(("a", "x", "c"), ("a", "b", "c")) == pytest.approx(1 / 3)

    def test_empty_reference_rejected(self):
        with pytest.raises(ValueError):
            sl.token_error_rate(("a",), ())

    def test_can_exceed_one(self):
        assert sl.token_error_rate(tuple("abcdef"), ("x",)) > 1.0

    @given(st.lists(st.sampled_from("abcd"), max_size=8),
           st.lists(st.sampled_from("abcd"), max_size=8))
    @settings(max_examples=80, deadline=None)
    def test_matches_memoized_recursion(self, a, b):
        assert sl.levenshtein(a, b) == _lev_memo(tuple(a), tuple(b))

    @given(st.lists(st.sampled_from("abc"), max_size=6),
           st.lists(st.sampled_from("abc"), max_size=6),
           st.lists(st.sampled_from("abc"), max_size=6))
    @settings(max_examples=60, deadline=None)
    def test_metric_properties(self, a, b, c):
        assert sl.levenshtein(a, b) == sl.levenshtein(b, a)
        assert sl.levenshtein(a, c) <= sl.levenshtein(a, b) + sl.levenshtein(b, c)
        assert (sl.levenshtein(a, b) == 0) == (a == b)


class TestAlignment:
    def test_all_match(self):
        assert sl.align_reference("abc", "abc") == ["match"] * 3

    def test_substitution_marked(self):
        assert sl.align_reference("abc", "axc") == ["match", "sub", "match"]

    def test_deletion_marked(self):
        ops = sl.align_reference("abc", "ac")
        assert ops[0] == "match" and ops[2] == "match" and ops[1] == "del"

    def test_reading_correct_uses_span(self):
        ref = ("x", "a", "b", "y")
        assert sl.reading_is_correct(ref, ("q", "a", "b", "y"), (1, 3))
        assert not sl.reading_is_correct(ref, ("x", "a", "z", "y"), (1, 3))


class TestSerialization:
    def test_spec_round_trip(self, spec, tmp_path):
        p = tmp_path / "spec.json"
        sl.save_json(sl.spec_to_dict(spec), p)
        assert sl.spec_from_dict(sl.load_json(p)) == spec

    def test_corpus_round_trip(self, corpus, tmp_path):
        p = tmp_path / "corpus.json"
        sl.save_json(sl.corpus_to_dict(corpus), p)
        assert sl.corpus_from_dict(sl.load_json(p)) == corpus

    def test_evalset_round_trip(self, spec, corpus, tmp_path):
        for es in (sl.build_rare_set(spec), sl.build_heteronym_set(spec, corpus)):
            p = tmp_path / f"{es.kind}.json"
            sl.save_json(sl.evalset_to_dict(es), p)
            assert sl.evalset_from_dict(sl.load_json(p)) == es

    def test_json_bytes_deterministic(self, spec, tmp_path):
        p1, p2 = tmp_path / "a.json", tmp_path / "b.json"
        sl.save_json(sl.spec_to_dict(spec), p1)
        sl.save_json(sl.spec_to_dict(spec), p2)
        assert p1.read_bytes() == p2.read_bytes()
