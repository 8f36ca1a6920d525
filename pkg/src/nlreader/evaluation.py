"""Scoring of trained models on general, rare and heteronym test sets."""

from __future__ import annotations

from dataclasses import dataclass

from . import model as md, synthlang as sl
from .lexicon import Lexicon


def synthesize_texts(texts, lexicon: Lexicon, config: md.ModelConfig, params,
                     external_store=None, lang_id: int = 0,
                     batch_size: int = 16) -> list[tuple[str, ...]]:
    """Greedy-decoded phoneme sequences for a list of input strings."""
    variant = md.build_variant(config, params, external_store) if config.t2k_enabled else None
    out: list[tuple[str, ...]] = []
    for i in range(0, len(texts), batch_size):
        chunk = texts[i : i + batch_size]
        results = md.synthesize_batch(chunk, lexicon, config, params, variant,
                                      lang_id=lang_id, collect_alignment=False)
        out.extend(r.phonemes for r in results)
    return out


@dataclass
class EvalOutcome:
    kind: str
    token_error_rate: float
    focus_accuracy: float | None = None
    heteronym_error: float | None = None
    n_items: int = 0

    def to_dict(self) -> dict:
        d = {"kind": self.kind, "n_items": self.n_items,
             "token_error_rate": self.token_error_rate}
        if self.focus_accuracy is not None:
            d["focus_accuracy"] = self.focus_accuracy
        if self.heteronym_error is not None:
            d["heteronym_error"] = self.heteronym_error
        return d


def evaluate_general(utts, lexicon, config, params, external_store=None,
                     lang_id: int | None = None) -> EvalOutcome:
    """Corpus token error rate on held-out utterances."""
    texts = [u.chars for u in utts]
    lid = utts[0].lang if lang_id is None else lang_id
    hyps = synthesize_texts(texts, lexicon, config, params, external_store, lid)
    ter = sl.corpus_token_error_rate([u.phonemes for u in utts], hyps)
    return EvalOutcome("general", ter, n_items=len(utts))


def evaluate_rare(spec, items, lexicon, config, params, external_store=None,
                  lang_id: int | None = None) -> EvalOutcome:
    """TER plus per-rare-character reading accuracy."""
    lid = items[0].lang if lang_id is None else lang_id
    hyps = synthesize_texts([it.chars for it in items], lexicon, config, params,
                            external_store, lid)
    ter = sl.corpus_token_error_rate([it.phonemes for it in items], hyps)
    acc = sl.score_focus_accuracy(spec, items, hyps)
    return EvalOutcome("rare", ter, focus_accuracy=acc, n_items=len(items))


def evaluate_heteronym(spec, items, lexicon, config, params, external_store=None,
                       lang_id: int | None = None) -> EvalOutcome:
    """TER plus error averaged per (character, reading) group."""
    lid = items[0].lang if lang_id is None else lang_id
    hyps = synthesize_texts([it.chars for it in items], lexicon, config, params,
                            external_store, lid)
    ter = sl.corpus_token_error_rate([it.phonemes for it in items], hyps)
    err, _ = sl.score_heteronyms(spec, items, hyps)
    return EvalOutcome("heteronym", ter, heteronym_error=err, n_items=len(items))
