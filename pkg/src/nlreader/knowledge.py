"""Turn raw lexicon entry text into the key/value sequences attention consumes.

Two encoder variants:

- `char_embed` (default): values are the shared symbol embeddings of the
  entry tokens (shallow identity information, no position encoding); keys are
  one jointly-trained transformer layer applied over the embeddings plus
  sinusoidal positions, so keys can mix usage-hint context into reading
  positions.
- `external`: position-aligned deep/shallow vectors imported from a binary
  container standing in for a frozen pretrained encoder; keys are the deep
  vectors, values the concatenation of deep and shallow.

Tokens without an entry get the empty bundle: a single zero key/value slot,
which forces an exactly-zero attention context.
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, field

import numpy as np

from . import layers, numerics as nm
from .errors import DataFormatError, ShapeError
from .lexicon import Lexicon
from .numerics import ParameterSet, Tensor
from .vocab import SymbolVocab, tokenize_entry

log = logging.getLogger(__name__)

EMPTY_TOKEN = "<none>"
KNOWLEDGE_PREFIX = "knowledge."


@dataclass
class KnowledgeBundle:
    """Encoded knowledge for one token: keys [m, d_k], values [m, d_v]."""

    keys: Tensor
    values: Tensor
    valid_mask: np.ndarray
    source_text: str
    tokens: tuple[str, ...]

    def __post_init__(self):
        m = self.keys.shape[0]
        if self.values.shape[0] != m or self.valid_mask.shape != (m,):
            raise ShapeError(
                f"keys/values/mask disagree on m: {self.keys.shape}, "
                f"{self.values.shape}, {self.valid_mask.shape}"
            )
        if m < 1:
            raise ShapeError("a knowledge bundle needs m >= 1")

    @property
    def m(self) -> int:
        return self.keys.shape[0]


@dataclass(frozen=True)
class CharEmbedVariant:
    """Shared-embedding knowledge encoder; its key layer lives in `params`
    under the `knowledge.` prefix and trains jointly with the model."""

    params: ParameterSet
    vocab: SymbolVocab
    n_heads: int
    embed_name: str = "embed.symbol"

    @property
    def d_k(self) -> int:
        return self.params[self.embed_name].shape[1]

    @property
    def d_v(self) -> int:
        return self.params[self.embed_name].shape[1]


@dataclass(frozen=True)
class ExternalVariant:
    """Frozen per-headword vectors loaded from the embedding container."""

    store: dict[str, tuple[np.ndarray, np.ndarray]]
    deep_dim: int
    shallow_dim: int

    @property
    def d_k(self) -> int:
        return self.deep_dim

    @property
    def d_v(self) -> int:
        return self.deep_dim + self.shallow_dim


def init_knowledge_params(params: ParameterSet, d_model: int, d_ff: int,
                          rng: np.random.Generator) -> None:
    layers.init_attention(params, KNOWLEDGE_PREFIX + "sa.", d_model, rng)
    layers.init_ffn(params, KNOWLEDGE_PREFIX + "ffn.", d_model, d_ff, rng)


def empty_bundle(d_k: int, d_v: int) -> KnowledgeBundle:
    """Zero-key/zero-value stand-in (m=1) for tokens without lexicon entries."""
    if d_k <= 0 or d_v <= 0:
        raise ShapeError(f"bundle dims must be positive, got d_k={d_k}, d_v={d_v}")
    return KnowledgeBundle(nm.zeros((1, d_k)), nm.zeros((1, d_v)),
                           np.array([True]), "", (EMPTY_TOKEN,))


def _char_embed_encode(texts: list[str], variant: CharEmbedVariant):
    """Batched key/value computation over distinct entry texts.

    Returns (keys [D, m_max, d], values [D, m_max, d], valid [D, m_max],
    token lists). Padding positions are masked out of the key layer's
    self-attention and carry PAD embeddings in the value tensor; downstream
    attention masks them away.
    """
    tokens = [tuple(tokenize_entry(t)) for t in texts]
    if any(len(t) == 0 for t in tokens):
        raise DataFormatError("entry text tokenized to zero tokens")
    m_max = max(len(t) for t in tokens)
    ids = np.full((len(texts), m_max), variant.vocab.pad_id, dtype=np.int64)
    valid = np.zeros((len(texts), m_max), dtype=bool)
    for i, toks in enumerate(tokens):
        ids[i, : len(toks)] = variant.vocab.encode(toks)
        valid[i, : len(toks)] = True

    table = variant.params[variant.embed_name]
    values = nm.take_rows(table, ids)
    d = table.shape[1]
    x = nm.add(values, nm.tensor(layers.sinusoidal_positions(m_max, d)))
    x = layers.self_attention_block(variant.params, KNOWLEDGE_PREFIX + "sa.",
                                    variant.n_heads, x, layers.key_padding_mask(valid))
    keys = layers.feed_forward_block(variant.params, KNOWLEDGE_PREFIX + "ffn.", x)
    return keys, values, valid, tokens


def encode_entry(entry_text: str, variant, vocab: SymbolVocab | None = None,
                 headword: str | None = None) -> KnowledgeBundle:
    """Encode one entry's raw text into a key/value bundle.

    `vocab` defaults to the variant's own vocabulary for the char_embed case.
    The external variant resolves vectors by `headword` and falls back to the
    empty bundle (with a warning) when the container lacks the record.
    """
    if isinstance(variant, CharEmbedVariant):
        keys, values, valid, tokens = _char_embed_encode([entry_text], variant)
        m = len(tokens[0])
        return KnowledgeBundle(_slice_rows(keys, m), _slice_rows(values, m),
                               valid[0, :m], entry_text, tokens[0])
    if isinstance(variant, ExternalVariant):
        if headword is None or headword not in variant.store:
            log.warning("no external embedding record for headword %r; using empty bundle",
                        headword)
            return empty_bundle(variant.d_k, variant.d_v)
        deep, shallow = variant.store[headword]
        tokens = tuple(tokenize_entry(entry_text))
        if deep.shape[0] != len(tokens):
            raise DataFormatError(
                f"external record for {headword!r} has m={deep.shape[0]} but the "
                f"entry tokenizes to {len(tokens)} positions"
            )
        keys = nm.tensor(deep)
        values = nm.tensor(np.concatenate([deep, shallow], axis=1))
        return KnowledgeBundle(keys, values, np.ones(len(tokens), dtype=bool),
                               entry_text, tokens)
    raise TypeError(f"unknown encoder variant {type(variant).__name__}")


def _slice_rows(x: Tensor, m: int) -> Tensor:
    """First m rows of a [1, M, d] tensor as [m, d] (no-op slice when m == M)."""
    _, M, d = x.shape
    flat = nm.reshape(x, (M, d))
    if m == M:
        return flat
    picked = nm.take_rows(flat, np.arange(m))
    return picked


def batch_bundles(bundles: list[KnowledgeBundle]):
    """Right-pad bundles to a common length.

    Returns (keys [n, m_max, d_k], values [n, m_max, d_v], valid [n, m_max]).
    """
    if not bundles:
        raise ValueError("no bundles to batch")
    d_k = bundles[0].keys.shape[1]
    d_v = bundles[0].values.shape[1]
    for b in bundles:
        if b.keys.shape[1] != d_k or b.values.shape[1] != d_v:
            raise ShapeError(f"mixed bundle dims: ({b.keys.shape[1]}, {b.values.shape[1]}) "
                             f"vs ({d_k}, {d_v})")
    m_max = max(b.m for b in bundles)
    keys, values = [], []
    valid = np.zeros((len(bundles), m_max), dtype=bool)
    for i, b in enumerate(bundles):
        pad = m_max - b.m
        k, v = b.keys, b.values
        if pad:
            k = nm.concat([k, nm.zeros((pad, d_k))], axis=0)
            v = nm.concat([v, nm.zeros((pad, d_v))], axis=0)
        keys.append(nm.reshape(k, (1, m_max, d_k)))
        values.append(nm.reshape(v, (1, m_max, d_v)))
        valid[i, : b.m] = b.valid_mask
    return nm.concat(keys, axis=0), nm.concat(values, axis=0), valid


@dataclass
class BundleBank:
    """Distinct bundles of one batch, padded and stacked; slot 0 is empty.

    Encoding each distinct entry once per batch is both the cache and the
    fast path: token positions hold indices into the bank.
    """

    keys: Tensor          # [D, m_max, d_k]
    values: Tensor        # [D, m_max, d_v]
    valid: np.ndarray     # [D, m_max]
    tokens: list[tuple[str, ...]]
    texts: list[str]
    index_of: dict = field(default_factory=dict)

    @property
    def m_max(self) -> int:
        return self.valid.shape[1]


def build_bundle_bank(entries: list[tuple[str, str]], variant) -> BundleBank:
    """Bank over distinct (headword, entry_text) pairs; slot 0 is the empty
    bundle serving every token without an entry."""
    distinct: list[tuple[str, str]] = []
    index_of: dict[tuple[str, str], int] = {}
    for head, text in entries:
        key = (head, text)
        if key not in index_of:
            index_of[key] = len(distinct) + 1
            distinct.append(key)

    d_k = variant.d_k
    d_v = variant.d_v
    if not distinct:
        return BundleBank(nm.zeros((1, 1, d_k)), nm.zeros((1, 1, d_v)),
                          np.array([[True]]), [(EMPTY_TOKEN,)], [""], index_of)

    if isinstance(variant, CharEmbedVariant):
        keys, values, valid, tokens = _char_embed_encode([t for _, t in distinct], variant)
        m_max = valid.shape[1]
    else:
        bundles = [encode_entry(text, variant, headword=head) for head, text in distinct]
        keys, values, valid = batch_bundles(bundles)
        tokens = [b.tokens for b in bundles]
        m_max = valid.shape[1]

    empty_valid = np.zeros((1, m_max), dtype=bool)
    empty_valid[0, 0] = True
    bank_keys = nm.concat([nm.zeros((1, m_max, d_k)), keys], axis=0)
    bank_values = nm.concat([nm.zeros((1, m_max, d_v)), values], axis=0)
    bank_valid = np.concatenate([empty_valid, valid], axis=0)
    return BundleBank(bank_keys, bank_values, bank_valid,
                      [(EMPTY_TOKEN,)] + [tuple(t) for t in tokens],
                      [""] + [t for _, t in distinct], index_of)


# ---------------------------------------------------------------------------
# external embedding container ("NLRE": deep/shallow vectors per headword)

_MAGIC = b"NLRE"


def write_external_embeddings(path, records: dict[str, tuple[np.ndarray, np.ndarray]]) -> None:
    """Write the binary container; records map headword -> (deep [m, dd],
    shallow [m, ds]) float arrays."""
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", len(records)))
        for head in sorted(records):
            deep, shallow = records[head]
            deep = np.asarray(deep, dtype=np.float32)
            shallow = np.asarray(shallow, dtype=np.float32)
            if deep.ndim != 2 or shallow.ndim != 2 or deep.shape[0] != shallow.shape[0]:
                raise ValueError(f"record {head!r}: deep/shallow must be [m, dim] with equal m")
            raw = head.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<III", deep.shape[0], deep.shape[1], shallow.shape[1]))
            fh.write(deep.tobytes(order="C"))
            fh.write(shallow.tobytes(order="C"))


def import_external_embeddings(path) -> dict[str, tuple[np.ndarray, np.ndarray]]:
    """Read the container back; all records must agree on deep/shallow dims."""
    with open(path, "rb") as fh:
        blob = fh.read()
    view = memoryview(blob)
    off = 0

    def take(n: int) -> memoryview:
        nonlocal off
        if off + n > len(view):
            raise DataFormatError(f"{path}: truncated container (needed {n} bytes at {off})")
        out = view[off : off + n]
        off += n
        return out

    if bytes(take(4)) != _MAGIC:
        raise DataFormatError(f"{path}: bad magic, not an external embedding container")
    (count,) = struct.unpack("<I", take(4))
    store: dict[str, tuple[np.ndarray, np.ndarray]] = {}
    dims: tuple[int, int] | None = None
    for _ in range(count):
        (hlen,) = struct.unpack("<I", take(4))
        head = bytes(take(hlen)).decode("utf-8")
        m, dd, ds = struct.unpack("<III", take(12))
        if dims is None:
            dims = (dd, ds)
        elif dims != (dd, ds):
            raise DataFormatError(
                f"{path}: record {head!r} has dims ({dd}, {ds}) but earlier records "
                f"use {dims}"
            )
        deep = np.frombuffer(take(4 * m * dd), dtype="<f4").reshape(m, dd).astype(np.float64)
        shallow = np.frombuffer(take(4 * m * ds), dtype="<f4").reshape(m, ds).astype(np.float64)
        store[head] = (deep, shallow)
    if off != len(view):
        raise DataFormatError(f"{path}: {len(view) - off} trailing bytes after last record")
    return store


def external_variant_from_file(path, lexicon: Lexicon | None = None) -> ExternalVariant:
    """Load the container into a frozen variant; when a lexicon is supplied,
    every record's position count must match its entry's token count."""
    store = import_external_embeddings(path)
    if not store:
        raise DataFormatError(f"{path}: container holds no records")
    any_deep, any_shallow = next(iter(store.values()))
    variant = ExternalVariant(store, any_deep.shape[1], any_shallow.shape[1])
    if lexicon is not None:
        for head, (deep, _) in store.items():
            entry = lexicon.get(head)
            if entry is None:
                continue
            n_tok = len(tokenize_entry(entry.entry_text))
            if deep.shape[0] != n_tok:
                raise DataFormatError(
                    f"external record {head!r} has m={deep.shape[0]} but the lexicon "
                    f"entry tokenizes to {n_tok} positions"
                )
    return variant
