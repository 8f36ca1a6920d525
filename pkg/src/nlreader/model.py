"""Character-input encoder/decoder with per-token knowledge attention.

Encoder layer 1 is plain self-attention + feed-forward; every later layer
inserts a knowledge-attention sublayer where each token attends, with
layer-shared parameters, to the encoded text of its own lexicon entry and is
updated as layer_norm(context + hidden). The 4-layer decoder is a standard
causal transformer over phoneme tokens. Disabling `t2k_enabled` yields the
ablation baseline (same model minus the knowledge sublayers).
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field, asdict

import numpy as np

from . import layers, numerics as nm
from .errors import ConfigMismatchError, DataFormatError, ShapeError, TrainingDivergence
from .knowledge import (BundleBank, CharEmbedVariant, ExternalVariant, batch_bundles,
                        build_bundle_bank, init_knowledge_params)
from .lexicon import Lexicon, LookupPolicy, lookup
from .numerics import ParameterSet, Tensor
from .vocab import PhonemeVocab, SymbolVocab

CHECKPOINT_MAGIC = b"NLR1"
CHECKPOINT_VERSION = 1


@dataclass
class ModelConfig:
    """Model hyperparameters plus the symbol inventories (kept inline so
    checkpoints are self-contained)."""

    input_symbols: tuple[str, ...]
    phoneme_symbols: tuple[str, ...]
    d_model: int = 64
    n_heads: int = 4
    n_encoder_layers: int = 3
    n_decoder_layers: int = 4
    d_ff: int = 256
    max_input_len: int = 32
    max_output_len: int = 96
    t2k_enabled: bool = True
    lookup_mode: str = "character"
    max_word_len: int = 4
    encoder_variant: str = "char_embed"
    external_deep_dim: int = 0
    external_shallow_dim: int = 0
    n_languages: int = 0
    dropout: float = 0.0
    seed: int = 0

    def __post_init__(self):
        self.input_symbols = tuple(self.input_symbols)
        self.phoneme_symbols = tuple(self.phoneme_symbols)
        if self.d_model % self.n_heads:
            raise ValueError(f"d_model={self.d_model} not divisible by n_heads={self.n_heads}")
        if self.t2k_enabled and self.n_encoder_layers < 2:
            raise ValueError("knowledge attention occupies layers 2..n; need >= 2 encoder layers")
        if self.encoder_variant not in ("char_embed", "external"):
            raise ValueError(f"unknown encoder variant {self.encoder_variant!r}")
        if self.encoder_variant == "external" and self.t2k_enabled:
            if self.external_deep_dim <= 0 or self.external_shallow_dim <= 0:
                raise ValueError("external variant needs positive deep/shallow dims")

    def symbol_vocab(self) -> SymbolVocab:
        return SymbolVocab(self.input_symbols)

    def phoneme_vocab(self) -> PhonemeVocab:
        return PhonemeVocab(self.phoneme_symbols)

    def lookup_policy(self) -> LookupPolicy:
        return LookupPolicy(self.lookup_mode, self.max_word_len)

    def knowledge_dims(self) -> tuple[int, int]:
        if self.encoder_variant == "external":
            return self.external_deep_dim, self.external_deep_dim + self.external_shallow_dim
        return self.d_model, self.d_model

    def to_dict(self) -> dict:
        d = asdict(self)
        d["input_symbols"] = list(self.input_symbols)
        d["phoneme_symbols"] = list(self.phoneme_symbols)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


@dataclass(frozen=True)
class Utterance:
    """Model-side sample: symbol ids in, phoneme ids (ending in EOS) out."""

    input_ids: np.ndarray
    target_ids: np.ndarray
    lang_id: int = 0

    def __post_init__(self):
        if self.target_ids.size == 0:
            raise ValueError("target must be non-empty (at least EOS)")


@dataclass
class EncoderState:
    """Hidden sequence per layer, including the embedding layer h_0."""

    hiddens: list[np.ndarray]


@dataclass
class AlignmentMap:
    """Knowledge-attention weights per layer/head/input token."""

    input_tokens: list[str]
    layers: dict[int, np.ndarray]          # layer -> [n_heads, n_tokens, m_max]
    knowledge_tokens: list[tuple[str, ...]]  # per input token
    valid_lens: list[int]                   # per input token

    def weight_rows(self):
        """Yield (layer, head, token_index, weights-over-valid-positions)."""
        for layer in sorted(self.layers):
            w = self.layers[layer]
            for head in range(w.shape[0]):
                for j in range(w.shape[1]):
                    yield layer, head, j, w[head, j, : self.valid_lens[j]]


@dataclass
class EncoderResult:
    memory: Tensor
    alignment: AlignmentMap | None
    state: EncoderState
    t2k_trace: list = field(default_factory=list)


@dataclass
class SynthesisResult:
    phonemes: tuple[str, ...]
    truncated: bool
    alignment: AlignmentMap | None


# ---------------------------------------------------------------------------
# parameters


def init_params(config: ModelConfig, rng: np.random.Generator | None = None) -> ParameterSet:
    """Create all trainable tensors in a fixed order from the config seed."""
    rng = rng or np.random.default_rng(config.seed)
    params = ParameterSet()
    d, d_ff = config.d_model, config.d_ff
    layers.init_embedding(params, "embed.symbol", len(config.input_symbols), d, rng)
    layers.init_embedding(params, "embed.phoneme", len(config.phoneme_symbols), d, rng)
    if config.n_languages > 0:
        layers.init_embedding(params, "embed.language", config.n_languages, d, rng)
    d_k, d_v = config.knowledge_dims()
    for i in range(1, config.n_encoder_layers + 1):
        pfx = f"encoder.l{i}."
        layers.init_attention(params, pfx + "sa.", d, rng)
        if config.t2k_enabled and i >= 2:
            layers.init_attention(params, pfx + "t2k.", d, rng, d_k_in=d_k, d_v_in=d_v)
        layers.init_ffn(params, pfx + "ffn.", d, d_ff, rng)
    if config.t2k_enabled and config.encoder_variant == "char_embed":
        init_knowledge_params(params, d, d_ff, rng)
    for j in range(1, config.n_decoder_layers + 1):
        pfx = f"decoder.l{j}."
        layers.init_attention(params, pfx + "sa.", d, rng)
        layers.init_attention(params, pfx + "cross.", d, rng)
        layers.init_ffn(params, pfx + "ffn.", d, d_ff, rng)
    layers.init_projection(params, "out.w", d, len(config.phoneme_symbols), rng)
    params.add("out.b", nm.zeros(len(config.phoneme_symbols), requires_grad=True))
    return params


def build_variant(config: ModelConfig, params: ParameterSet,
                  external_store: dict | None = None):
    if config.encoder_variant == "char_embed":
        return CharEmbedVariant(params, config.symbol_vocab(), config.n_heads)
    if external_store is None:
        raise ValueError("external encoder variant needs an embedding store")
    return ExternalVariant(external_store, config.external_deep_dim,
                           config.external_shallow_dim)


# ---------------------------------------------------------------------------
# encoding helpers


def encode_sample(sample, config: ModelConfig, lang_id: int | None = None) -> Utterance:
    """Symbol/phoneme ids for a corpus utterance or eval item."""
    sv, pv = config.symbol_vocab(), config.phoneme_vocab()
    if len(sample.chars) > config.max_input_len:
        raise ValueError(f"input length {len(sample.chars)} exceeds max {config.max_input_len}")
    target = pv.encode_target(sample.phonemes)
    if len(target) > config.max_output_len:
        raise ValueError(f"target length {len(target)} exceeds max {config.max_output_len}")
    return Utterance(sv.encode(list(sample.chars)), target,
                     sample.lang if lang_id is None else lang_id)


def encode_text(text: str, config: ModelConfig, lang_id: int = 0) -> Utterance:
    sv = config.symbol_vocab()
    if len(text) > config.max_input_len:
        raise ValueError(f"input length {len(text)} exceeds max {config.max_input_len}")
    return Utterance(sv.encode(list(text)), np.array([config.phoneme_vocab().eos_id]),
                     lang_id)


def embed_inputs(utt: Utterance, config: ModelConfig, params: ParameterSet) -> Tensor:
    """h_0 for one utterance: symbol embedding + positions (+ language)."""
    h = _embed_batch([utt], config, params, len(utt.input_ids) or 1)
    return nm.reshape(h, (h.shape[1], h.shape[2]))


def _embed_batch(utts, config: ModelConfig, params: ParameterSet, n_max: int) -> Tensor:
    pad = config.symbol_vocab().pad_id
    ids = np.full((len(utts), n_max), pad, dtype=np.int64)
    for b, u in enumerate(utts):
        if u.input_ids.size and (u.input_ids.min() < 0 or u.input_ids.max() >= len(config.input_symbols)):
            raise ShapeError(f"input id out of range for vocabulary of {len(config.input_symbols)}")
        ids[b, : len(u.input_ids)] = u.input_ids
    h = nm.take_rows(params["embed.symbol"], ids)
    h = nm.add(h, nm.tensor(layers.sinusoidal_positions(n_max, config.d_model)))
    if config.n_languages > 0:
        lang_ids = np.array([u.lang_id for u in utts], dtype=np.int64)
        if lang_ids.min() < 0 or lang_ids.max() >= config.n_languages:
            raise ShapeError(f"language id out of range for {config.n_languages} languages")
        le = nm.take_rows(params["embed.language"], lang_ids)
        h = nm.add(h, nm.reshape(le, (len(utts), 1, config.d_model)))
    return h


def _input_valid(utts, n_max: int) -> np.ndarray:
    valid = np.zeros((len(utts), n_max), dtype=bool)
    for b, u in enumerate(utts):
        valid[b, : len(u.input_ids)] = True
    return valid


# ---------------------------------------------------------------------------
# public attention surfaces


def multi_head_attention(queries: Tensor, keys: Tensor, values: Tensor, mask,
                         params: ParameterSet, prefix: str, n_heads: int):
    """Single-sequence attention: queries [q, d_model], keys [m, d_k],
    values [m, d_v], mask [m] -> contexts [q, d_model], weights [h, q, m]."""
    q, m = queries.shape[0], keys.shape[0]
    mask = np.asarray(mask, dtype=bool).reshape(1, 1, 1, m)
    ctx, w = layers.multi_head_attention(
        params, prefix, n_heads,
        nm.reshape(queries, (1,) + queries.shape),
        nm.reshape(keys, (1,) + keys.shape),
        nm.reshape(values, (1,) + values.shape),
        mask)
    return nm.reshape(ctx, (q, ctx.shape[-1])), nm.reshape(w, (n_heads, q, m))


def token2knowledge_sublayer(h: Tensor, bundles, params: ParameterSet, prefix: str,
                             n_heads: int):
    """Per-token knowledge attention with layer-shared parameters.

    `h` is [n, d_model] and `bundles` holds exactly one KnowledgeBundle per
    token. Each token attends only to its own bundle; the sublayer output is
    layer_norm(context + h). Also returns weights [h, n, m_max].
    """
    n = h.shape[0]
    if len(bundles) != n:
        raise ShapeError(f"{len(bundles)} bundles for {n} tokens")
    keys, values, valid = batch_bundles(list(bundles))
    q = nm.reshape(nm.matmul(h, params[prefix + "wq"]), (n, 1, h.shape[1]))
    k = nm.matmul(keys, params[prefix + "wk"])
    v = nm.matmul(values, params[prefix + "wv"])
    ctx, w = layers.attention_core(q, k, v, params[prefix + "wo"],
                                   layers.key_padding_mask(valid), n_heads)
    ctx = nm.reshape(ctx, (n, h.shape[1]))
    out = layers.residual_ln(params, prefix + "ln.", h, ctx)
    weights = np.transpose(w.data.reshape(n, n_heads, valid.shape[1]), (1, 0, 2))
    return out, weights


def _t2k_attention(params, prefix: str, n_heads: int, h: Tensor,
                   bank: BundleBank, index: np.ndarray):
    """Bank-based knowledge attention for a batch: h [B, n, D], index [B, n]."""
    B, n, D = h.shape
    q = nm.reshape(nm.matmul(h, params[prefix + "wq"]), (B * n, 1, D))
    k_bank = nm.matmul(bank.keys, params[prefix + "wk"])
    v_bank = nm.matmul(bank.values, params[prefix + "wv"])
    flat = index.reshape(-1)
    ctx, w = layers.attention_core(q, nm.take_rows(k_bank, flat),
                                   nm.take_rows(v_bank, flat),
                                   params[prefix + "wo"],
                                   layers.key_padding_mask(bank.valid[flat]), n_heads)
    weights = w.data.reshape(B, n, n_heads, bank.m_max)
    return nm.reshape(ctx, (B, n, D)), weights


# ---------------------------------------------------------------------------
# encoder / decoder


def _resolve_bundles(utts, lexicon: Lexicon, config: ModelConfig, variant):
    """Bank over the batch's distinct entries plus a per-position index
    (slot 0 = empty bundle for tokens without entries and padding)."""
    sv = config.symbol_vocab()
    policy = config.lookup_policy()
    per_pos: list[list[tuple[str, str] | None]] = []
    entries: list[tuple[str, str]] = []
    for u in utts:
        tokens = sv.decode(u.input_ids)
        row: list[tuple[str, str] | None] = []
        for j in range(len(tokens)):
            text, span = lookup(lexicon, tokens, j, policy)
            if text is None:
                row.append(None)
            else:
                head = "".join(tokens[span[0] : span[1]])
                row.append((head, text))
                entries.append((head, text))
        per_pos.append(row)
    bank = build_bundle_bank(entries, variant)
    n_max = max((len(r) for r in per_pos), default=0)
    index = np.zeros((len(utts), n_max), dtype=np.int64)
    for b, row in enumerate(per_pos):
        for j, pair in enumerate(row):
            index[b, j] = 0 if pair is None else bank.index_of[pair]
    return bank, index


def _encode_batch(utts, lexicon: Lexicon, config: ModelConfig, params: ParameterSet,
                  variant=None, collect_alignment: bool = False,
                  collect_trace: bool = False, t2k_force_identity: bool = False,
                  drop=None):
    n_max = max((len(u.input_ids) for u in utts), default=0)
    h = _embed_batch(utts, config, params, n_max)
    h = _maybe_drop(h, drop)
    valid = _input_valid(utts, n_max)
    hiddens = [h.data]

    use_t2k = config.t2k_enabled and not t2k_force_identity
    bank = index = None
    if use_t2k:
        if variant is None:
            variant = build_variant(config, params)
        bank, index = _resolve_bundles(utts, lexicon, config, variant)

    align: dict[int, np.ndarray] = {}
    trace = []
    attn_mask = layers.key_padding_mask(valid)
    for i in range(1, config.n_encoder_layers + 1):
        pfx = f"encoder.l{i}."
        h = layers.self_attention_block(params, pfx + "sa.", config.n_heads, h, attn_mask)
        if use_t2k and i >= 2:
            pre = h
            ctx, weights = _t2k_attention(params, pfx + "t2k.", config.n_heads, h, bank, index)
            h = layers.residual_ln(params, pfx + "t2k.ln.", h, ctx)
            if collect_alignment:
                align[i] = weights
            if collect_trace:
                trace.append((i, pre.data, ctx.data, h.data))
        h = layers.feed_forward_block(params, pfx + "ffn.", h)
        hiddens.append(h.data)
    return h, valid, hiddens, align, trace, bank, index


def _alignment_for(b: int, utts, config, align, bank, index) -> AlignmentMap | None:
    if not align:
        return None
    sv = config.symbol_vocab()
    n_b = len(utts[b].input_ids)
    tokens = sv.decode(utts[b].input_ids)
    slots = index[b, :n_b]
    know_tokens = [bank.tokens[s] for s in slots]
    valid_lens = [int(bank.valid[s].sum()) for s in slots]
    layers_w = {layer: np.transpose(w[b, :n_b], (1, 0, 2)) for layer, w in align.items()}
    return AlignmentMap(tokens, layers_w, know_tokens, valid_lens)


def encoder_forward(utt: Utterance, lexicon: Lexicon, config: ModelConfig,
                    params: ParameterSet, variant=None,
                    collect_trace: bool = False,
                    t2k_force_identity: bool = False) -> EncoderResult:
    """Memory and knowledge-attention alignments for a single utterance."""
    h, valid, hiddens, align, trace, bank, index = _encode_batch(
        [utt], lexicon, config, params, variant,
        collect_alignment=True, collect_trace=collect_trace,
        t2k_force_identity=t2k_force_identity)
    n = len(utt.input_ids)
    memory = nm.reshape(h, (h.shape[1], h.shape[2]))
    alignment = _alignment_for(0, [utt], config, align, bank, index)
    return EncoderResult(memory, alignment,
                         EncoderState([hh[0, :n] for hh in hiddens]),
                         [(i, p[0, :n], c[0, :n], o[0, :n]) for i, p, c, o in trace])


def _decode_batch(memory: Tensor, mem_valid: np.ndarray, tgt_in: np.ndarray,
                  config: ModelConfig, params: ParameterSet, drop=None) -> Tensor:
    B, T = tgt_in.shape
    h = nm.take_rows(params["embed.phoneme"], tgt_in)
    h = nm.add(h, nm.tensor(layers.sinusoidal_positions(T, config.d_model)))
    h = _maybe_drop(h, drop)
    cmask = layers.causal_mask(T)
    xmask = layers.key_padding_mask(mem_valid)
    for j in range(1, config.n_decoder_layers + 1):
        pfx = f"decoder.l{j}."
        h = layers.self_attention_block(params, pfx + "sa.", config.n_heads, h, cmask)
        ctx, _ = layers.multi_head_attention(params, pfx + "cross.", config.n_heads,
                                             h, memory, memory, xmask)
        h = layers.residual_ln(params, pfx + "cross.ln.", h, ctx)
        h = layers.feed_forward_block(params, pfx + "ffn.", h)
    return nm.add(nm.matmul(h, params["out.w"]), params["out.b"])


def decoder_forward_teacher_forced(memory: Tensor, target_ids: np.ndarray,
                                   config: ModelConfig, params: ParameterSet) -> Tensor:
    """Logits [T, V] for one utterance; the decoder input is BOS + target[:-1]."""
    if len(target_ids) > config.max_output_len:
        raise ValueError(f"target length {len(target_ids)} exceeds max {config.max_output_len}")
    pv = config.phoneme_vocab()
    tgt_in = np.concatenate([[pv.bos_id], target_ids[:-1]]).astype(np.int64)[None, :]
    mem = nm.reshape(memory, (1,) + memory.shape)
    logits = _decode_batch(mem, np.ones((1, memory.shape[0]), dtype=bool), tgt_in,
                           config, params)
    return nm.reshape(logits, logits.shape[1:])


def _maybe_drop(h: Tensor, drop):
    if drop is None:
        return h
    p, rng = drop
    return nm.dropout(h, p, rng)


# ---------------------------------------------------------------------------
# loss / training / synthesis


def batch_loss(batch, lexicon: Lexicon, config: ModelConfig, params: ParameterSet,
               variant=None, dropout_rng=None) -> Tensor:
    """Mean cross-entropy over all non-pad target positions of the batch."""
    if not batch:
        raise ValueError("batch must be non-empty")
    pv = config.phoneme_vocab()
    drop = (config.dropout, dropout_rng) if (config.dropout > 0 and dropout_rng is not None) else None
    memory, valid, *_ = _encode_batch(batch, lexicon, config, params, variant, drop=drop)
    T = max(len(u.target_ids) for u in batch)
    if T > config.max_output_len:
        raise ValueError(f"target length {T} exceeds max {config.max_output_len}")
    tgt_in = np.full((len(batch), T), pv.pad_id, dtype=np.int64)
    tgt_out = np.full((len(batch), T), pv.pad_id, dtype=np.int64)
    for b, u in enumerate(batch):
        tgt_in[b, 0] = pv.bos_id
        tgt_in[b, 1 : len(u.target_ids)] = u.target_ids[:-1]
        tgt_out[b, : len(u.target_ids)] = u.target_ids
    logits = _decode_batch(memory, valid, tgt_in, config, params, drop=drop)
    return nm.cross_entropy(logits, tgt_out, ignore_id=pv.pad_id)


def train_step(batch, lexicon: Lexicon, config: ModelConfig, params: ParameterSet,
               opt_state: nm.OptimizerState, variant=None, dropout_rng=None) -> float:
    """One optimization step; returns the (pre-update) batch loss."""
    loss = batch_loss(batch, lexicon, config, params, variant, dropout_rng)
    if not np.isfinite(loss.data):
        bad = nm.first_nonfinite(loss)
        raise TrainingDivergence(
            f"non-finite loss; first bad tensor: op={bad.op!r} name={bad.name!r}")
    grads = nm.backward(loss, params)
    nm.adam_step(params, grads, opt_state)
    return loss.item()


def synthesize_batch(texts, lexicon: Lexicon, config: ModelConfig, params: ParameterSet,
                     variant=None, lang_id: int = 0,
                     collect_alignment: bool = True) -> list[SynthesisResult]:
    """Greedy decoding for a list of input strings."""
    pv = config.phoneme_vocab()
    utts = [encode_text(t, config, lang_id) for t in texts]
    with nm.no_grad():
        memory, valid, _, align, _, bank, index = _encode_batch(
            utts, lexicon, config, params, variant, collect_alignment=collect_alignment)
        B = len(utts)
        out_ids = np.full((B, 1), pv.bos_id, dtype=np.int64)
        done = np.zeros(B, dtype=bool)
        for _ in range(config.max_output_len):
            logits = _decode_batch(memory, valid, out_ids, config, params)
            nxt = np.argmax(logits.data[:, -1, :], axis=-1).astype(np.int64)
            nxt[done] = pv.pad_id
            out_ids = np.concatenate([out_ids, nxt[:, None]], axis=1)
            done |= nxt == pv.eos_id
            if done.all():
                break
    results = []
    for b in range(B):
        ids = out_ids[b, 1:]
        results.append(SynthesisResult(
            pv.decode(ids), not bool(done[b]),
            _alignment_for(b, utts, config, align, bank, index)))
    return results


def synthesize(text: str, lexicon: Lexicon, config: ModelConfig, params: ParameterSet,
               variant=None, lang_id: int = 0) -> SynthesisResult:
    return synthesize_batch([text], lexicon, config, params, variant, lang_id)[0]


# ---------------------------------------------------------------------------
# checkpoints (binary, little-endian, f32 payloads)


def save_checkpoint(params: ParameterSet, config: ModelConfig, path) -> None:
    cfg = json.dumps(config.to_dict(), sort_keys=True, ensure_ascii=False).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_VERSION))
        fh.write(struct.pack("<I", len(cfg)))
        fh.write(cfg)
        fh.write(struct.pack("<I", len(params)))
        for name, t in params.items():
            raw = name.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<I", t.data.ndim))
            fh.write(struct.pack(f"<{t.data.ndim}I", *t.data.shape))
            fh.write(t.data.astype("<f4").tobytes(order="C"))


def load_checkpoint(path, expect: dict | None = None):
    """Read (params, config); `expect` asserts config fields, e.g.
    {"t2k_enabled": False} fails with ConfigMismatchError on a t2k model."""
    with open(path, "rb") as fh:
        blob = fh.read()
    view = memoryview(blob)
    off = 0

    def take(n: int) -> memoryview:
        nonlocal off
        if off + n > len(view):
            raise DataFormatError(f"{path}: truncated checkpoint (needed {n} bytes at {off})")
        out = view[off : off + n]
        off += n
        return out

    if bytes(take(4)) != CHECKPOINT_MAGIC:
        raise DataFormatError(f"{path}: bad magic, not a model checkpoint")
    (version,) = struct.unpack("<I", take(4))
    if version != CHECKPOINT_VERSION:
        raise DataFormatError(f"{path}: unsupported checkpoint version {version}")
    (cfg_len,) = struct.unpack("<I", take(4))
    config = ModelConfig.from_dict(json.loads(bytes(take(cfg_len)).decode("utf-8")))
    if expect:
        for key, want in expect.items():
            got = getattr(config, key)
            if got != want:
                raise ConfigMismatchError(f"checkpoint has {key}={got!r}, expected {want!r}")

    (count,) = struct.unpack("<I", take(4))
    params = ParameterSet()
    prev_name = None
    for _ in range(count):
        (nlen,) = struct.unpack("<I", take(4))
        name = bytes(take(nlen)).decode("utf-8")
        if prev_name is not None and name <= prev_name:
            raise DataFormatError(f"{path}: tensor names not sorted ascending at {name!r}")
        prev_name = name
        (rank,) = struct.unpack("<I", take(4))
        shape = struct.unpack(f"<{rank}I", take(4 * rank))
        n_items = int(np.prod(shape)) if rank else 1
        data = np.frombuffer(take(4 * n_items), dtype="<f4").reshape(shape).astype(np.float64)
        params.add(name, nm.tensor(data, requires_grad=True))
    if off != len(view):
        raise DataFormatError(f"{path}: {len(view) - off} trailing bytes")

    census = set(init_params(config, np.random.default_rng(0)).names())
    if set(params.names()) != census:
        missing = sorted(census - set(params.names()))[:3]
        extra = sorted(set(params.names()) - census)[:3]
        raise DataFormatError(
            f"{path}: tensor census does not match config (missing {missing}, extra {extra})")
    return params, config
