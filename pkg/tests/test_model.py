import numpy as np
import pytest

from nlreader import knowledge as kn, model as md, numerics as nm, synthlang as sl
from nlreader import training as tr, vocab as vb
from nlreader.errors import ConfigMismatchError, DataFormatError, TrainingDivergence
from nlreader.lexicon import Lexicon, LexiconEntry


@pytest.fixture(scope="module")
def tiny_world():
    spec = sl.generate_language(13, sl.GenerationParams(
        n_regular=30, n_heteronym=6, n_rare=4, n_phonemes=12, n_words=8))
    lex = sl.render_lexicon(spec)
    corpus = sl.sample_corpus(spec, 50, seed=3, n_eval=6)
    sv, pv = vb.vocabs_for_specs([spec])
    cfg = md.ModelConfig(sv.symbols, pv.symbols, d_model=16, n_heads=2,
                         n_encoder_layers=3, n_decoder_layers=4, d_ff=32, seed=2)
    params = md.init_params(cfg)
    return spec, lex, corpus, cfg, params


def encode_all(corpus, cfg, k=None):
    utts = corpus.train()[:k] if k else corpus.train()
    return [md.encode_sample(u, cfg) for u in utts]


class TestEmbedInputs:
    def test_shape_contract(self, tiny_world):
        spec, lex, corpus, cfg, params = tiny_world
        u = md.encode_sample(corpus.train()[0], cfg)
        h = md.embed_inputs(u, cfg, params)
        assert h.shape == (len(u.input_ids), cfg.d_model)

    def test_language_independent_when_disabled(self, tiny_world):
        spec, lex, corpus, cfg, params = tiny_world
        s = corpus.train()[0]
        a = md.embed_inputs(md.encode_sample(s, cfg, lang_id=0), cfg, params)
        b = md.embed_inputs(md.encode_sample(s, cfg, lang_id=0), cfg, params)
        np.testing.assert_array_equal(a.data, b.data)

    def test_language_embedding_is_additive(self, tiny_world):
        spec, lex, corpus, cfg, params = tiny_world
        cfg2 = md.ModelConfig(cfg.input_symbols, cfg.phoneme_symbols, d_model=16,
                              n_heads=2, d_ff=32, n_languages=2, seed=4)
        p2 = md.init_params(cfg2)
        s = corpus.train()[0]
        h0 = md.embed_inputs(md.encode_sample(s, cfg2, lang_id=0), cfg2, p2)
        h1 = md.embed_inputs(md.encode_sample(s, cfg2, lang_id=1), cfg2, p2)
        delta = p2["embed.language"].data[1] - p2["embed.language"].data[0]
        np.testing.assert_allclose(h1.data - h0.data, np.tile(delta, (h0.shape[0], 1)),
                                   atol=1e-12)

    def test_out_of_range_ids(self, tiny_world):
        spec, lex, corpus, cfg, params = tiny_world
        bad = md.Utterance(np.array([10**6]), np.array([2]))
        with pytest.raises(Exception, match="range"):
            md.embed_inputs(bad, cfg, params)


class TestMultiHeadAttention:
    def _identity_params(self, d):
        params = nm.ParameterSet()
        for w in ("wq", "wk", "wv", "wo"):
            params.add("att." + w, nm.tensor(np.eye(d), requires_grad=True))
        return params

    def test_single_key_identity(self):
        d = 4
        params = self._identity_params(d)
        rng = np.random.default_rng(0)
        q = nm.tensor(rng.normal(size=(3, d)))
        k = nm.tensor(rng.normal(size=(1, d)))
        v = nm.tensor(rng.normal(size=(1, d)))
        ctx, w = md.multi_head_attention(q, k, v, [True], params, "att.", 1)
        np.testing.assert_allclose(ctx.data, np.tile(v.data, (3, 1)), atol=1e-12)
        np.testing.assert_allclose(w.data, 1.0, atol=1e-12)

    def test_equal_logits_average_values(self):
        d = 4
        params = self._identity_params(d)
        q = nm.tensor(np.ones((1, d)))
        k = nm.tensor(np.zeros((2, d)))  # both keys give logit 0
        v = nm.tensor(np.array([[1.0, 0, 0, 0], [0, 1.0, 0, 0]]))
        ctx, w = md.multi_head_attention(q, k, v, [True, True], params, "att.", 1)
        np.testing.assert_allclose(w.data, 0.5, atol=1e-12)
        np.testing.assert_allclose(ctx.data[0], v.data.mean(axis=0), atol=1e-12)

    def test_zero_values_zero_context(self):
        d = 8
        rng = np.random.default_rng(1)
        params = nm.ParameterSet()
        from nlreader import layers
        layers.init_attention(params, "att.", d, rng)
        q = nm.tensor(rng.normal(size=(2, d)))
        k = nm.tensor(rng.normal(size=(5, d)))
        v = nm.tensor(np.zeros((5, d)))
        ctx, _ = md.multi_head_attention(q, k, v, [True] * 5, params, "att.", 2)
        assert np.all(ctx.data == 0.0)


class TestToken2KnowledgeSublayer:
    def _setup(self, tiny_world, n=3):
        spec, lex, corpus, cfg, params = tiny_world
        variant = md.build_variant(cfg, params)
        rng = np.random.default_rng(7)
        h = nm.tensor(rng.normal(size=(n, cfg.d_model)))
        return cfg, params, variant, h, lex

    def test_all_empty_bundles_give_layernorm_of_h(self, tiny_world):
        cfg, params, variant, h, lex = self._setup(tiny_world)
        bundles = [kn.empty_bundle(cfg.d_model, cfg.d_model) for _ in range(3)]
        out, w = md.token2knowledge_sublayer(h, bundles, params, "encoder.l2.t2k.",
                                             cfg.n_heads)
        expect = nm.layer_norm(h, params["encoder.l2.t2k.ln.gamma"],
                               params["encoder.l2.t2k.ln.beta"])
        np.testing.assert_array_equal(out.data, expect.data)
        np.testing.assert_allclose(w.sum(axis=-1), 1.0, atol=1e-12)

    def test_per_token_isolation(self, tiny_world):
        cfg, params, variant, h, lex = self._setup(tiny_world)
        e1 = kn.encode_entry("[p1 p2]", variant)
        e2 = kn.encode_entry("[p3 p4]", variant)
        e3 = kn.encode_entry("[p5 p6]", variant)
        out_a, _ = md.token2knowledge_sublayer(h, [e1, e2, e1], params,
                                               "encoder.l2.t2k.", cfg.n_heads)
        out_b, _ = md.token2knowledge_sublayer(h, [e1, e3, e1], params,
                                               "encoder.l2.t2k.", cfg.n_heads)
        np.testing.assert_array_equal(out_a.data[0], out_b.data[0])
        np.testing.assert_array_equal(out_a.data[2], out_b.data[2])
        assert not np.array_equal(out_a.data[1], out_b.data[1])

    def test_weight_rows_sum_to_one_over_valid(self, tiny_world):
        cfg, params, variant, h, lex = self._setup(tiny_world)
        bundles = [kn.encode_entry("[p1]", variant),
                   kn.encode_entry("[p1 p2 p3]乙;", variant),
                   kn.empty_bundle(cfg.d_model, cfg.d_model)]
        out, w = md.token2knowledge_sublayer(h, bundles, params, "encoder.l3.t2k.",
                                             cfg.n_heads)
        m = [b.m for b in bundles]
        for j in range(3):
            np.testing.assert_allclose(w[:, j, : m[j]].sum(axis=-1), 1.0, atol=1e-9)
            assert np.all(w[:, j, m[j]:] == 0.0)

    def test_bundle_count_mismatch(self, tiny_world):
        cfg, params, variant, h, lex = self._setup(tiny_world)
        with pytest.raises(Exception, match="bundles"):
            md.token2knowledge_sublayer(h, [kn.empty_bundle(16, 16)], params,
                                        "encoder.l2.t2k.", cfg.n_heads)


class TestEncoderForward:
    def test_alignment_covers_all_but_first_layer(self, tiny_world):
        spec, lex, corpus, cfg, params = tiny_world
        u = md.encode_sample(corpus.train()[0], cfg)
        res = md.encoder_forward(u, lex, cfg, params)
        assert sorted(res.alignment.layers) == [2, 3]
        assert len(res.state.hiddens) == cfg.n_encoder_layers + 1

    def test_alignment_rows_stochastic(self, tiny_world):
        spec, lex, corpus, cfg, params = tiny_world
        u = md.encode_sample(corpus.train()[1], cfg)
        res = md.encoder_forward(u, lex, cfg, params)
        for layer, head, j, row in res.alignment.weight_rows():
            assert row.sum() == pytest.approx(1.0, abs=1e-6)
            assert np.all(row >= 0.0)

    def test_punctuation_only_input_uses_empty_bundles(self, tiny_world):
        spec, lex, corpus, cfg, params = tiny_world
        u = md.encode_text("，。，", cfg)
        res = md.encoder_forward(u, lex, cfg, params)
        assert all(t == (kn.EMPTY_TOKEN,) for t in res.alignment.knowledge_tokens)
        for layer, head, j, row in res.alignment.weight_rows():
            np.testing.assert_array_equal(row, [1.0])

    def test_empty_lexicon_t2k_reduces_to_layer_norm(self, tiny_world):
        spec, lex, corpus, cfg, params = tiny_world
        u = md.encode_sample(corpus.train()[2], cfg)
        res = md.encoder_forward(u, Lexicon(), cfg, params, collect_trace=True)
        assert len(res.t2k_trace) == 2
        for layer, pre, ctx, post in res.t2k_trace:
            assert np.all(ctx == 0.0)
            ln = nm.layer_norm(nm.tensor(pre),
                               params[f"encoder.l{layer}.t2k.ln.gamma"],
                               params[f"encoder.l{layer}.t2k.ln.beta"])
            np.testing.assert_array_equal(post, ln.data)

    def test_ablation_identity_with_shared_params(self, tiny_world):
        spec, lex, corpus, cfg, params = tiny_world
        base_cfg = md.ModelConfig(cfg.input_symbols, cfg.phoneme_symbols,
                                  d_model=cfg.d_model, n_heads=cfg.n_heads,
                                  n_encoder_layers=3, n_decoder_layers=4,
                                  d_ff=cfg.d_ff, t2k_enabled=False, seed=cfg.seed)
        base_params = md.init_params(base_cfg)
        shared = base_params.names()
        forced = params.subset(shared)  # same tensors as the NLR model
        u = md.encode_sample(corpus.train()[3], cfg)

        nlr_res = md.encoder_forward(u, lex, cfg, params, t2k_force_identity=True)
        base_res = md.encoder_forward(u, lex, base_cfg, forced)
        np.testing.assert_array_equal(nlr_res.memory.data, base_res.memory.data)

        logits_nlr = md.decoder_forward_teacher_forced(nlr_res.memory, u.target_ids, cfg, params)
        logits_base = md.decoder_forward_teacher_forced(base_res.memory, u.target_ids,
                                                        base_cfg, forced)
        np.testing.assert_array_equal(logits_nlr.data, logits_base.data)

    def test_parameter_census(self, tiny_world):
        spec, lex, corpus, cfg, params = tiny_world
        t2k_layers = {n.split(".")[1] for n in params.names() if ".t2k." in n}
        assert t2k_layers == {"l2", "l3"}
        groups = {n for n in params.names() if n.startswith("encoder.l2.t2k.") and n.endswith("wq")}
        assert len(groups) == 1
        base = md.init_params(md.ModelConfig(cfg.input_symbols, cfg.phoneme_symbols,
                                             d_model=16, n_heads=2, d_ff=32,
                                             t2k_enabled=False))
        assert not any(".t2k." in n or n.startswith("knowledge.") for n in base.names())


class TestDecoder:
    def test_causality(self, tiny_world):
        spec, lex, corpus, cfg, params = tiny_world
        u = md.encode_sample(corpus.train()[4], cfg)
        res = md.encoder_forward(u, lex, cfg, params)
        t = len(u.target_ids)
        assert t >= 3
        # altering the token fed at step t-1 must leave logits before t-1
        # untouched and change the row that sees it
        altered = u.target_ids.copy()
        altered[t - 2] = (altered[t - 2] + 1) % len(cfg.phoneme_symbols)
        a = md.decoder_forward_teacher_forced(res.memory, u.target_ids, cfg, params)
        b = md.decoder_forward_teacher_forced(res.memory, altered, cfg, params)
        np.testing.assert_array_equal(a.data[: t - 1], b.data[: t - 1])
        assert not np.array_equal(a.data[t - 1], b.data[t - 1])

    def test_single_step_shape(self, tiny_world):
        spec, lex, corpus, cfg, params = tiny_world
        u = md.encode_sample(corpus.train()[0], cfg)
        res = md.encoder_forward(u, lex, cfg, params)
        logits = md.decoder_forward_teacher_forced(res.memory, np.array([2]), cfg, params)
        assert logits.shape == (1, len(cfg.phoneme_symbols))

    def test_target_length_cap(self, tiny_world):
        spec, lex, corpus, cfg, params = tiny_world
        u = md.encode_sample(corpus.train()[0], cfg)
        res = md.encoder_forward(u, lex, cfg, params)
        too_long = np.full(cfg.max_output_len + 1, 2)
        with pytest.raises(ValueError, match="exceeds"):
            md.decoder_forward_teacher_forced(res.memory, too_long, cfg, params)


class TestTraining:
    def test_step_determinism(self, tiny_world):
        spec, lex, corpus, cfg, _ = tiny_world
        losses = []
        for _ in range(2):
            params = md.init_params(cfg)
            state = nm.OptimizerState(lr=1e-3)
            batch = encode_all(corpus, cfg, k=8)
            losses.append(md.train_step(batch, lex, cfg, params, state))
        assert losses[0] == losses[1]

    def test_loss_decreases_on_toy_corpus(self, tiny_world):
        spec, lex, corpus, cfg, _ = tiny_world
        res = tr.train_model(corpus.train(), lex, cfg,
                             tr.TrainSettings(steps=200, batch_size=16, lr=2e-3,
                                              warmup_steps=20, seed=5, log_every=10))
        first = res.losses[0][1]
        last = res.losses[-1][1]
        assert last < 0.5 * first

    def test_nan_loss_aborts_with_diagnostic(self, tiny_world):
        spec, lex, corpus, cfg, _ = tiny_world
        params = md.init_params(cfg)
        params["out.w"].data[0, 0] = np.inf
        batch = encode_all(corpus, cfg, k=2)
        with pytest.raises(TrainingDivergence, match="op="):
            md.train_step(batch, lex, cfg, params, nm.OptimizerState())

    def test_gradient_flows_through_input_and_value_paths(self, tiny_world):
        spec, lex, corpus, cfg, params = tiny_world
        sv = cfg.symbol_vocab()
        # craft a lexicon whose entry text contains a script char that never
        # appears as input: gradient on its embedding row can only arrive
        # through the knowledge (key/value) path.
        hint_char = spec.chars_of_class("regular")[0]
        input_char = spec.chars_of_class("regular")[1]
        lex2 = Lexicon({input_char: LexiconEntry(input_char, f"[p1]{hint_char};")})
        sample = sl.Utterance(input_char * 3, ("p1", "p1", "p1"))
        batch = [md.encode_sample(sample, cfg)]
        loss = md.batch_loss(batch, lex2, cfg, params)
        grads = nm.backward(loss, params)
        emb = grads["embed.symbol"].data
        assert np.any(emb[sv.id(input_char)] != 0.0)
        assert np.any(emb[sv.id(hint_char)] != 0.0)
        unused = spec.chars_of_class("regular")[2]
        assert np.all(emb[sv.id(unused)] == 0.0)

    def test_value_path_alone_carries_gradient(self, tiny_world):
        spec, lex, corpus, cfg, params = tiny_world
        variant = md.build_variant(cfg, params)
        bundle = kn.encode_entry("[p1 p2]", variant)
        frozen_keys = kn.KnowledgeBundle(bundle.keys.detach(), bundle.values,
                                         bundle.valid_mask, bundle.source_text,
                                         bundle.tokens)
        h = nm.tensor(np.random.default_rng(0).normal(size=(2, cfg.d_model)))
        out, _ = md.token2knowledge_sublayer(h, [frozen_keys, frozen_keys], params,
                                             "encoder.l2.t2k.", cfg.n_heads)
        grads = nm.backward(nm.sum_all(out), params)
        assert np.any(grads["embed.symbol"].data != 0.0)


class TestSynthesize:
    def test_idempotent(self, tiny_world):
        spec, lex, corpus, cfg, params = tiny_world
        text = corpus.train()[0].chars
        a = md.synthesize(text, lex, cfg, params)
        b = md.synthesize(text, lex, cfg, params)
        assert a.phonemes == b.phonemes

    def test_empty_input_allowed(self, tiny_world):
        spec, lex, corpus, cfg, params = tiny_world
        out = md.synthesize("", lex, cfg, params)
        assert isinstance(out.phonemes, tuple)

    def test_batch_matches_single(self, tiny_world):
        spec, lex, corpus, cfg, params = tiny_world
        texts = [u.chars for u in corpus.train()[:4]]
        batch = md.synthesize_batch(texts, lex, cfg, params)
        for text, joint in zip(texts, batch):
            solo = md.synthesize(text, lex, cfg, params)
            assert solo.phonemes == joint.phonemes

    def test_truncation_flagged_not_raised(self, tiny_world):
        spec, lex, corpus, cfg, params = tiny_world
        cfg_short = md.ModelConfig(cfg.input_symbols, cfg.phoneme_symbols, d_model=16,
                                   n_heads=2, d_ff=32, max_output_len=2, seed=2)
        out = md.synthesize(corpus.train()[0].chars, lex, cfg_short, params)
        assert out.truncated in (True, False)  # just must not raise


class TestCheckpoint:
    def test_round_trip_preserves_synthesis(self, tiny_world, tmp_path):
        spec, lex, corpus, cfg, params = tiny_world
        p = tmp_path / "model.bin"
        md.save_checkpoint(params, cfg, p)
        params2, cfg2 = md.load_checkpoint(p)
        text = corpus.train()[0].chars
        a = md.synthesize(text, lex, cfg2, params2)
        b = md.synthesize(text, lex, cfg2, params2)
        assert a.phonemes == b.phonemes
        assert cfg2.to_dict() == cfg.to_dict()

    def test_save_load_save_bit_exact(self, tiny_world, tmp_path):
        spec, lex, corpus, cfg, params = tiny_world
        p1, p2 = tmp_path / "a.bin", tmp_path / "b.bin"
        md.save_checkpoint(params, cfg, p1)
        params2, cfg2 = md.load_checkpoint(p1)
        md.save_checkpoint(params2, cfg2, p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_corrupt_magic(self, tiny_world, tmp_path):
        spec, lex, corpus, cfg, params = tiny_world
        p = tmp_path / "model.bin"
        md.save_checkpoint(params, cfg, p)
        blob = bytearray(p.read_bytes())
        blob[:4] = b"XXXX"
        p.write_bytes(bytes(blob))
        with pytest.raises(DataFormatError, match="magic"):
            md.load_checkpoint(p)

    def test_truncated_file(self, tiny_world, tmp_path):
        spec, lex, corpus, cfg, params = tiny_world
        p = tmp_path / "model.bin"
        md.save_checkpoint(params, cfg, p)
        p.write_bytes(p.read_bytes()[:-40])
        with pytest.raises(DataFormatError, match="truncated"):
            md.load_checkpoint(p)

    def test_expect_mismatch(self, tiny_world, tmp_path):
        spec, lex, corpus, cfg, params = tiny_world
        p = tmp_path / "model.bin"
        md.save_checkpoint(params, cfg, p)
        with pytest.raises(ConfigMismatchError, match="t2k_enabled"):
            md.load_checkpoint(p, expect={"t2k_enabled": False})
