"""Command-line interface.

Subcommands: gen-lang, gen-data, train, eval, synth, heatmap,
lexicon (edit|prune), experiment. Exit codes: 0 success, 1 usage error,
2 data/format error, 3 training failure.

The train command resolves options as defaults < config file (JSON) <
command-line flags and echoes the resolved configuration next to its output.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import evaluation as ev, knowledge as kn, model as md, synthlang as sl
from . import training as tr, vocab as vb
from .errors import ConfigMismatchError, DataFormatError, TrainingDivergence
from .lexicon import (Lexicon, apply_edit, covered_headwords, load_lexicon, prune,
                      save_lexicon)

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_TRAINING = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


class UsageError(ValueError):
    pass


# ---------------------------------------------------------------------------
# shared helpers


def _load_spec(path) -> sl.LanguageSpec:
    try:
        return sl.spec_from_dict(sl.load_json(path))
    except (KeyError, TypeError, ValueError, json.JSONDecodeError) as e:
        raise DataFormatError(f"{path}: bad language spec: {e}") from None


def _load_corpus(path) -> sl.Corpus:
    try:
        return sl.corpus_from_dict(sl.load_json(path))
    except (KeyError, TypeError, json.JSONDecodeError) as e:
        raise DataFormatError(f"{path}: bad corpus file: {e}") from None


def _load_evalset(path) -> sl.EvalSet:
    try:
        return sl.evalset_from_dict(sl.load_json(path))
    except (KeyError, TypeError, json.JSONDecodeError) as e:
        raise DataFormatError(f"{path}: bad eval set file: {e}") from None


def _read_config_file(path) -> dict:
    if path is None:
        return {}
    try:
        cfg = sl.load_json(path)
    except json.JSONDecodeError as e:
        raise DataFormatError(f"{path}: bad config JSON: {e}") from None
    if not isinstance(cfg, dict):
        raise DataFormatError(f"{path}: config must be a JSON object")
    unknown = set(cfg) - {"model", "train", "vocab"}
    if unknown:
        raise DataFormatError(f"{path}: unknown config sections {sorted(unknown)}")
    return cfg


# ---------------------------------------------------------------------------
# gen-lang / gen-data


def cmd_gen_lang(args) -> int:
    try:
        chars = [int(x) for x in args.chars.split(",")]
        if len(chars) != 3:
            raise ValueError
    except ValueError:
        raise UsageError("--chars must be three comma-separated integers R,H,RARE") from None
    params = sl.GenerationParams(n_regular=chars[0], n_heteronym=chars[1], n_rare=chars[2],
                                 n_phonemes=args.phonemes, n_words=args.words)
    spec = sl.generate_language(args.seed, params)
    sl.save_json(sl.spec_to_dict(spec), args.out)
    print(f"wrote {args.out}: {len(spec.characters)} characters, "
          f"{len(spec.words)} words, {len(spec.phonemes)} phonemes")
    return EXIT_OK


def cmd_gen_data(args) -> int:
    spec = _load_spec(args.spec)
    corpus = sl.sample_corpus(spec, args.size, args.seed, n_eval=args.eval_size)
    sl.save_json(sl.corpus_to_dict(corpus), args.out)
    if args.lexicon_out:
        save_lexicon(sl.render_lexicon(spec), args.lexicon_out)
    if args.rare_out:
        sl.save_json(sl.evalset_to_dict(sl.build_rare_set(spec)), args.rare_out)
    if args.het_out:
        het = sl.build_heteronym_set(spec, corpus)
        sl.save_json(sl.evalset_to_dict(het), args.het_out)
    print(f"wrote {args.out}: {len(corpus.train())} train / {len(corpus.eval())} eval utterances")
    return EXIT_OK


# ---------------------------------------------------------------------------
# train


def _resolve_train(args):
    cfg_file = _read_config_file(args.config)
    model_over = dict(cfg_file.get("model", {}))
    train_over = dict(cfg_file.get("train", {}))

    corpus = _load_corpus(args.data)
    lexicon = load_lexicon(args.lexicon)

    init_params = None
    if args.init_from:
        init_params, config = md.load_checkpoint(args.init_from)
        if args.variant == "baseline" and config.t2k_enabled:
            raise ConfigMismatchError("--variant baseline but --init-from checkpoint has "
                                      "knowledge attention enabled")
    else:
        if "vocab" in cfg_file:
            symbols = tuple(cfg_file["vocab"]["input_symbols"])
            phonemes = tuple(cfg_file["vocab"]["phoneme_symbols"])
        else:
            sv, pv = vb.vocabs_from_data(corpus, lexicon)
            symbols, phonemes = sv.symbols, pv.symbols
        model_over["t2k_enabled"] = args.variant != "baseline"
        if args.word_query:
            model_over["lookup_mode"] = "word"
        if args.seed is not None:
            model_over.setdefault("seed", args.seed)
        config = md.ModelConfig(symbols, phonemes, **model_over)

    settings = tr.TrainSettings(**train_over)
    if args.steps is not None:
        settings.steps = args.steps
    if args.seed is not None:
        settings.seed = args.seed

    train_utts = corpus.train()
    if args.lang_id is not None:
        train_utts = [sl.Utterance(u.chars, u.phonemes, args.lang_id, u.split)
                      for u in train_utts]
    return config, settings, train_utts, lexicon, init_params


def cmd_train(args) -> int:
    config, settings, train_utts, lexicon, init_params = _resolve_train(args)
    t0 = time.time()
    result = tr.train_model(train_utts, lexicon, config, settings, params=init_params,
                            progress=lambda s, l: print(f"step {s} loss {l:.4f}",
                                                        file=sys.stderr, flush=True))
    wall = time.time() - t0
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    md.save_checkpoint(result.params, config, out)
    sl.save_json({"model": config.to_dict(), "train": settings.to_dict(),
                  "variant": args.variant, "init_from": args.init_from,
                  "lang_id": args.lang_id}, out.with_suffix(".config.json"))
    sl.save_json({"losses": [[s, l] for s, l in result.losses],
                  "steps": settings.steps}, out.with_suffix(".train.json"))
    print(f"trained {settings.steps} steps in {wall:.0f}s; "
          f"final loss {result.losses[-1][1]:.4f}; wrote {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# eval / synth / heatmap


def cmd_eval(args) -> int:
    params, config = md.load_checkpoint(args.ckpt)
    lexicon = load_lexicon(args.lexicon)
    if args.testset == "general":
        corpus = _load_corpus(args.data)
        utts = corpus.eval() or corpus.utterances
        outcome = ev.evaluate_general(utts, lexicon, config, params, lang_id=args.lang_id)
    else:
        evalset = _load_evalset(args.data)
        if evalset.kind != args.testset:
            raise DataFormatError(f"{args.data} holds a {evalset.kind!r} set, "
                                  f"--testset asked for {args.testset!r}")
        if not args.spec:
            raise UsageError(f"--testset {args.testset} needs --spec for reading spans")
        spec = _load_spec(args.spec)
        fn = ev.evaluate_rare if args.testset == "rare" else ev.evaluate_heteronym
        outcome = fn(spec, evalset.items, lexicon, config, params, lang_id=args.lang_id)
    sl.save_json(outcome.to_dict(), args.out)
    print(json.dumps(outcome.to_dict(), sort_keys=True))
    return EXIT_OK


def cmd_synth(args) -> int:
    params, config = md.load_checkpoint(args.ckpt)
    lexicon = load_lexicon(args.lexicon)
    result = md.synthesize(args.text, lexicon, config, params, lang_id=args.lang_id)
    print(" ".join(result.phonemes))
    if result.truncated:
        print("warning: output hit the length cap before EOS", file=sys.stderr)
    return EXIT_OK


def cmd_heatmap(args) -> int:
    params, config = md.load_checkpoint(args.ckpt)
    lexicon = load_lexicon(args.lexicon)
    sv = config.symbol_vocab()
    missing = sorted({c for c in args.text if sv.id(c) == sv.unk_id})
    if missing:
        raise DataFormatError(f"text contains characters outside the model vocabulary: "
                              f"{' '.join(missing)}")
    result = md.synthesize(args.text, lexicon, config, params, lang_id=args.lang_id)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / "alignment.csv"
    write_alignment_csv(result.alignment, csv_path)
    if args.pgm:
        for layer in sorted(result.alignment.layers):
            w = result.alignment.layers[layer]
            for head in range(w.shape[0]):
                write_pgm(out / f"layer{layer}_head{head}.pgm", w[head])
    print(f"wrote {csv_path}")
    return EXIT_OK


def write_alignment_csv(alignment: md.AlignmentMap, path) -> None:
    """Long-format rows: input_index, input_char, layer, head, knowledge_index,
    knowledge_token, weight."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("input_index,input_char,layer,head,knowledge_index,knowledge_token,weight\n")
        for layer, head, j, row in alignment.weight_rows():
            tokens = alignment.knowledge_tokens[j]
            for idx, weight in enumerate(row):
                fh.write(f"{j},{alignment.input_tokens[j]},{layer},{head},"
                         f"{idx},{tokens[idx]},{weight:.8f}\n")


def write_pgm(path, weights: np.ndarray) -> None:
    """8-bit binary PGM; rows = input tokens, columns = knowledge positions."""
    gray = np.clip(np.rint(weights * 255.0), 0, 255).astype(np.uint8)
    h, w = gray.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(gray.tobytes(order="C"))


# ---------------------------------------------------------------------------
# lexicon surgery


def cmd_lexicon_edit(args) -> int:
    lex = load_lexicon(args.infile)
    if (args.remove is None) == (args.set is None):
        raise UsageError("lexicon edit needs exactly one of --remove / --set")
    if args.remove is not None:
        lex = apply_edit(lex, "remove", args.remove)
    else:
        head, sep, entry = args.set.partition("=")
        if not sep or not head or not entry:
            raise UsageError("--set expects HEADWORD=ENTRY")
        kind = "modify" if head in lex else "add"
        lex = apply_edit(lex, kind, head, entry)
    save_lexicon(lex, args.out)
    print(f"wrote {args.out}: {len(lex)} entries")
    return EXIT_OK


def cmd_lexicon_prune(args) -> int:
    lex = load_lexicon(args.infile)
    corpus = _load_corpus(args.keep_from)
    keep = covered_headwords(lex, [u.chars for u in corpus.train()])
    pruned = prune(lex, keep)
    save_lexicon(pruned, args.out)
    print(f"wrote {args.out}: kept {len(pruned)} of {len(lex)} entries")
    return EXIT_OK


def cmd_experiment(args) -> int:
    from .experiment import run_experiment
    return run_experiment(args.plan, args.out, jobs=args.jobs)


# ---------------------------------------------------------------------------
# parser


def build_parser() -> _Parser:
    p = _Parser(prog="nlreader", description=__doc__,
                formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-lang", help="generate a synthetic language spec")
    g.add_argument("--seed", type=int, required=True)
    g.add_argument("--out", required=True)
    g.add_argument("--chars", default="600,60,40", help="R,H,RARE inventory sizes")
    g.add_argument("--phonemes", type=int, default=40)
    g.add_argument("--words", type=int, default=80)
    g.set_defaults(func=cmd_gen_lang)

    g = sub.add_parser("gen-data", help="sample a corpus and lexicon from a spec")
    g.add_argument("--spec", required=True)
    g.add_argument("--size", type=int, required=True)
    g.add_argument("--seed", type=int, required=True)
    g.add_argument("--out", required=True)
    g.add_argument("--lexicon-out")
    g.add_argument("--eval-size", type=int, default=0)
    g.add_argument("--rare-out")
    g.add_argument("--het-out")
    g.set_defaults(func=cmd_gen_data)

    g = sub.add_parser("train", help="train a model")
    g.add_argument("--config", help="JSON config (sections: model, train, vocab)")
    g.add_argument("--data", required=True)
    g.add_argument("--lexicon", required=True)
    g.add_argument("--variant", choices=["nlr", "baseline"], default="nlr")
    g.add_argument("--steps", type=int)
    g.add_argument("--seed", type=int)
    g.add_argument("--out", required=True)
    g.add_argument("--word-query", action="store_true")
    g.add_argument("--lang-id", type=int)
    g.add_argument("--init-from", help="checkpoint to fine-tune from")
    g.set_defaults(func=cmd_train)

    g = sub.add_parser("eval", help="score a checkpoint on a test set")
    g.add_argument("--ckpt", required=True)
    g.add_argument("--data", required=True)
    g.add_argument("--lexicon", required=True)
    g.add_argument("--out", required=True)
    g.add_argument("--testset", choices=["general", "rare", "heteronym"], default="general")
    g.add_argument("--spec", help="language spec (needed for rare/heteronym scoring)")
    g.add_argument("--lang-id", type=int)
    g.set_defaults(func=cmd_eval)

    g = sub.add_parser("synth", help="greedy-decode one input string")
    g.add_argument("--ckpt", required=True)
    g.add_argument("--text", required=True)
    g.add_argument("--lexicon", required=True)
    g.add_argument("--lang-id", type=int, default=0)
    g.set_defaults(func=cmd_synth)

    g = sub.add_parser("heatmap", help="export knowledge-attention alignments")
    g.add_argument("--ckpt", required=True)
    g.add_argument("--text", required=True)
    g.add_argument("--lexicon", required=True)
    g.add_argument("--out", required=True)
    g.add_argument("--pgm", action="store_true", help="also write grayscale PGMs")
    g.add_argument("--lang-id", type=int, default=0)
    g.set_defaults(func=cmd_heatmap)

    g = sub.add_parser("lexicon", help="edit or prune a lexicon file")
    lsub = g.add_subparsers(dest="lexicon_command", required=True)
    e = lsub.add_parser("edit")
    e.add_argument("--in", dest="infile", required=True)
    e.add_argument("--remove", metavar="HEADWORD")
    e.add_argument("--set", metavar="HEADWORD=ENTRY")
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_lexicon_edit)
    r = lsub.add_parser("prune")
    r.add_argument("--in", dest="infile", required=True)
    r.add_argument("--keep-from", required=True, metavar="CORPUS_JSON")
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_lexicon_prune)

    g = sub.add_parser("experiment", help="run an experiment plan")
    g.add_argument("--plan", required=True)
    g.add_argument("--jobs", type=int, default=1)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_experiment)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        return args.func(args)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except TrainingDivergence as e:
        print(f"training failure: {e}", file=sys.stderr)
        return EXIT_TRAINING
    except (DataFormatError, ConfigMismatchError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
