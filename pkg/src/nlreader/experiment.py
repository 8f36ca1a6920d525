"""Experiment plans: materialize data, run train/eval per run, summarize.

A plan JSON names one synthetic language, a full corpus, and a list of runs
(variant x size x seed x steps). Each run trains and evaluates in its own
subprocess with BLAS threads pinned to one, so results are byte-reproducible
regardless of --jobs; the summary CSV has one row per run (plus one
`<id>@full-lexicon` row for pruned-lexicon runs, which are evaluated twice).

Plan schema (see README for a full example):

    {"language": {"seed", "chars": [R, H, RARE], "phonemes", "words"},
     "corpus": {"size", "seed", "eval_size"},
     "transfer": {"seed", "corpus_size", "corpus_seed", "eval_size"},   # optional
     "prune_keep_size": 500,                                            # optional
     "model": {...ModelConfig overrides...},
     "train": {...TrainSettings overrides...},
     "runs": [{"id", "variant", "size", "seed", "steps",
               "arch": "nlr"|"baseline",      # transfer-adapt only
               "init_from": "<run id>"}]}
"""

from __future__ import annotations

import json
import os
import subprocess
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

from . import synthlang as sl, vocab as vb
from .errors import DataFormatError
from .lexicon import covered_headwords, prune, save_lexicon

VARIANTS = ("nlr", "baseline", "nlr+word-query", "nlr-pruned-lexicon", "transfer-adapt")
CSV_HEADER = "run_id,variant,size,seed,ter,rare_acc,het_err"

_PINNED_ENV = {
    "OMP_NUM_THREADS": "1",
    "OPENBLAS_NUM_THREADS": "1",
    "MKL_NUM_THREADS": "1",
    "VECLIB_MAXIMUM_THREADS": "1",
    "NUMEXPR_NUM_THREADS": "1",
}


@dataclass
class RunSpec:
    run_id: str
    variant: str
    size: int
    seed: int
    steps: int
    arch: str = "nlr"
    init_from: str | None = None


@dataclass
class ExperimentPlan:
    language: dict
    corpus: dict
    runs: list[RunSpec]
    model: dict
    train: dict
    transfer: dict | None = None
    prune_keep_size: int | None = None

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentPlan":
        try:
            runs = [RunSpec(r["id"], r["variant"], r["size"], r["seed"], r["steps"],
                            r.get("arch", "nlr"), r.get("init_from"))
                    for r in d["runs"]]
            plan = cls(d["language"], d["corpus"], runs, d.get("model", {}),
                       d.get("train", {}), d.get("transfer"), d.get("prune_keep_size"))
        except (KeyError, TypeError) as e:
            raise DataFormatError(f"bad experiment plan: {e}") from None
        plan.validate()
        return plan

    def validate(self) -> None:
        ids = [r.run_id for r in self.runs]
        if len(set(ids)) != len(ids):
            raise DataFormatError("run ids must be unique")
        by_id = {r.run_id: r for r in self.runs}
        for r in self.runs:
            if r.variant not in VARIANTS:
                raise DataFormatError(f"run {r.run_id!r}: unknown variant {r.variant!r}")
            if r.arch not in ("nlr", "baseline"):
                raise DataFormatError(f"run {r.run_id!r}: unknown arch {r.arch!r}")
            if r.variant == "transfer-adapt":
                if self.transfer is None:
                    raise DataFormatError(f"run {r.run_id!r} needs a 'transfer' plan section")
                if r.init_from is None or r.init_from not in by_id:
                    raise DataFormatError(f"run {r.run_id!r}: init_from must name another run")
                if by_id[r.init_from].variant == "transfer-adapt":
                    raise DataFormatError(f"run {r.run_id!r}: cannot chain transfer runs")
                if r.size > self.transfer["corpus_size"]:
                    raise DataFormatError(f"run {r.run_id!r}: size exceeds transfer corpus")
            else:
                if r.init_from is not None:
                    raise DataFormatError(f"run {r.run_id!r}: init_from is only for transfer-adapt")
                if r.size > self.corpus["size"]:
                    raise DataFormatError(f"run {r.run_id!r}: size exceeds corpus")
            if r.variant == "nlr-pruned-lexicon" and self.prune_keep_size is None:
                raise DataFormatError(f"run {r.run_id!r} needs 'prune_keep_size' in the plan")

    def base_run_ids(self) -> set[str]:
        return {r.init_from for r in self.runs if r.init_from is not None}


# ---------------------------------------------------------------------------
# materialization


def _gen_params(lang: dict) -> sl.GenerationParams:
    chars = lang.get("chars", [600, 60, 40])
    return sl.GenerationParams(n_regular=chars[0], n_heteronym=chars[1], n_rare=chars[2],
                               n_phonemes=lang.get("phonemes", 40),
                               n_words=lang.get("words", 80))


@dataclass
class Materialized:
    """Paths of every data artifact a plan's runs consume."""

    spec: dict          # lang_key -> spec path
    lexicon: dict       # lang_key -> lexicon path
    lexicon_pruned: str | None
    corpus: dict        # (lang_key, size) -> corpus path
    rare: dict          # lang_key -> rare set path
    het: dict           # (lang_key, size) -> heteronym set path
    union_vocab: dict | None


def materialize(plan: ExperimentPlan, out: Path) -> Materialized:
    data = out / "data"
    data.mkdir(parents=True, exist_ok=True)

    spec = sl.generate_language(plan.language["seed"], _gen_params(plan.language))
    lex = sl.render_lexicon(spec)
    paths = Materialized({"base": str(data / "spec.json")},
                         {"base": str(data / "lexicon.jsonl")},
                         None, {}, {}, {}, None)
    sl.save_json(sl.spec_to_dict(spec), paths.spec["base"])
    save_lexicon(lex, paths.lexicon["base"])

    full_size = plan.corpus["size"]
    corpus = sl.sample_corpus(spec, full_size, plan.corpus["seed"],
                              n_eval=plan.corpus.get("eval_size", 150))
    worlds = [("base", spec, corpus, full_size)]

    if plan.transfer is not None:
        t = plan.transfer
        spec_t = sl.derive_transfer_language(spec, t["seed"])
        lex_t = sl.render_lexicon(spec_t)
        paths.spec["transfer"] = str(data / "spec_transfer.json")
        paths.lexicon["transfer"] = str(data / "lexicon_transfer.jsonl")
        sl.save_json(sl.spec_to_dict(spec_t), paths.spec["transfer"])
        save_lexicon(lex_t, paths.lexicon["transfer"])
        corpus_t = sl.sample_corpus(spec_t, t["corpus_size"], t["corpus_seed"],
                                    n_eval=t.get("eval_size", 150))
        worlds.append(("transfer", spec_t, corpus_t, t["corpus_size"]))
        sv, pv = vb.vocabs_for_specs([spec, spec_t])
        paths.union_vocab = {"input_symbols": list(sv.symbols),
                             "phoneme_symbols": list(pv.symbols)}

    sizes_needed: dict[str, set[int]] = {"base": set(), "transfer": set()}
    for r in plan.runs:
        lang = "transfer" if r.variant == "transfer-adapt" else "base"
        sizes_needed[lang].add(r.size)
    if plan.prune_keep_size is not None:
        sizes_needed["base"].add(plan.prune_keep_size)

    for lang_key, lspec, lcorpus, lfull in worlds:
        paths.rare[lang_key] = str(data / f"rare_{lang_key}.json")
        sl.save_json(sl.evalset_to_dict(sl.build_rare_set(lspec)), paths.rare[lang_key])
        for size in sorted(sizes_needed[lang_key] | {lfull}):
            sub = sl.downsample(lcorpus, size / lfull, seed=plan.corpus["seed"], spec=lspec)
            cpath = str(data / f"corpus_{lang_key}_{size}.json")
            sl.save_json(sl.corpus_to_dict(sub), cpath)
            paths.corpus[(lang_key, size)] = cpath
            hpath = str(data / f"heteronym_{lang_key}_{size}.json")
            sl.save_json(sl.evalset_to_dict(sl.build_heteronym_set(lspec, sub)), hpath)
            paths.het[(lang_key, size)] = hpath

    if plan.prune_keep_size is not None:
        keep_from = sl.corpus_from_dict(sl.load_json(paths.corpus[("base", plan.prune_keep_size)]))
        keep = covered_headwords(lex, [u.chars for u in keep_from.train()])
        paths.lexicon_pruned = str(data / "lexicon_pruned.jsonl")
        save_lexicon(prune(lex, keep), paths.lexicon_pruned)
    return paths


# ---------------------------------------------------------------------------
# per-run execution


def _run_cmd(cmd: list[str], log_path: Path) -> None:
    env = dict(os.environ)
    env.update(_PINNED_ENV)
    with open(log_path, "ab") as log:
        log.write((" ".join(cmd) + "\n").encode())
        log.flush()
        proc = subprocess.run(cmd, env=env, stdout=log, stderr=subprocess.STDOUT)
    if proc.returncode != 0:
        tail = log_path.read_text(encoding="utf-8", errors="replace").splitlines()[-12:]
        raise RuntimeError(f"command exited {proc.returncode}:\n" + "\n".join(tail))


def _cli(*args) -> list[str]:
    return [sys.executable, "-m", "nlreader", *args]


def execute_run(run: RunSpec, plan: ExperimentPlan, paths: Materialized, out: Path) -> dict:
    rdir = out / "runs" / run.run_id
    rdir.mkdir(parents=True, exist_ok=True)
    log = rdir / "log.txt"
    t0 = time.time()

    lang_key = "transfer" if run.variant == "transfer-adapt" else "base"
    corpus_path = paths.corpus[(lang_key, run.size)]
    lexicon_path = paths.lexicon[lang_key]
    if run.variant == "nlr-pruned-lexicon":
        lexicon_path = paths.lexicon_pruned
    arch = run.arch if run.variant == "transfer-adapt" else (
        "baseline" if run.variant == "baseline" else "nlr")

    cfg = {"model": dict(plan.model), "train": dict(plan.train)}
    if run.run_id in plan.base_run_ids():
        cfg["model"]["n_languages"] = 2
        cfg["vocab"] = paths.union_vocab
    cfg_path = rdir / "cfg.json"
    sl.save_json(cfg, cfg_path)

    ckpt = rdir / "ckpt.bin"
    train_cmd = _cli("train", "--config", str(cfg_path), "--data", corpus_path,
                     "--lexicon", lexicon_path, "--variant", arch,
                     "--steps", str(run.steps), "--seed", str(run.seed),
                     "--out", str(ckpt))
    if run.variant == "nlr+word-query":
        train_cmd.append("--word-query")
    if run.init_from is not None:
        train_cmd += ["--init-from", str(out / "runs" / run.init_from / "ckpt.bin")]
    _run_cmd(train_cmd, log)

    spec_path = paths.spec[lang_key]

    def eval_to(name, testset, data_path, lexicon=lexicon_path):
        mpath = rdir / f"metrics_{name}.json"
        cmd = _cli("eval", "--ckpt", str(ckpt), "--data", data_path,
                   "--lexicon", lexicon, "--out", str(mpath), "--testset", testset)
        if testset != "general":
            cmd += ["--spec", spec_path]
        _run_cmd(cmd, log)
        return sl.load_json(mpath)

    general = eval_to("general", "general", corpus_path)
    rare = eval_to("rare", "rare", paths.rare[lang_key])
    het = eval_to("heteronym", "heteronym", paths.het[(lang_key, run.size)])
    metrics = {
        "run_id": run.run_id, "variant": run.variant, "size": run.size,
        "seed": run.seed, "steps": run.steps, "status": "ok",
        "ter": general["token_error_rate"],
        "rare_acc": rare["focus_accuracy"],
        "het_err": het["heteronym_error"],
    }
    if run.variant == "transfer-adapt":
        metrics["arch"] = run.arch
    if run.variant == "nlr-pruned-lexicon":
        full = eval_to("general_full_lexicon", "general", corpus_path,
                       lexicon=paths.lexicon["base"])
        metrics["ter_full_lexicon"] = full["token_error_rate"]
    metrics["wall_clock"] = round(time.time() - t0, 3)
    return metrics


# ---------------------------------------------------------------------------
# the runner


def _fmt(x) -> str:
    return "" if x is None else f"{x:.6f}"


def summary_rows(results: dict, runs: list[RunSpec]) -> list[str]:
    rows = []
    for run in runs:
        m = results[run.run_id]
        if m.get("status") != "ok":
            rows.append(f"{run.run_id},{run.variant},{run.size},{run.seed},,,")
            continue
        rows.append(f"{run.run_id},{run.variant},{run.size},{run.seed},"
                    f"{_fmt(m['ter'])},{_fmt(m['rare_acc'])},{_fmt(m['het_err'])}")
        if "ter_full_lexicon" in m:
            rows.append(f"{run.run_id}@full-lexicon,{run.variant},{run.size},{run.seed},"
                        f"{_fmt(m['ter_full_lexicon'])},,")
    return rows


def run_experiment(plan_path, out_dir, jobs: int = 1) -> int:
    """Execute every run in the plan; one failed run does not abort siblings."""
    try:
        plan = ExperimentPlan.from_dict(sl.load_json(plan_path))
    except json.JSONDecodeError as e:
        raise DataFormatError(f"{plan_path}: bad JSON: {e}") from None
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    sl.save_json(sl.load_json(plan_path), out / "plan.json")
    paths = materialize(plan, out)

    results: dict[str, dict] = {}

    def do_run(run: RunSpec) -> None:
        t0 = time.time()
        print(f"[{run.run_id}] started", flush=True)
        try:
            results[run.run_id] = execute_run(run, plan, paths, out)
            m = results[run.run_id]
            print(f"[{run.run_id}] ok: ter={m['ter']:.4f} rare={m['rare_acc']:.3f} "
                  f"het={m['het_err']:.3f} ({time.time() - t0:.0f}s)", flush=True)
        except Exception as e:  # failed runs are recorded, siblings continue
            results[run.run_id] = {
                "run_id": run.run_id, "variant": run.variant, "size": run.size,
                "seed": run.seed, "steps": run.steps, "status": "failed",
                "error": str(e), "wall_clock": round(time.time() - t0, 3),
            }
            print(f"[{run.run_id}] FAILED: {e}", flush=True)

    bases = plan.base_run_ids()
    phase_a = [r for r in plan.runs if r.init_from is None]
    phase_b = [r for r in plan.runs if r.init_from is not None]
    for phase in (phase_a, phase_b):
        if jobs > 1:
            with ThreadPoolExecutor(max_workers=jobs) as pool:
                list(pool.map(do_run, phase))
        else:
            for r in phase:
                do_run(r)
        if phase is phase_a:
            failed_bases = [r.run_id for r in phase_a
                            if r.run_id in bases and results[r.run_id]["status"] != "ok"]
            for r in phase_b:
                if r.init_from in failed_bases:
                    results[r.run_id] = {
                        "run_id": r.run_id, "variant": r.variant, "size": r.size,
                        "seed": r.seed, "steps": r.steps, "status": "failed",
                        "error": f"base run {r.init_from!r} failed", "wall_clock": 0.0,
                    }
            phase_b = [r for r in phase_b if r.init_from not in failed_bases]

    for run in plan.runs:
        sl.save_json(results[run.run_id], out / "runs" / run.run_id / "metrics.json")
    with open(out / "summary.csv", "w", encoding="utf-8", newline="\n") as fh:
        fh.write(CSV_HEADER + "\n")
        for row in summary_rows(results, plan.runs):
            fh.write(row + "\n")
    n_failed = sum(1 for m in results.values() if m["status"] != "ok")
    print(f"wrote {out / 'summary.csv'} ({len(plan.runs)} runs, {n_failed} failed)")
    return 0 if n_failed == 0 else 3


# ---------------------------------------------------------------------------
# the default grid (what the acceptance suite runs)


def default_plan(steps_scale: float = 1.0) -> dict:
    """The shipped experiment grid: low-resource comparison at three sizes,
    pruned-lexicon run, and cross-language adaptation from two base models."""

    def st(n):
        return max(60, int(round(n * steps_scale)))

    runs = [
        {"id": "base-nlr", "variant": "nlr", "size": 4000, "seed": 1, "steps": st(2600)},
        {"id": "base-baseline", "variant": "baseline", "size": 4000, "seed": 1, "steps": st(2600)},
        {"id": "nlr-2000", "variant": "nlr", "size": 2000, "seed": 2, "steps": st(2600)},
        {"id": "baseline-2000", "variant": "baseline", "size": 2000, "seed": 2, "steps": st(2600)},
        {"id": "nlr-1000", "variant": "nlr", "size": 1000, "seed": 3, "steps": st(2200)},
        {"id": "baseline-1000", "variant": "baseline", "size": 1000, "seed": 3, "steps": st(2200)},
        {"id": "nlr-500", "variant": "nlr", "size": 500, "seed": 4, "steps": st(1800)},
        {"id": "baseline-500", "variant": "baseline", "size": 500, "seed": 4, "steps": st(1800)},
        {"id": "nlr-pruned", "variant": "nlr-pruned-lexicon", "size": 2000, "seed": 5,
         "steps": st(2600)},
        {"id": "xfer-nlr-500", "variant": "transfer-adapt", "arch": "nlr", "size": 500,
         "seed": 6, "steps": st(900), "init_from": "base-nlr"},
        {"id": "xfer-baseline-500", "variant": "transfer-adapt", "arch": "baseline",
         "size": 500, "seed": 6, "steps": st(900), "init_from": "base-baseline"},
        {"id": "xfer-nlr-250", "variant": "transfer-adapt", "arch": "nlr", "size": 250,
         "seed": 7, "steps": st(700), "init_from": "base-nlr"},
        {"id": "xfer-baseline-250", "variant": "transfer-adapt", "arch": "baseline",
         "size": 250, "seed": 7, "steps": st(700), "init_from": "base-baseline"},
    ]
    return {
        "language": {"seed": 101, "chars": [600, 60, 40], "phonemes": 40, "words": 80},
        "corpus": {"size": 4000, "seed": 11, "eval_size": 150},
        "transfer": {"seed": 303, "corpus_size": 500, "corpus_seed": 21, "eval_size": 150},
        "prune_keep_size": 500,
        "model": {"d_model": 48, "n_heads": 4, "d_ff": 192},
        "train": {"batch_size": 16, "lr": 3e-3, "warmup_steps": 200, "log_every": 200},
        "runs": runs,
    }
