"""Pilot: learning quality + wall time at desk scale (not part of the package)."""
import sys, time
import numpy as np
from nlreader import synthlang as sl, model as md, vocab as vb, training as tr, evaluation as ev

d_model = int(sys.argv[1]) if len(sys.argv) > 1 else 32
d_ff = d_model * 4
steps = int(sys.argv[2]) if len(sys.argv) > 2 else 1000

t0 = time.time()
spec = sl.generate_language(101)
lex = sl.render_lexicon(spec)
corpus = sl.sample_corpus(spec, 4000, seed=11, n_eval=150)
rare = sl.build_rare_set(spec)
sv, pv = vb.vocabs_for_specs([spec])
print(f"setup {time.time()-t0:.1f}s; vocab {len(sv)}/{len(pv)}", flush=True)

def run(name, n, t2k, steps=steps):
    cfg = md.ModelConfig(sv.symbols, pv.symbols, d_model=d_model, n_heads=4, d_ff=d_ff,
                         t2k_enabled=t2k, seed=5)
    sub = sl.downsample(corpus, n / 4000, seed=77, spec=spec)
    t0 = time.time()
    res = tr.train_model(sub.train(), lex, cfg, tr.TrainSettings(steps=steps, seed=9),
                         progress=lambda s, l: print(f"  [{name}] step {s} loss {l:.4f}", flush=True) if s % 200 == 0 else None)
    t_train = time.time() - t0
    t0 = time.time()
    gen = ev.evaluate_general(corpus.eval(), lex, cfg, res.params)
    rr = ev.evaluate_rare(spec, rare.items, lex, cfg, res.params)
    t_eval = time.time() - t0
    print(f"{name}: TER={gen.token_error_rate:.4f} rare_acc={rr.focus_accuracy:.3f} "
          f"rare_ter={rr.token_error_rate:.4f} train={t_train/60:.1f}min eval={t_eval:.0f}s", flush=True)
    return res

run("nlr@4000", 4000, True)
run("nlr@2000", 2000, True)
run("base@2000", 2000, False)
run("nlr@500", 500, True)
run("base@500", 500, False)
print(f"total {(time.time()-t0)/60:.1f} min")
