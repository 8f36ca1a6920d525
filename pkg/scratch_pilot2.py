"""Pilot 2: lr/steps/model-size probe on the nlr@2000 run."""
import sys, time
import numpy as np
from nlreader import synthlang as sl, model as md, vocab as vb, training as tr, evaluation as ev

d_model = int(sys.argv[1])
lr = float(sys.argv[2])
steps = int(sys.argv[3])

spec = sl.generate_language(101)
lex = sl.render_lexicon(spec)
corpus = sl.sample_corpus(spec, 4000, seed=11, n_eval=150)
rare = sl.build_rare_set(spec)
sv, pv = vb.vocabs_for_specs([spec])

cfg = md.ModelConfig(sv.symbols, pv.symbols, d_model=d_model, n_heads=4, d_ff=4*d_model,
                     t2k_enabled=True, seed=5)
sub = sl.downsample(corpus, 0.5, seed=77, spec=spec)

t0 = time.time()
res = tr.train_model(sub.train(), lex, cfg, tr.TrainSettings(steps=steps, lr=lr, seed=9, log_every=100),
                     progress=lambda s, l: print(f"  step {s} loss {l:.4f} ({(time.time()-t0)/60:.1f}m)", flush=True) if s % 500 == 0 else None)
gen = ev.evaluate_general(corpus.eval(), lex, cfg, res.params)
rr = ev.evaluate_rare(spec, rare.items, lex, cfg, res.params)
print(f"d{d_model} lr{lr} steps{steps}: TER={gen.token_error_rate:.4f} rare_acc={rr.focus_accuracy:.3f} "
      f"train={(time.time()-t0)/60:.1f}min", flush=True)
