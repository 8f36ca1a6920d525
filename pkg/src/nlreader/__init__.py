"""Lexicon-reading sequence models on a small float64 autodiff core.

Subpackages:

- `numerics`: tensors, reverse-mode gradients, Adam, finite-difference oracle
- `lexicon`: raw-text lexicon store (load/lookup/edit/prune, JSONL format)
- `knowledge`: entry-text encoders producing key/value bundles for attention
- `model`: encoder/decoder model with per-token knowledge attention
- `synthlang`: synthetic-language generator, corpora, test sets, scoring
- `cli` / `experiment`: command-line tools and the experiment grid runner
"""

__version__ = "0.1.0"
