"""Deterministic training loop with length-bucketed batches."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import model as md, numerics as nm
from .lexicon import Lexicon


@dataclass
class TrainSettings:
    """Training-recipe knobs; the optimizer defaults (Adam 1e-3 with 200-step
    linear warmup) are placeholders, not values taken from any reference."""

    steps: int = 1200
    batch_size: int = 16
    lr: float = 1e-3
    warmup_steps: int = 200
    seed: int = 0
    log_every: int = 50

    def to_dict(self) -> dict:
        return {"steps": self.steps, "batch_size": self.batch_size, "lr": self.lr,
                "warmup_steps": self.warmup_steps, "seed": self.seed,
                "log_every": self.log_every}


@dataclass
class TrainResult:
    params: nm.ParameterSet
    opt_state: nm.OptimizerState
    losses: list = field(default_factory=list)  # (step, loss) every log_every steps


def make_batches(lengths, batch_size: int, rng: np.random.Generator) -> list[list[int]]:
    """Length-bucketed index batches in a seeded random order."""
    tiebreak = rng.permutation(len(lengths))
    order = sorted(range(len(lengths)), key=lambda i: (lengths[i], tiebreak[i]))
    batches = [order[i : i + batch_size] for i in range(0, len(order), batch_size)]
    perm = rng.permutation(len(batches))
    return [batches[i] for i in perm]


def train_model(train_utts, lexicon: Lexicon, config: md.ModelConfig,
                settings: TrainSettings, params: nm.ParameterSet | None = None,
                external_store: dict | None = None,
                progress=None) -> TrainResult:
    """Train for a fixed number of steps over bucketed batches.

    `train_utts` are symbolic utterances (chars/phonemes/lang); `params` may
    come from a checkpoint for fine-tuning. Fully determined by (inputs,
    config, settings).
    """
    if not train_utts:
        raise ValueError("no training utterances")
    params = params if params is not None else md.init_params(config)
    variant = md.build_variant(config, params, external_store) if config.t2k_enabled else None
    encoded = [md.encode_sample(u, config) for u in train_utts]
    lengths = [len(u.target_ids) for u in encoded]
    rng = np.random.default_rng(settings.seed)
    dropout_rng = np.random.default_rng(settings.seed + 1) if config.dropout > 0 else None
    opt = nm.OptimizerState(lr=settings.lr, warmup_steps=settings.warmup_steps)

    losses = []
    step = 0
    while step < settings.steps:
        for idx in make_batches(lengths, settings.batch_size, rng):
            batch = [encoded[i] for i in idx]
            loss = md.train_step(batch, lexicon, config, params, opt, variant, dropout_rng)
            step += 1
            if step % settings.log_every == 0 or step == 1 or step == settings.steps:
                losses.append((step, loss))
                if progress is not None:
                    progress(step, loss)
            if step >= settings.steps:
                break
    return TrainResult(params, opt, losses)
