"""Cross-entropy pretraining and self-critical policy-gradient fine-tuning."""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as T
from .decoding import beam_search, greedy_decode, sample_decode
from .errors import ContractError
from .metrics import CorpusStats, MetricWeights, corpus_scores, hybrid_reward, score_vector
from .vocab import SPECIAL_IDS

log = logging.getLogger(__name__)

PHASE_DEFAULTS = {
    "xent": {"base_lr": 1e-4, "batch_size": 8, "schedule": "noam"},
    "scst": {"base_lr": 1e-5, "batch_size": 3, "schedule": "cosine"},
}


@dataclass
class TrainConfig:
    phase: str = "xent"
    base_lr: float | None = None
    warmup: int = 10_000
    cosine_period: int = 15
    min_lr: float = 4e-8
    epochs: int = 60
    batch_size: int | None = None
    seed: int = 0
    weights: MetricWeights = field(default_factory=MetricWeights.ones)
    schedule: str | None = None
    beam: int = 2
    penalty: bool = True

    def __post_init__(self):
        if self.phase not in PHASE_DEFAULTS:
            raise ValueError(f"unknown phase {self.phase!r}")
        defaults = PHASE_DEFAULTS[self.phase]
        for key, value in defaults.items():
            if getattr(self, key) is None:
                setattr(self, key, value)
        self.weights = MetricWeights(self.weights)
        if self.base_lr <= 0 or self.min_lr <= 0:
            raise ValueError("learning rates must be positive")
        if self.warmup < 1 or self.epochs < 0 or self.batch_size < 1:
            raise ValueError("warmup and batch size must be >= 1, epochs >= 0")


def lr_schedule(cfg, step, epoch=0):
    """Noam warmup/decay normalised to peak at ``cfg.base_lr`` on the warmup
    step, or cosine annealing restarted every ``cfg.cosine_period`` epochs."""
    if cfg.schedule == "noam":
        if step < 1:
            raise ValueError("step must be >= 1")
        return cfg.base_lr * min(math.sqrt(cfg.warmup / step), step / cfg.warmup)
    if cfg.schedule == "cosine":
        phase = (epoch % cfg.cosine_period) / cfg.cosine_period
        return cfg.min_lr + (cfg.base_lr - cfg.min_lr) * (1 + math.cos(math.pi * phase)) / 2
    if cfg.schedule == "constant":
        return cfg.base_lr
    raise ValueError(f"unknown schedule {cfg.schedule!r}")


class AdamState:
    def __init__(self, beta1=0.9, beta2=0.999, eps=1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = {}
        self.v = {}
        self.step = 0

    def update(self, params, grads, lr):
        self.step += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1 - b1 ** self.step
        c2 = 1 - b2 ** self.step
        for name, p in params.items():
            g = grads[name]
            m = self.m.get(name)
            if m is None:
                m = self.m[name] = np.zeros_like(p.data)
                self.v[name] = np.zeros_like(p.data)
            v = self.v[name]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            p.data -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def content(tokens):
    return [t for t in tokens if t not in SPECIAL_IDS]


def xent_step(model, batch, opt, lr):
    """One Adam step on the mean per-token negative log-likelihood."""
    if not batch:
        raise ContractError("empty batch")
    n_tokens = sum(len(tokens) - 1 for _, tokens in batch)
    with T.GradTape() as tape:
        total = None
        for bundle, tokens in batch:
            lp = model.sequence_logprob(bundle, tokens)
            total = lp if total is None else T.add(total, lp)
        loss = T.scale(total, -1.0 / n_tokens)
    grads = T.backward(tape, loss, model.params)
    opt.update(model.params, grads, lr)
    return loss.item()


def xent_loss(model, batch):
    with T.no_grad():
        total = sum(model.sequence_logprob(b, t).item() for b, t in batch)
    return -total / sum(len(t) - 1 for _, t in batch)


@dataclass
class ScstStats:
    advantage: float
    sample_reward: float
    baseline_reward: float


def scst_step(model, batch, weights, stats, opt, lr, rng, scorer=None, max_len=None):
    """Self-critical policy-gradient step.

    ``batch`` holds ``(features, refs)`` pairs with refs as lists of content
    token ids.  The reward of one sampled report minus the reward of the
    penalised greedy report scales the gradient of the sample's
    log-probability.  Returns mean advantage and mean sample reward.
    """
    if stats is None and scorer is None:
        raise ContractError("SCST needs corpus statistics for CIDEr")
    weights = MetricWeights(weights).check_reward()
    if scorer is None:
        scorer = lambda cand, refs: score_vector(cand, refs, stats)  # noqa: E731
    advantages, samples, rewards, baselines = [], [], [], []
    for bundle, refs in batch:
        sample, _ = sample_decode(model, bundle, max_len, rng)
        greedy = greedy_decode(model, bundle, max_len, penalty=True)
        r_s = hybrid_reward(scorer(content(sample), refs), weights)
        r_g = hybrid_reward(scorer(content(greedy), refs), weights)
        advantages.append(r_s - r_g)
        samples.append(sample)
        rewards.append(r_s)
        baselines.append(r_g)
    active = [i for i, a in enumerate(advantages) if a != 0.0]
    if active:
        with T.GradTape() as tape:
            total = None
            for i in active:
                term = T.scale(model.sequence_logprob(batch[i][0], samples[i]), -advantages[i] / len(batch))
                total = term if total is None else T.add(total, term)
        grads = T.backward(tape, total, model.params)
        opt.update(model.params, grads, lr)
    return ScstStats(float(np.mean(advantages)), float(np.mean(rewards)), float(np.mean(baselines)))


def mean_sample_reward(model, examples, weights, stats, rng, draws=1, max_len=None):
    """Average hybrid reward of ``draws`` samples per ``(features, refs)`` pair."""
    total = []
    for bundle, refs in examples:
        for _ in range(draws):
            sample, _ = sample_decode(model, bundle, max_len, rng)
            total.append(hybrid_reward(score_vector(content(sample), refs, stats), weights))
    return float(np.mean(total))


def evaluate(model, examples, beam=2, penalty=True, max_len=None):
    """Decode ``examples`` (objects with ``bundle`` and ``refs``) and score them."""
    candidates = []
    for ex in examples:
        if beam == 1:
            tokens = greedy_decode(model, ex.bundle, max_len, penalty=penalty)
        else:
            tokens = beam_search(model, ex.bundle, beam, max_len, penalty=penalty)
        candidates.append(content(tokens))
    return corpus_scores(candidates, [ex.refs for ex in examples])


@dataclass
class TrainResult:
    best_arrays: dict
    best_score: float | None
    history: list


def train(model, train_examples, val_examples, cfg, out_dir=None, tag=None, stats=None):
    """Run one phase end to end, keeping the parameters with the best
    validation score sum.  Examples need ``bundle``, ``tokens`` and ``refs``.

    With ``out_dir`` the best checkpoint is written as ``<tag>.ckpt`` and the
    per-epoch log as ``<tag>_log.jsonl``.
    """
    tag = tag or cfg.phase
    rng = np.random.default_rng(cfg.seed)
    opt = AdamState()
    if cfg.phase == "scst" and stats is None:
        stats = CorpusStats.build([ex.refs for ex in train_examples])
    best_arrays, best_score = model.arrays(), None
    history = []
    step = 0
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(train_examples))
        losses = []
        lr = cfg.base_lr
        for start in range(0, len(order), cfg.batch_size):
            step += 1
            lr = lr_schedule(cfg, step, epoch)
            chunk = [train_examples[i] for i in order[start:start + cfg.batch_size]]
            if cfg.phase == "xent":
                losses.append(xent_step(model, [(ex.bundle, ex.tokens) for ex in chunk], opt, lr))
            else:
                res = scst_step(model, [(ex.bundle, ex.refs) for ex in chunk], cfg.weights, stats, opt, lr, rng)
                losses.append(res.sample_reward)
        _, agg = evaluate(model, val_examples, cfg.beam, cfg.penalty) if val_examples else (None, None)
        row = {
            "epoch": epoch + 1,
            "phase": cfg.phase,
            "lr": lr,
            ("train_loss" if cfg.phase == "xent" else "train_reward"): float(np.mean(losses)) if losses else None,
            "metrics": {k: v for k, v in agg.as_dict().items() if k != "score_sum"} if agg else {},
            "score_sum": agg.score_sum if agg else None,
        }
        history.append(row)
        log.info("epoch %d %s lr=%.3g score_sum=%s", epoch + 1, cfg.phase, lr, row["score_sum"])
        if agg is not None and (best_score is None or agg.score_sum > best_score):
            best_score, best_arrays = agg.score_sum, model.arrays()
        elif agg is None:
            best_arrays = model.arrays()
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        T.save_checkpoint(out_dir / f"{tag}.ckpt", best_arrays)
        lines = "".join(json.dumps(r, sort_keys=True) + "\n" for r in history)
        tmp = out_dir / f"{tag}_log.jsonl.tmp"
        tmp.write_text(lines, encoding="utf-8")
        tmp.replace(out_dir / f"{tag}_log.jsonl")
    return TrainResult(best_arrays, best_score, history)


def with_phase(cfg, phase, **overrides):
    """Copy of ``cfg`` for another phase, re-deriving phase defaults."""
    base = {k: v for k, v in cfg.__dict__.items() if k not in ("base_lr", "batch_size", "schedule")}
    base.update(phase=phase, **overrides)
    return TrainConfig(**base)
