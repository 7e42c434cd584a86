"""Sequence generation: greedy, ancestral sampling and beam search, with the
exponential trigram repetition penalty.

Decoders work with any model exposing ``start(features) -> (context, state)``
and ``step(context, token, state) -> (log_probs, state)`` where ``log_probs``
is a 1-D numpy array over the vocabulary.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .vocab import BOS, EOS


class TrigramPenaltyState:
    """Counts of how often each (two previous tokens, next token) trigram
    has been emitted in the current sequence."""

    def __init__(self, counts=None):
        self._by_context = {}
        for (a, b, w), n in (counts or {}).items():
            self._by_context.setdefault((a, b), {})[w] = n

    def count(self, prev2, w):
        return self._by_context.get(tuple(prev2), {}).get(w, 0)

    def record(self, prev2, w):
        ctx = self._by_context.setdefault(tuple(prev2), {})
        ctx[w] = ctx.get(w, 0) + 1

    def context(self, prev2):
        return self._by_context.get(tuple(prev2), {})

    @property
    def counts(self):
        return {(*ctx, w): n for ctx, row in self._by_context.items() for w, n in row.items()}

    def copy(self):
        clone = TrigramPenaltyState()
        clone._by_context = {ctx: dict(row) for ctx, row in self._by_context.items()}
        return clone


def repetition_penalty(n):
    return 1.0 - math.exp(-n)


def apply_repetition_penalty(log_probs, prev2, state):
    """Subtract ``1 - exp(-n_w)`` from the log-probability of every word ``w``
    whose trigram ``(prev2, w)`` has been generated ``n_w`` times."""
    out = np.array(log_probs, dtype=np.float64, copy=True)
    for w, n in state.context(prev2).items():
        out[w] -= repetition_penalty(n)
    return out


def _max_len(model, max_len):
    if max_len is None:
        max_len = model.config.max_len
    if max_len < 2:
        raise ValueError("max_len must be at least 2")
    return max_len


def greedy_decode(model, features, max_len=None, penalty=True, return_logprob=False):
    """Arg-max decoding; the penalty only changes which token is selected."""
    max_len = _max_len(model, max_len)
    context, state = model.start(features)
    tokens = [BOS]
    trigrams = TrigramPenaltyState()
    logprob = 0.0
    while len(tokens) < max_len:
        log_probs, state = model.step(context, tokens[-1], state)
        prev2 = tuple(tokens[-2:]) if len(tokens) >= 2 else None
        scores = apply_repetition_penalty(log_probs, prev2, trigrams) if penalty and prev2 else log_probs
        w = int(np.argmax(scores))
        if prev2:
            trigrams.record(prev2, w)
        logprob += float(log_probs[w])
        tokens.append(w)
        if w == EOS:
            break
    return (tokens, logprob) if return_logprob else tokens


def sample_decode(model, features, max_len=None, rng=None):
    """Draw one sequence from the unpenalised model distribution.

    Returns ``(tokens, step_log_probs)``.
    """
    max_len = _max_len(model, max_len)
    rng = np.random.default_rng() if rng is None else rng
    context, state = model.start(features)
    tokens = [BOS]
    step_log_probs = []
    while len(tokens) < max_len:
        log_probs, state = model.step(context, tokens[-1], state)
        cdf = np.cumsum(np.exp(log_probs))
        w = int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"))
        w = min(w, len(cdf) - 1)
        step_log_probs.append(float(log_probs[w]))
        tokens.append(w)
        if w == EOS:
            break
    return tokens, step_log_probs


@dataclass
class Hypothesis:
    tokens: list
    score: float
    logprob: float
    state: object = None
    trigrams: TrigramPenaltyState = field(default_factory=TrigramPenaltyState)

    @property
    def mean_score(self):
        return self.score / max(len(self.tokens) - 1, 1)


def beam_search(model, features, beam=None, max_len=None, penalty=True, return_hypothesis=False):
    """Length-synchronous beam search.

    Hypotheses rank by cumulative (penalised) score while alive; once they
    emit EOS or reach ``max_len`` they compete by mean per-token score.
    """
    beam = model.config.beam if beam is None else beam
    if beam < 1:
        raise ValueError("beam must be at least 1")
    max_len = _max_len(model, max_len)
    context, state = model.start(features)
    live = [Hypothesis([BOS], 0.0, 0.0, state)]
    finished = []
    while live:
        expansions = []
        for hi, hyp in enumerate(live):
            log_probs, new_state = model.step(context, hyp.tokens[-1], hyp.state)
            prev2 = tuple(hyp.tokens[-2:]) if len(hyp.tokens) >= 2 else None
            scores = apply_repetition_penalty(log_probs, prev2, hyp.trigrams) if penalty and prev2 else log_probs
            for w in np.argsort(-scores, kind="stable")[:beam]:
                w = int(w)
                expansions.append((hyp.score + float(scores[w]), hi, w, float(log_probs[w]), new_state, prev2))
        expansions.sort(key=lambda e: (-e[0], e[1], e[2]))
        next_live = []
        for total, hi, w, lp, new_state, prev2 in expansions[:beam]:
            parent = live[hi]
            trigrams = parent.trigrams.copy()
            if prev2:
                trigrams.record(prev2, w)
            child = Hypothesis(parent.tokens + [w], total, parent.logprob + lp, new_state, trigrams)
            if w == EOS or len(child.tokens) >= max_len:
                finished.append(child)
            else:
                next_live.append(child)
        live = next_live
    best = finished[0]
    for hyp in finished[1:]:
        if hyp.mean_score > best.mean_score:
            best = hyp
    return best if return_hypothesis else best.tokens


def repeated_trigrams(tokens):
    """Trigram occurrences beyond the first of each distinct trigram."""
    grams = [tuple(tokens[i:i + 3]) for i in range(len(tokens) - 2)]
    return len(grams) - len(set(grams))
