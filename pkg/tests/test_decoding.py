import itertools
import math
from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_bundle, tiny_model
from hremrg.decoding import (
    TrigramPenaltyState, apply_repetition_penalty, beam_search, greedy_decode, repeated_trigrams,
    repetition_penalty, sample_decode,
)
from hremrg.vocab import BOS, EOS

A, B, C = 4, 5, 6
LOW = -20.0


class TableModel:
    """Stub decoder: ``table(prefix) -> {token: log_prob}``, unlisted tokens get LOW."""

    def __init__(self, table, vocab_size=7, max_len=10, beam=2):
        self.table = table
        self.vocab_size = vocab_size
        self.config = SimpleNamespace(max_len=max_len, beam=beam)

    def start(self, features):
        return None, (BOS,)

    def step(self, context, token, state):
        prefix = state if state[-1] == token and len(state) == 1 else (*state, token)
        out = np.full(self.vocab_size, LOW)
        for w, lp in self.table(prefix).items():
            out[w] = lp
        return out, prefix


def fixed(dist):
    return lambda prefix: dist


# ------------------------------------------------------------------ penalty

def test_penalty_values():
    lp = np.array([-1.0, -2.0, -3.0])
    np.testing.assert_array_equal(apply_repetition_penalty(lp, (1, 2), TrigramPenaltyState()), lp)
    state = TrigramPenaltyState({(1, 2, 0): 1})
    out = apply_repetition_penalty(lp, (1, 2), state)
    assert lp[0] - out[0] == pytest.approx(1 - math.exp(-1), abs=1e-15)
    assert lp[0] - out[0] == pytest.approx(0.632121, abs=1e-6)
    np.testing.assert_array_equal(out[1:], lp[1:])
    np.testing.assert_array_equal(apply_repetition_penalty(lp, (2, 1), state), lp)


@given(st.integers(0, 60), st.integers(0, 60))
def test_penalty_monotone_and_bounded(n1, n2):
    lo, hi = sorted((n1, n2))
    assert repetition_penalty(lo) <= repetition_penalty(hi) < 1 or hi > 36
    assert 0 <= repetition_penalty(hi) <= 1


def test_state_copy_is_independent():
    s = TrigramPenaltyState()
    s.record((1, 2), 3)
    t = s.copy()
    t.record((1, 2), 3)
    assert s.count((1, 2), 3) == 1 and t.count((1, 2), 3) == 2
    assert t.counts == {(1, 2, 3): 2}


# ------------------------------------------------------------------ greedy

def test_greedy_switch_trace():
    m = TableModel(fixed({A: -1.0, B: -1.3}), max_len=10)
    assert greedy_decode(m, None, penalty=False) == [BOS] + [A] * 9
    # (A,A,A) seen once: A drops to -1.632 below B's -1.3; the next two contexts
    # re-emit A until its third repeat costs 0.950 > B's 0.3 + 0.632
    assert greedy_decode(m, None, penalty=True) == [BOS, A, A, A, B, A, A, A, A, B]


def test_greedy_peaked_and_truncation():
    m = TableModel(lambda p: {A: -0.1} if len(p) < 4 else {EOS: -0.1}, max_len=10)
    assert greedy_decode(m, None, penalty=False) == [BOS, A, A, A, EOS]
    never = TableModel(fixed({A: -0.1}), max_len=6)
    assert len(greedy_decode(never, None)) == 6
    with pytest.raises(ValueError):
        greedy_decode(never, None, max_len=1)


def test_greedy_reports_true_logprob():
    m = TableModel(fixed({A: -1.0, B: -1.3}), max_len=5)
    tokens, lp = greedy_decode(m, None, penalty=True, return_logprob=True)
    assert tokens == [BOS, A, A, A, B]
    assert lp == pytest.approx(-1.0 * 3 - 1.3)


# ------------------------------------------------------------------ sampling

def test_sample_one_hot_and_seeded():
    m = TableModel(fixed({A: 0.0}), max_len=5)
    for seed in range(5):
        tokens, lps = sample_decode(m, None, rng=np.random.default_rng(seed))
        assert tokens == [BOS, A, A, A, A] and lps == [0.0] * 4
    model, b = tiny_model(), random_bundle()
    runs = [sample_decode(model, b, rng=np.random.default_rng(7)) for _ in range(2)]
    assert runs[0] == runs[1]


def test_sample_frequencies_within_three_sigma():
    probs = {A: 0.2, B: 0.5, C: 0.3}
    m = TableModel(fixed({w: math.log(p) for w, p in probs.items()}))
    m.table = lambda prefix: {w: math.log(p) for w, p in probs.items()} | {w: -math.inf for w in range(4)}
    rng = np.random.default_rng(0)
    n = 100_000
    counts = {A: 0, B: 0, C: 0}
    for _ in range(n):
        tokens, _ = sample_decode(m, None, max_len=2, rng=rng)
        counts[tokens[1]] += 1
    for w, p in probs.items():
        assert abs(counts[w] - n * p) <= 3 * math.sqrt(n * p * (1 - p))


# ------------------------------------------------------------------ beam

def test_beam_one_equals_greedy():
    for seed in range(10):
        model, b = tiny_model(seed=seed), random_bundle(seed=seed)
        for penalty in (False, True):
            assert beam_search(model, b, 1, penalty=penalty) == greedy_decode(model, b, penalty=penalty)


def test_beam_matches_exhaustive_enumeration():
    # greedy takes A first, but B leads to a much better continuation
    def table(prefix):
        if len(prefix) == 1:
            return {A: -0.4, B: -0.5}
        if prefix[1] == A:
            return {A: -2.0, B: -2.1}
        return {A: -0.1 if len(prefix) == 2 else -0.3, B: -0.2}

    m = TableModel(table, max_len=4)
    best, best_score = None, -math.inf
    for seq in itertools.product(range(7), repeat=3):
        _, state = m.start(None)
        token, score = BOS, 0.0
        for w in seq:
            lp, state = m.step(None, token, state)
            score += lp[w]
            token = w
        if score > best_score:
            best, best_score = [BOS, *seq], score
    hyp = beam_search(m, None, 2, penalty=False, return_hypothesis=True)
    assert hyp.tokens == best == [BOS, B, A, B]
    assert hyp.logprob == pytest.approx(best_score)
    assert greedy_decode(m, None, penalty=False) != best


def test_beam_all_eos_at_first_step():
    m = TableModel(fixed({EOS: -0.01, A: -5.0}))
    assert beam_search(m, None, 3) == [BOS, EOS]


def test_beam_dominates_greedy_over_two_steps():
    for seed in range(30):
        model, b = tiny_model(seed=seed), random_bundle(seed=100 + seed)
        g_tokens, g_lp = greedy_decode(model, b, max_len=3, penalty=False, return_logprob=True)
        hyp = beam_search(model, b, 2, max_len=3, penalty=False, return_hypothesis=True)
        assert hyp.mean_score >= g_lp / (len(g_tokens) - 1) - 1e-12


def test_hypothesis_score_is_sum_of_penalised_steps():
    m = TableModel(fixed({A: -1.0, B: -1.3}), max_len=6)
    hyp = beam_search(m, None, 1, penalty=True, return_hypothesis=True)
    assert hyp.tokens == [BOS, A, A, A, B, A]
    assert hyp.score == pytest.approx(-1.0 * 4 - 1.3 - 0.0)
    assert hyp.logprob == pytest.approx(-1.0 * 4 - 1.3)


def test_penalty_never_adds_repeats_on_random_models():
    for seed in range(20):
        model = tiny_model(seed=seed, vocab_size=12, d_model=8, max_len=25)
        b = random_bundle(seed=1000 + seed)
        assert repeated_trigrams(greedy_decode(model, b, penalty=True)) <= repeated_trigrams(
            greedy_decode(model, b, penalty=False))


def test_repeated_trigrams():
    assert repeated_trigrams([1, 2, 3, 1, 2, 3]) == 1
    assert repeated_trigrams([4, 4, 4, 4, 4]) == 2
    assert repeated_trigrams([1, 2]) == 0
