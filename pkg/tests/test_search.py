import json
from importlib.resources import files

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hremrg.errors import ContractError, ScorerFailure, SearchBudgetError
from hremrg.metrics import MetricWeights
from hremrg.search import (
    LookupScorer, SearchTrace, evaluation_budget, greedy_weight_search, grid_search_oracle,
)

TABLE = files("hremrg").joinpath("data", "three_metric_grid.csv")


def separable(seed, m, n):
    """f(w) = sum_i g_i(w_i) with each g_i strictly unimodal on 1..n."""
    rng = np.random.default_rng(seed)
    tables = []
    for _ in range(m):
        peak = int(rng.integers(1, n + 1))
        slope = rng.uniform(0.1, 1.0, size=n)
        g = [-float(sum(slope[min(v, peak) - 1:max(v, peak) - 1])) for v in range(1, n + 1)]
        tables.append(g)
    return lambda w: sum(t[v - 1] for t, v in zip(tables, w))


def counting(scorer):
    calls = []

    def wrapped(w):
        calls.append(tuple(w))
        return scorer(w)

    return wrapped, calls


# ------------------------------------------------------------------ lookup table

def test_lookup_table_loaded():
    scorer = LookupScorer.from_file(TABLE)
    assert len(scorer.table) == 27
    assert scorer.active == (3, 4, 5)
    assert scorer((1, 1, 2)) == 2.0833
    assert scorer.label((1, 1, 2)) == "0:0:0:1:1:2:0"


def test_greedy_on_lookup_table():
    scorer = LookupScorer.from_file(TABLE)
    weights, trace = greedy_weight_search(scorer, 3, 3)
    assert scorer.expand(weights) == MetricWeights.parse("0:0:0:1:1:2:0")
    assert trace.best == ((1, 1, 2), 2.0833)
    assert trace.unique_count <= 8
    assert [scorer.label(w) for w, _ in trace.evaluations] == [
        "0:0:0:1:1:1:0", "0:0:0:2:1:1:0", "0:0:0:1:2:1:0", "0:0:0:1:1:2:0", "0:0:0:1:1:3:0",
        "0:0:0:2:1:2:0", "0:0:0:1:2:2:0",
    ]


def test_grid_on_lookup_table():
    scorer = LookupScorer.from_file(TABLE)
    weights, trace = grid_search_oracle(scorer, 3, 3)
    assert weights == (1, 1, 2) and trace.best[1] == 2.0833
    assert len(trace.evaluations) == trace.unique_count == 27


def test_lookup_from_json(tmp_path):
    path = tmp_path / "t.json"
    path.write_text(json.dumps({"1:0:0:0:0:0:0": 0.5, "2:0:0:0:0:0:0": 0.7, "3:0:0:0:0:0:0": 0.6}))
    scorer = LookupScorer.from_file(path)
    assert scorer.m == 1
    assert greedy_weight_search(scorer, 1, 3)[0] == (2,)


# ------------------------------------------------------------------ greedy properties

def test_constant_scorer():
    for m in (1, 3, 7):
        weights, trace = greedy_weight_search(lambda w: 1.0, m, 4)
        assert weights == (1,) * m
        assert trace.unique_count == m + 1


def test_memoised_and_ordered():
    scorer, calls = counting(separable(0, 4, 5))
    _, trace = greedy_weight_search(scorer, 4, 5)
    assert len(calls) == len(set(calls)) == trace.unique_count
    assert [w for w, _ in trace.evaluations] == calls


@settings(max_examples=150, deadline=None)
@given(st.integers(0, 2**31), st.integers(1, 5), st.integers(2, 5))
def test_separable_matches_grid(seed, m, n):
    scorer = separable(seed, m, n)
    g_w, g_trace = greedy_weight_search(scorer, m, n)
    o_w, o_trace = grid_search_oracle(scorer, m, n)
    assert g_trace.best[1] == pytest.approx(o_trace.best[1], abs=1e-12)
    assert g_trace.unique_count <= evaluation_budget(m, n)


@settings(max_examples=150, deadline=None)
@given(st.integers(0, 2**31), st.integers(1, 7), st.integers(2, 6))
def test_budget_and_best_seen(seed, m, n):
    rng = np.random.default_rng(seed)
    cache = {}
    scorer = lambda w: cache.setdefault(w, float(rng.normal()))  # noqa: E731
    weights, trace = greedy_weight_search(scorer, m, n)
    assert trace.unique_count <= evaluation_budget(m, n)
    assert dict(trace.evaluations)[weights] == max(s for _, s in trace.evaluations)
    assert all(1 <= v <= n for w, _ in trace.evaluations for v in w)


def test_failure_keeps_partial_trace():
    def flaky(w):
        if sum(w) > 4:
            raise RuntimeError("boom")
        return float(sum(w))

    with pytest.raises(ScorerFailure) as err:
        greedy_weight_search(flaky, 3, 3)
    assert err.value.trace.unique_count == 4
    assert isinstance(err.value.trace, SearchTrace)
    with pytest.raises(ScorerFailure):
        greedy_weight_search(LookupScorer({MetricWeights.parse("1:1:0:0:0:0:0"): 1.0}), 2, 3)


def test_preconditions():
    with pytest.raises(ContractError):
        greedy_weight_search(lambda w: 0.0, 0, 3)
    with pytest.raises(ContractError):
        greedy_weight_search(lambda w: 0.0, 2, 1)


# ------------------------------------------------------------------ grid and budget

def test_grid_one_metric_is_a_sweep():
    weights, trace = grid_search_oracle(lambda w: -(w[0] - 3) ** 2, 1, 5)
    assert weights == (3,) and [w for w, _ in trace.evaluations] == [(v,) for v in range(1, 6)]


def test_grid_ties_go_lexicographically_smallest():
    weights, _ = grid_search_oracle(lambda w: float(w[0] + w[1] == 4), 2, 3)
    assert weights == (1, 3)


def test_grid_guard():
    with pytest.raises(SearchBudgetError) as err:
        grid_search_oracle(lambda w: 0.0, 7, 8)
    assert err.value.required == 8**7


def test_evaluation_budget_values():
    assert evaluation_budget(7, 5) == 56
    assert evaluation_budget(3, 3) == 12
    assert evaluation_budget(1, 5) == 5
    assert evaluation_budget(7, 5) <= 20 + 7 * 5 + 1
