"""Search over integer reward weights.

:func:`greedy_weight_search` fixes one metric weight per round with a number
of scorer calls linear in the search space; :func:`grid_search_oracle`
enumerates the full grid and serves as its reference.
"""
from __future__ import annotations

import csv
import itertools
import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ContractError, ScorerFailure, SearchBudgetError
from .metrics import METRIC_NAMES, MetricWeights

GRID_LIMIT = 10**6


@dataclass
class SearchTrace:
    evaluations: list = field(default_factory=list)

    @property
    def unique_count(self):
        return len({w for w, _ in self.evaluations})

    @property
    def best(self):
        if not self.evaluations:
            return None
        best = self.evaluations[0]
        for item in self.evaluations[1:]:
            if item[1] > best[1]:
                best = item
        return best

    def to_dict(self, label=str):
        weights, score = self.best
        return {
            "evaluations": [{"weights": label(w), "score": s} for w, s in self.evaluations],
            "unique_evaluations": self.unique_count,
            "best": {"weights": label(weights), "score": score},
        }


class _Memo:
    def __init__(self, scorer, trace):
        self.scorer = scorer
        self.trace = trace
        self.cache = {}

    def __call__(self, weights):
        weights = tuple(weights)
        if weights not in self.cache:
            try:
                score = float(self.scorer(weights))
            except Exception as exc:
                raise ScorerFailure(f"scorer failed on {weights}: {exc}", self.trace) from exc
            self.cache[weights] = score
            self.trace.evaluations.append((weights, score))
        return self.cache[weights]


def greedy_weight_search(scorer, m, n):
    """Round-based greedy search over ``{1..n}^m``.

    Starting from all ones, each round tries ``+1`` on every unfixed metric,
    picks the best one (lowest index on ties), keeps incrementing it while
    the score strictly improves (first against the round's starting score,
    then against the previous step), and fixes it at its best observed
    value.  Returns the best vector seen anywhere and the trace.
    """
    if m < 1 or n < 2:
        raise ContractError("need m >= 1 metrics and a search space n >= 2")
    trace = SearchTrace()
    score = _Memo(scorer, trace)
    current = [1] * m
    fixed = set()
    score(current)
    while len(fixed) < m:
        start = score(current)
        trials = {}
        for i in range(m):
            if i in fixed:
                continue
            trial = list(current)
            trial[i] += 1
            trials[i] = score(trial)
        chosen = min(trials, key=lambda i: (-trials[i], i))
        seen = {current[chosen]: start, current[chosen] + 1: trials[chosen]}
        value, last = current[chosen] + 1, trials[chosen]
        if last > start:
            while value < n:
                trial = list(current)
                trial[chosen] = value + 1
                s = score(trial)
                seen[value + 1] = s
                if s <= last:
                    break
                value, last = value + 1, s
        current[chosen] = min(seen, key=lambda v: (-seen[v], v))
        fixed.add(chosen)
    best_weights, _ = trace.best
    return best_weights, trace


def grid_search_oracle(scorer, m, n, limit=GRID_LIMIT):
    """Exhaustive search; ties go to the lexicographically smallest vector."""
    if m < 1 or n < 1:
        raise ContractError("need m >= 1 and n >= 1")
    if n**m > limit:
        raise SearchBudgetError(n**m, limit)
    trace = SearchTrace()
    score = _Memo(scorer, trace)
    for weights in itertools.product(range(1, n + 1), repeat=m):
        score(weights)
    return trace.best[0], trace


def evaluation_budget(m, n):
    """Worst-case unique evaluations of the greedy search, baseline included."""
    return sum(range(2, m + 1)) + m * (n - 1) + 1


# ----------------------------------------------------------------- scorers

class SlotScorer:
    """Maps an m-vector of searched weights into the seven metric slots,
    leaving the unsearched metrics at weight zero."""

    def __init__(self, active):
        self.active = tuple(active)

    @property
    def m(self):
        return len(self.active)

    def expand(self, weights):
        full = [0] * len(METRIC_NAMES)
        for slot, w in zip(self.active, weights):
            full[slot] = w
        return MetricWeights(full)

    def label(self, weights):
        return str(self.expand(weights))


class LookupScorer(SlotScorer):
    """Scores from a pre-recorded ``weights -> score`` table."""

    def __init__(self, table):
        self.table = {MetricWeights(k): float(v) for k, v in table.items()}
        if not self.table:
            raise ContractError("lookup table is empty")
        active = [i for i in range(len(METRIC_NAMES)) if any(k[i] for k in self.table)]
        super().__init__(active)

    def __call__(self, weights):
        key = self.expand(weights)
        if key not in self.table:
            raise KeyError(f"no recorded score for {key}")
        return self.table[key]

    @classmethod
    def from_file(cls, path):
        """CSV rows ``w1:...:w7,score`` (header optional) or a JSON object
        mapping ``"w1:...:w7"`` to scores."""
        path = Path(path)
        text = path.read_text(encoding="utf-8")
        if path.suffix.lower() == ".json":
            data = json.loads(text)
            if isinstance(data, list):
                data = {row["weights"]: row["score"] for row in data}
            return cls({MetricWeights.parse(k): v for k, v in data.items()})
        table = {}
        for row in csv.reader(text.splitlines()):
            if not row or row[0].strip().startswith("#"):
                continue
            try:
                table[MetricWeights.parse(row[0])] = float(row[1])
            except (ValueError, IndexError):
                if table:
                    raise ContractError(f"{path}: bad lookup row {row!r}") from None
        return cls(table)


class PipelineScorer(SlotScorer):
    """Fine-tunes a copy of a pretrained model with the candidate weights and
    returns the validation score sum of the best epoch."""

    def __init__(self, make_model, train_examples, val_examples, cfg, active=range(len(METRIC_NAMES))):
        super().__init__(active)
        self.make_model = make_model
        self.train_examples = train_examples
        self.val_examples = val_examples
        self.cfg = cfg

    def __call__(self, weights):
        from .trainer import TrainConfig, train

        cfg = TrainConfig(**{**self.cfg.__dict__, "weights": self.expand(weights)})
        result = train(self.make_model(), self.train_examples, self.val_examples, cfg)
        return result.best_score
