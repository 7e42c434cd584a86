"""Text-generation metrics: BLEU-1..4, METEOR, ROUGE-L, CIDEr, and the
weighted sum of them used as a reinforcement reward.

Every metric sees tokens only through equality, so candidates and
references may be lists of ids or of strings.
"""
from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import ContractError

METRIC_NAMES = ("BLEU-1", "BLEU-2", "BLEU-3", "BLEU-4", "CIDEr", "METEOR", "ROUGE-L")
ROUGE_BETA = 1.2
METEOR_ALPHA = 0.9  # F_mean = PR / (alpha P + (1 - alpha) R) = 10PR / (R + 9P)
METEOR_GAMMA = 0.5
METEOR_BETA = 3.0
CIDER_MAX_N = 4


def _relabel(candidate, refs):
    table = {}
    conv = lambda seq: np.array([table.setdefault(t, len(table)) for t in seq], dtype=np.int64)  # noqa: E731
    return conv(candidate), [conv(r) for r in refs]


def _ngrams(tokens, n):
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


# --------------------------------------------------------------------- BLEU

def _closest_ref_length(c_len, ref_lengths):
    return min(ref_lengths, key=lambda r: (abs(r - c_len), r))


def brevity_penalty(c_len, r_len):
    if c_len == 0:
        return 0.0
    return 1.0 if c_len > r_len else math.exp(1.0 - r_len / c_len)


def bleu(candidate, refs, max_n=4, smooth=True):
    """Sentence BLEU with clipped n-gram precisions.

    With ``smooth`` the precisions for n >= 2 use add-one counts so that a
    missing 4-gram does not zero the score.
    """
    if not 1 <= max_n <= 4:
        raise ValueError("max_n must be in 1..4")
    if len(candidate) == 0:
        return 0.0
    refs = [r for r in refs]
    if not refs:
        raise ContractError("bleu needs at least one reference")
    cand, ref_arrays = _relabel(candidate, refs)
    flat = np.concatenate(ref_arrays) if ref_arrays else np.zeros(0, np.int64)
    offsets = np.concatenate([[0], np.cumsum([len(r) for r in ref_arrays])]).astype(np.int64)
    log_sum = 0.0
    for n in range(1, max_n + 1):
        matched, total = _kernels.clipped_ngram_counts(cand, flat, offsets, n)
        if smooth and n >= 2:
            matched, total = matched + 1, total + 1
        if matched == 0:
            return 0.0
        log_sum += math.log(matched / total)
    bp = brevity_penalty(len(cand), _closest_ref_length(len(cand), [len(r) for r in refs]))
    return bp * math.exp(log_sum / max_n)


def corpus_bleu(candidates, refs_list, max_n=4):
    """Unsmoothed corpus BLEU: counts and lengths pooled over all sentences."""
    matched = np.zeros(max_n, dtype=np.int64)
    totals = np.zeros(max_n, dtype=np.int64)
    c_len = r_len = 0
    for cand, refs in zip(candidates, refs_list):
        c, ref_arrays = _relabel(cand, refs)
        flat = np.concatenate(ref_arrays) if ref_arrays else np.zeros(0, np.int64)
        offsets = np.concatenate([[0], np.cumsum([len(r) for r in ref_arrays])]).astype(np.int64)
        for n in range(1, max_n + 1):
            m, t = _kernels.clipped_ngram_counts(c, flat, offsets, n)
            matched[n - 1] += m
            totals[n - 1] += t
        c_len += len(c)
        r_len += _closest_ref_length(len(c), [len(r) for r in refs])
    if c_len == 0 or np.any(matched == 0):
        return 0.0
    log_p = np.log(matched / totals).mean()
    return brevity_penalty(c_len, r_len) * math.exp(log_p)


# --------------------------------------------------------------------- ROUGE-L

def rouge_l(candidate, refs, beta=ROUGE_BETA):
    """LCS F-measure, best over references."""
    if len(candidate) == 0:
        return 0.0
    cand, ref_arrays = _relabel(candidate, refs)
    best = 0.0
    for ref in ref_arrays:
        if len(ref) == 0:
            continue
        lcs = _kernels.lcs_length(cand, ref)
        if lcs == 0:
            continue
        prec, rec = lcs / len(cand), lcs / len(ref)
        score = ((1 + beta**2) * prec * rec) / (rec + beta**2 * prec)
        best = max(best, score)
    return best


# --------------------------------------------------------------------- METEOR

_ALIGN_STATE_LIMIT = 200_000


class _SearchTooLarge(Exception):
    pass


def _greedy_alignment(cand, ref, need):
    used = set()
    left = dict(need)
    chunks = 0
    prev = -2
    for tok in cand:
        if left.get(tok, 0) == 0:
            prev = -2
            continue
        if prev + 1 < len(ref) and ref[prev + 1] == tok and prev + 1 not in used:
            j = prev + 1
        else:
            j = next(k for k, t in enumerate(ref) if t == tok and k not in used)
            chunks += 1
        used.add(j)
        left[tok] -= 1
        prev = j
    return chunks


def _min_chunks(cand, ref, need):
    """Fewest chunks over alignments that match ``need[t]`` copies of each token."""
    positions = {}
    for j, tok in enumerate(ref):
        positions.setdefault(tok, []).append(j)
    tok_mask = {tok: sum(1 << j for j in js) for tok, js in positions.items()}
    # occurrences of each token in cand[i:]
    remaining = [None] * (len(cand) + 1)
    tail = Counter()
    remaining[len(cand)] = dict(tail)
    for i in range(len(cand) - 1, -1, -1):
        tail[cand[i]] += 1
        remaining[i] = dict(tail)
    memo = {}
    inf = float("inf")

    def best(i, mask, prev):
        if i == len(cand):
            return 0
        key = (i, mask, prev)
        hit = memo.get(key)
        if hit is not None:
            return hit
        if len(memo) > _ALIGN_STATE_LIMIT:
            raise _SearchTooLarge
        tok = cand[i]
        want = need.get(tok, 0)
        left = want - (mask & tok_mask[tok]).bit_count() if want else 0
        result = inf
        if left > 0:
            for j in positions[tok]:
                if mask >> j & 1:
                    continue
                cost = 0 if j == prev + 1 else 1
                result = min(result, cost + best(i + 1, mask | (1 << j), j))
        if remaining[i + 1].get(tok, 0) >= left:
            result = min(result, best(i + 1, mask, -2))
        memo[key] = result
        return result

    return best(0, 0, -2)


def meteor_alignment(candidate, reference):
    """(matches, chunks) for the exact-match alignment with most matches and
    then fewest chunks.  Falls back to a greedy left-to-right alignment when
    the exact search exceeds its state budget."""
    cc, rc = Counter(candidate), Counter(reference)
    need = {tok: min(c, rc[tok]) for tok, c in cc.items() if tok in rc}
    matches = sum(need.values())
    if matches == 0:
        return 0, 0
    try:
        chunks = _min_chunks(list(candidate), list(reference), need)
    except _SearchTooLarge:
        chunks = _greedy_alignment(list(candidate), list(reference), need)
    return matches, chunks


def meteor(candidate, refs):
    """Exact-match METEOR, best over references."""
    best = 0.0
    if len(candidate) == 0:
        return best
    for ref in refs:
        if len(ref) == 0:
            continue
        matches, chunks = meteor_alignment(candidate, ref)
        if matches == 0:
            continue
        prec, rec = matches / len(candidate), matches / len(ref)
        f_mean = prec * rec / (METEOR_ALPHA * prec + (1 - METEOR_ALPHA) * rec)
        penalty = METEOR_GAMMA * (chunks / matches) ** METEOR_BETA
        best = max(best, f_mean * (1 - penalty))
    return best


# --------------------------------------------------------------------- CIDEr

class CorpusStats:
    """Document frequencies of 1..4-grams over a reference corpus.

    A document is the reference set of one example; ``df[g]`` counts the
    documents in which n-gram ``g`` occurs in at least one reference.
    """

    def __init__(self, df, n_docs):
        self.df = df
        self.n_docs = n_docs

    @classmethod
    def build(cls, refs_list, max_n=CIDER_MAX_N):
        df = Counter()
        for refs in refs_list:
            seen = set()
            for ref in refs:
                ref = list(ref)
                for n in range(1, max_n + 1):
                    seen.update(_ngrams(ref, n))
            df.update(seen)
        return cls(dict(df), len(refs_list))

    def idf(self, gram):
        return math.log(max(1.0, self.n_docs / max(self.df.get(gram, 0), 1)))

    def __len__(self):
        return self.n_docs


def _tfidf(tokens, n, stats):
    counts = _ngrams(list(tokens), n)
    return {g: c * stats.idf(g) for g, c in counts.items()}


def _cosine(a, b):
    dot = sum(w * b.get(g, 0.0) for g, w in a.items())
    na = math.sqrt(sum(w * w for w in a.values()))
    nb = math.sqrt(sum(w * w for w in b.values()))
    if na == 0.0 or nb == 0.0:
        return 0.0
    return dot / (na * nb)


def cider(candidates, refs_list, stats, max_n=CIDER_MAX_N):
    """Per-candidate CIDEr: ten times the mean over n of the reference-averaged
    TF-IDF cosine similarity."""
    if stats is None or stats.n_docs == 0:
        raise ContractError("CIDEr needs corpus statistics built from at least one document")
    scores = []
    for cand, refs in zip(candidates, refs_list):
        refs = [list(r) for r in refs]
        per_n = []
        for n in range(1, max_n + 1):
            vc = _tfidf(cand, n, stats)
            sims = [_cosine(vc, _tfidf(r, n, stats)) for r in refs]
            per_n.append(sum(sims) / len(sims) if sims else 0.0)
        scores.append(10.0 * sum(per_n) / max_n)
    return scores


# --------------------------------------------------------------------- vectors

@dataclass(frozen=True)
class ScoreVector:
    """Seven metric values in the fixed order of :data:`METRIC_NAMES`."""

    values: tuple

    def __post_init__(self):
        if len(self.values) != len(METRIC_NAMES):
            raise ContractError(f"score vector needs {len(METRIC_NAMES)} entries")
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))

    @property
    def score_sum(self):
        return math.fsum(self.values)

    def __getitem__(self, key):
        if isinstance(key, str):
            return self.values[METRIC_NAMES.index(key)]
        return self.values[key]

    def __iter__(self):
        return iter(self.values)

    def as_dict(self):
        out = dict(zip(METRIC_NAMES, self.values))
        out["score_sum"] = self.score_sum
        return out

    def shifted(self, c):
        return ScoreVector(tuple(v + c for v in self.values))


class MetricWeights(tuple):
    """Seven non-negative integer reward weights, same order as ScoreVector."""

    def __new__(cls, values):
        values = tuple(int(v) for v in values)
        if len(values) != len(METRIC_NAMES):
            raise ContractError(f"metric weights need {len(METRIC_NAMES)} entries, got {len(values)}")
        if any(v < 0 for v in values):
            raise ContractError("metric weights must be non-negative")
        return super().__new__(cls, values)

    @classmethod
    def parse(cls, text):
        return cls(int(v) for v in text.strip().split(":"))

    @classmethod
    def ones(cls):
        return cls((1,) * len(METRIC_NAMES))

    def __str__(self):
        return ":".join(str(v) for v in self)

    def __add__(self, other):
        return MetricWeights(a + b for a, b in zip(self, other))

    def check_reward(self):
        if not any(self):
            raise ContractError("at least one metric weight must be positive")
        return self


def score_vector(candidate, refs, stats):
    b = [bleu(candidate, refs, n) for n in range(1, 5)]
    c = cider([candidate], [refs], stats)[0]
    return ScoreVector((*b, c, meteor(candidate, refs), rouge_l(candidate, refs)))


def hybrid_reward(scores, weights):
    return math.fsum(w * s for w, s in zip(weights, scores))


def corpus_scores(candidates, refs_list, stats=None):
    """Per-candidate vectors plus the corpus aggregate.

    The aggregate uses unsmoothed corpus BLEU and the mean of the other
    metrics.  CIDEr statistics default to the evaluated references.
    """
    if stats is None:
        stats = CorpusStats.build(refs_list)
    per = [score_vector(c, r, stats) for c, r in zip(candidates, refs_list)]
    if not per:
        raise ContractError("no candidates to score")
    agg_bleu = [corpus_bleu(candidates, refs_list, n) for n in range(1, 5)]
    means = [float(np.mean([v[k] for v in per])) for k in ("CIDEr", "METEOR", "ROUGE-L")]
    return per, ScoreVector((*agg_bleu, *means))


def score_report(ids, per, aggregate):
    """UTF-8 JSON text: one object per candidate, the corpus aggregate last."""
    rows = [{"id": i, **v.as_dict()} for i, v in zip(ids, per)]
    rows.append({"id": "__corpus__", **aggregate.as_dict()})
    return json.dumps(rows, indent=1, ensure_ascii=False) + "\n"
