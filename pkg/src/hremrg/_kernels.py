"""Integer-sequence kernels used by the text metrics.

Every kernel has a numba implementation and a pure-numpy one.  The numba
path is used when numba imports and ``HREMRG_DISABLE_NUMBA`` is unset or
``0``; set it to ``1`` to force the numpy path.
"""
import os

import numpy as np

_DISABLED = os.environ.get("HREMRG_DISABLE_NUMBA", "0").strip().lower() not in ("", "0", "false", "no")

try:
    if _DISABLED:
        raise ImportError("disabled by HREMRG_DISABLE_NUMBA")
    from numba import njit

    HAVE_NUMBA = True
except ImportError:
    HAVE_NUMBA = False


def lcs_length_numpy(a, b):
    """Longest common subsequence length, row-vectorised.

    With ``t[j] = L[i-1][j-1] + 1`` on a match and ``L[i-1][j]`` otherwise,
    row ``i`` is the running maximum of ``t``.
    """
    a = np.asarray(a, dtype=np.int64)
    b = np.asarray(b, dtype=np.int64)
    if a.size == 0 or b.size == 0:
        return 0
    prev = np.zeros(b.size + 1, dtype=np.int64)
    for tok in a:
        t = np.where(b == tok, prev[:-1] + 1, prev[1:])
        row = np.empty_like(prev)
        row[0] = 0
        row[1:] = np.maximum.accumulate(t)
        prev = row
    return int(prev[-1])


def clipped_ngram_counts_numpy(cand, refs_flat, ref_offsets, n):
    """Return (clipped matches, total candidate n-grams) for order ``n``.

    ``refs_flat`` holds every reference back to back; reference ``r`` is
    ``refs_flat[ref_offsets[r]:ref_offsets[r + 1]]``.
    """
    cand = np.asarray(cand, dtype=np.int64)
    total = max(cand.size - n + 1, 0)
    if total == 0:
        return 0, 0
    grams, counts = np.unique(np.lib.stride_tricks.sliding_window_view(cand, n), axis=0, return_counts=True)
    best = np.zeros(len(grams), dtype=np.int64)
    for r in range(len(ref_offsets) - 1):
        ref = np.asarray(refs_flat[ref_offsets[r]:ref_offsets[r + 1]], dtype=np.int64)
        if ref.size < n:
            continue
        windows = np.lib.stride_tricks.sliding_window_view(ref, n)
        hits = (windows[None, :, :] == grams[:, None, :]).all(axis=2).sum(axis=1)
        np.maximum(best, hits, out=best)
    return int(np.minimum(counts, best).sum()), total


def _lcs_length_loops(a, b):
    m = a.shape[0]
    k = b.shape[0]
    if m == 0 or k == 0:
        return 0
    prev = np.zeros(k + 1, dtype=np.int64)
    cur = np.zeros(k + 1, dtype=np.int64)
    for i in range(m):
        cur[0] = 0
        for j in range(k):
            if a[i] == b[j]:
                cur[j + 1] = prev[j] + 1
            elif prev[j + 1] >= cur[j]:
                cur[j + 1] = prev[j + 1]
            else:
                cur[j + 1] = cur[j]
        for j in range(k + 1):
            prev[j] = cur[j]
    return prev[k]


def _gram_equal(x, i, y, j, n):
    for t in range(n):
        if x[i + t] != y[j + t]:
            return False
    return True


def _clipped_ngram_counts_loops(cand, refs_flat, ref_offsets, n):
    total = cand.shape[0] - n + 1
    if total <= 0:
        return 0, 0
    matched = 0
    for i in range(total):
        # only the first occurrence of each distinct n-gram is scored
        seen = False
        for p in range(i):
            if _gram_equal(cand, p, cand, i, n):
                seen = True
                break
        if seen:
            continue
        count = 0
        for p in range(i, total):
            if _gram_equal(cand, p, cand, i, n):
                count += 1
        best = 0
        for r in range(ref_offsets.shape[0] - 1):
            lo = ref_offsets[r]
            hi = ref_offsets[r + 1]
            hits = 0
            for q in range(lo, hi - n + 1):
                if _gram_equal(refs_flat, q, cand, i, n):
                    hits += 1
            if hits > best:
                best = hits
        matched += min(count, best)
    return matched, total


if HAVE_NUMBA:
    _gram_equal = njit(cache=True)(_gram_equal)
    _lcs_jit = njit(cache=True)(_lcs_length_loops)
    _clip_jit = njit(cache=True)(_clipped_ngram_counts_loops)

    def lcs_length_numba(a, b):
        return int(_lcs_jit(np.asarray(a, dtype=np.int64), np.asarray(b, dtype=np.int64)))

    def clipped_ngram_counts_numba(cand, refs_flat, ref_offsets, n):
        m, t = _clip_jit(
            np.asarray(cand, dtype=np.int64),
            np.asarray(refs_flat, dtype=np.int64),
            np.asarray(ref_offsets, dtype=np.int64),
            int(n),
        )
        return int(m), int(t)

    lcs_length = lcs_length_numba
    clipped_ngram_counts = clipped_ngram_counts_numba
else:
    lcs_length_numba = None
    clipped_ngram_counts_numba = None
    lcs_length = lcs_length_numpy
    clipped_ngram_counts = clipped_ngram_counts_numpy


def backend():
    return "numba" if HAVE_NUMBA else "numpy"
