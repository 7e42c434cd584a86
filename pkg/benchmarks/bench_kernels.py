"""Compare the numba and numpy backends of the metric kernels.

    python3 benchmarks/bench_kernels.py [--repeat 200] [--length 60]

Runs every kernel on the same random token sequences with both backends,
checks they agree, and prints the mean time per call.
"""
import argparse
import time

import numpy as np

from hremrg import _kernels as K


def timed(fn, args, repeat):
    fn(*args)  # warm-up (compiles the jitted path)
    start = time.perf_counter()
    for _ in range(repeat):
        out = fn(*args)
    return out, (time.perf_counter() - start) / repeat


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=200)
    ap.add_argument("--length", type=int, default=60, help="tokens per sequence")
    ap.add_argument("--vocab", type=int, default=30)
    ap.add_argument("--refs", type=int, default=4)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    if not K.HAVE_NUMBA:
        raise SystemExit("numba backend unavailable (is HREMRG_DISABLE_NUMBA set?)")

    rng = np.random.default_rng(args.seed)
    cand = rng.integers(args.vocab, size=args.length)
    refs = [rng.integers(args.vocab, size=args.length) for _ in range(args.refs)]
    flat = np.concatenate(refs)
    offsets = np.cumsum([0] + [len(r) for r in refs])

    cases = [("lcs_length", K.lcs_length_numpy, K.lcs_length_numba, (cand, refs[0]))]
    for n in (1, 2, 4):
        cases.append((f"clipped_ngram_counts n={n}", K.clipped_ngram_counts_numpy, K.clipped_ngram_counts_numba,
                      (cand, flat, offsets, n)))

    print(f"{'kernel':28s} {'numpy us':>10s} {'numba us':>10s} {'speedup':>8s}")
    for name, slow, fast, call_args in cases:
        a, t_np = timed(slow, call_args, args.repeat)
        b, t_nb = timed(fast, call_args, args.repeat)
        if a != b:
            raise SystemExit(f"{name}: backends disagree ({a} vs {b})")
        print(f"{name:28s} {t_np * 1e6:10.1f} {t_nb * 1e6:10.1f} {t_np / t_nb:7.1f}x")


if __name__ == "__main__":
    main()
