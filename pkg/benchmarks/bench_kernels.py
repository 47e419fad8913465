"""Time the numba kernels against their numpy fallbacks.

    python3 benchmarks/bench_kernels.py [--repeat N]

Also times one encoder forward/backward pass under each backend by
swapping the selected kernels in place.
"""

import argparse
import time

import numpy as np

from anchorop import _kernels as K
from anchorop import encoder

NAMES = ("segment_softmax", "segment_softmax_backward", "segment_weighted_sum",
         "segment_weighted_sum_backward", "scatter_add_rows", "levenshtein")


def best_of(fn, repeat):
    fn()  # warm-up (and JIT compile)
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def kernel_cases(rng):
    lens = rng.integers(1, 12, 20_000)
    starts = np.concatenate([[0], np.cumsum(lens)]).astype(np.int64)
    n = int(starts[-1])
    s = rng.normal(size=n)
    rows = rng.normal(size=(n, 32))
    p = K.np_segment_softmax(s, starts)
    dp = rng.normal(size=n)
    dout = rng.normal(size=(len(lens), 32))
    ids = rng.integers(0, 4096, n)
    a = rng.integers(97, 123, 12).astype(np.int64)
    b = rng.integers(97, 123, 14).astype(np.int64)

    def scatter(impl):
        return lambda: impl(np.zeros((4096, 32)), ids, rows)

    return {
        "segment_softmax": lambda impl: (lambda: impl(s, starts)),
        "segment_softmax_backward": lambda impl: (lambda: impl(p, dp, starts)),
        "segment_weighted_sum": lambda impl: (lambda: impl(p, rows, starts)),
        "segment_weighted_sum_backward": lambda impl: (lambda: impl(p, rows, dout, starts)),
        "scatter_add_rows": scatter,
        "levenshtein": lambda impl: (lambda: [impl(a, b) for _ in range(2000)]),
    }


def encoder_pass(rng):
    params = encoder.init_encoder_params(rng)
    vocab = ["bilkul", "aap", "kya", "desh", "sarkar", "congress", "mandir", "dekhiye", "<name>"]
    utts = [[vocab[i] for i in rng.integers(0, len(vocab), int(rng.integers(5, 40)))] for _ in range(256)]
    fb = encoder.flatten(utts, params["ngram_embedding"].shape[0])

    def step():
        out, cache = encoder.forward_flat(params, fb)
        encoder.backward_flat(params, cache, np.ones_like(out))

    return step


def use_backend(prefix):
    for name in NAMES:
        setattr(K, name, getattr(K, f"{prefix}_{name}"))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    cases = kernel_cases(rng)
    print(f"{'kernel':<32}{'numpy ms':>12}{'numba ms':>12}{'speed-up':>10}")
    for name in NAMES:
        t_np = best_of(cases[name](getattr(K, f"np_{name}")), args.repeat)
        t_nb = best_of(cases[name](getattr(K, f"nb_{name}")), args.repeat)
        print(f"{name:<32}{1e3 * t_np:>12.2f}{1e3 * t_nb:>12.2f}{t_np / t_nb:>9.1f}x")
    step = encoder_pass(rng)
    selected = K.BACKEND
    timings = {}
    for prefix in ("np", "nb"):
        use_backend(prefix)
        timings[prefix] = best_of(step, args.repeat)
    use_backend("nb" if selected == "numba" else "np")
    print(f"{'encoder forward+backward':<32}{1e3 * timings['np']:>12.2f}{1e3 * timings['nb']:>12.2f}"
          f"{timings['np'] / timings['nb']:>9.1f}x")


if __name__ == "__main__":
    main()
