"""Hot numeric kernels with a numba path and a pure-numpy fallback.

Set ``ANCHOROP_DISABLE_NUMBA=1`` before import to force the numpy path.
Both paths are always importable as ``np_*`` / ``nb_*`` so they can be
compared directly; the unprefixed names are the selected backend.

Segments are contiguous row ranges described by an offsets array
``starts`` of length ``n_segments + 1`` (``starts[0] == 0``,
``starts[-1] == n_rows``). Empty segments are not allowed.
"""

import os

import numpy as np

_DISABLED = os.environ.get("ANCHOROP_DISABLE_NUMBA", "").strip().lower() in ("1", "true", "yes")

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None


def _segment_ids(starts):
    lengths = np.diff(starts)
    return np.repeat(np.arange(len(lengths)), lengths)


# ---------------------------------------------------------------------------
# numpy implementations
# ---------------------------------------------------------------------------

def np_segment_softmax(scores, starts):
    seg = _segment_ids(starts)
    peak = np.maximum.reduceat(scores, starts[:-1])
    e = np.exp(scores - peak[seg])
    return e / np.add.reduceat(e, starts[:-1])[seg]


def np_segment_softmax_backward(probs, dprobs, starts):
    seg = _segment_ids(starts)
    inner = np.add.reduceat(probs * dprobs, starts[:-1])
    return probs * (dprobs - inner[seg])


def np_segment_weighted_sum(weights, rows, starts):
    return np.add.reduceat(weights[:, None] * rows, starts[:-1], axis=0)


def np_segment_weighted_sum_backward(weights, rows, dout, starts):
    seg = _segment_ids(starts)
    expanded = dout[seg]
    dweights = np.einsum("ij,ij->i", rows, expanded)
    drows = weights[:, None] * expanded
    return dweights, drows


def np_scatter_add_rows(target, ids, rows):
    np.add.at(target, ids, rows)


def np_levenshtein(a, b):
    """Unit-cost edit distance between two int code arrays."""
    a, b = a.tolist(), b.tolist()
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, 1):
        cur = [i]
        for j, cb in enumerate(b, 1):
            cur.append(min(prev[j - 1] + (ca != cb), prev[j] + 1, cur[j - 1] + 1))
        prev = cur
    return prev[-1]


# ---------------------------------------------------------------------------
# numba implementations
# ---------------------------------------------------------------------------

def _nb_segment_softmax(scores, starts):
    out = np.empty_like(scores)
    for s in range(len(starts) - 1):
        lo, hi = starts[s], starts[s + 1]
        peak = scores[lo]
        for i in range(lo + 1, hi):
            if scores[i] > peak:
                peak = scores[i]
        total = 0.0
        for i in range(lo, hi):
            out[i] = np.exp(scores[i] - peak)
            total += out[i]
        for i in range(lo, hi):
            out[i] /= total
    return out


def _nb_segment_softmax_backward(probs, dprobs, starts):
    out = np.empty_like(probs)
    for s in range(len(starts) - 1):
        lo, hi = starts[s], starts[s + 1]
        inner = 0.0
        for i in range(lo, hi):
            inner += probs[i] * dprobs[i]
        for i in range(lo, hi):
            out[i] = probs[i] * (dprobs[i] - inner)
    return out


def _nb_segment_weighted_sum(weights, rows, starts):
    n_seg = len(starts) - 1
    d = rows.shape[1]
    out = np.zeros((n_seg, d), dtype=rows.dtype)
    for s in range(n_seg):
        for i in range(starts[s], starts[s + 1]):
            w = weights[i]
            for k in range(d):
                out[s, k] += w * rows[i, k]
    return out


def _nb_segment_weighted_sum_backward(weights, rows, dout, starts):
    d = rows.shape[1]
    dweights = np.empty_like(weights)
    drows = np.empty_like(rows)
    for s in range(len(starts) - 1):
        for i in range(starts[s], starts[s + 1]):
            acc = 0.0
            w = weights[i]
            for k in range(d):
                acc += rows[i, k] * dout[s, k]
                drows[i, k] = w * dout[s, k]
            dweights[i] = acc
    return dweights, drows


def _nb_scatter_add_rows(target, ids, rows):
    d = rows.shape[1]
    for i in range(len(ids)):
        r = ids[i]
        for k in range(d):
            target[r, k] += rows[i, k]


def _nb_levenshtein(a, b):
    n, m = len(a), len(b)
    prev = np.arange(m + 1)
    cur = np.empty(m + 1, dtype=prev.dtype)
    for i in range(1, n + 1):
        cur[0] = i
        for j in range(1, m + 1):
            cost = 0 if a[i - 1] == b[j - 1] else 1
            v = prev[j - 1] + cost
            if prev[j] + 1 < v:
                v = prev[j] + 1
            if cur[j - 1] + 1 < v:
                v = cur[j - 1] + 1
            cur[j] = v
        prev, cur = cur, prev
    return prev[m]


if numba is not None:
    _jit = numba.njit(cache=True, nogil=True)
    nb_segment_softmax = _jit(_nb_segment_softmax)
    nb_segment_softmax_backward = _jit(_nb_segment_softmax_backward)
    nb_segment_weighted_sum = _jit(_nb_segment_weighted_sum)
    nb_segment_weighted_sum_backward = _jit(_nb_segment_weighted_sum_backward)
    nb_scatter_add_rows = _jit(_nb_scatter_add_rows)
    _nb_lev_jit = _jit(_nb_levenshtein)

    def nb_levenshtein(a, b):
        return int(_nb_lev_jit(a, b))
else:  # pragma: no cover
    nb_segment_softmax = np_segment_softmax
    nb_segment_softmax_backward = np_segment_softmax_backward
    nb_segment_weighted_sum = np_segment_weighted_sum
    nb_segment_weighted_sum_backward = np_segment_weighted_sum_backward
    nb_scatter_add_rows = np_scatter_add_rows
    nb_levenshtein = np_levenshtein


USE_NUMBA = numba is not None and not _DISABLED
BACKEND = "numba" if USE_NUMBA else "numpy"

if USE_NUMBA:
    segment_softmax = nb_segment_softmax
    segment_softmax_backward = nb_segment_softmax_backward
    segment_weighted_sum = nb_segment_weighted_sum
    segment_weighted_sum_backward = nb_segment_weighted_sum_backward
    scatter_add_rows = nb_scatter_add_rows
    levenshtein = nb_levenshtein
else:
    segment_softmax = np_segment_softmax
    segment_softmax_backward = np_segment_softmax_backward
    segment_weighted_sum = np_segment_weighted_sum
    segment_weighted_sum_backward = np_segment_weighted_sum_backward
    scatter_add_rows = np_scatter_add_rows
    levenshtein = np_levenshtein
