"""Hot inner loops, each with a numba and a pure-numpy implementation.

The numba path is used when numba imports and ``DEISTE_NUMBA`` is not set to
``0``/``false``/``off``. Both paths take and return plain float64/int64/bool
arrays and are interchangeable; ``tests/test_kernels.py`` checks them against
each other and ``benchmarks/bench_kernels.py`` times them.

All row-wise kernels work on 2-D views ``(rows, n)``; callers reshape.
"""

import os

import numpy as np

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None


def _env_wants_numba():
    flag = os.environ.get("DEISTE_NUMBA", "1").strip().lower()
    return flag not in ("0", "false", "off", "no")


# ---------------------------------------------------------------------------
# pure numpy
# ---------------------------------------------------------------------------


def masked_max_last_np(x, mask):
    """Row max over unmasked entries; ties go to the lowest index.

    Fully masked rows get value 0.0 and index -1.
    """
    filled = np.where(mask, x, -np.inf)
    idx = np.argmax(filled, axis=1)
    vals = filled[np.arange(x.shape[0]), idx]
    empty = ~mask.any(axis=1)
    idx = idx.astype(np.int64)
    idx[empty] = -1
    vals = np.where(empty, 0.0, vals)
    return vals, idx


def masked_softmax_last_np(x, mask):
    filled = np.where(mask, x, -np.inf)
    m = filled.max(axis=1, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    e = np.where(mask, np.exp(filled - m), 0.0)
    s = e.sum(axis=1, keepdims=True)
    s = np.where(s > 0.0, s, 1.0)
    return e / s


def softmax_backward_np(y, gout):
    dot = (y * gout).sum(axis=1, keepdims=True)
    return y * (gout - dot)


def scatter_add_rows_np(target, idx, src):
    np.add.at(target, idx, src)


def adagrad_update_np(param, grad, acc, lr, eps):
    acc += grad * grad
    param -= lr * grad / (np.sqrt(acc) + eps)


def adagrad_update_rows_np(param, grad, acc, rows, lr, eps):
    g = grad[rows]
    a = acc[rows] + g * g
    acc[rows] = a
    param[rows] -= lr * g / (np.sqrt(a) + eps)


# ---------------------------------------------------------------------------
# numba
# ---------------------------------------------------------------------------


def _masked_max_last_nb(x, mask):
    rows, n = x.shape
    vals = np.zeros(rows)
    idx = np.full(rows, -1, dtype=np.int64)
    for r in range(rows):
        best = -np.inf
        for j in range(n):
            if mask[r, j] and (idx[r] < 0 or x[r, j] > best):
                best = x[r, j]
                idx[r] = j
        if idx[r] >= 0:
            vals[r] = best
    return vals, idx


def _masked_softmax_last_nb(x, mask):
    rows, n = x.shape
    out = np.zeros((rows, n))
    for r in range(rows):
        m = -np.inf
        for j in range(n):
            if mask[r, j] and x[r, j] > m:
                m = x[r, j]
        if m == -np.inf:
            continue
        s = 0.0
        for j in range(n):
            if mask[r, j]:
                e = np.exp(x[r, j] - m)
                out[r, j] = e
                s += e
        for j in range(n):
            out[r, j] /= s
    return out


def _softmax_backward_nb(y, gout):
    rows, n = y.shape
    out = np.empty((rows, n))
    for r in range(rows):
        dot = 0.0
        for j in range(n):
            dot += y[r, j] * gout[r, j]
        for j in range(n):
            out[r, j] = y[r, j] * (gout[r, j] - dot)
    return out


def _scatter_add_rows_nb(target, idx, src):
    d = target.shape[1]
    for k in range(idx.shape[0]):
        row = idx[k]
        for c in range(d):
            target[row, c] += src[k, c]


def _adagrad_update_nb(param, grad, acc, lr, eps):
    for k in range(param.shape[0]):
        g = grad[k]
        acc[k] += g * g
        param[k] -= lr * g / (np.sqrt(acc[k]) + eps)


def _adagrad_update_rows_nb(param, grad, acc, rows, lr, eps):
    d = param.shape[1]
    for k in range(rows.shape[0]):
        r = rows[k]
        for c in range(d):
            g = grad[r, c]
            acc[r, c] += g * g
            param[r, c] -= lr * g / (np.sqrt(acc[r, c]) + eps)


_NUMPY = {
    "masked_max_last": masked_max_last_np,
    "masked_softmax_last": masked_softmax_last_np,
    "softmax_backward": softmax_backward_np,
    "scatter_add_rows": scatter_add_rows_np,
    "adagrad_update": adagrad_update_np,
    "adagrad_update_rows": adagrad_update_rows_np,
}

_NUMBA_SOURCES = {
    "masked_max_last": _masked_max_last_nb,
    "masked_softmax_last": _masked_softmax_last_nb,
    "softmax_backward": _softmax_backward_nb,
    "scatter_add_rows": _scatter_add_rows_nb,
    "adagrad_update": _adagrad_update_nb,
    "adagrad_update_rows": _adagrad_update_rows_nb,
}

_numba_cache = {}


def numba_kernels():
    """The jitted kernels, compiled lazily on first request."""
    if numba is None:
        raise RuntimeError("numba is not installed")
    if not _numba_cache:
        for name, fn in _NUMBA_SOURCES.items():
            _numba_cache[name] = numba.njit(cache=True, nogil=True)(fn)
    return dict(_numba_cache)


def numpy_kernels():
    return dict(_NUMPY)


USE_NUMBA = numba is not None and _env_wants_numba()

_active = numba_kernels() if USE_NUMBA else numpy_kernels()

masked_max_last = _active["masked_max_last"]
masked_softmax_last = _active["masked_softmax_last"]
softmax_backward = _active["softmax_backward"]
scatter_add_rows = _active["scatter_add_rows"]
adagrad_update = _active["adagrad_update"]
adagrad_update_rows = _active["adagrad_update_rows"]


def backend():
    return "numba" if USE_NUMBA else "numpy"
