"""Hot kernels: scatter/segment reductions and masked top-k.

Every kernel has a numba implementation and a pure-numpy implementation with
the same signature. The numba path is used when numba imports cleanly and
``GRCN_DISABLE_NUMBA`` is unset (or "0"). ``GRCN_THREADS`` caps the numba
thread pool.
"""
import os

import numpy as np

_TRUTHY = {"1", "true", "yes", "on"}


def _env_disabled():
    return os.environ.get("GRCN_DISABLE_NUMBA", "").strip().lower() in _TRUTHY


try:
    import numba
    from numba import njit, prange

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAS_NUMBA = False

USE_NUMBA = HAS_NUMBA and not _env_disabled()


def thread_cap():
    raw = os.environ.get("GRCN_THREADS", "").strip()
    if not raw:
        return None
    try:
        n = int(raw)
    except ValueError:
        return None
    return n if n > 0 else None


# ---------------------------------------------------------------------------
# numpy reference implementations


class numpy_impl:
    @staticmethod
    def scatter_add(values, index, n):
        out = np.zeros((n,) + values.shape[1:], dtype=np.float64)
        np.add.at(out, index, values)
        return out

    @staticmethod
    def segment_max(values, index, n):
        out = np.full(n, -np.inf)
        np.maximum.at(out, index, values)
        return out

    @staticmethod
    def segment_softmax(logits, index, n):
        if logits.size == 0:
            return np.zeros(0)
        shifted = logits - numpy_impl.segment_max(logits, index, n)[index]
        ex = np.exp(shifted)
        denom = numpy_impl.scatter_add(ex, index, n)
        return ex / denom[index]

    @staticmethod
    def segment_softmax_grad(probs, grad, index, n):
        pg = probs * grad
        inner = numpy_impl.scatter_add(pg, index, n)
        return pg - probs * inner[index]

    @staticmethod
    def topk_masked(scores, mask, k):
        # ties: lower item index first (stable sort on negated scores)
        n_rows = scores.shape[0]
        idx = np.full((n_rows, k), -1, dtype=np.int64)
        for r in range(n_rows):
            cand = np.flatnonzero(mask[r])
            order = np.argsort(-scores[r, cand], kind="stable")[:k]
            idx[r, : order.size] = cand[order]
        return idx


# ---------------------------------------------------------------------------
# numba implementations

if HAS_NUMBA:

    @njit(cache=True)
    def _scatter_add_1d(values, index, n):
        out = np.zeros(n)
        for e in range(values.shape[0]):
            out[index[e]] += values[e]
        return out

    @njit(cache=True)
    def _scatter_add_2d(values, index, n):
        d = values.shape[1]
        out = np.zeros((n, d))
        for e in range(values.shape[0]):
            r = index[e]
            for c in range(d):
                out[r, c] += values[e, c]
        return out

    @njit(cache=True)
    def _segment_max(values, index, n):
        out = np.full(n, -np.inf)
        for e in range(values.shape[0]):
            r = index[e]
            if values[e] > out[r]:
                out[r] = values[e]
        return out

    @njit(cache=True)
    def _segment_softmax(logits, index, n):
        peak = _segment_max(logits, index, n)
        ex = np.empty(logits.shape[0])
        denom = np.zeros(n)
        for e in range(logits.shape[0]):
            v = np.exp(logits[e] - peak[index[e]])
            ex[e] = v
            denom[index[e]] += v
        for e in range(logits.shape[0]):
            ex[e] /= denom[index[e]]
        return ex

    @njit(cache=True)
    def _segment_softmax_grad(probs, grad, index, n):
        inner = np.zeros(n)
        for e in range(probs.shape[0]):
            inner[index[e]] += probs[e] * grad[e]
        out = np.empty(probs.shape[0])
        for e in range(probs.shape[0]):
            out[e] = probs[e] * grad[e] - probs[e] * inner[index[e]]
        return out

    @njit(cache=True, parallel=True)
    def _topk_masked(scores, mask, k):
        n_rows, n_cols = scores.shape
        idx = np.full((n_rows, k), -1, dtype=np.int64)
        for r in prange(n_rows):
            cand = np.flatnonzero(mask[r])
            vals = np.empty(cand.shape[0])
            for j in range(cand.shape[0]):
                vals[j] = -scores[r, cand[j]]
            order = np.argsort(vals, kind="mergesort")
            m = min(k, order.shape[0])
            for j in range(m):
                idx[r, j] = cand[order[j]]
        return idx

    class numba_impl:
        @staticmethod
        def scatter_add(values, index, n):
            values = np.ascontiguousarray(values, dtype=np.float64)
            index = np.ascontiguousarray(index, dtype=np.int64)
            if values.ndim == 1:
                return _scatter_add_1d(values, index, n)
            if values.ndim == 2:
                return _scatter_add_2d(values, index, n)
            return numpy_impl.scatter_add(values, index, n)

        @staticmethod
        def segment_max(values, index, n):
            return _segment_max(
                np.ascontiguousarray(values, dtype=np.float64),
                np.ascontiguousarray(index, dtype=np.int64),
                n,
            )

        @staticmethod
        def segment_softmax(logits, index, n):
            return _segment_softmax(
                np.ascontiguousarray(logits, dtype=np.float64),
                np.ascontiguousarray(index, dtype=np.int64),
                n,
            )

        @staticmethod
        def segment_softmax_grad(probs, grad, index, n):
            return _segment_softmax_grad(
                np.ascontiguousarray(probs, dtype=np.float64),
                np.ascontiguousarray(grad, dtype=np.float64),
                np.ascontiguousarray(index, dtype=np.int64),
                n,
            )

        @staticmethod
        def topk_masked(scores, mask, k):
            return _topk_masked(
                np.ascontiguousarray(scores, dtype=np.float64),
                np.ascontiguousarray(mask, dtype=np.bool_),
                k,
            )

    _cap = thread_cap()
    if _cap is not None:
        numba.set_num_threads(min(_cap, numba.config.NUMBA_NUM_THREADS))

else:  # pragma: no cover
    numba_impl = numpy_impl


def backend():
    return numba_impl if USE_NUMBA else numpy_impl


def backend_name():
    return "numba" if USE_NUMBA else "numpy"


def scatter_add(values, index, n):
    """Sum rows of ``values`` into ``n`` buckets given by ``index``."""
    return backend().scatter_add(values, index, n)


def segment_max(values, index, n):
    return backend().segment_max(values, index, n)


def segment_softmax(logits, index, n):
    """Softmax of ``logits`` within each group sharing an ``index`` value."""
    return backend().segment_softmax(logits, index, n)


def segment_softmax_grad(probs, grad, index, n):
    return backend().segment_softmax_grad(probs, grad, index, n)


def topk_masked(scores, mask, k):
    """Per row, the ``k`` highest-scoring columns where ``mask`` is true.

    Ties go to the lower column index. Rows with fewer than ``k`` candidates
    are padded with -1.
    """
    return backend().topk_masked(scores, mask, k)
