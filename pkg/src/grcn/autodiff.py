"""Dense float64 tensors with a reverse-mode gradient tape.

Only the operations the recommender needs are provided. Operations record
themselves on the innermost active :class:`GradientTape` when at least one
input is tracked (a trainable leaf or an output already on that tape).

    >>> w = Tensor([1.0, 2.0], requires_grad=True)
    >>> with GradientTape() as tape:
    ...     loss = dot(w, Tensor([3.0, 4.0]))
    >>> tape.backward(loss)[w]
    array([3., 4.])
"""
import threading

import numpy as np

from grcn import _accel

NORM_EPS = 1e-12


class ShapeError(ValueError):
    pass


class TapeError(RuntimeError):
    pass


class Tensor:
    """Shape-carrying array of 64-bit reals.

    ``requires_grad`` marks a trainable leaf. Outputs of recorded operations
    carry a handle (``tape_id``) into the tape that produced them.
    """

    __slots__ = ("data", "requires_grad", "grad", "name", "_tape", "_index")
    __array_priority__ = 100

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.name = name
        self._tape = None
        self._index = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def values(self):
        """Row-major flat view of the data."""
        return self.data.reshape(-1)

    @property
    def tape_id(self):
        if self._tape is None:
            return None
        return (id(self._tape), self._index)

    def numpy(self):
        return self.data.copy()

    def item(self):
        return float(self.data)

    def detach(self):
        return Tensor(self.data)

    def __repr__(self):
        tag = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag})"

    def __len__(self):
        return self.data.shape[0]

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self):
        return transpose(self)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


# ---------------------------------------------------------------------------
# tape


class _Node:
    __slots__ = ("parents", "backward")

    def __init__(self, parents, backward):
        self.parents = parents
        self.backward = backward


_local = threading.local()


def _stack():
    if not hasattr(_local, "stack"):
        _local.stack = []
    return _local.stack


def active_tape():
    stack = _stack()
    return stack[-1] if stack else None


class GradientTape:
    """Append-only record of operations; use as a context manager.

    ``backward`` may be called once; call ``reset`` to reuse the tape.
    """

    def __init__(self):
        self.nodes = []
        self.root = None
        self._leaves = {}
        self._done = False

    def __enter__(self):
        _stack().append(self)
        return self

    def __exit__(self, *exc):
        stack = _stack()
        if stack and stack[-1] is self:
            stack.pop()
        return False

    def watch(self, *tensors):
        for t in tensors:
            if not t.requires_grad:
                raise TapeError(f"cannot watch non-trainable {t!r}")
            self._leaves.setdefault(id(t), t)

    def reset(self):
        self.nodes = []
        self.root = None
        self._leaves = {}
        self._done = False

    def tracks(self, t):
        if t._tape is self:
            return True
        return t.requires_grad and t._tape is None

    def record(self, out, parents, backward):
        for p in parents:
            if p.requires_grad and p._tape is None:
                self._leaves.setdefault(id(p), p)
        out._tape = self
        out._index = len(self.nodes)
        self.nodes.append(_Node(parents, backward))
        return out

    def backward(self, loss):
        """Reverse sweep from scalar ``loss``; returns ``{leaf: gradient}``.

        Every leaf seen by the tape (or watched) gets an entry, zero-filled
        when the loss does not depend on it. Leaves' ``.grad`` is set too.
        """
        if self._done:
            raise TapeError("backward already ran on this tape; call reset()")
        if loss.data.ndim != 0:
            raise ShapeError(f"loss must be 0-dimensional, got shape {loss.shape}")
        if loss._tape is not self:
            raise TapeError("loss is not recorded on this tape")
        self._done = True
        self.root = loss._index

        node_grads = [None] * (loss._index + 1)
        node_grads[loss._index] = np.ones(())
        leaf_grads = {}
        for idx in range(loss._index, -1, -1):
            g = node_grads[idx]
            if g is None:
                continue
            node = self.nodes[idx]
            for p, pg in zip(node.parents, node.backward(g)):
                if pg is None:
                    continue
                if p._tape is self:
                    prev = node_grads[p._index]
                    node_grads[p._index] = pg if prev is None else prev + pg
                elif p.requires_grad and p._tape is None:
                    prev = leaf_grads.get(id(p))
                    leaf_grads[id(p)] = pg if prev is None else prev + pg

        out = {}
        for key, leaf in self._leaves.items():
            g = leaf_grads.get(key)
            g = np.zeros_like(leaf.data) if g is None else np.asarray(g, dtype=np.float64)
            leaf.grad = g
            out[leaf] = g
        return out


def _emit(data, parents, backward):
    out = Tensor(data)
    tape = active_tape()
    if tape is None or not any(tape.tracks(p) for p in parents):
        return out
    return tape.record(out, parents, backward)


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _emit(
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _emit(
        a.data - b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
    )


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _emit(
        a.data * b.data,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def leaky_relu(x, slope=0.01):
    """max(x, slope*x); the subgradient at 0 is ``slope``."""
    if not 0.0 < slope < 1.0:
        raise ValueError(f"slope must lie in (0, 1), got {slope}")
    x = as_tensor(x)
    local = np.where(x.data > 0, 1.0, slope)
    return _emit(x.data * local, (x,), lambda g: (g * local,))


def relu(x):
    x = as_tensor(x)
    local = (x.data > 0).astype(np.float64)
    return _emit(x.data * local, (x,), lambda g: (g * local,))


def softplus(x):
    """log(1 + exp(x)), overflow-safe; softplus(-m) == -log(sigmoid(m))."""
    x = as_tensor(x)
    sig = 0.5 * (1.0 + np.tanh(0.5 * x.data))
    return _emit(np.logaddexp(0.0, x.data), (x,), lambda g: (g * sig,))


def reshape(x, shape):
    x = as_tensor(x)
    old = x.shape
    return _emit(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),))


# ---------------------------------------------------------------------------
# linear algebra and reductions


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul dimension mismatch: {a.shape} @ {b.shape}")
    return _emit(a.data @ b.data, (a, b), lambda g: (g @ b.data.T, a.data.T @ g))


def transpose(x):
    x = as_tensor(x)
    if x.ndim != 2:
        raise ShapeError(f"transpose expects a matrix, got shape {x.shape}")
    return _emit(x.data.T.copy(), (x,), lambda g: (g.T,))


def sum(x, axis=None):
    x = as_tensor(x)
    shape = x.shape
    if axis is None:
        return _emit(x.data.sum(), (x,), lambda g: (np.broadcast_to(g, shape).copy(),))
    out = x.data.sum(axis=axis)

    def back(g):
        return (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),)

    return _emit(out, (x,), back)


def dot(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 1 or a.shape != b.shape:
        raise ShapeError(f"dot needs equal-length vectors: {a.shape} vs {b.shape}")
    return _emit(float(a.data @ b.data), (a, b), lambda g: (g * b.data, g * a.data))


def rowdot(a, b):
    """Row-wise inner products of two equally shaped matrices."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape or a.ndim != 2:
        raise ShapeError(f"rowdot shape mismatch: {a.shape} vs {b.shape}")
    out = np.einsum("ij,ij->i", a.data, b.data)
    return _emit(out, (a, b), lambda g: (g[:, None] * b.data, g[:, None] * a.data))


def max_columns(x):
    """Per-row maximum of a matrix; gradient flows to the first argmax."""
    x = as_tensor(x)
    arg = np.argmax(x.data, axis=1)
    rows = np.arange(x.shape[0])

    def back(g):
        out = np.zeros_like(x.data)
        out[rows, arg] = g
        return (out,)

    return _emit(x.data[rows, arg], (x,), back)


def concat(tensors, axis=1):
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    cuts = np.cumsum(sizes)[:-1]
    return _emit(
        np.concatenate([t.data for t in tensors], axis=axis),
        tuple(tensors),
        lambda g: tuple(np.split(g, cuts, axis=axis)),
    )


def stack_columns(vectors):
    """(n,) vectors -> (n, k) matrix."""
    vectors = [as_tensor(v) for v in vectors]
    return _emit(
        np.stack([v.data for v in vectors], axis=1),
        tuple(vectors),
        lambda g: tuple(g[:, j] for j in range(g.shape[1])),
    )


def sum_squares(x):
    x = as_tensor(x)
    return _emit(float(np.sum(x.data * x.data)), (x,), lambda g: (2.0 * g * x.data,))


def global_norm(tensors, eps=NORM_EPS):
    """Euclidean norm of all entries of ``tensors`` taken together.

    The gradient is taken as zero when the norm is at or below ``eps``.
    """
    tensors = [as_tensor(t) for t in tensors]
    total = float(np.sqrt(np.sum([np.sum(t.data * t.data) for t in tensors])))

    def back(g):
        if total <= eps:
            return tuple(np.zeros_like(t.data) for t in tensors)
        return tuple(g * t.data / total for t in tensors)

    return _emit(total, tuple(tensors), back)


# ---------------------------------------------------------------------------
# normalisation and neighbourhood operations


def l2_normalize(x, eps=NORM_EPS):
    """Scale a vector (or each matrix row) to unit length.

    Vectors with norm <= ``eps`` pass through unchanged.
    """
    x = as_tensor(x)
    if x.ndim == 1:
        out = l2_normalize(reshape(x, (1, -1)), eps)
        return reshape(out, x.shape)
    if x.ndim != 2:
        raise ShapeError(f"l2_normalize expects 1-D or 2-D input, got {x.shape}")
    norms = np.sqrt(np.einsum("ij,ij->i", x.data, x.data))
    live = norms > eps
    scale = np.where(live, norms, 1.0)
    y = x.data / scale[:, None]

    def back(g):
        proj = np.einsum("ij,ij->i", y, g)
        dx = (g - np.where(live, proj, 0.0)[:, None] * y) / scale[:, None]
        return (dx,)

    return _emit(y, (x,), back)


def gather(x, index):
    """Rows ``x[index]``; the gradient scatters back with summation."""
    x = as_tensor(x)
    index = np.asarray(index, dtype=np.int64)
    n = x.shape[0]
    return _emit(x.data[index], (x,), lambda g: (_accel.scatter_add(g, index, n),))


def segment_sum(x, index, n):
    """Sum rows of ``x`` sharing the same ``index`` into an ``n``-row output."""
    x = as_tensor(x)
    index = np.asarray(index, dtype=np.int64)
    if index.shape[0] != x.shape[0]:
        raise ShapeError(f"segment index length {index.shape[0]} != rows {x.shape[0]}")
    return _emit(_accel.scatter_add(x.data, index, n), (x,), lambda g: (g[index],))


def segment_softmax(logits, index, n):
    """Softmax within each group of entries sharing an ``index`` value."""
    logits = as_tensor(logits)
    index = np.asarray(index, dtype=np.int64)
    if logits.ndim != 1 or index.shape != logits.shape:
        raise ShapeError(f"segment_softmax needs matching 1-D inputs: {logits.shape}, {index.shape}")
    probs = _accel.segment_softmax(logits.data, index, n)
    return _emit(
        probs,
        (logits,),
        lambda g: (_accel.segment_softmax_grad(probs, g, index, n),),
    )


def softmax_over_set(logits):
    logits = as_tensor(logits)
    if logits.ndim != 1 or logits.shape[0] == 0:
        raise ValueError("softmax over an empty set is undefined")
    return segment_softmax(logits, np.zeros(logits.shape[0], dtype=np.int64), 1)


# ---------------------------------------------------------------------------
# finite-difference oracle


def numerical_gradient(fn, tensor, h=1e-5):
    """Central differences of scalar ``fn()`` with respect to ``tensor``."""
    grad = np.zeros_like(tensor.data)
    flat = tensor.data.reshape(-1)
    gflat = grad.reshape(-1)
    for k in range(flat.size):
        orig = flat[k]
        flat[k] = orig + h
        up = float(fn())
        flat[k] = orig - h
        down = float(fn())
        flat[k] = orig
        gflat[k] = (up - down) / (2.0 * h)
    return grad


def relative_error(a, b, floor=1e-12):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = max(np.linalg.norm(a), np.linalg.norm(b), floor)
    return float(np.linalg.norm(a - b) / denom)


def gradcheck(fn, tensors, h=1e-5):
    """Compare tape gradients of ``fn`` against central differences.

    ``fn`` builds a scalar from ``tensors`` (all trainable leaves). Returns a
    list of relative errors, one per tensor.
    """
    with GradientTape() as tape:
        tape.watch(*tensors)
        loss = fn()
    analytic = tape.backward(loss)
    errors = []
    for t in tensors:
        numeric = numerical_gradient(lambda: fn().data, t, h)
        errors.append(relative_error(analytic[t], numeric))
    return errors
