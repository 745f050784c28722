"""Reverse-mode automatic differentiation over numpy arrays.

The engine is deliberately small: rank <= 2 float tensors, a tape that
records operations in execution order, and exactly the op vocabulary the
model needs. Gradients are only tracked while a ``Tape`` is active, so
inference runs at plain-numpy cost.
"""

from __future__ import annotations

import numpy as np

from .errors import DimensionError, GradCheckError, TrainingError

_DEFAULT_DTYPE = np.float64
_DEBUG_FINITE = False

COSINE_EPS = 1e-12


def set_default_dtype(name):
    """Select the storage dtype for new tensors ("float64" or "float32")."""
    global _DEFAULT_DTYPE
    if name not in ("float64", "float32"):
        raise ValueError(f"unsupported dtype {name!r}")
    _DEFAULT_DTYPE = np.float64 if name == "float64" else np.float32


def default_dtype():
    return _DEFAULT_DTYPE


def set_debug_finite(enabled):
    """When enabled, every op output is checked for NaN/Inf."""
    global _DEBUG_FINITE
    _DEBUG_FINITE = bool(enabled)


class Tensor:
    """Immutable-by-convention array node. Do not mutate ``.data`` in place."""

    __slots__ = ("data", "parents", "vjp", "grad", "tracked", "param")

    def __init__(self, data, parents=(), vjp=None, tracked=False):
        arr = np.asarray(data, dtype=_DEFAULT_DTYPE)
        if arr.ndim > 2:
            raise DimensionError(f"rank {arr.ndim} tensor not supported")
        self.data = arr
        self.parents = parents
        self.vjp = vjp
        self.grad = None
        self.tracked = tracked
        self.param = None

    @property
    def shape(self):
        return self.data.shape

    def item(self):
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, tracked={self.tracked})"


class Parameter:
    """Trainable array with Adam state."""

    __slots__ = ("name", "value", "grad", "adam_m", "adam_v", "step_count")

    def __init__(self, name, value):
        self.name = name
        self.value = np.asarray(value, dtype=_DEFAULT_DTYPE)
        if self.value.ndim > 2:
            raise DimensionError(f"parameter {name}: rank > 2")
        self.grad = np.zeros_like(self.value)
        self.adam_m = np.zeros_like(self.value)
        self.adam_v = np.zeros_like(self.value)
        self.step_count = 0

    def tensor(self):
        """Leaf tensor for the current tape (or an untracked constant)."""
        tape = Tape.active
        if tape is None:
            return Tensor(self.value)
        t = Tensor(self.value, tracked=True)
        t.param = self
        tape.leaves.append(t)
        return t

    def zero_grad(self):
        self.grad[...] = 0.0

    def __repr__(self):
        return f"Parameter({self.name}, shape={self.value.shape})"


class Tape:
    """Records tracked ops while active; ``backward`` walks them in reverse."""

    active = None

    def __init__(self):
        self.nodes = []
        self.leaves = []
        self._done = False

    def __enter__(self):
        if Tape.active is not None:
            raise RuntimeError("tapes do not nest")
        Tape.active = self
        return self

    def __exit__(self, exc_type, exc, tb):
        Tape.active = None
        return False

    def backward(self, loss):
        """Accumulate d(loss)/d(param) into each leaf's ``Parameter.grad``."""
        if self._done:
            raise RuntimeError("tape already consumed")
        self._done = True
        if loss.data.size != 1:
            raise DimensionError("backward target must be scalar")
        loss.grad = np.ones_like(loss.data)
        for node in reversed(self.nodes):
            g = node.grad
            if g is None:
                continue
            for parent, pg in zip(node.parents, node.vjp(g)):
                if pg is None or not parent.tracked:
                    continue
                parent.grad = pg if parent.grad is None else parent.grad + pg
        for leaf in self.leaves:
            if leaf.grad is not None:
                leaf.param.grad += leaf.grad


def constant(x):
    """Wrap an array as an untracked tensor."""
    return x if isinstance(x, Tensor) else Tensor(x)


def _out(data):
    if _DEBUG_FINITE and not np.all(np.isfinite(data)):
        raise FloatingPointError("non-finite value in op output")
    return data


def _tracking(*tensors):
    return Tape.active is not None and any(t.tracked for t in tensors)


def _node(data, parents, vjp):
    t = Tensor(_out(data), parents=parents, vjp=vjp, tracked=True)
    Tape.active.nodes.append(t)
    return t


def _scalar_like(shape):
    return shape == () or int(np.prod(shape)) == 1


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a, b):
    a, b = constant(a), constant(b)
    ad, bd = a.data, b.data
    if ad.ndim == 0 or bd.ndim == 0:
        raise DimensionError("matmul needs rank >= 1 operands")
    if ad.shape[-1] != bd.shape[0]:
        raise DimensionError(f"matmul mismatch {ad.shape} @ {bd.shape}")
    data = ad @ bd
    if not _tracking(a, b):
        return Tensor(_out(data))

    def vjp(g):
        A = ad if ad.ndim == 2 else ad.reshape(1, -1)
        B = bd if bd.ndim == 2 else bd.reshape(-1, 1)
        G = g.reshape(A.shape[0], B.shape[1])
        return (G @ B.T).reshape(ad.shape), (A.T @ G).reshape(bd.shape)

    return _node(data, (a, b), vjp)


def transpose(x):
    x = constant(x)
    if x.data.ndim != 2:
        raise DimensionError("transpose needs rank 2")
    data = x.data.T
    if not _tracking(x):
        return Tensor(_out(data))
    return _node(data, (x,), lambda g: (g.T.copy(),))


def dot(u, v):
    u, v = constant(u), constant(v)
    if u.data.ndim != 1 or u.data.shape != v.data.shape:
        raise DimensionError(f"dot needs equal-length vectors, got {u.shape} and {v.shape}")
    data = u.data @ v.data
    if not _tracking(u, v):
        return Tensor(_out(data))
    return _node(data, (u, v), lambda g: (g * v.data, g * u.data))


# ---------------------------------------------------------------------------
# pointwise arithmetic (shapes must match; scalars broadcast)


def _binary(a, b, fwd, vjp_a, vjp_b, name):
    a, b = constant(a), constant(b)
    if a.data.shape != b.data.shape and not (
        _scalar_like(a.data.shape) or _scalar_like(b.data.shape)
    ):
        raise DimensionError(f"{name}: shapes {a.data.shape} and {b.data.shape}")
    data = fwd(a.data, b.data)
    if not _tracking(a, b):
        return Tensor(_out(data))

    def reduce_to(g, shape):
        if g.shape == shape:
            return g
        return np.sum(g).reshape(shape) if shape != () else np.asarray(np.sum(g))

    def vjp(g):
        return (
            reduce_to(vjp_a(g, a.data, b.data), a.data.shape),
            reduce_to(vjp_b(g, a.data, b.data), b.data.shape),
        )

    return _node(data, (a, b), vjp)


def add(a, b):
    return _binary(
        a, b, lambda x, y: x + y,
        lambda g, x, y: g, lambda g, x, y: g, "add",
    )


def sub(a, b):
    return _binary(
        a, b, lambda x, y: x - y,
        lambda g, x, y: g, lambda g, x, y: -g, "sub",
    )


def mul(a, b):
    return _binary(
        a, b, lambda x, y: x * y,
        lambda g, x, y: g * y, lambda g, x, y: g * x, "mul",
    )


def scale(x, c):
    x = constant(x)
    c = float(c)
    data = x.data * c
    if not _tracking(x):
        return Tensor(_out(data))
    return _node(data, (x,), lambda g: (g * c,))


def add_rowvec(x, b):
    """Add a length-c vector to every row of an (m, c) matrix."""
    x, b = constant(x), constant(b)
    if x.data.ndim != 2 or b.data.ndim != 1 or x.data.shape[1] != b.data.shape[0]:
        raise DimensionError(f"add_rowvec: {x.shape} + {b.shape}")
    data = x.data + b.data
    if not _tracking(x, b):
        return Tensor(_out(data))
    return _node(data, (x, b), lambda g: (g, g.sum(axis=0)))


# ---------------------------------------------------------------------------
# nonlinearities


def relu(x):
    x = constant(x)
    data = np.maximum(x.data, 0.0)
    if not _tracking(x):
        return Tensor(_out(data))
    return _node(data, (x,), lambda g: (g * (x.data > 0.0),))


def sigmoid(x):
    x = constant(x)
    data = 1.0 / (1.0 + np.exp(-x.data))
    if not _tracking(x):
        return Tensor(_out(data))
    return _node(data, (x,), lambda g: (g * data * (1.0 - data),))


def tanh(x):
    x = constant(x)
    data = np.tanh(x.data)
    if not _tracking(x):
        return Tensor(_out(data))
    return _node(data, (x,), lambda g: (g * (1.0 - data * data),))


# ---------------------------------------------------------------------------
# shape surgery


def concat(u, v):
    """Concatenate two vectors."""
    u, v = constant(u), constant(v)
    if u.data.ndim != 1 or v.data.ndim != 1:
        raise DimensionError("concat needs rank-1 operands")
    data = np.concatenate([u.data, v.data])
    if not _tracking(u, v):
        return Tensor(_out(data))
    n = u.data.shape[0]
    return _node(data, (u, v), lambda g: (g[:n].copy(), g[n:].copy()))


def hstack(tensors):
    """Column-wise concatenation of rank-2 tensors with equal row counts."""
    tensors = [constant(t) for t in tensors]
    rows = {t.data.shape[0] for t in tensors}
    if any(t.data.ndim != 2 for t in tensors) or len(rows) != 1:
        raise DimensionError("hstack needs rank-2 operands with equal rows")
    data = np.concatenate([t.data for t in tensors], axis=1)
    if not _tracking(*tensors):
        return Tensor(_out(data))
    splits = np.cumsum([t.data.shape[1] for t in tensors])[:-1]

    def vjp(g):
        return tuple(p.copy() for p in np.split(g, splits, axis=1))

    return _node(data, tuple(tensors), vjp)


def reshape(x, shape):
    x = constant(x)
    data = x.data.reshape(shape)
    if data.ndim > 2:
        raise DimensionError("reshape target rank > 2")
    if not _tracking(x):
        return Tensor(_out(data))
    return _node(data, (x,), lambda g: (g.reshape(x.data.shape),))


def slice_cols(x, start, stop):
    x = constant(x)
    if x.data.ndim != 2 or not (0 <= start < stop <= x.data.shape[1]):
        raise DimensionError(f"slice_cols [{start}:{stop}] of {x.shape}")
    data = x.data[:, start:stop].copy()
    if not _tracking(x):
        return Tensor(_out(data))

    def vjp(g):
        full = np.zeros_like(x.data)
        full[:, start:stop] = g
        return (full,)

    return _node(data, (x,), vjp)


def gather_rows(x, idx):
    """Select rows by integer index; duplicate indices are allowed."""
    x = constant(x)
    idx = np.asarray(idx, dtype=np.intp)
    if x.data.ndim != 2 or idx.ndim != 1:
        raise DimensionError("gather_rows needs a matrix and an index vector")
    if idx.size and (idx.min() < 0 or idx.max() >= x.data.shape[0]):
        raise DimensionError("gather_rows: index out of range")
    data = x.data[idx]
    if not _tracking(x):
        return Tensor(_out(data))

    def vjp(g):
        acc = np.zeros_like(x.data)
        np.add.at(acc, idx, g)
        return (acc,)

    return _node(data, (x,), vjp)


def scatter_rows(base, idx, rows):
    """Copy of ``base`` with ``rows`` written at ``idx`` (indices unique)."""
    base, rows = constant(base), constant(rows)
    idx = np.asarray(idx, dtype=np.intp)
    if base.data.ndim != 2 or rows.data.ndim != 2:
        raise DimensionError("scatter_rows needs rank-2 operands")
    if idx.shape != (rows.data.shape[0],) or np.unique(idx).size != idx.size:
        raise DimensionError("scatter_rows: indices must be unique, one per row")
    data = base.data.copy()
    data[idx] = rows.data
    if not _tracking(base, rows):
        return Tensor(_out(data))

    def vjp(g):
        gb = g.copy()
        gb[idx] = 0.0
        return gb, g[idx].copy()

    return _node(data, (base, rows), vjp)


def repeat_rows(x, k):
    """Repeat each row (or element of a vector) k times, preserving order."""
    x = constant(x)
    data = np.repeat(x.data, k, axis=0)
    if not _tracking(x):
        return Tensor(_out(data))

    def vjp(g):
        m = x.data.shape[0]
        return (g.reshape((m, k) + x.data.shape[1:]).sum(axis=1),)

    return _node(data, (x,), vjp)


def seg_sum_rows(x, k):
    """Sum consecutive groups of k rows. Inverse pattern of repeat_rows."""
    x = constant(x)
    m = x.data.shape[0]
    if m % k != 0:
        raise DimensionError(f"seg_sum_rows: {m} rows not divisible by {k}")
    data = x.data.reshape((m // k, k) + x.data.shape[1:]).sum(axis=1)
    if not _tracking(x):
        return Tensor(_out(data))
    return _node(data, (x,), lambda g: (np.repeat(g, k, axis=0),))


def colmul(x, v):
    """Scale row i of an (m, c) matrix by v[i]."""
    x, v = constant(x), constant(v)
    if x.data.ndim != 2 or v.data.shape != (x.data.shape[0],):
        raise DimensionError(f"colmul: {x.shape} by {v.shape}")
    data = x.data * v.data[:, None]
    if not _tracking(x, v):
        return Tensor(_out(data))

    def vjp(g):
        return g * v.data[:, None], (g * x.data).sum(axis=1)

    return _node(data, (x, v), vjp)


def rowwise_dot(a, b):
    """Per-row inner product of two (m, c) matrices: result shape (m,)."""
    a, b = constant(a), constant(b)
    if a.data.shape != b.data.shape or a.data.ndim != 2:
        raise DimensionError(f"rowwise_dot: {a.shape} and {b.shape}")
    data = np.einsum("ij,ij->i", a.data, b.data)
    if not _tracking(a, b):
        return Tensor(_out(data))

    def vjp(g):
        return g[:, None] * b.data, g[:, None] * a.data

    return _node(data, (a, b), vjp)


# ---------------------------------------------------------------------------
# reductions and normalizations


def sum_all(x):
    x = constant(x)
    data = np.asarray(x.data.sum())
    if not _tracking(x):
        return Tensor(_out(data))
    return _node(data, (x,), lambda g: (np.broadcast_to(g, x.data.shape).copy(),))


def mean_all(x):
    x = constant(x)
    n = x.data.size
    data = np.asarray(x.data.sum() / n)
    if not _tracking(x):
        return Tensor(_out(data))
    return _node(data, (x,), lambda g: (np.broadcast_to(g / n, x.data.shape).copy(),))


def softmax(x):
    """Numerically stable softmax of a vector."""
    x = constant(x)
    if x.data.ndim != 1:
        raise DimensionError("softmax needs rank 1; see row_softmax")
    shifted = x.data - x.data.max()
    e = np.exp(shifted)
    data = e / e.sum()
    if not _tracking(x):
        return Tensor(_out(data))

    def vjp(g):
        return ((g - (g * data).sum()) * data,)

    return _node(data, (x,), vjp)


def row_softmax(x):
    """Stable softmax along each row of a matrix."""
    x = constant(x)
    if x.data.ndim != 2:
        raise DimensionError("row_softmax needs rank 2")
    shifted = x.data - x.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    data = e / e.sum(axis=1, keepdims=True)
    if not _tracking(x):
        return Tensor(_out(data))

    def vjp(g):
        return ((g - (g * data).sum(axis=1, keepdims=True)) * data,)

    return _node(data, (x,), vjp)


def logsumexp(x):
    """log(sum(exp(x))) of a vector, max-shifted for stability."""
    x = constant(x)
    if x.data.ndim != 1:
        raise DimensionError("logsumexp needs rank 1; see logsumexp_rows")
    m = x.data.max()
    e = np.exp(x.data - m)
    s = e.sum()
    data = np.asarray(m + np.log(s))
    if not _tracking(x):
        return Tensor(_out(data))
    return _node(data, (x,), lambda g: (g * e / s,))


def logsumexp_rows(x):
    """Row-wise log-sum-exp of a matrix: result shape (m,)."""
    x = constant(x)
    if x.data.ndim != 2:
        raise DimensionError("logsumexp_rows needs rank 2")
    m = x.data.max(axis=1, keepdims=True)
    e = np.exp(x.data - m)
    s = e.sum(axis=1, keepdims=True)
    data = (m + np.log(s)).reshape(-1)
    if not _tracking(x):
        return Tensor(_out(data))
    return _node(data, (x,), lambda g: (g[:, None] * e / s,))


def normalize_rows(x):
    """Scale each row to unit L2 norm; rows with norm < eps become zero."""
    x = constant(x)
    vec = x.data.ndim == 1
    xd = x.data.reshape(1, -1) if vec else x.data
    norms = np.linalg.norm(xd, axis=1)
    safe = norms >= COSINE_EPS
    inv = np.where(safe, 1.0 / np.where(safe, norms, 1.0), 0.0)
    data2 = xd * inv[:, None]
    data = data2.reshape(-1) if vec else data2
    if not _tracking(x):
        return Tensor(_out(data))

    def vjp(g):
        g2 = g.reshape(1, -1) if vec else g
        # d(x/|x|) = (g - (g.u)u)/|x| per row; dead rows pass no gradient
        proj = np.einsum("ij,ij->i", g2, data2)
        gx = (g2 - proj[:, None] * data2) * inv[:, None]
        return (gx.reshape(x.data.shape),)

    return _node(data, (x,), vjp)


def dropout(x, p, rng):
    """Inverted dropout: zero entries with probability p, scale by 1/(1-p)."""
    x = constant(x)
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout rate {p} outside [0, 1)")
    if p == 0.0:
        return x
    keep = (rng.random(x.data.shape) >= p) / (1.0 - p)
    data = x.data * keep
    if not _tracking(x):
        return Tensor(_out(data))
    return _node(data, (x,), lambda g: (g * keep,))


# ---------------------------------------------------------------------------
# cosine similarity


def cosine(u, v, eps=COSINE_EPS):
    """Plain-array cosine similarity; 0.0 when either norm is below eps."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    nu = np.linalg.norm(u)
    nv = np.linalg.norm(v)
    if nu < eps or nv < eps:
        return 0.0
    return float(u @ v / (max(nu, eps) * max(nv, eps)))


def cosine_sim(u, v):
    """Differentiable cosine similarity of two vectors (scalar tensor)."""
    u, v = constant(u), constant(v)
    if u.data.ndim != 1 or u.data.shape != v.data.shape:
        raise DimensionError(f"cosine_sim: {u.shape} and {v.shape}")
    nu = np.linalg.norm(u.data)
    nv = np.linalg.norm(v.data)
    dead = nu < COSINE_EPS or nv < COSINE_EPS
    s = 0.0 if dead else float(u.data @ v.data / (nu * nv))
    data = np.asarray(s)
    if not _tracking(u, v):
        return Tensor(_out(data))

    def vjp(g):
        if dead:
            return np.zeros_like(u.data), np.zeros_like(v.data)
        gu = g * (v.data / (nu * nv) - s * u.data / (nu * nu))
        gv = g * (u.data / (nu * nv) - s * v.data / (nv * nv))
        return gu, gv

    return _node(data, (u, v), vjp)


# ---------------------------------------------------------------------------
# optimization and checking


def adam_step(params, lr, weight_decay=0.0, beta1=0.9, beta2=0.999, eps=1e-8):
    """One Adam update over ``params``; weight decay is decoupled.

    Decay is applied to the pre-update value before the Adam delta. Gradients
    are zeroed afterwards. Raises TrainingError on a non-finite gradient.
    """
    for p in params:
        if not np.all(np.isfinite(p.grad)):
            raise TrainingError(f"non-finite gradient in parameter {p.name!r}")
        g = p.grad
        if weight_decay:
            p.value -= lr * weight_decay * p.value
        p.step_count += 1
        t = p.step_count
        p.adam_m = beta1 * p.adam_m + (1.0 - beta1) * g
        p.adam_v = beta2 * p.adam_v + (1.0 - beta2) * (g * g)
        m_hat = p.adam_m / (1.0 - beta1**t)
        v_hat = p.adam_v / (1.0 - beta2**t)
        p.value -= lr * m_hat / (np.sqrt(v_hat) + eps)
        p.zero_grad()


def grad_check(fn, params, h=1e-5):
    """Compare tape gradients of scalar ``fn()`` against central differences.

    Returns the max relative error over every entry of every parameter,
    using |a - f| / max(|a|, |f|, 1e-8). ``fn`` must be deterministic and
    side-effect free. Requires float64 parameters.
    """
    for p in params:
        if p.value.dtype != np.float64:
            raise GradCheckError(f"parameter {p.name!r} is not float64")
        p.zero_grad()
    with Tape() as tape:
        out = fn()
        if out.data.size != 1:
            raise GradCheckError("fn must return a scalar")
        if not np.all(np.isfinite(out.data)):
            raise GradCheckError("fn returned a non-finite value")
        tape.backward(out)
    analytic = [p.grad.copy() for p in params]
    for p in params:
        p.zero_grad()

    max_err = 0.0
    for p, ga in zip(params, analytic):
        flat = p.value.reshape(-1)
        gflat = ga.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            f_plus = float(fn().data)
            flat[i] = orig - h
            f_minus = float(fn().data)
            flat[i] = orig
            fd = (f_plus - f_minus) / (2.0 * h)
            if not np.isfinite(fd):
                raise GradCheckError(f"non-finite finite-difference at {p.name}[{i}]")
            a = gflat[i]
            err = abs(a - fd) / max(abs(a), abs(fd), 1e-8)
            if err > max_err:
                max_err = err
    return max_err
