"""Dense tensors with reverse-mode automatic differentiation.

Minimal engine: 1-D and 2-D float arrays, no broadcasting (except
scalar `scale`), single-threaded tapes. Values are float32 by default;
pass float64 arrays (or dtype=np.float64 to the helpers) to run a graph
in extended precision for finite-difference checking.

Sibling modules build fused operations (LSTM steps, block attention)
on top of `Tensor` by constructing an output node with `parents` and
assigning its `_backward` closure; see `lstm_sequence` in encoders.py
for the pattern.
"""

from __future__ import annotations

import hashlib

import numpy as np

DEFAULT_DTYPE = np.float32

_FLOAT_DTYPES = (np.float32, np.float64)


class ShapeError(ValueError):
    """Operand shapes incompatible with the requested operation."""


class EmptySequenceError(ValueError):
    """An operation that needs at least one time step got none."""


class TapeError(RuntimeError):
    """Backward misuse: non-scalar root or a tape replayed twice."""


class _NoGrad:
    """Context manager that suspends graph construction."""

    enabled = False

    def __enter__(self):
        self._prev = _NoGrad.enabled
        _NoGrad.enabled = True
        return self

    def __exit__(self, *exc):
        _NoGrad.enabled = self._prev
        return False


def no_grad():
    return _NoGrad()


class trace_decisions:
    """Record every discrete branch (argmax picks, relu/clip active sets)
    taken during a forward pass as one digest.

    Finite-difference checking is only valid on a segment where the
    function stays smooth; two evaluations with equal digests took the
    same branches everywhere, so the segment holds no kink.
    """

    _recorder = None

    def __enter__(self):
        self._prev = trace_decisions._recorder
        trace_decisions._recorder = hashlib.blake2b(digest_size=16)
        return self

    def __exit__(self, *exc):
        self.digest = trace_decisions._recorder.hexdigest()
        trace_decisions._recorder = self._prev
        return False


def _record_decision(tag: str, arr):
    rec = trace_decisions._recorder
    if rec is not None:
        rec.update(tag.encode())
        rec.update(np.ascontiguousarray(arr).tobytes())


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_op", "_backward_done")

    def __init__(self, data, requires_grad=False, dtype=None, _parents=(), _op=None):
        if dtype is None:
            if _op is not None and isinstance(data, np.ndarray) and data.dtype in _FLOAT_DTYPES:
                dtype = data.dtype  # ops inherit their inputs' precision
            else:
                dtype = DEFAULT_DTYPE
        self.data = np.asarray(data, dtype=dtype)
        if _op is None and not np.all(np.isfinite(self.data)):
            raise ValueError("non-finite values in tensor data")
        if _NoGrad.enabled and _op is not None:
            _parents = ()
            requires_grad = False
        self.requires_grad = bool(requires_grad) or any(p.requires_grad for p in _parents)
        self.grad = None
        self._parents = tuple(p for p in _parents if p.requires_grad)
        self._backward = None
        self._op = _op
        self._backward_done = False

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        if self.data.size != 1:
            raise TapeError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def zero_grad(self):
        self.grad = None

    def _accumulate(self, g: np.ndarray):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def backward(self):
        """Populate .grad on every requires_grad tensor reachable from here.

        The root must hold a single element. Replaying the same root is an
        error (no double-backward; build a fresh graph instead).
        """
        if self.data.size != 1:
            raise TapeError(f"backward needs a scalar loss, got shape {self.shape}")
        if self._backward_done:
            raise TapeError("backward already ran on this tape; rebuild the graph")
        self._backward_done = True

        topo: list[Tensor] = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))

        # Intermediates get fresh buffers; leaves accumulate across graphs.
        for node in topo:
            if node._op is not None:
                node.grad = np.zeros_like(node.data)
        self._accumulate(np.ones_like(self.data))
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # Operator sugar; the module-level functions are the primary API.
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, op={self._op or 'leaf'}{flag})"


def tensor(data, requires_grad=False, dtype=None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, dtype=dtype)


def zeros(shape, requires_grad=False, dtype=DEFAULT_DTYPE) -> Tensor:
    return Tensor(np.zeros(shape, dtype=dtype), requires_grad=requires_grad)


def ones(shape, requires_grad=False, dtype=DEFAULT_DTYPE) -> Tensor:
    return Tensor(np.ones(shape, dtype=dtype), requires_grad=requires_grad)


def _same_shape(a: Tensor, b: Tensor, op: str):
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shapes differ: {a.shape} vs {b.shape}")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError(f"matmul: needs 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dimensions differ: {a.shape} vs {b.shape}")
    out = Tensor(a.data @ b.data, _parents=(a, b), _op="matmul")

    def _bw(g):
        if a.requires_grad:
            a._accumulate(g @ b.data.T)
        if b.requires_grad:
            b._accumulate(a.data.T @ g)

    out._backward = _bw
    return out


def transpose(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise ShapeError(f"transpose: needs a 2-D operand, got {a.shape}")
    out = Tensor(a.data.T.copy(), _parents=(a,), _op="transpose")

    def _bw(g):
        a._accumulate(g.T)

    out._backward = _bw
    return out


def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "add")
    out = Tensor(a.data + b.data, _parents=(a, b), _op="add")

    def _bw(g):
        if a.requires_grad:
            a._accumulate(g)
        if b.requires_grad:
            b._accumulate(g)

    out._backward = _bw
    return out


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "sub")
    out = Tensor(a.data - b.data, _parents=(a, b), _op="sub")

    def _bw(g):
        if a.requires_grad:
            a._accumulate(g)
        if b.requires_grad:
            b._accumulate(-g)

    out._backward = _bw
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "mul")
    out = Tensor(a.data * b.data, _parents=(a, b), _op="mul")

    def _bw(g):
        if a.requires_grad:
            a._accumulate(g * b.data)
        if b.requires_grad:
            b._accumulate(g * a.data)

    out._backward = _bw
    return out


def scale(a: Tensor, c: float) -> Tensor:
    """Multiply by a python scalar — the only sanctioned broadcast."""
    c = float(c)
    out = Tensor(a.data * c, _parents=(a,), _op="scale")

    def _bw(g):
        a._accumulate(g * c)

    out._backward = _bw
    return out


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)
    out = Tensor(y, _parents=(a,), _op="tanh")

    def _bw(g):
        a._accumulate(g * (1.0 - y * y))

    out._backward = _bw
    return out


def sigmoid(a: Tensor) -> Tensor:
    # Split by sign so exp never overflows.
    x = a.data
    y = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                 np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x)))).astype(x.dtype)
    out = Tensor(y, _parents=(a,), _op="sigmoid")

    def _bw(g):
        a._accumulate(g * y * (1.0 - y))

    out._backward = _bw
    return out


def relu(a: Tensor) -> Tensor:
    _record_decision("relu", a.data > 0)
    out = Tensor(np.maximum(a.data, 0.0), _parents=(a,), _op="relu")

    def _bw(g):
        a._accumulate(g * (a.data > 0))

    out._backward = _bw
    return out


def log(a: Tensor) -> Tensor:
    out = Tensor(np.log(a.data), _parents=(a,), _op="log")

    def _bw(g):
        a._accumulate(g / a.data)

    out._backward = _bw
    return out


def sqrt(a: Tensor) -> Tensor:
    """Elementwise square root; subgradient 0 at exactly 0 (no NaN blowups)."""
    y = np.sqrt(a.data)
    _record_decision("sqrt", y > 0)
    out = Tensor(y, _parents=(a,), _op="sqrt")

    def _bw(g):
        d = np.zeros_like(y)
        nz = y > 0
        d[nz] = 0.5 / y[nz]
        a._accumulate(g * d)

    out._backward = _bw
    return out


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    """Clamp values; gradient passes only through the unclamped region."""
    _record_decision("clip", (a.data >= lo) & (a.data <= hi))
    out = Tensor(np.clip(a.data, lo, hi), _parents=(a,), _op="clip")

    def _bw(g):
        a._accumulate(g * ((a.data >= lo) & (a.data <= hi)))

    out._backward = _bw
    return out


def softmax_rows(a: Tensor) -> Tensor:
    """Row-wise softmax of a 2-D tensor, stabilised by per-row max subtraction."""
    if a.data.ndim != 2:
        raise ShapeError(f"softmax_rows: needs a 2-D operand, got {a.shape}")
    shifted = a.data - a.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=1, keepdims=True)
    out = Tensor(y, _parents=(a,), _op="softmax_rows")

    def _bw(g):
        dot = (g * y).sum(axis=1, keepdims=True)
        a._accumulate(y * (g - dot))

    out._backward = _bw
    return out


def maxpool_time(a: Tensor) -> Tensor:
    """Column-wise max of a T×d tensor -> (d,). Ties route to the lowest t."""
    if a.data.ndim != 2:
        raise ShapeError(f"maxpool_time: needs a 2-D operand, got {a.shape}")
    if a.shape[0] == 0:
        raise EmptySequenceError("maxpool_time: empty sequence (T = 0)")
    idx = np.argmax(a.data, axis=0)
    _record_decision("maxpool_time", idx)
    out = Tensor(a.data[idx, np.arange(a.shape[1])], _parents=(a,), _op="maxpool_time")

    def _bw(g):
        buf = np.zeros_like(a.data)
        buf[idx, np.arange(a.shape[1])] = g
        a._accumulate(buf)

    out._backward = _bw
    return out


def maxpool_blocks(a: Tensor, steps: int) -> Tensor:
    """Per-block column max: (B*steps)×d rows packed block-major -> B×d."""
    if a.data.ndim != 2:
        raise ShapeError(f"maxpool_blocks: needs a 2-D operand, got {a.shape}")
    n, d = a.shape
    if steps < 1 or n % steps != 0:
        raise ShapeError(f"maxpool_blocks: {n} rows not divisible into blocks of {steps}")
    b = n // steps
    view = a.data.reshape(b, steps, d)
    idx = np.argmax(view, axis=1)  # first index on ties
    _record_decision("maxpool_blocks", idx)
    rows = np.arange(b)[:, None]
    cols = np.arange(d)[None, :]
    out = Tensor(view[rows, idx, cols], _parents=(a,), _op="maxpool_blocks")

    def _bw(g):
        buf = np.zeros((b, steps, d), dtype=a.data.dtype)
        buf[rows, idx, cols] = g
        a._accumulate(buf.reshape(n, d))

    out._backward = _bw
    return out


def concat(tensors, axis: int = 0) -> Tensor:
    ts = list(tensors)
    if not ts:
        raise EmptySequenceError("concat: no tensors given")
    if len(ts) == 1:
        t = ts[0]
        out = Tensor(t.data.copy(), _parents=(t,), _op="concat")
        out._backward = lambda g: t._accumulate(g)
        return out
    ndim = ts[0].data.ndim
    for t in ts[1:]:
        ref, got = list(ts[0].shape), list(t.shape)
        if t.data.ndim != ndim:
            raise ShapeError(f"concat: rank mismatch: {ts[0].shape} vs {t.shape}")
        ref.pop(axis), got.pop(axis)
        if ref != got:
            raise ShapeError(f"concat: shapes differ off axis {axis}: {ts[0].shape} vs {t.shape}")
    out = Tensor(np.concatenate([t.data for t in ts], axis=axis), _parents=tuple(ts), _op="concat")
    sizes = [t.shape[axis] for t in ts]
    offsets = np.cumsum([0] + sizes)

    def _bw(g):
        for t, lo, hi in zip(ts, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                sl = [slice(None)] * g.ndim
                sl[axis] = slice(lo, hi)
                t._accumulate(g[tuple(sl)])

    out._backward = _bw
    return out


def narrow(a: Tensor, axis: int, start: int, length: int) -> Tensor:
    """Contiguous slice of `length` entries along `axis`."""
    if not (0 <= start and start + length <= a.shape[axis]):
        raise ShapeError(f"narrow: [{start}:{start + length}] out of range for axis {axis} of {a.shape}")
    sl = [slice(None)] * a.data.ndim
    sl[axis] = slice(start, start + length)
    sl = tuple(sl)
    out = Tensor(a.data[sl].copy(), _parents=(a,), _op="narrow")

    def _bw(g):
        buf = np.zeros_like(a.data)
        buf[sl] = g
        a._accumulate(buf)

    out._backward = _bw
    return out


def reshape(a: Tensor, shape) -> Tensor:
    out = Tensor(a.data.reshape(shape).copy(), _parents=(a,), _op="reshape")

    def _bw(g):
        a._accumulate(g.reshape(a.shape))

    out._backward = _bw
    return out


def repeat_blocks(a: Tensor, block_rows: int, repeats: int) -> Tensor:
    """Tile each consecutive block of `block_rows` rows `repeats` times.

    (B*block_rows)×k -> (B*repeats*block_rows)×k; block (b, r) is a copy of
    block b. Gradient sums over the copies.
    """
    n, k = a.shape
    if n % block_rows != 0:
        raise ShapeError(f"repeat_blocks: {n} rows not divisible into blocks of {block_rows}")
    b = n // block_rows
    view = a.data.reshape(b, 1, block_rows, k)
    tiled = np.broadcast_to(view, (b, repeats, block_rows, k)).reshape(b * repeats * block_rows, k)
    out = Tensor(tiled.copy(), _parents=(a,), _op="repeat_blocks")

    def _bw(g):
        a._accumulate(g.reshape(b, repeats, block_rows, k).sum(axis=1).reshape(n, k))

    out._backward = _bw
    return out


def sum_all(a: Tensor) -> Tensor:
    """Sum every element into a shape-(1,) scalar tensor."""
    out = Tensor(np.array([a.data.sum()], dtype=a.data.dtype), _parents=(a,), _op="sum")

    def _bw(g):
        a._accumulate(np.full_like(a.data, g[0]))

    out._backward = _bw
    return out


def l2_norm_diff(a: Tensor, b: Tensor) -> Tensor:
    """Euclidean distance ||a - b|| as a shape-(1,) scalar.

    At a == b the distance is 0 and the gradient is defined as the zero
    vector (subgradient choice; keeps collapsed positive pairs NaN-free).
    """
    _same_shape(a, b, "l2_norm_diff")
    d = a.data - b.data
    n = float(np.sqrt((d * d).sum()))
    _record_decision("l2_norm_diff", np.array([n > 0.0]))
    out = Tensor(np.array([n], dtype=a.data.dtype), _parents=(a, b), _op="l2_norm_diff")

    def _bw(g):
        gd = (g[0] / n) * d if n > 0.0 else np.zeros_like(d)
        if a.requires_grad:
            a._accumulate(gd)
        if b.requires_grad:
            b._accumulate(-gd)

    out._backward = _bw
    return out


def backward(loss: Tensor):
    """Module-level alias for Tensor.backward."""
    loss.backward()
