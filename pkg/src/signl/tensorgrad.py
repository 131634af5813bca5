"""Minimal dense reverse-mode automatic differentiation engine.

Tensors wrap numpy arrays (0-D scalars, 1-D vectors, 2-D matrices) and
operations executed inside an active ``Tape`` record backward rules in
order.  Calling ``Tape.backward`` replays the records in reverse and
accumulates gradients into every reachable ``requires_grad`` tensor.

Training runs in float32; gradient checking builds float64 tensors and
uses the exact same code path.
"""

from __future__ import annotations

import numpy as np


class ShapeError(ValueError):
    """Operand shapes violate an operation's precondition."""


class ContractError(RuntimeError):
    """An operation was called outside its contract (e.g. non-scalar loss)."""


_TAPE_STACK: list["Tape"] = []


class Tensor:
    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad=False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if dtype is None and arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        if arr.ndim > 2:
            raise ShapeError(f"tensors are at most 2-D, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("tensor values must be finite")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None

    @classmethod
    def _wrap(cls, arr, requires_grad):
        t = cls.__new__(cls)
        t.data = arr
        t.requires_grad = requires_grad
        t.grad = None
        return t

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def zero_grad(self):
        self.grad = None

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype, copy=True)
        else:
            self.grad = self.grad + g

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


class Tape:
    """Ordered record of primitive operations for one forward pass."""

    def __init__(self):
        self._records = []

    def __enter__(self):
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, *exc):
        popped = _TAPE_STACK.pop()
        assert popped is self
        return False

    def backward(self, loss: Tensor):
        """Populate gradients of everything reachable from ``loss``.

        Repeated calls without clearing grads accumulate, per contract.
        """
        if loss.data.size != 1:
            raise ContractError("backward requires a scalar loss")
        loss._accumulate(np.ones_like(loss.data))
        for rec in reversed(self._records):
            rec()


def _record(out: Tensor, fn):
    if out.requires_grad and _TAPE_STACK:
        _TAPE_STACK[-1]._records.append(fn)


def _needs(*tensors):
    return any(t.requires_grad for t in tensors)


# ---------------------------------------------------------------------------
# primitives

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError("matmul operands must be 2-D")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner dims disagree: {a.shape} x {b.shape}")
    out = Tensor._wrap(a.data @ b.data, _needs(a, b))

    def backward():
        if out.grad is None:
            return
        if a.requires_grad:
            a._accumulate(out.grad @ b.data.T)
        if b.requires_grad:
            b._accumulate(a.data.T @ out.grad)

    _record(out, backward)
    return out


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"add shape mismatch: {a.shape} vs {b.shape}")
    out = Tensor._wrap(a.data + b.data, _needs(a, b))

    def backward():
        if out.grad is None:
            return
        if a.requires_grad:
            a._accumulate(out.grad)
        if b.requires_grad:
            b._accumulate(out.grad)

    _record(out, backward)
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"mul shape mismatch: {a.shape} vs {b.shape}")
    out = Tensor._wrap(a.data * b.data, _needs(a, b))

    def backward():
        if out.grad is None:
            return
        if a.requires_grad:
            a._accumulate(out.grad * b.data)
        if b.requires_grad:
            b._accumulate(out.grad * a.data)

    _record(out, backward)
    return out


def scale(a: Tensor, s: float) -> Tensor:
    s = float(s)
    out = Tensor._wrap(a.data * s, a.requires_grad)

    def backward():
        if out.grad is None:
            return
        a._accumulate(out.grad * s)

    _record(out, backward)
    return out


def relu(a: Tensor) -> Tensor:
    out = Tensor._wrap(np.maximum(a.data, 0), a.requires_grad)

    def backward():
        if out.grad is None:
            return
        # gradient at exactly 0 is defined as 0
        a._accumulate(out.grad * (a.data > 0))

    _record(out, backward)
    return out


def sqrt(a: Tensor) -> Tensor:
    if np.any(a.data <= 0):
        raise ValueError("sqrt requires strictly positive inputs")
    r = np.sqrt(a.data)
    out = Tensor._wrap(r, a.requires_grad)

    def backward():
        if out.grad is None:
            return
        a._accumulate(out.grad * 0.5 / r)

    _record(out, backward)
    return out


def reciprocal(a: Tensor) -> Tensor:
    if np.any(a.data == 0):
        raise ValueError("reciprocal of zero")
    r = 1.0 / a.data
    out = Tensor._wrap(r, a.requires_grad)

    def backward():
        if out.grad is None:
            return
        a._accumulate(-out.grad * r * r)

    _record(out, backward)
    return out


def tsum(a: Tensor, axis=None) -> Tensor:
    out = Tensor._wrap(a.data.sum(axis=axis, keepdims=axis is not None), a.requires_grad)

    def backward():
        if out.grad is None:
            return
        a._accumulate(np.broadcast_to(out.grad, a.shape))

    _record(out, backward)
    return out


def reshape(a: Tensor, shape) -> Tensor:
    out = Tensor._wrap(a.data.reshape(shape), a.requires_grad)

    def backward():
        if out.grad is None:
            return
        a._accumulate(out.grad.reshape(a.shape))

    _record(out, backward)
    return out


def concat(parts, axis=0) -> Tensor:
    parts = list(parts)
    if not parts:
        raise ShapeError("concat of zero tensors")
    other = 1 - axis
    if any(p.data.ndim != parts[0].data.ndim for p in parts):
        raise ShapeError("concat rank mismatch")
    if parts[0].data.ndim == 2 and any(p.shape[other] != parts[0].shape[other] for p in parts):
        raise ShapeError("concat non-axis dims disagree")
    out = Tensor._wrap(np.concatenate([p.data for p in parts], axis=axis), _needs(*parts))
    offsets = np.cumsum([0] + [p.shape[axis] for p in parts])

    def backward():
        if out.grad is None:
            return
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            if p.requires_grad:
                idx = slice(lo, hi)
                g = out.grad[idx] if axis == 0 else out.grad[:, idx]
                p._accumulate(g)

    _record(out, backward)
    return out


def split(t: Tensor, counts, axis=0):
    counts = list(counts)
    if sum(counts) != t.shape[axis]:
        raise ShapeError(f"split counts {counts} do not sum to axis extent {t.shape[axis]}")
    offsets = np.cumsum([0] + counts)
    outs = []
    for lo, hi in zip(offsets[:-1], offsets[1:]):
        idx = slice(lo, hi)
        piece = t.data[idx] if axis == 0 else t.data[:, idx]
        out = Tensor._wrap(piece.copy(), t.requires_grad)

        def backward(out=out, lo=int(lo), hi=int(hi)):
            if out.grad is None:
                return
            g = np.zeros_like(t.data)
            if axis == 0:
                g[lo:hi] = out.grad
            else:
                g[:, lo:hi] = out.grad
            t._accumulate(g)

        _record(out, backward)
        outs.append(out)
    return outs


def log_softmax(a: Tensor) -> Tensor:
    """Row-wise log-softmax on a 2-D tensor, stabilised by max subtraction."""
    if a.data.ndim != 2:
        raise ShapeError("log_softmax expects a 2-D tensor")
    shifted = a.data - a.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    out = Tensor._wrap(shifted - lse, a.requires_grad)
    sm = np.exp(out.data)

    def backward():
        if out.grad is None:
            return
        a._accumulate(out.grad - sm * out.grad.sum(axis=1, keepdims=True))

    _record(out, backward)
    return out


def affine(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """x @ w + b with b a 1xK row broadcast over rows of x."""
    if b.data.ndim != 2 or b.shape[0] != 1:
        raise ShapeError(f"bias must be a 1xK row, got {b.shape}")
    ones = Tensor._wrap(np.ones((x.shape[0], 1), dtype=x.dtype), False)
    return add(matmul(x, w), matmul(ones, b))


# ---------------------------------------------------------------------------
# parameters and optimizer

class ParamStore:
    """Named parameter tensors with per-parameter Adam state."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}
        self._m: dict[str, np.ndarray] = {}
        self._v: dict[str, np.ndarray] = {}
        self.step_count = 0

    def add(self, name: str, t: Tensor):
        if name in self._params:
            raise ContractError(f"duplicate parameter name {name!r}")
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name):
        return name in self._params

    def names(self):
        return list(self._params)

    def items(self):
        return self._params.items()

    def zero_grads(self):
        for t in self._params.values():
            t.grad = None

    def state_arrays(self):
        """name -> value array, in insertion order (for checkpointing)."""
        return {k: t.data for k, t in self._params.items()}

    def load_arrays(self, arrays):
        for name, arr in arrays.items():
            t = self._params[name]
            if t.data.shape != arr.shape:
                raise ContractError(
                    f"parameter {name!r}: expected shape {t.data.shape}, got {arr.shape}")
            t.data = arr.astype(t.data.dtype)

    def snapshot(self):
        return {k: t.data.copy() for k, t in self._params.items()}


def adam_step(store: ParamStore, lr, beta1=0.9, beta2=0.999, eps=1e-8, names=None):
    """One Adam update with bias correction; zeroes gradients afterward."""
    if names is None:
        names = [n for n, t in store.items() if t.requires_grad]
    store.step_count += 1
    t = store.step_count
    for name in names:
        p = store[name]
        if p.grad is None:
            raise ContractError(f"parameter {name!r} has no gradient")
        g = p.grad
        m = store._m.get(name)
        v = store._v.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            v = np.zeros_like(p.data)
        m = beta1 * m + (1 - beta1) * g
        v = beta2 * v + (1 - beta2) * g * g
        store._m[name] = m
        store._v[name] = v
        mhat = m / (1 - beta1 ** t)
        vhat = v / (1 - beta2 ** t)
        p.data = p.data - lr * mhat / (np.sqrt(vhat) + eps)
        p.grad = None
