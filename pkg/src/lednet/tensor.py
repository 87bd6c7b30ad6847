"""Dense NCHW tensors and a tape-based reverse-mode autodiff engine.

All activations and weights live in `Tensor` objects backed by row-major
numpy buffers.  Forward computations executed under an active `GraphTape`
record one node per operation; `GraphTape.gradients` replays the tape in
reverse and accumulates gradients additively.
"""

from __future__ import annotations

import zlib

import numpy as np


class ShapeError(ValueError):
    """Invalid or incompatible tensor shapes."""


class TapeError(RuntimeError):
    """Backward requested for a value that was not recorded on the tape."""


class NumericError(ArithmeticError):
    """Non-finite value encountered where finiteness is required."""


class LabelError(ValueError):
    """Class label outside the valid range."""


class Tensor:
    """Dense n-dimensional array with optional gradient tracking.

    The shape is fixed at construction; `data` is a contiguous row-major
    buffer of float32 (default) or float64 (gradient-check mode).
    """

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad=False, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        self.data = np.ascontiguousarray(arr)
        self.requires_grad = bool(requires_grad)
        self.grad = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data.reshape(-1)[0])

    def astype(self, dtype):
        return Tensor(self.data.astype(dtype), requires_grad=self.requires_grad)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)


def _check_shape(shape):
    shape = tuple(int(s) for s in shape)
    if len(shape) == 0:
        raise ShapeError("empty shape")
    for s in shape:
        if s < 1:
            raise ShapeError(f"non-positive extent in shape {shape}")
    return shape


def zeros(shape, dtype=np.float32, requires_grad=False):
    return Tensor(np.zeros(_check_shape(shape), dtype=dtype), requires_grad=requires_grad)


def ones(shape, dtype=np.float32, requires_grad=False):
    return Tensor(np.ones(_check_shape(shape), dtype=dtype), requires_grad=requires_grad)


def full(shape, value, dtype=np.float32, requires_grad=False):
    return Tensor(np.full(_check_shape(shape), value, dtype=dtype), requires_grad=requires_grad)


def uniform(shape, seed, lo=0.0, hi=1.0, dtype=np.float32, requires_grad=False):
    """Seeded uniform fill; identical (shape, seed, lo, hi) gives identical bytes."""
    shape = _check_shape(shape)
    rng = np.random.default_rng(int(seed))
    data = rng.uniform(lo, hi, size=shape).astype(dtype)
    return Tensor(data, requires_grad=requires_grad)


def normal(shape, seed, mean=0.0, std=1.0, dtype=np.float32, requires_grad=False):
    """Seeded normal fill; identical (shape, seed, mean, std) gives identical bytes."""
    shape = _check_shape(shape)
    rng = np.random.default_rng(int(seed))
    data = rng.normal(mean, std, size=shape).astype(dtype)
    return Tensor(data, requires_grad=requires_grad)


def derive_seed(global_seed, name):
    """Per-parameter seed from (global seed, parameter name hash).

    Keeps initialization independent of the order parameters are created in.
    """
    return (int(global_seed) << 32) ^ zlib.crc32(name.encode("utf-8"))


class _Node:
    __slots__ = ("inputs", "output", "backward")

    def __init__(self, inputs, output, backward):
        self.inputs = inputs
        self.output = output
        self.backward = backward


class GraphTape:
    """Ordered record of forward operations for reverse-mode differentiation.

    Usable as a context manager; ops executed inside record themselves on
    the innermost active tape.  Nodes are appended in execution order, so
    the record is topologically sorted by construction.
    """

    _stack = []

    def __init__(self):
        self._nodes = []
        self._traced = set()

    def __enter__(self):
        GraphTape._stack.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        GraphTape._stack.pop()
        return False

    @staticmethod
    def current():
        return GraphTape._stack[-1] if GraphTape._stack else None

    def __len__(self):
        return len(self._nodes)

    def record(self, inputs, output, backward):
        self._nodes.append(_Node(tuple(inputs), output, backward))
        self._traced.add(id(output))

    def tracks(self, tensor):
        return id(tensor) in self._traced

    def gradients(self, loss, params=None):
        """Backpropagate from scalar `loss`; returns {tensor: gradient Tensor}.

        Gradients accumulate additively across fan-out.  Tensors in `params`
        that the loss never touched get zero gradients.  Also stores the
        gradient buffer on `t.grad` for every tensor with requires_grad.
        """
        if loss.size != 1:
            raise ShapeError(f"loss must be scalar, got shape {loss.shape}")
        if not self.tracks(loss):
            raise TapeError("loss tensor was not produced on this tape")

        grads = {id(loss): np.ones_like(loss.data)}
        wanted = {}
        for node in reversed(self._nodes):
            g_out = grads.get(id(node.output))
            if g_out is None:
                continue
            for tensor, g_in in zip(node.inputs, node.backward(g_out)):
                if g_in is None:
                    continue
                acc = grads.get(id(tensor))
                grads[id(tensor)] = g_in if acc is None else acc + g_in
                wanted[id(tensor)] = tensor

        result = {}
        for tid, tensor in wanted.items():
            if tensor.requires_grad:
                g = Tensor(grads[tid])
                tensor.grad = g.data
                result[tensor] = g
        if params is not None:
            for p in params:
                if p not in result:
                    g = zeros(p.shape, dtype=p.dtype)
                    p.grad = g.data
                    result[p] = g
        return result


def record(inputs, output, backward):
    """Record an op on the active tape, if tracking is warranted."""
    tape = GraphTape.current()
    if tape is None:
        return output
    if any(t.requires_grad or tape.tracks(t) for t in inputs):
        tape.record(inputs, output, backward)
    return output


def _broadcast_kind(a, b):
    if a.shape == b.shape:
        return "same"
    if (
        a.ndim == 4
        and b.ndim == 4
        and b.shape[2] == b.shape[3] == 1
        and a.shape[:2] == b.shape[:2]
    ):
        return "channel"
    raise ShapeError(f"incompatible shapes {a.shape} and {b.shape}")


def _binary(a, b, fwd, bwd_a, bwd_b):
    kind = _broadcast_kind(a, b)
    out = Tensor(fwd(a.data, b.data))

    def backward(g):
        ga = bwd_a(g, a.data, b.data)
        gb = bwd_b(g, a.data, b.data)
        if kind == "channel" and gb is not None:
            gb = gb.sum(axis=(2, 3), keepdims=True)
        return ga, gb

    return record((a, b), out, backward)


def add(a, b):
    return _binary(a, b, np.add, lambda g, x, y: g, lambda g, x, y: g)


def sub(a, b):
    return _binary(a, b, np.subtract, lambda g, x, y: g, lambda g, x, y: -g)


def mul(a, b):
    return _binary(a, b, np.multiply, lambda g, x, y: g * y, lambda g, x, y: g * x)


def tsum(x):
    """Sum of all elements, as a scalar tensor."""
    out = Tensor(np.array(x.data.sum(), dtype=x.dtype))

    def backward(g):
        return (np.full_like(x.data, g),)

    return record((x,), out, backward)


def finite_difference_check(fn, x, eps=1e-4):
    """Max relative error between analytic and central-difference gradients.

    `fn` maps a Tensor to a scalar Tensor and must be deterministic; `x`
    should be float64 for the comparison to be meaningful.  Relative error
    uses max(1, |analytic|) per element as denominator.
    """
    x0 = Tensor(x.data.astype(np.float64), requires_grad=True)
    with GraphTape() as tape:
        loss = fn(x0)
    analytic = tape.gradients(loss, params=[x0])[x0].data
    if not np.all(np.isfinite(analytic)):
        raise NumericError("non-finite analytic gradient")

    flat = x0.data.reshape(-1)
    numeric = np.zeros_like(flat)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        f_plus = fn(Tensor(x0.data.copy())).item()
        flat[i] = orig - eps
        f_minus = fn(Tensor(x0.data.copy())).item()
        flat[i] = orig
        numeric[i] = (f_plus - f_minus) / (2.0 * eps)
    if not np.all(np.isfinite(numeric)):
        raise NumericError("non-finite numeric gradient")

    a = analytic.reshape(-1)
    rel = np.abs(a - numeric) / np.maximum(1.0, np.abs(a))
    return float(rel.max())
