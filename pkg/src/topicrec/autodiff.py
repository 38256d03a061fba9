"""Minimal dense-tensor math with reverse-mode gradient accumulation.

Everything the encoders and the trainer compute is built from the handful of
operations in this module: broadcast add/multiply, matmul, tanh/sigmoid,
masked softmax, gathers and reductions. Each operation records a backward
closure on the output tensor; ``Tensor.backward()`` replays them in reverse
topological order and *accumulates* gradients additively, so a parameter used
several times in one forward pass ends up with the sum of all its path
gradients.

Gradients are checked against central finite differences by
``finite_difference_check``; the checker is deliberately independent of the
backward closures (it only re-evaluates the loss value).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateInputError, DimensionError, NumericError

DEFAULT_DTYPE = np.float64


def _as_array(data, dtype=None):
    arr = np.asarray(data)
    if dtype is not None:
        return np.ascontiguousarray(arr, dtype=dtype)
    if arr.dtype in (np.float32, np.float64):
        return np.ascontiguousarray(arr)
    return np.ascontiguousarray(arr, dtype=DEFAULT_DTYPE)


class Tensor:
    """A dense array plus the bookkeeping needed for reverse-mode gradients.

    Tensors are treated as immutable once produced by an operation; only
    ``Parameter`` values are mutated (by the optimizer). ``grad`` stays None
    until a backward pass deposits something.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward_fn")

    def __init__(self, data, requires_grad=False, dtype=None):
        self.data = _as_array(data, dtype)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward_fn = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self):
        """Value as a detached numpy array (copy)."""
        return np.array(self.data)

    def item(self):
        return self.data.item()

    def zero_grad(self):
        self.grad = None

    def backward(self, seed=None):
        """Accumulate gradients of this (scalar) tensor into the graph.

        ``seed`` overrides the implicit all-ones output gradient, which is
        only meaningful for non-scalar outputs.
        """
        if seed is None:
            if self.data.size != 1:
                raise DimensionError(
                    f"backward() needs a scalar output or an explicit seed; got shape {self.data.shape}"
                )
            seed = np.ones_like(self.data)
        _accumulate(self, np.asarray(seed, dtype=self.data.dtype))
        for node in reversed(_toposort(self)):
            if node._backward_fn is not None:
                node._backward_fn(node.grad)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


class Parameter(Tensor):
    """A named, trainable tensor. Gradients persist until ``zero_grad``."""

    __slots__ = ("name",)

    def __init__(self, data, name, dtype=None):
        super().__init__(data, requires_grad=True, dtype=dtype)
        self.name = name

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.data.shape})"


def _toposort(root):
    order, visited, stack = [], set(), [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in visited:
                stack.append((parent, False))
    return order


def _accumulate(tensor, grad):
    # Never in place: grad arrays may alias an upstream tensor's .grad.
    tensor.grad = grad if tensor.grad is None else tensor.grad + grad


def _make(data, parents, backward_fn):
    out = Tensor(data)
    out.requires_grad = any(p.requires_grad for p in parents)
    if out.requires_grad:
        out._parents = tuple(parents)
        out._backward_fn = backward_fn
    return out


def as_tensor(value, dtype=None):
    return value if isinstance(value, Tensor) else Tensor(value, dtype=dtype)


def _unbroadcast(grad, shape):
    """Sum ``grad`` down to ``shape`` (inverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# elementwise operations
# ---------------------------------------------------------------------------

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    try:
        data = a.data + b.data
    except ValueError:
        raise DimensionError(f"add: shapes {a.data.shape} vs {b.data.shape} do not broadcast") from None

    def backward(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g, a.data.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(g, b.data.shape))

    return _make(data, (a, b), backward)


def sub(a, b):
    return add(a, scale(as_tensor(b), -1.0))


def hadamard(a, b):
    """Pointwise product (broadcasting allowed for constants/biases)."""
    a, b = as_tensor(a), as_tensor(b)
    try:
        data = a.data * b.data
    except ValueError:
        raise DimensionError(f"hadamard: shapes {a.data.shape} vs {b.data.shape} do not broadcast") from None

    def backward(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(g * a.data, b.data.shape))

    return _make(data, (a, b), backward)


def scale(a, factor):
    a = as_tensor(a)
    factor = float(factor)
    data = a.data * factor

    def backward(g):
        _accumulate(a, g * factor)

    return _make(data, (a,), backward)


def tanh(a):
    a = as_tensor(a)
    data = np.tanh(a.data)

    def backward(g):
        _accumulate(a, g * (1.0 - data * data))

    return _make(data, (a,), backward)


def sigmoid(a):
    a = as_tensor(a)
    # 1/(1+exp(-x)) computed branch-wise to avoid overflow on large |x|
    x = a.data
    data = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))

    def backward(g):
        _accumulate(a, g * data * (1.0 - data))

    return _make(data, (a,), backward)


def exp(a):
    a = as_tensor(a)
    data = np.exp(a.data)

    def backward(g):
        _accumulate(a, g * data)

    return _make(data, (a,), backward)


def log(a):
    a = as_tensor(a)
    data = np.log(a.data)

    def backward(g):
        _accumulate(a, g / a.data)

    return _make(data, (a,), backward)


_ELEMENTWISE = {
    "tanh": tanh,
    "sigmoid": sigmoid,
    "hadamard": hadamard,
    "add": add,
    "scale": scale,
}


def elementwise(op_kind, *args):
    """Dispatch by name: tanh, sigmoid, hadamard, add, scale."""
    try:
        fn = _ELEMENTWISE[op_kind]
    except KeyError:
        raise ValueError(f"unknown elementwise op {op_kind!r}") from None
    return fn(*args)


# ---------------------------------------------------------------------------
# linear algebra / structure
# ---------------------------------------------------------------------------

def matmul(a, b):
    """Batched matrix product with numpy broadcasting over leading axes."""
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise DimensionError(f"matmul needs >=2-d operands; got {a.data.shape} vs {b.data.shape}")
    if a.data.shape[-1] != b.data.shape[-2]:
        raise DimensionError(f"matmul: inner dimensions disagree, {a.data.shape} vs {b.data.shape}")
    data = np.matmul(a.data, b.data)

    def backward(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.data.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.data.shape))

    return _make(data, (a, b), backward)


def matvec(matrix, vector):
    """Matrix-vector product for a 2-d matrix and 1-d vector."""
    matrix, vector = as_tensor(matrix), as_tensor(vector)
    if matrix.data.ndim != 2 or vector.data.ndim != 1 or matrix.data.shape[1] != vector.data.shape[0]:
        raise DimensionError(f"matvec: shapes {matrix.data.shape} vs {vector.data.shape} are incompatible")
    data = matrix.data @ vector.data

    def backward(g):
        if matrix.requires_grad:
            _accumulate(matrix, np.outer(g, vector.data))
        if vector.requires_grad:
            _accumulate(vector, matrix.data.T @ g)

    return _make(data, (matrix, vector), backward)


def tsum(a, axis=None, keepdims=False):
    """Sum reduction with gradient broadcast back to the input shape."""
    a = as_tensor(a)
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        gg = g
        if axis is not None and not keepdims:
            gg = np.expand_dims(gg, axis)
        _accumulate(a, np.broadcast_to(gg, a.data.shape).copy())

    return _make(data, (a,), backward)


def reshape(a, shape):
    a = as_tensor(a)
    data = a.data.reshape(shape)

    def backward(g):
        _accumulate(a, g.reshape(a.data.shape))

    return _make(data, (a,), backward)


def transpose(a, axes):
    a = as_tensor(a)
    data = np.transpose(a.data, axes)
    inverse = np.argsort(axes)

    def backward(g):
        _accumulate(a, np.transpose(g, inverse))

    return _make(data, (a,), backward)


def gather(a, indices):
    """Index the leading axis of ``a`` with an integer array.

    Backward scatter-adds, so repeated indices accumulate (this is what
    makes a shared embedding row receive the sum of its use-site gradients).
    """
    a = as_tensor(a)
    idx = np.asarray(indices)
    data = a.data[idx]

    def backward(g):
        full = np.zeros_like(a.data)
        np.add.at(full, idx, g)
        _accumulate(a, full)

    return _make(data, (a,), backward)


def select(a, index, axis):
    """Pick a single slice along ``axis`` (the axis is removed)."""
    a = as_tensor(a)
    data = np.take(a.data, index, axis=axis)

    def backward(g):
        full = np.zeros_like(a.data)
        sl = [slice(None)] * a.data.ndim
        sl[axis] = index
        full[tuple(sl)] = g
        _accumulate(a, full)

    return _make(data, (a,), backward)


def masked_softmax(logits, mask, axis=-1, allow_empty=False):
    """Softmax over the unmasked positions of ``logits``.

    Masked positions come out exactly zero; unmasked ones sum to one. The
    max of the unmasked entries is subtracted before exponentiation, which
    makes the result invariant to adding a constant to the logits. A row
    with no unmasked position is an error unless ``allow_empty`` is set, in
    which case the whole row is zero (used internally for cold users).
    """
    logits = as_tensor(logits)
    mask_arr = np.broadcast_to(np.asarray(mask, dtype=bool), logits.data.shape)
    any_live = mask_arr.any(axis=axis, keepdims=True)
    if not allow_empty and not any_live.all():
        raise DegenerateInputError("masked_softmax: at least one position must be unmasked")

    masked = np.where(mask_arr, logits.data, -np.inf)
    with np.errstate(invalid="ignore"):
        top = np.max(masked, axis=axis, keepdims=True)
    top = np.where(np.isfinite(top), top, 0.0)
    expd = np.exp(masked - top)
    denom = expd.sum(axis=axis, keepdims=True)
    data = expd / np.where(denom == 0.0, 1.0, denom)

    def backward(g):
        inner = (g * data).sum(axis=axis, keepdims=True)
        _accumulate(logits, data * (g - inner))

    return _make(data, (logits,), backward)


def logsumexp(a, axis=-1):
    """Stable log-sum-exp along ``axis`` (axis removed)."""
    a = as_tensor(a)
    top = np.max(a.data, axis=axis, keepdims=True)  # constant shift, gradient-free
    shifted = exp(add(a, Tensor(-top)))
    return add(log(tsum(shifted, axis=axis)), Tensor(np.squeeze(top, axis=axis)))


def dropout(a, rate, rng, training):
    """Inverted dropout: scale survivors by 1/(1-rate) at train time only."""
    if not training or rate <= 0.0:
        return as_tensor(a)
    a = as_tensor(a)
    keep = (rng.random(a.data.shape) >= rate).astype(a.data.dtype) / (1.0 - rate)
    return hadamard(a, Tensor(keep))


# ---------------------------------------------------------------------------
# optimization
# ---------------------------------------------------------------------------

@dataclass
class AdamState:
    """Per-parameter Adam moments. Shapes always mirror the parameter."""

    first_moment: np.ndarray
    second_moment: np.ndarray
    step_count: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def for_parameter(cls, param, beta1=0.9, beta2=0.999, epsilon=1e-8):
        return cls(
            first_moment=np.zeros_like(param.data),
            second_moment=np.zeros_like(param.data),
            beta1=beta1,
            beta2=beta2,
            epsilon=epsilon,
        )


def adam_step(param, state, learning_rate):
    """One Adam update with bias correction; mutates param and state."""
    grad = param.grad
    if grad is None:
        grad = np.zeros_like(param.data)
    if not np.isfinite(grad).all():
        raise NumericError(f"non-finite gradient for parameter {param.name!r}")
    state.step_count += 1
    t = state.step_count
    state.first_moment *= state.beta1
    state.first_moment += (1.0 - state.beta1) * grad
    state.second_moment *= state.beta2
    state.second_moment += (1.0 - state.beta2) * grad * grad
    m_hat = state.first_moment / (1.0 - state.beta1 ** t)
    v_hat = state.second_moment / (1.0 - state.beta2 ** t)
    param.data -= learning_rate * m_hat / (np.sqrt(v_hat) + state.epsilon)
    return param


class Adam:
    """Adam over an ordered parameter list with a mutable learning rate."""

    def __init__(self, params, learning_rate=1e-3, beta1=0.9, beta2=0.999, epsilon=1e-8):
        self.params = list(params)
        self.learning_rate = learning_rate
        self.states = {id(p): AdamState.for_parameter(p, beta1, beta2, epsilon) for p in self.params}

    def step(self):
        for p in self.params:
            adam_step(p, self.states[id(p)], self.learning_rate)

    def zero_grad(self):
        for p in self.params:
            p.grad = None


def clip_global_norm(params, max_norm):
    """Scale all gradients so their joint L2 norm is at most ``max_norm``."""
    total = 0.0
    for p in params:
        if p.grad is not None:
            total += float((p.grad * p.grad).sum())
    norm = float(np.sqrt(total))
    if max_norm and norm > max_norm:
        factor = max_norm / norm
        for p in params:
            if p.grad is not None:
                p.grad = p.grad * factor
    return norm


# ---------------------------------------------------------------------------
# verification
# ---------------------------------------------------------------------------

def finite_difference_check(loss_fn, params, h=1e-5, rel_floor=1e-6):
    """Worst relative error between backward gradients and central differences.

    ``loss_fn`` must be a deterministic zero-argument callable returning a
    scalar Tensor built from the current parameter values (dropout off, any
    sampling fixed beforehand). Relative error uses max(|analytic|, |fd|,
    rel_floor) as denominator so coordinates with a tiny true gradient do
    not blow up the ratio.
    """
    params = list(params)
    for p in params:
        p.grad = None
    loss = loss_fn()
    loss.backward()
    analytic = [np.array(p.grad) if p.grad is not None else np.zeros_like(p.data) for p in params]

    worst = 0.0
    for p, grads in zip(params, analytic):
        for idx in np.ndindex(*p.data.shape):
            original = p.data[idx]
            p.data[idx] = original + h
            f_plus = loss_fn().data.item()
            p.data[idx] = original - h
            f_minus = loss_fn().data.item()
            p.data[idx] = original
            fd = (f_plus - f_minus) / (2.0 * h)
            a = float(grads[idx])
            err = abs(a - fd) / max(abs(a), abs(fd), rel_floor)
            worst = max(worst, err)
    for p in params:
        p.grad = None
    return worst
