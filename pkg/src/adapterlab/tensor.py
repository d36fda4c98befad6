"""Dense tensor engine with reverse-mode automatic differentiation.

Every layer in this package is built from the ops defined here. The engine
is deliberately small: float32 for training, float64 for gradient checks,
and only the broadcasts the transformer backbone actually needs (scalars,
and a trailing-shape operand such as a bias). Anything else is rejected
loudly rather than silently broadcast.

Provenance recording is opt-in: inside ``no_grad()`` (or when no input
requires a gradient) ops record nothing, so inference passes carry no
graph.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "AutodiffError",
    "Tensor",
    "Parameter",
    "no_grad",
    "grad_enabled",
    "backward",
    "finite_diff_gradcheck",
    "add",
    "mul",
    "neg",
    "matmul",
    "linear",
    "reshape",
    "transpose",
    "tsum",
    "tmean",
    "relu",
    "leaky_relu",
    "elu",
    "silu",
    "softmax_rows",
    "layer_norm",
    "dropout",
    "masked_fill",
    "pairwise_sum",
    "embedding",
    "gather_positions",
    "take_columns",
    "slice_rows",
    "concat",
    "cross_entropy",
]

_FLOAT_DTYPES = (np.float32, np.float64)

_grad_enabled = True


class AutodiffError(RuntimeError):
    """Invalid state during recording or backward traversal."""


@contextlib.contextmanager
def no_grad():
    """Disable provenance recording inside the block."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def grad_enabled() -> bool:
    return _grad_enabled


class Tensor:
    """A dense n-d float array with an optional gradient slot.

    ``op`` names the operation that produced the tensor (leaves are
    ``"leaf"``); ``_inputs`` and ``_backward`` record provenance for the
    reverse pass. ``requires_grad`` marks tensors that participate in
    differentiation.
    """

    __slots__ = ("data", "grad", "requires_grad", "op", "_inputs", "_backward")

    def __init__(
        self,
        data,
        requires_grad: bool = False,
        *,
        op: str = "leaf",
        inputs: tuple = (),
        backward: Callable[[np.ndarray], None] | None = None,
    ):
        arr = np.asarray(data)
        if arr.dtype not in _FLOAT_DTYPES:
            arr = arr.astype(np.float32)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self.op = op
        self._inputs = inputs
        self._backward = backward

    # -- introspection -------------------------------------------------

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op!r}, requires_grad={self.requires_grad})"

    # -- operator sugar --------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return neg(self)

    def __sub__(self, other):
        if isinstance(other, Tensor):
            return add(self, neg(other))
        return add(self, -float(other))

    def __rsub__(self, other):
        return add(neg(self), float(other))

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise AutodiffError("tensor/tensor division is not supported; multiply by a reciprocal op instead")
        return mul(self, 1.0 / float(other))

    def __matmul__(self, other):
        return matmul(self, other)


class Parameter:
    """A named tensor with a trainable flag.

    Frozen parameters (``trainable=False``) never require gradients and are
    skipped by the optimizer, so their values stay bit-identical across any
    number of training steps. ``decay`` marks whether weight decay applies
    (matrices yes, biases and norm scales no).
    """

    __slots__ = ("name", "tensor", "trainable", "decay")

    def __init__(self, name: str, data, trainable: bool = True, decay: bool | None = None):
        self.name = name
        self.tensor = Tensor(data, requires_grad=trainable)
        self.trainable = trainable
        if decay is None:
            decay = np.asarray(data).ndim >= 2
        self.decay = decay

    @property
    def data(self) -> np.ndarray:
        return self.tensor.data

    @property
    def shape(self) -> tuple:
        return self.tensor.shape

    def freeze(self) -> "Parameter":
        self.trainable = False
        self.tensor.requires_grad = False
        return self

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape}, trainable={self.trainable})"


# -- graph construction ----------------------------------------------------


def _make(data: np.ndarray, op: str, inputs: Sequence[Tensor], backward_fn) -> Tensor:
    if _grad_enabled and any(t.requires_grad for t in inputs):
        return Tensor(data, True, op=op, inputs=tuple(inputs), backward=backward_fn)
    return Tensor(data, False, op=op)


def _accum(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _check_same_dtype(a: Tensor, b: Tensor, op: str) -> None:
    if a.dtype != b.dtype:
        raise AutodiffError(f"{op}: mixed dtypes {a.dtype} and {b.dtype}")


def backward(loss: Tensor) -> None:
    """Reverse-mode pass from a scalar loss.

    Populates ``grad`` on every recorded tensor reachable from ``loss``;
    gradients sum across fan-out. Each recorded op is visited exactly once,
    in reverse topological order. Tensors not reachable from the loss are
    left untouched (their grad stays ``None``, i.e. zero).
    """
    if loss.data.size != 1:
        raise AutodiffError(f"backward requires a scalar loss, got shape {loss.shape}")

    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._inputs:
            if id(parent) not in seen:
                stack.append((parent, False))

    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node._backward is None or node.grad is None:
            continue
        if not np.all(np.isfinite(node.grad)):
            raise AutodiffError(f"non-finite gradient entering backward of op '{node.op}'")
        node._backward(node.grad)


def finite_diff_gradcheck(f: Callable[[Tensor], Tensor], x: Tensor, eps: float = 1e-5) -> float:
    """Compare reverse-mode gradients of ``f`` at ``x`` against central differences.

    Returns the maximum over elements of
    ``|g_ad - g_fd| / (|g_ad| + |g_fd| + 1e-12)``.

    ``f`` must be deterministic (dropout disabled) and return a scalar;
    ``x`` must be float64, since finite differences are unreliable in
    float32.
    """
    if x.dtype != np.float64:
        raise AutodiffError("gradcheck requires a float64 input tensor")
    probe = Tensor(x.data.copy(), requires_grad=True)
    out = f(probe)
    if out.data.size != 1:
        raise AutodiffError(f"gradcheck function must return a scalar, got shape {out.shape}")
    backward(out)
    g_ad = probe.grad.copy() if probe.grad is not None else np.zeros_like(probe.data)

    base = probe.data.copy()
    g_fd = np.zeros_like(base)
    flat_base = base.reshape(-1)
    flat_fd = g_fd.reshape(-1)
    with no_grad():
        for i in range(flat_base.size):
            orig = flat_base[i]
            flat_base[i] = orig + eps
            f_plus = float(f(Tensor(base.copy())).data)
            flat_base[i] = orig - eps
            f_minus = float(f(Tensor(base.copy())).data)
            flat_base[i] = orig
            flat_fd[i] = (f_plus - f_minus) / (2.0 * eps)

    rel = np.abs(g_ad - g_fd) / (np.abs(g_ad) + np.abs(g_fd) + 1e-12)
    return float(rel.max())


# -- elementwise and arithmetic ops -----------------------------------------


def _is_suffix_shape(big: tuple, small: tuple) -> bool:
    return len(small) <= len(big) and big[len(big) - len(small):] == small


def _reduce_to_suffix(g: np.ndarray, shape: tuple) -> np.ndarray:
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    return g


def add(a: Tensor, b) -> Tensor:
    """Elementwise sum. Supports same-shape, scalar, and trailing-shape operands."""
    if not isinstance(b, Tensor):
        s = a.data.dtype.type(float(b))

        def back_scalar(g):
            _accum(a, g)

        return _make(a.data + s, "add", (a,), back_scalar)

    _check_same_dtype(a, b, "add")
    if a.shape == b.shape:
        def back_same(g):
            _accum(a, g)
            _accum(b, g)

        return _make(a.data + b.data, "add", (a, b), back_same)
    if _is_suffix_shape(a.shape, b.shape):
        def back_suffix(g):
            _accum(a, g)
            _accum(b, _reduce_to_suffix(g, b.shape))

        return _make(a.data + b.data, "add", (a, b), back_suffix)
    if _is_suffix_shape(b.shape, a.shape):
        return add(b, a)
    raise AutodiffError(
        f"add: unsupported broadcast {a.shape} + {b.shape}; "
        "only same-shape, scalar, or trailing-shape operands are allowed"
    )


def mul(a: Tensor, b) -> Tensor:
    """Elementwise product with the same broadcast policy as ``add``."""
    if not isinstance(b, Tensor):
        s = a.data.dtype.type(float(b))

        def back_scalar(g):
            _accum(a, g * s)

        return _make(a.data * s, "mul", (a,), back_scalar)

    _check_same_dtype(a, b, "mul")
    if a.shape == b.shape:
        def back_same(g):
            _accum(a, g * b.data)
            _accum(b, g * a.data)

        return _make(a.data * b.data, "mul", (a, b), back_same)
    if _is_suffix_shape(a.shape, b.shape):
        def back_suffix(g):
            _accum(a, g * b.data)
            _accum(b, _reduce_to_suffix(g * a.data, b.shape))

        return _make(a.data * b.data, "mul", (a, b), back_suffix)
    if _is_suffix_shape(b.shape, a.shape):
        return mul(b, a)
    raise AutodiffError(
        f"mul: unsupported broadcast {a.shape} * {b.shape}; "
        "only same-shape, scalar, or trailing-shape operands are allowed"
    )


def neg(a: Tensor) -> Tensor:
    def back(g):
        _accum(a, -g)

    return _make(-a.data, "neg", (a,), back)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product: either stacked-by-2D (``(..., m, n) @ (n, p)``) or
    batched with identical leading dims (``(..., m, n) @ (..., n, p)``)."""
    _check_same_dtype(a, b, "matmul")
    if a.ndim < 2 or b.ndim < 2:
        raise AutodiffError(f"matmul: operands must be at least 2-d, got {a.shape} @ {b.shape}")
    if b.ndim == 2:
        if a.shape[-1] != b.shape[0]:
            raise AutodiffError(f"matmul: inner dims differ, {a.shape} @ {b.shape}")

        def back_2d(g):
            _accum(a, g @ b.data.T)
            if b.requires_grad:
                g2 = g.reshape(-1, g.shape[-1])
                a2 = a.data.reshape(-1, a.shape[-1])
                _accum(b, a2.T @ g2)

        return _make(a.data @ b.data, "matmul", (a, b), back_2d)
    if a.ndim == b.ndim and a.shape[:-2] == b.shape[:-2] and a.shape[-1] == b.shape[-2]:
        def back_batched(g):
            _accum(a, g @ np.swapaxes(b.data, -1, -2))
            _accum(b, np.swapaxes(a.data, -1, -2) @ g)

        return _make(a.data @ b.data, "matmul", (a, b), back_batched)
    raise AutodiffError(f"matmul: unsupported operand shapes {a.shape} @ {b.shape}")


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Affine map ``x @ weight.T + bias`` with ``weight`` of shape (out, in)."""
    _check_same_dtype(x, weight, "linear")
    if x.shape[-1] != weight.shape[-1]:
        raise AutodiffError(
            f"linear: input trailing dim {x.shape[-1]} does not match weight in-dim {weight.shape[-1]}"
        )
    out_data = x.data @ weight.data.T
    if bias is not None:
        _check_same_dtype(x, bias, "linear")
        out_data = out_data + bias.data

    inputs = (x, weight) if bias is None else (x, weight, bias)

    def back(g):
        _accum(x, g @ weight.data)
        if weight.requires_grad:
            g2 = g.reshape(-1, g.shape[-1])
            x2 = x.data.reshape(-1, x.shape[-1])
            _accum(weight, g2.T @ x2)
        if bias is not None and bias.requires_grad:
            _accum(bias, g.reshape(-1, g.shape[-1]).sum(axis=0))

    return _make(out_data, "linear", inputs, back)


def reshape(a: Tensor, shape: tuple) -> Tensor:
    def back(g):
        _accum(a, g.reshape(a.shape))

    return _make(a.data.reshape(shape), "reshape", (a,), back)


def transpose(a: Tensor, axes: tuple | None = None) -> Tensor:
    """Permute axes; default swaps the last two."""
    if axes is None:
        axes = tuple(range(a.ndim - 2)) + (a.ndim - 1, a.ndim - 2)
    inv = tuple(np.argsort(axes))

    def back(g):
        _accum(a, np.transpose(g, inv))

    return _make(np.ascontiguousarray(np.transpose(a.data, axes)), "transpose", (a,), back)


def tsum(a: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
    """Sum over all elements (scalar) or over one axis."""
    if axis is None:
        def back_all(g):
            _accum(a, np.broadcast_to(g, a.shape).astype(a.dtype, copy=True))

        return _make(a.data.sum(), "sum", (a,), back_all)

    def back_axis(g):
        ge = g if keepdims else np.expand_dims(g, axis)
        _accum(a, np.broadcast_to(ge, a.shape).astype(a.dtype, copy=True))

    return _make(a.data.sum(axis=axis, keepdims=keepdims), "sum", (a,), back_axis)


def tmean(a: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
    n = a.size if axis is None else a.shape[axis]
    return mul(tsum(a, axis=axis, keepdims=keepdims), 1.0 / n)


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0

    def back(g):
        _accum(a, g * mask)

    return _make(np.where(mask, a.data, a.data.dtype.type(0)), "relu", (a,), back)


def leaky_relu(a: Tensor, slope: float = 0.2) -> Tensor:
    s = a.data.dtype.type(slope)
    pos = a.data > 0

    def back(g):
        _accum(a, g * np.where(pos, a.data.dtype.type(1), s))

    return _make(np.where(pos, a.data, a.data * s), "leaky_relu", (a,), back)


def elu(a: Tensor, alpha: float = 1.0) -> Tensor:
    al = a.data.dtype.type(alpha)
    pos = a.data > 0
    neg_part = al * np.expm1(np.minimum(a.data, 0))
    out_data = np.where(pos, a.data, neg_part)

    def back(g):
        _accum(a, g * np.where(pos, a.data.dtype.type(1), neg_part + al))

    return _make(out_data, "elu", (a,), back)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def silu(a: Tensor) -> Tensor:
    sig = _sigmoid(a.data)

    def back(g):
        _accum(a, g * (sig * (1.0 + a.data * (1.0 - sig))))

    return _make(a.data * sig, "silu", (a,), back)


# -- normalization, masking and structural ops ------------------------------


def softmax_rows(a: Tensor) -> Tensor:
    """Softmax along the trailing axis, stabilized by max subtraction."""
    m = a.data.max(axis=-1, keepdims=True)
    e = np.exp(a.data - m)
    s = e / e.sum(axis=-1, keepdims=True)

    def back(g):
        dot = (g * s).sum(axis=-1, keepdims=True)
        _accum(a, (g - dot) * s)

    return _make(s, "softmax_rows", (a,), back)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Per-row normalization over the trailing axis using population variance."""
    if eps <= 0:
        raise AutodiffError("layer_norm: eps must be positive")
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise AutodiffError(f"layer_norm: gamma/beta must have shape ({d},)")
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + x.data.dtype.type(eps))
    xhat = (x.data - mu) * inv_std
    out_data = gamma.data * xhat + beta.data

    def back(g):
        if gamma.requires_grad:
            _accum(gamma, (g * xhat).reshape(-1, d).sum(axis=0))
        if beta.requires_grad:
            _accum(beta, g.reshape(-1, d).sum(axis=0))
        dxhat = g * gamma.data
        term = dxhat - dxhat.mean(axis=-1, keepdims=True) - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
        _accum(x, term * inv_std)

    return _make(out_data, "layer_norm", (x, gamma, beta), back)


def dropout(x: Tensor, p: float, rng: np.random.Generator, training: bool) -> Tensor:
    """Inverted dropout: active only in training mode, identity otherwise."""
    if not 0.0 <= p < 1.0:
        raise AutodiffError(f"dropout: p must be in [0, 1), got {p}")
    if not training or p == 0.0:
        return x
    keep = (rng.random(x.shape) >= p).astype(x.dtype)
    scale = x.data.dtype.type(1.0 / (1.0 - p))

    def back(g):
        _accum(x, g * keep * scale)

    return _make(x.data * keep * scale, "dropout", (x,), back)


def masked_fill(x: Tensor, keep: np.ndarray, value: float) -> Tensor:
    """Replace entries where ``keep`` is False with ``value`` (a constant).

    Gradients flow only through kept entries, so masked positions are
    bit-exactly independent of the input.
    """
    fill = x.data.dtype.type(value)

    def back(g):
        _accum(x, np.where(keep, g, x.data.dtype.type(0)))

    return _make(np.where(keep, x.data, fill), "masked_fill", (x,), back)


def pairwise_sum(u: Tensor, v: Tensor) -> Tensor:
    """Outer sum over trailing axes: out[..., i, j] = u[..., i] + v[..., j]."""
    _check_same_dtype(u, v, "pairwise_sum")
    if u.shape[:-1] != v.shape[:-1]:
        raise AutodiffError(f"pairwise_sum: leading dims differ, {u.shape} vs {v.shape}")
    out_data = u.data[..., :, None] + v.data[..., None, :]

    def back(g):
        _accum(u, g.sum(axis=-1))
        _accum(v, g.sum(axis=-2))

    return _make(out_data, "pairwise_sum", (u, v), back)


def embedding(weight: Tensor, ids: np.ndarray) -> Tensor:
    """Row lookup ``weight[ids]`` with scatter-add backward."""
    ids = np.asarray(ids)
    if ids.size and (ids.min() < 0 or ids.max() >= weight.shape[0]):
        bad = int(ids.min()) if ids.min() < 0 else int(ids.max())
        raise AutodiffError(f"embedding: id {bad} outside table of size {weight.shape[0]}")

    def back(g):
        if weight.requires_grad:
            if weight.grad is None:
                weight.grad = np.zeros_like(weight.data)
            np.add.at(weight.grad, ids, g)

    return _make(weight.data[ids], "embedding", (weight,), back)


def gather_positions(x: Tensor, idx: np.ndarray) -> Tensor:
    """Select one row per batch entry: out[b] = x[b, idx[b]] for x of shape (B, T, D)."""
    if x.ndim != 3:
        raise AutodiffError(f"gather_positions expects (B, T, D), got {x.shape}")
    idx = np.asarray(idx)
    b_range = np.arange(x.shape[0])

    def back(g):
        if x.requires_grad:
            if x.grad is None:
                x.grad = np.zeros_like(x.data)
            np.add.at(x.grad, (b_range, idx), g)

    return _make(x.data[b_range, idx], "gather_positions", (x,), back)


def take_columns(x: Tensor, cols: Sequence[int]) -> Tensor:
    """Select columns of a 2-d tensor: out = x[:, cols]."""
    if x.ndim != 2:
        raise AutodiffError(f"take_columns expects a 2-d tensor, got {x.shape}")
    cols = list(cols)

    def back(g):
        if x.requires_grad:
            if x.grad is None:
                x.grad = np.zeros_like(x.data)
            np.add.at(x.grad, (slice(None), cols), g)

    return _make(x.data[:, cols], "take_columns", (x,), back)


def slice_rows(x: Tensor, start: int, stop: int) -> Tensor:
    """Slice along axis 0; backward pads the complement with zeros."""

    def back(g):
        if x.requires_grad:
            if x.grad is None:
                x.grad = np.zeros_like(x.data)
            x.grad[start:stop] += g

    return _make(x.data[start:stop].copy(), "slice_rows", (x,), back)


def concat(tensors: Iterable[Tensor], axis: int = -1) -> Tensor:
    ts = list(tensors)
    if not ts:
        raise AutodiffError("concat: empty tensor list")
    sizes = [t.shape[axis] for t in ts]
    offsets = np.cumsum([0] + sizes)
    out_data = np.concatenate([t.data for t in ts], axis=axis)

    def back(g):
        for t, lo, hi in zip(ts, offsets[:-1], offsets[1:]):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(lo, hi)
            _accum(t, g[tuple(sl)])

    return _make(out_data, "concat", tuple(ts), back)


def cross_entropy(logits: Tensor, targets: np.ndarray, ignore_index: int | None = None) -> Tensor:
    """Mean negative log-likelihood of integer targets under row softmax.

    Rows whose target equals ``ignore_index`` contribute nothing. Raises if
    any non-ignored target falls outside [0, n_classes).
    """
    if logits.ndim != 2:
        raise AutodiffError(f"cross_entropy expects (N, C) logits, got {logits.shape}")
    targets = np.asarray(targets)
    n, c = logits.shape
    valid = np.ones(n, dtype=bool) if ignore_index is None else targets != ignore_index
    checked = targets[valid]
    if checked.size and (checked.min() < 0 or checked.max() >= c):
        bad = int(checked.min()) if checked.min() < 0 else int(checked.max())
        raise AutodiffError(f"cross_entropy: label {bad} outside [0, {c})")
    n_valid = int(valid.sum())
    if n_valid == 0:
        raise AutodiffError("cross_entropy: no valid targets in batch")

    m = logits.data.max(axis=-1, keepdims=True)
    z = logits.data - m
    log_norm = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    logp = z - log_norm
    rows = np.arange(n)
    nll = -logp[rows[valid], targets[valid]]
    loss = nll.sum() / n_valid

    def back(g):
        grad = np.exp(logp)
        grad[rows[valid], targets[valid]] -= 1.0
        grad[~valid] = 0.0
        _accum(logits, grad * (g / n_valid))

    return _make(np.asarray(loss, dtype=logits.dtype), "cross_entropy", (logits,), back)
