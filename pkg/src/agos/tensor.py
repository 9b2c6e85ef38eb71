"""Dense NHWC tensors with a tape-based reverse-mode autodiff.

Every differentiable op takes :class:`Tensor` inputs and, when a :class:`Tape`
is active and any input requires a gradient, appends one :class:`TapeNode`
holding a closure that maps the output gradient to input gradients.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

DTYPES = {"single": np.float32, "double": np.float64}
LOG_EPS = 1e-12


class NonFiniteError(FloatingPointError):
    """Raised when NaN or Inf shows up in values or gradients."""


class TapeError(RuntimeError):
    pass


def _check_finite(arr: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"non-finite values in {what}")


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{tag})"


@dataclass
class ConvKernel:
    """Weights are Kh x Kw x Cin x Cout; padding is always "same"."""

    weight: Tensor
    bias: Tensor
    dilation: int = 1

    def __post_init__(self):
        if self.weight.data.ndim != 4:
            raise ValueError("kernel weight must be Kh x Kw x Cin x Cout")
        if self.bias.shape != (self.weight.shape[3],):
            raise ValueError("bias length must equal Cout")
        if self.dilation < 1:
            raise ValueError("dilation must be >= 1")

    @property
    def cin(self) -> int:
        return self.weight.shape[2]

    @property
    def cout(self) -> int:
        return self.weight.shape[3]

    @property
    def size(self) -> int:
        return self.weight.shape[0]


@dataclass
class TapeNode:
    kind: str
    inputs: tuple[Tensor, ...]
    output: Tensor
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]


@dataclass
class Tape:
    nodes: list[TapeNode] = field(default_factory=list)
    consumed: bool = False

    def __enter__(self) -> "Tape":
        _TAPES.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _TAPES.remove(self)

    def record(self, kind, inputs, output, backward) -> None:
        if self.consumed:
            raise TapeError("tape already consumed")
        self.nodes.append(TapeNode(kind, tuple(inputs), output, backward))

    def backward(self, loss: Tensor, params: Iterable[Tensor] = ()) -> None:
        """Accumulate d(loss)/d(leaf) into ``.grad`` of every leaf that requires it.

        Tensors in ``params`` that the loss does not reach get a zero gradient.
        """
        if self.consumed:
            raise TapeError("tape already consumed")
        if loss.data.size != 1:
            raise ValueError("backward needs a scalar loss")
        self.consumed = True
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        produced = {id(node.output) for node in self.nodes}
        leaves: dict[int, Tensor] = {}
        for node in reversed(self.nodes):
            g = grads.pop(id(node.output), None)
            if g is None:
                continue
            for inp, gi in zip(node.inputs, node.backward(g)):
                if gi is None or not inp.requires_grad:
                    continue
                key = id(inp)
                if key in grads:
                    grads[key] = grads[key] + gi
                else:
                    grads[key] = gi
                if key not in produced:
                    leaves[key] = inp
        for p in params:
            leaves.setdefault(id(p), p)
        for key, leaf in leaves.items():
            g = grads.get(key)
            if g is None:
                g = np.zeros_like(leaf.data)
            if not np.all(np.isfinite(g)):
                raise NonFiniteError(f"non-finite gradient for parameter {leaf.name!r}")
            leaf.grad = g if leaf.grad is None else leaf.grad + g


_TAPES: list[Tape] = []


def active_tape() -> Tape | None:
    return _TAPES[-1] if _TAPES else None


def _result(kind: str, data: np.ndarray, inputs: Sequence[Tensor], backward) -> Tensor:
    tape = active_tape()
    track = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor(data, requires_grad=track)
    if track:
        tape.record(kind, inputs, out, backward)
    return out


def parameter(data, name: str, dtype=None) -> Tensor:
    return Tensor(np.array(data, dtype=dtype), requires_grad=True, name=name)


# ---------------------------------------------------------------- convolution

def _im2col(xp: np.ndarray, k: int, d: int, s: int, ho: int, wo: int) -> np.ndarray:
    cols = [
        xp[:, i * d : i * d + s * (ho - 1) + 1 : s, j * d : j * d + s * (wo - 1) + 1 : s, :]
        for i in range(k)
        for j in range(k)
    ]
    return np.concatenate(cols, axis=-1)


def conv2d(x: Tensor, kernel: ConvKernel, stride: int = 1) -> Tensor:
    """Dilated 2-D convolution with zero "same" padding.

    With stride 1 the output keeps the input's spatial size. Stride 2 is only
    used by the backbone stem and halves each spatial dimension.
    """
    w, b, d = kernel.weight, kernel.bias, kernel.dilation
    if x.data.ndim != 4:
        raise ValueError(f"conv2d expects N x H x W x C input, got {x.shape}")
    k = kernel.size
    if kernel.weight.shape[0] != kernel.weight.shape[1] or k % 2 != 1:
        raise ValueError("only square odd kernels are supported")
    if x.shape[3] != kernel.cin:
        raise ValueError(f"input has {x.shape[3]} channels, kernel expects {kernel.cin}")
    _check_finite(x.data, "conv2d input")
    _check_finite(w.data, "conv2d kernel")
    _check_finite(b.data, "conv2d bias")
    n, h, wd, cin = x.shape
    cout = kernel.cout
    pad = d * (k // 2)
    ho = (h + 2 * pad - d * (k - 1) - 1) // stride + 1
    wo = (wd + 2 * pad - d * (k - 1) - 1) // stride + 1
    xp = np.pad(x.data, ((0, 0), (pad, pad), (pad, pad), (0, 0))) if pad else x.data
    col = _im2col(xp, k, d, stride, ho, wo)
    wmat = w.data.reshape(k * k * cin, cout)
    out = col @ wmat + b.data

    def backward(g):
        gx = gw = None
        if x.requires_grad:
            gcol = g @ wmat.T
            gxp = np.zeros_like(xp)
            for tap in range(k * k):
                i, j = divmod(tap, k)
                gxp[:, i * d : i * d + stride * (ho - 1) + 1 : stride,
                    j * d : j * d + stride * (wo - 1) + 1 : stride, :] += gcol[..., tap * cin : (tap + 1) * cin]
            gx = gxp[:, pad : pad + h, pad : pad + wd, :] if pad else gxp
        if w.requires_grad:
            gw = (col.reshape(-1, k * k * cin).T @ g.reshape(-1, cout)).reshape(w.shape)
        gb = g.sum(axis=(0, 1, 2)) if b.requires_grad else None
        return gx, gw, gb

    return _result("conv2d", out, (x, w, b), backward)


def conv1x1(x: Tensor, kernel: ConvKernel) -> Tensor:
    """Per-position affine map across channels."""
    if kernel.size != 1:
        raise ValueError("conv1x1 needs a 1x1 kernel")
    if x.data.ndim != 4 or x.shape[3] != kernel.cin:
        raise ValueError(f"input {x.shape} does not match kernel Cin={kernel.cin}")
    _check_finite(x.data, "conv1x1 input")
    w, b = kernel.weight, kernel.bias
    wmat = w.data.reshape(kernel.cin, kernel.cout)
    out = x.data @ wmat + b.data

    def backward(g):
        gx = g @ wmat.T if x.requires_grad else None
        gw = None
        if w.requires_grad:
            gw = (x.data.reshape(-1, kernel.cin).T @ g.reshape(-1, kernel.cout)).reshape(w.shape)
        gb = g.sum(axis=(0, 1, 2)) if b.requires_grad else None
        return gx, gw, gb

    return _result("conv1x1", out, (x, w, b), backward)


# ----------------------------------------------------------------- elementwise

def _same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ValueError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def abs_diff(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise |a - b|; the subgradient at a tie is 0."""
    _same_shape(a, b, "abs_diff")
    diff = a.data - b.data
    sign = np.sign(diff)

    def backward(g):
        ga = g * sign
        return ga, -ga

    return _result("abs_diff", np.abs(diff), (a, b), backward)


def add(*ts: Tensor) -> Tensor:
    """Sum of same-shaped tensors, accumulated left to right."""
    if not ts:
        raise ValueError("add needs at least one tensor")
    out = ts[0].data.copy()
    for t in ts[1:]:
        _same_shape(ts[0], t, "add")
        out += t.data
    return _result("add", out, ts, lambda g: [g] * len(ts))


def scale(x: Tensor, c) -> Tensor:
    """Multiply by a constant scalar or same-shaped constant array."""
    c = np.asarray(c, dtype=x.dtype)
    return _result("scale", x.data * c, (x,), lambda g: (g * c,))


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _result("relu", x.data * mask, (x,), lambda g: (g * mask,))


def dropout(x: Tensor, rate: float, training: bool, rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout; identity in eval mode or at rate 0."""
    if not 0.0 <= rate < 1.0:
        raise ValueError("dropout rate must be in [0, 1)")
    if not training or rate == 0.0:
        return x
    if rng is None:
        raise ValueError("training-mode dropout needs an rng")
    mask = (rng.random(x.shape) >= rate).astype(x.dtype) / x.dtype.type(1.0 - rate)
    return _result("dropout", x.data * mask, (x,), lambda g: (g * mask,))


# ------------------------------------------------------------------ reductions

def global_avg_pool(x: Tensor) -> Tensor:
    """N x H x W x C -> N x 1 x 1 x C spatial mean."""
    if x.data.ndim != 4:
        raise ValueError("global_avg_pool expects N x H x W x C")
    n, h, w, c = x.shape
    if h * w == 0:
        raise ValueError("global_avg_pool over empty spatial extent")
    # np.mean sums pairwise, so the result is stable under spatial permutations
    out = x.data.reshape(n, h * w, c).mean(axis=1).reshape(n, 1, 1, c)

    def backward(g):
        return (np.broadcast_to(g / (h * w), x.shape).astype(x.dtype),)

    return _result("gap", out, (x,), backward)


def tensor_sum(x: Tensor) -> Tensor:
    return _result("sum", np.array(x.data.sum(), dtype=x.dtype), (x,),
                   lambda g: (np.full_like(x.data, g),))


def sum_squares(x: Tensor) -> Tensor:
    v = x.data
    return _result("sumsq", np.array(np.sum(v * v), dtype=v.dtype), (x,), lambda g: (2.0 * g * v,))


def softmax(v: Tensor) -> Tensor:
    """Softmax over the last axis, stabilised by max-subtraction."""
    _check_finite(v.data, "softmax input")
    z = v.data - v.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        return (s * (g - np.sum(g * s, axis=-1, keepdims=True)),)

    return _result("softmax", s, (v,), backward)


def cross_entropy(pred: Tensor, class_index, num_classes: int) -> Tensor:
    """Per-class binary cross-entropy averaged over classes, then over the batch.

    ``pred`` holds probabilities with the class axis last; all leading axes are
    flattened into batch rows. Probabilities are clamped to [1e-12, 1 - 1e-12]
    in double precision, and clamped entries pass no gradient.
    """
    p = pred.data.reshape(-1, num_classes)
    rows = p.shape[0]
    idx = np.broadcast_to(np.asarray(class_index, dtype=np.int64), (rows,))
    if np.any(idx < 0) or np.any(idx >= num_classes):
        raise ValueError(f"class index out of range [0, {num_classes})")
    t = np.zeros((rows, num_classes))
    t[np.arange(rows), idx] = 1.0
    p64 = p.astype(np.float64)
    pc = np.clip(p64, LOG_EPS, 1.0 - LOG_EPS)
    per = -(t * np.log(pc) + (1.0 - t) * np.log1p(-pc)).mean(axis=1)
    loss = per.mean()
    inside = (p64 >= LOG_EPS) & (p64 <= 1.0 - LOG_EPS)

    def backward(g):
        dp = -(t / pc - (1.0 - t) / (1.0 - pc)) / (num_classes * rows)
        dp = np.where(inside, dp, 0.0) * float(g)
        return (dp.astype(pred.dtype).reshape(pred.shape),)

    return _result("cross_entropy", np.array(loss, dtype=pred.dtype), (pred,), backward)


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    old = x.shape
    return _result("reshape", x.data.reshape(shape), (x,), lambda g: (g.reshape(old),))


# ---------------------------------------------------------------- gradcheck

def finite_diff_grad(loss_fn: Callable[[], float], param: Tensor, epsilon: float = 1e-5) -> np.ndarray:
    """Central differences of ``loss_fn`` with respect to every entry of ``param``.

    ``loss_fn`` re-evaluates the loss reading ``param.data``; entries are
    perturbed in place and restored.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    flat = param.data.reshape(-1)
    grad = np.zeros(flat.shape, dtype=np.float64)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + epsilon
        up = float(loss_fn())
        flat[i] = orig - epsilon
        down = float(loss_fn())
        flat[i] = orig
        grad[i] = (up - down) / (2.0 * epsilon)
    return grad.reshape(param.shape)
