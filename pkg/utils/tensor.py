"""
Dense tensors with define-by-run reverse-mode differentiation.

Every operation records its inputs and a closure that pushes the output
gradient back to them. `backward` orders the recorded operations
topologically and runs the closures in reverse, accumulating (+=) into the
`grad` buffer of every tensor that requires gradients.
"""
import logging
import threading
from contextlib import contextmanager
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np

from utils.errors import ConfigurationError, ContractError, DimensionError, LabelError

logger = logging.getLogger("tensor_core")

DTYPE = np.float64

ArrayLike = Union[np.ndarray, float, int, Sequence]

_state = threading.local()


def is_grad_enabled() -> bool:
    return getattr(_state, "grad_enabled", True)


@contextmanager
def no_grad():
    """Disable graph recording for the current thread."""
    previous = is_grad_enabled()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = previous


class Tensor:
    """A node of the autodiff graph holding a float64 array."""

    def __init__(self, data: ArrayLike, requires_grad: bool = False, name: Optional[str] = None):
        self.data = np.array(data, dtype=DTYPE)
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(self.data) if self.requires_grad else None
        self.name = name
        self.op = "leaf"
        self._parents: Tuple["Tensor", ...] = ()
        self._backward: Optional[Callable[[], None]] = None

    @classmethod
    def _from_op(cls, data: np.ndarray, parents: Tuple["Tensor", ...], op: str,
                 backward_fn: Callable[[np.ndarray], None]) -> "Tensor":
        out = cls.__new__(cls)
        out.data = np.asarray(data, dtype=DTYPE)
        out.requires_grad = is_grad_enabled() and any(p.requires_grad for p in parents)
        out.grad = np.zeros_like(out.data) if out.requires_grad else None
        out.name = None
        out.op = op
        if out.requires_grad:
            out._parents = parents
            out._backward = lambda: backward_fn(out.grad)
        else:
            out._parents = ()
            out._backward = None
        return out

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self):
        if self.grad is not None:
            self.grad[...] = 0.0

    def backward(self):
        backward(self)

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        return tensor_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        return tensor_mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def relu(self) -> "Tensor":
        return relu(self)

    def exp(self) -> "Tensor":
        return exp(self)

    def log(self) -> "Tensor":
        return log(self)

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __pow__(self, exponent: float):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self):
        grad_flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{grad_flag}, op={self.op})"


def parameter(data: ArrayLike, name: Optional[str] = None) -> Tensor:
    return Tensor(data, requires_grad=True, name=name)


def as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _accumulate(target: Tensor, grad: np.ndarray):
    if target.requires_grad:
        target.grad += _unbroadcast(grad, target.shape)


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to `shape`."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# Graph traversal
# ---------------------------------------------------------------------------

class Graph:
    """Operations reachable from a root tensor, in execution order."""

    def __init__(self, root: Tensor):
        self.root = root
        self.nodes = self._topological_order(root)

    @staticmethod
    def _topological_order(root: Tensor) -> List[Tensor]:
        order: List[Tensor] = []
        visited = set()
        stack = [(root, False)]
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
                if id(parent) not in visited:
                    stack.append((parent, False))
        return order

    def backward(self):
        for node in reversed(self.nodes):
            if node._backward is not None:
                node._backward()


def backward(loss: Tensor):
    """
    Accumulate d(loss)/d(tensor) into every reachable tensor with requires_grad.

    Args:
        loss: Scalar tensor produced by the graph
    """
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        logger.debug("backward called on a tensor that does not require grad")
        return
    loss.grad += 1.0
    Graph(loss).backward()


# ---------------------------------------------------------------------------
# Elementwise arithmetic
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def _backward(g):
        _accumulate(a, g)
        _accumulate(b, g)

    return Tensor._from_op(a.data + b.data, (a, b), "add", _backward)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def _backward(g):
        _accumulate(a, g)
        _accumulate(b, -g)

    return Tensor._from_op(a.data - b.data, (a, b), "sub", _backward)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def _backward(g):
        _accumulate(a, g * b.data)
        _accumulate(b, g * a.data)

    return Tensor._from_op(a.data * b.data, (a, b), "mul", _backward)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def _backward(g):
        _accumulate(a, g / b.data)
        _accumulate(b, -g * a.data / (b.data * b.data))

    return Tensor._from_op(a.data / b.data, (a, b), "div", _backward)


def power(x: Tensor, exponent: float) -> Tensor:
    exponent = float(exponent)

    def _backward(g):
        _accumulate(x, g * exponent * x.data ** (exponent - 1.0))

    return Tensor._from_op(x.data ** exponent, (x,), "pow", _backward)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0.0

    def _backward(g):
        _accumulate(x, g * mask)

    return Tensor._from_op(np.where(mask, x.data, 0.0), (x,), "relu", _backward)


def exp(x: Tensor) -> Tensor:
    out_data = np.exp(x.data)

    def _backward(g):
        _accumulate(x, g * out_data)

    return Tensor._from_op(out_data, (x,), "exp", _backward)


def log(x: Tensor) -> Tensor:
    def _backward(g):
        _accumulate(x, g / x.data)

    return Tensor._from_op(np.log(x.data), (x,), "log", _backward)


# ---------------------------------------------------------------------------
# Shape and reduction
# ---------------------------------------------------------------------------

def reshape(x: Tensor, shape: Tuple[int, ...]) -> Tensor:
    def _backward(g):
        _accumulate(x, g.reshape(x.shape))

    return Tensor._from_op(x.data.reshape(shape), (x,), "reshape", _backward)


def transpose(x: Tensor) -> Tensor:
    if x.ndim != 2:
        raise DimensionError(f"transpose expects a matrix, got shape {x.shape}")

    def _backward(g):
        _accumulate(x, g.T)

    return Tensor._from_op(x.data.T, (x,), "transpose", _backward)


def tensor_sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    def _backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _accumulate(x, np.broadcast_to(g, x.shape))

    return Tensor._from_op(x.data.sum(axis=axis, keepdims=keepdims), (x,), "sum", _backward)


def tensor_mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        count = x.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        count = int(np.prod([x.shape[a] for a in axes]))
    if count == 0:
        raise DimensionError(f"mean over an empty axis of shape {x.shape}")
    return tensor_sum(x, axis=axis, keepdims=keepdims) * (1.0 / count)


def mean_over_time(x: Tensor) -> Tensor:
    """Temporal average pooling: mean along the last (time) axis."""
    if x.ndim < 2:
        raise DimensionError(f"mean_over_time expects [..., C, T], got shape {x.shape}")
    if x.shape[-1] == 0:
        raise DimensionError("mean_over_time over an empty time axis")
    steps = x.shape[-1]

    def _backward(g):
        _accumulate(x, np.repeat(g[..., None] / steps, steps, axis=-1))

    return Tensor._from_op(x.data.mean(axis=-1), (x,), "mean_over_time", _backward)


# ---------------------------------------------------------------------------
# Linear algebra
# ---------------------------------------------------------------------------

def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} x {b.shape}")

    def _backward(g):
        if a.requires_grad:
            a.grad += g @ b.data.T
        if b.requires_grad:
            b.grad += a.data.T @ g

    return Tensor._from_op(a.data @ b.data, (a, b), "matmul", _backward)


def pairwise_sq_dists(x: Tensor) -> Tensor:
    """Squared Euclidean distances between the rows of an [N x D] matrix."""
    if x.ndim != 2:
        raise DimensionError(f"pairwise_sq_dists expects [N x D], got shape {x.shape}")
    diff = x.data[:, None, :] - x.data[None, :, :]

    def _backward(g):
        if x.requires_grad:
            sym = g + g.T
            x.grad += 2.0 * np.einsum("ij,ijd->id", sym, diff)

    return Tensor._from_op(np.einsum("ijd,ijd->ij", diff, diff), (x,), "pairwise_sq_dists", _backward)


# ---------------------------------------------------------------------------
# Classification
# ---------------------------------------------------------------------------

def softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out_data = e / e.sum(axis=axis, keepdims=True)

    def _backward(g):
        _accumulate(x, out_data * (g - (g * out_data).sum(axis=axis, keepdims=True)))

    return Tensor._from_op(out_data, (x,), "softmax", _backward)


def softmax_cross_entropy(logits: Tensor, labels: Sequence[int]) -> Tensor:
    """
    Mean negative log-likelihood of integer labels under softmax(logits).

    Args:
        logits: [M x C] unnormalized scores
        labels: M class ids in [0, C)

    Returns:
        Scalar tensor
    """
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise DimensionError(f"logits {logits.shape} do not match labels {labels.shape}")
    batch, classes = logits.shape
    if batch == 0:
        raise DimensionError("softmax_cross_entropy on an empty batch")
    if np.any(labels < 0) or np.any(labels >= classes):
        raise LabelError(f"label out of range [0, {classes}): {labels.min()}..{labels.max()}")

    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    log_probs = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    rows = np.arange(batch)
    loss = -log_probs[rows, labels].mean()

    def _backward(g):
        if logits.requires_grad:
            probs = np.exp(log_probs)
            probs[rows, labels] -= 1.0
            logits.grad += probs * (g / batch)

    return Tensor._from_op(np.array(loss), (logits,), "softmax_cross_entropy", _backward)


# ---------------------------------------------------------------------------
# Convolutions
# ---------------------------------------------------------------------------

def same_padding(length: int, kernel: int, stride: int) -> Tuple[int, int, int]:
    """Return (output length, left pad, right pad) so that T' = ceil(T / stride)."""
    out_len = -(-length // stride)
    pad_total = max((out_len - 1) * stride + kernel - length, 0)
    left = pad_total // 2
    return out_len, left, pad_total - left


def conv1d_temporal(x: Tensor, w: Tensor, stride: int = 1, groups: int = 1,
                    bias: Optional[Tensor] = None) -> Tensor:
    """
    Temporal cross-correlation with zero "same" padding.

    Args:
        x: [Cin x T] or batched [B x Cin x T]
        w: [K x Cin/groups x Cout]
        stride: Temporal stride
        groups: Channel groups; groups == Cin == Cout gives a depthwise convolution
        bias: Optional [Cout]

    Returns:
        [Cout x T'] (or [B x Cout x T']) with T' = ceil(T / stride)
    """
    if stride < 1 or groups < 1:
        raise ConfigurationError(f"stride ({stride}) and groups ({groups}) must be positive")
    unbatched = x.ndim == 2
    xd = x.data[None] if unbatched else x.data
    if xd.ndim != 3 or w.ndim != 3:
        raise DimensionError(f"conv1d_temporal expects x [B x Cin x T] and w [K x Cin x Cout], got {x.shape} and {w.shape}")
    batch, cin, steps = xd.shape
    kernel, cin_g, cout = w.shape
    if cin % groups or cout % groups:
        raise ConfigurationError(f"groups={groups} must divide Cin={cin} and Cout={cout}")
    if cin_g != cin // groups:
        raise DimensionError(f"weight {w.shape} does not fit input {x.shape} with groups={groups}")
    if steps < 1:
        raise DimensionError("conv1d_temporal over an empty time axis")
    if bias is not None and bias.shape != (cout,):
        raise DimensionError(f"bias {bias.shape} does not match Cout={cout}")

    cout_g = cout // groups
    t_out, left, right = same_padding(steps, kernel, stride)
    xp = np.pad(xd, ((0, 0), (0, 0), (left, right)))
    span = stride * (t_out - 1) + 1
    cols = np.stack([xp[:, :, k:k + span:stride] for k in range(kernel)], axis=-1)
    if groups == 1:
        mode = "dense"
        out = np.tensordot(cols, w.data, axes=([1, 3], [1, 0])).transpose(0, 2, 1)
    elif cin_g == 1 and cout_g == 1:
        mode = "depthwise"
        taps = w.data[:, 0, :].T
        out = np.einsum("bctk,ck->bct", cols, taps, optimize=True)
    else:
        mode = "grouped"
        cols_g = cols.reshape(batch, groups, cin_g, t_out, kernel)
        w_g = w.data.reshape(kernel, cin_g, groups, cout_g)
        out = np.einsum("bgctk,kcgo->bgot", cols_g, w_g, optimize=True).reshape(batch, cout, t_out)
    if bias is not None:
        out = out + bias.data[None, :, None]
    if unbatched:
        out = out[0]

    parents = (x, w) if bias is None else (x, w, bias)

    def _backward(g):
        gb = g[None] if unbatched else g
        if bias is not None and bias.requires_grad:
            bias.grad += gb.sum(axis=(0, 2))
        if mode == "dense":
            if w.requires_grad:
                w.grad += np.tensordot(cols, gb, axes=([0, 2], [0, 2])).transpose(1, 0, 2)
            gcols = np.tensordot(gb, w.data, axes=([1], [2])).transpose(0, 3, 1, 2) if x.requires_grad else None
        elif mode == "depthwise":
            if w.requires_grad:
                w.grad += np.einsum("bct,bctk->kc", gb, cols, optimize=True)[:, None, :]
            gcols = gb[..., None] * taps[None, :, None, :] if x.requires_grad else None
        else:
            gg = gb.reshape(batch, groups, cout_g, t_out)
            if w.requires_grad:
                w.grad += np.einsum("bgot,bgctk->kcgo", gg, cols_g, optimize=True).reshape(kernel, cin_g, cout)
            gcols = (np.einsum("bgot,kcgo->bgctk", gg, w_g, optimize=True).reshape(batch, cin, t_out, kernel)
                     if x.requires_grad else None)
        if gcols is not None:
            gxp = np.zeros_like(xp)
            for k in range(kernel):
                gxp[:, :, k:k + span:stride] += gcols[..., k]
            gx = gxp[:, :, left:left + steps]
            x.grad += gx[0] if unbatched else gx

    return Tensor._from_op(out, parents, "conv1d_temporal", _backward)


def conv2d_3x3(x: Tensor, kernel: Tensor) -> Tensor:
    """
    Single-channel 3x3 convolution over a frequency-time map, zero padded.

    Args:
        x: [F x T] or batched [B x F x T]
        kernel: Shared taps [9], or per-example taps [B x 9]

    Returns:
        Tensor with the shape of `x`
    """
    unbatched = x.ndim == 2
    xd = x.data[None] if unbatched else x.data
    if xd.ndim != 3:
        raise DimensionError(f"conv2d_3x3 expects [B x F x T], got {x.shape}")
    batch, freqs, steps = xd.shape
    per_example = kernel.ndim == 2
    if kernel.shape not in ((9,), (batch, 9)):
        raise DimensionError(f"kernel {kernel.shape} does not fit input {x.shape}")

    xp = np.pad(xd, ((0, 0), (1, 1), (1, 1)))
    patches = np.stack([xp[:, i:i + freqs, j:j + steps] for i in range(3) for j in range(3)], axis=-1)
    spec = "bftk,bk->bft" if per_example else "bftk,k->bft"
    out = np.einsum(spec, patches, kernel.data, optimize=True)
    if unbatched:
        out = out[0]

    def _backward(g):
        gb = g[None] if unbatched else g
        if kernel.requires_grad:
            kernel.grad += np.einsum("bftk,bft->bk" if per_example else "bftk,bft->k", patches, gb, optimize=True)
        if x.requires_grad:
            taps = kernel.data if per_example else np.broadcast_to(kernel.data, (batch, 9))
            gxp = np.zeros_like(xp)
            for tap in range(9):
                i, j = divmod(tap, 3)
                gxp[:, i:i + freqs, j:j + steps] += gb * taps[:, tap][:, None, None]
            gx = gxp[:, 1:1 + freqs, 1:1 + steps]
            x.grad += gx[0] if unbatched else gx

    return Tensor._from_op(out, (x, kernel), "conv2d_3x3", _backward)
