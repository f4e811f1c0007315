"""Dense tensors with a reverse-mode gradient tape.

Every differentiable operation records a :class:`Node` on the thread-local
:class:`Tape` when at least one input requires a gradient. :func:`backward`
replays the tape in reverse, accumulates ``grad`` on leaf tensors and clears
the tape, so one tape covers exactly one forward/backward pass.

Storage is a row-major numpy array. Computations run in the dtype of the
inputs: float32 for training, float64 for the finite-difference shadow path.
"""

from __future__ import annotations

import contextlib
import threading
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from .errors import DegenerateBatchError, DimensionError, ShapeError, VocabularyError

DEFAULT_DTYPE = np.float32

_state = threading.local()


class Node:
    __slots__ = ("inputs", "output", "backward_fn", "op")

    def __init__(self, op: str, inputs: tuple, output: "Tensor", backward_fn: Callable):
        self.op = op
        self.inputs = inputs
        self.output = output
        self.backward_fn = backward_fn


class Tape:
    """Ordered record of operations; inputs always precede their consumers."""

    def __init__(self):
        self.nodes: list[Node] = []

    def record(self, node: Node) -> None:
        self.nodes.append(node)

    def clear(self) -> None:
        for node in self.nodes:
            node.output.tape_node = None
        self.nodes = []

    def __len__(self) -> int:
        return len(self.nodes)

    def backward(self, loss: "Tensor") -> None:
        if loss.data.size != 1:
            raise ShapeError(f"backward() needs a scalar loss, got shape {loss.shape}")
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        # leaves on the tape get a zero gradient even when off the loss path
        for node in self.nodes:
            for inp in node.inputs:
                if inp.requires_grad and inp.tape_node is None and inp.grad is None:
                    inp.grad = np.zeros_like(inp.data)
        if loss.tape_node is None:
            if loss.requires_grad:
                loss._accumulate(grads[id(loss)])
            self.clear()
            return
        for node in reversed(self.nodes):
            g = grads.pop(id(node.output), None)
            if g is None:
                continue
            input_grads = node.backward_fn(g)
            for inp, gi in zip(node.inputs, input_grads):
                if gi is None or not inp.requires_grad:
                    continue
                if inp.tape_node is None:
                    inp._accumulate(gi)
                else:
                    key = id(inp)
                    if key in grads:
                        grads[key] = grads[key] + gi
                    else:
                        grads[key] = gi
        self.clear()


def get_tape() -> Tape:
    tape = getattr(_state, "tape", None)
    if tape is None:
        tape = _state.tape = Tape()
    return tape


def grad_enabled() -> bool:
    return getattr(_state, "grad_enabled", True)


@contextlib.contextmanager
def no_grad():
    """Disable tape recording inside the block (evaluation and decoding)."""
    previous = grad_enabled()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = previous


@contextlib.contextmanager
def record_branches():
    """Collect the branch pattern (ReLU signs, expert choices) of ops run inside.

    Two evaluations with equal patterns lie on the same smooth piece of the
    function, which is what a finite-difference oracle needs.
    """
    log: list[bytes] = []
    previous = getattr(_state, "branches", None)
    _state.branches = log
    try:
        yield log
    finally:
        _state.branches = previous


def note_branch(pattern: np.ndarray) -> None:
    log = getattr(_state, "branches", None)
    if log is not None:
        log.append(np.packbits(pattern).tobytes())


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "tape_node", "name")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: Optional[str] = None):
        if isinstance(data, Tensor):
            data = data.data
        if dtype is None:
            is_float_array = isinstance(data, np.ndarray) and data.dtype in (np.float32, np.float64)
            dtype = data.dtype if is_float_array else DEFAULT_DTYPE
        self.data = np.array(data, dtype=dtype, copy=True) if not isinstance(data, np.ndarray) \
            else data.astype(dtype, copy=False)
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.tape_node: Optional[Node] = None
        self.name = name

    # -- basic properties -------------------------------------------------
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

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def astype(self, dtype) -> "Tensor":
        return Tensor(self.data.astype(dtype), requires_grad=self.requires_grad, name=self.name)

    def _accumulate(self, g: np.ndarray) -> None:
        g = np.asarray(g, dtype=self.data.dtype).reshape(self.data.shape)
        if self.grad is None:
            self.grad = g.copy()
        else:
            self.grad += g

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    # -- operator sugar ---------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(as_tensor(other, self.dtype), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis, keepdims)

    def backward(self) -> None:
        backward(self)


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype or DEFAULT_DTYPE))


def _result(op: str, data: np.ndarray, inputs: Sequence[Tensor], backward_fn: Callable) -> Tensor:
    needs = grad_enabled() and any(t.requires_grad for t in inputs)
    out = Tensor(np.asarray(data), requires_grad=needs)
    if needs:
        node = Node(op, tuple(inputs), out, backward_fn)
        out.tape_node = node
        get_tape().record(node)
    return out


def backward(loss: Tensor) -> None:
    """Fill ``grad`` of every leaf on the path to ``loss``; clears the tape."""
    get_tape().backward(loss)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _pair(a, b) -> tuple[Tensor, Tensor]:
    if not isinstance(a, Tensor):
        a = Tensor(np.asarray(a, dtype=b.dtype))
    if not isinstance(b, Tensor):
        b = Tensor(np.asarray(b, dtype=a.dtype))
    return a, b


# -- elementwise ------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    sa, sb = a.shape, b.shape
    return _result("add", a.data + b.data, (a, b),
                   lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    sa, sb = a.shape, b.shape
    return _result("sub", a.data - b.data, (a, b),
                   lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)
    ad, bd = a.data, b.data
    return _result("mul", ad * bd, (a, b),
                   lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)))


def div(a, b) -> Tensor:
    a, b = _pair(a, b)
    ad, bd = a.data, b.data
    out = ad / bd
    return _result("div", out, (a, b),
                   lambda g: (_unbroadcast(g / bd, ad.shape),
                              _unbroadcast(-g * out / bd, bd.shape)))


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    note_branch(mask)
    return _result("relu", np.where(mask, x.data, 0).astype(x.dtype), (x,),
                   lambda g: (g * mask,))


def square(x: Tensor) -> Tensor:
    return mul(x, x)


# -- shape manipulation -----------------------------------------------------

def reshape(x: Tensor, shape) -> Tensor:
    old = x.shape
    return _result("reshape", x.data.reshape(shape), (x,), lambda g: (g.reshape(old),))


def transpose(x: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(x.ndim)))
    inverse = tuple(np.argsort(axes))
    return _result("transpose", np.transpose(x.data, axes), (x,),
                   lambda g: (np.transpose(g, inverse),))


def getitem(x: Tensor, idx) -> Tensor:
    shape, dtype = x.shape, x.dtype

    def bw(g):
        full = np.zeros(shape, dtype=dtype)
        np.add.at(full, idx, g)
        return (full,)

    return _result("getitem", x.data[idx], (x,), bw)


def scatter_rows(x: Tensor, rows: np.ndarray, n_rows: int) -> Tensor:
    """Place the rows of ``x`` at positions ``rows`` of a zero [n_rows, ...] tensor."""
    out = np.zeros((n_rows,) + x.shape[1:], dtype=x.dtype)
    out[rows] = x.data
    return _result("scatter_rows", out, (x,), lambda g: (g[rows],))


def tsum(x: Tensor, axis=None, keepdims=False) -> Tensor:
    shape = x.shape

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _result("sum", np.asarray(x.data.sum(axis=axis, keepdims=keepdims)), (x,), bw)


def tmean(x: Tensor, axis=None, keepdims=False) -> Tensor:
    count = x.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return mul(tsum(x, axis, keepdims), 1.0 / float(count))


# -- linear algebra ---------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes; ``b`` may be 2-D and shared by every batch row."""
    a, b = _pair(a, b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} vs {b.shape}")
    if b.ndim > 2 and a.shape[:-2] != b.shape[:-2]:
        raise DimensionError(f"matmul batch mismatch: {a.shape} vs {b.shape}")
    ad, bd = a.data, b.data

    def bw(g):
        ga = g @ np.swapaxes(bd, -1, -2)
        if bd.ndim == 2:
            gb = ad.reshape(-1, ad.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        else:
            gb = np.swapaxes(ad, -1, -2) @ g
        return ga, gb

    return _result("matmul", ad @ bd, (a, b), bw)


def _conv_pads(k: int, dilation: int, causal: bool) -> tuple[int, int]:
    span = (k - 1) * dilation
    if causal:
        return span, 0
    if k % 2 == 0:
        raise DimensionError(f"symmetric padding needs an odd kernel size, got {k}")
    return span // 2, span // 2


def _pad_time(x: np.ndarray, left: int, right: int) -> np.ndarray:
    widths = [(0, 0)] * x.ndim
    widths[-2] = (left, right)
    return np.pad(x, widths)


def conv1d(x: Tensor, kernel: Tensor, dilation: int = 1, causal: bool = False) -> Tensor:
    """Dilated 1-D convolution over the time axis of ``x`` [..., len, ch].

    ``kernel`` is [k, ch, ch_out]; tap ``j`` reads input offset
    ``j * dilation - left_pad``. The output keeps the input length.
    """
    k, ch, _ = kernel.shape
    if x.shape[-1] != ch:
        raise DimensionError(f"conv1d channel mismatch: input {x.shape} vs kernel {kernel.shape}")
    if dilation < 1:
        raise DimensionError(f"dilation must be positive, got {dilation}")
    left, right = _conv_pads(k, dilation, causal)
    length = x.shape[-2]
    xp = _pad_time(x.data, left, right)
    wd = kernel.data
    windows = [xp[..., j * dilation:j * dilation + length, :] for j in range(k)]
    out = sum(w @ wd[j] for j, w in enumerate(windows))

    def bw(g):
        gxp = np.zeros_like(xp)
        gw = np.empty_like(wd)
        g2 = g.reshape(-1, g.shape[-1])
        for j, w in enumerate(windows):
            gw[j] = w.reshape(-1, ch).T @ g2
            gxp[..., j * dilation:j * dilation + length, :] += g @ wd[j].T
        return gxp[..., left:left + length, :], gw

    return _result("conv1d", out, (x, kernel), bw)


def depthwise_conv1d(x: Tensor, kernel: Tensor, dilation: int = 1, causal: bool = False) -> Tensor:
    """Per-channel dilated convolution; ``kernel`` is [k, ch]."""
    k, ch = kernel.shape
    if x.shape[-1] != ch:
        raise DimensionError(
            f"depthwise_conv1d channel mismatch: input {x.shape} vs kernel {kernel.shape}")
    left, right = _conv_pads(k, dilation, causal)
    length = x.shape[-2]
    xp = _pad_time(x.data, left, right)
    wd = kernel.data
    windows = [xp[..., j * dilation:j * dilation + length, :] for j in range(k)]
    out = sum(w * wd[j] for j, w in enumerate(windows))

    def bw(g):
        gxp = np.zeros_like(xp)
        gw = np.empty_like(wd)
        for j, w in enumerate(windows):
            gw[j] = (w * g).reshape(-1, ch).sum(axis=0)
            gxp[..., j * dilation:j * dilation + length, :] += g * wd[j]
        return gxp[..., left:left + length, :], gw

    return _result("depthwise_conv1d", out, (x, kernel), bw)


# -- normalisation and probabilities ----------------------------------------

def softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)
    return _result("softmax", y, (x,),
                   lambda g: (y * (g - (g * y).sum(axis=axis, keepdims=True)),))


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-6) -> Tensor:
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise DimensionError(f"layer_norm width mismatch: input {x.shape}, gain {gain.shape}")
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    gd = gain.data
    out = xhat * gd + bias.data

    def bw(g):
        lead = g.reshape(-1, d)
        ggain = (lead * xhat.reshape(-1, d)).sum(axis=0)
        gbias = lead.sum(axis=0)
        gx_hat = g * gd
        gx = inv * (gx_hat - gx_hat.mean(axis=-1, keepdims=True)
                    - xhat * (gx_hat * xhat).mean(axis=-1, keepdims=True))
        return gx, ggain, gbias

    return _result("layer_norm", out.astype(xd.dtype), (x, gain, bias), bw)


def embedding_lookup(table: Tensor, ids) -> Tensor:
    ids = np.asarray(ids, dtype=np.int64)
    vocab = table.shape[0]
    bad = ids[(ids < 0) | (ids >= vocab)]
    if bad.size:
        raise VocabularyError(f"token id {int(bad[0])} outside vocabulary of size {vocab}")
    shape, dtype = table.shape, table.dtype

    def bw(g):
        full = np.zeros(shape, dtype=dtype)
        np.add.at(full, ids.reshape(-1), g.reshape(-1, shape[1]))
        return (full,)

    return _result("embedding_lookup", table.data[ids], (table,), bw)


def cross_entropy(logits: Tensor, targets, pad_id: int = 0) -> Tensor:
    """Mean negative log-likelihood of ``targets`` over non-pad positions."""
    targets = np.asarray(targets, dtype=np.int64)
    if targets.shape != logits.shape[:-1]:
        raise ShapeError(f"targets {targets.shape} do not match logits {logits.shape}")
    keep = targets != pad_id
    count = int(keep.sum())
    if count == 0:
        raise DegenerateBatchError("every target position is padding")
    ld = logits.data
    shifted = ld - ld.max(axis=-1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    logp = shifted - logz
    picked = np.take_along_axis(logp, targets[..., None], axis=-1)[..., 0]
    loss = -(picked * keep).sum() / count

    def bw(g):
        p = np.exp(logp)
        onehot = np.zeros_like(p)
        np.put_along_axis(onehot, targets[..., None], 1.0, axis=-1)
        return ((p - onehot) * (keep[..., None] * (float(g) / count)),)

    return _result("cross_entropy", np.asarray(loss, dtype=ld.dtype), (logits,), bw)


def parameters_of(tensors: Iterable[Tensor]) -> list[Tensor]:
    return [t for t in tensors if t.requires_grad]
