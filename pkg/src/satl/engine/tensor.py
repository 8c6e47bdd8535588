"""Dense tensors with reverse-mode automatic differentiation.

Design
------
Every differentiable operation produces a new `Tensor` and, when gradients
are enabled and an input requires them, records a `_Node` carrying the
operation kind, the input tensors, and a vector-Jacobian closure. Nodes get
a strictly increasing creation index from the ambient `Graph`, so creation
order *is* a topological order: an input's node index is always smaller
than its consumer's. `backward` walks the reachable nodes in decreasing
index order, which makes gradient propagation deterministic: same inputs,
same seed, bit-identical gradients.

Values are float32 by default (training) with float64 available everywhere
(gradient checking). Tensor data is treated as immutable once created; the
only sanctioned mutation is the optimizer updating leaf parameters between
steps.
"""

import contextlib
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from ..backend import kernels
from ..errors import ContractError, DimensionError, NumericDomainError

DEFAULT_DTYPE = np.float32
_FLOAT_DTYPES = (np.float32, np.float64)


class Graph:
    """Ambient recorder handing out creation-ordered node indices.

    Append-only by construction: indices only grow, and a node's inputs
    always carry smaller indices than the node itself (acyclicity).
    """

    def __init__(self):
        self._next = 0

    def next_index(self) -> int:
        i = self._next
        self._next += 1
        return i


_graph = Graph()
_grad_enabled = True
_corrupted_ops: set = set()


@contextlib.contextmanager
def no_grad():
    """Disable graph recording (inference / data plumbing)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


@contextlib.contextmanager
def corrupt_gradient(op: str):
    """Debug seam: scale the named op's first input-gradient by 1.5.

    Exists so the gradcheck negative control can prove the harness catches
    a wrong gradient rule. Never enable outside tests/verification.
    """
    _corrupted_ops.add(op)
    try:
        yield
    finally:
        _corrupted_ops.discard(op)


class _Node:
    __slots__ = ("op", "inputs", "vjp", "index")

    def __init__(self, op: str, inputs: tuple, vjp: Callable, index: int):
        self.op = op
        self.inputs = inputs
        self.vjp = vjp
        self.index = index


class Tensor:
    """N-dimensional float array with optional gradient tracking."""

    __slots__ = ("data", "requires_grad", "_grad", "_node")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = np.array(arr, dtype=dtype)
        elif arr.dtype not in _FLOAT_DTYPES:
            arr = np.array(arr, dtype=DEFAULT_DTYPE)
        else:
            arr = np.array(arr)  # private copy; tensors own their data
        self.data = np.ascontiguousarray(arr)
        self.requires_grad = bool(requires_grad)
        self._grad: Optional[np.ndarray] = None
        self._node: Optional[_Node] = None

    @classmethod
    def _wrap(cls, data: np.ndarray, requires_grad: bool) -> "Tensor":
        """Internal constructor that adopts `data` without copying."""
        t = cls.__new__(cls)
        t.data = data
        t.requires_grad = requires_grad
        t._grad = None
        t._node = None
        return t

    # -- introspection -------------------------------------------------------

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def grad(self) -> Optional[np.ndarray]:
        """Accumulated gradient buffer, or None if never populated."""
        return self._grad

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() on tensor of size {self.data.size}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        """Leaf copy sharing no graph history."""
        return Tensor._wrap(self.data.copy(), requires_grad=False)

    def zero_grad(self) -> None:
        """Reset the gradient buffer to zeros (allocating it if needed)."""
        if self._grad is None:
            self._grad = np.zeros_like(self.data)
        else:
            self._grad.fill(0)

    def _accum(self, g: np.ndarray) -> None:
        if self._grad is None:
            self._grad = np.zeros_like(self.data)
        self._grad += g

    def backward(self) -> None:
        backward(self)

    # -- operator sugar (tests / small compositions) --------------------------

    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __sub__(self, other: "Tensor") -> "Tensor":
        return sub(self, other)

    def __mul__(self, other: "Tensor") -> "Tensor":
        return mul(self, other)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype.name}{flag})"


def _apply(op: str, out_data: np.ndarray, inputs: tuple, vjp: Callable) -> Tensor:
    """Wrap a computed array, recording a graph node when gradients flow."""
    out_data = np.asarray(out_data)
    track = _grad_enabled and any(t.requires_grad for t in inputs)
    out = Tensor._wrap(out_data, requires_grad=track)
    if track:
        if op in _corrupted_ops:
            inner = vjp

            def vjp(g, _inner=inner):
                grads = list(_inner(g))
                if grads and grads[0] is not None:
                    grads[0] = grads[0] * 1.5
                return tuple(grads)

        out._node = _Node(op, inputs, vjp, _graph.next_index())
    return out


def _check_same(op: str, a: Tensor, b: Tensor) -> None:
    if a.data.shape != b.data.shape:
        raise DimensionError(f"{op}: shape mismatch {a.shape} vs {b.shape}")
    if a.data.dtype != b.data.dtype:
        raise ContractError(f"{op}: mixed dtypes {a.dtype} vs {b.dtype}")


# ---------------------------------------------------------------------------
# elementwise


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same("add", a, b)
    return _apply("add", a.data + b.data, (a, b), lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_same("sub", a, b)
    return _apply("sub", a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_same("mul", a, b)
    return _apply("mul", a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data))


def scale(x: Tensor, s: float) -> Tensor:
    s = x.data.dtype.type(s)
    return _apply("scale", x.data * s, (x,), lambda g: (g * s,))


def add_scalar(x: Tensor, c: float) -> Tensor:
    c = x.data.dtype.type(c)
    return _apply("add_scalar", x.data + c, (x,), lambda g: (g,))


def relu(x: Tensor) -> Tensor:
    out = np.maximum(x.data, 0)
    # gradient at exactly 0 is defined as 0 (strict inequality)
    return _apply("relu", out, (x,), lambda g: (g * (x.data > 0),))


def sigmoid(x: Tensor) -> Tensor:
    e = np.exp(-np.abs(x.data))
    out = np.where(x.data >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(x.data.dtype)
    return _apply("sigmoid", out, (x,), lambda g: (g * out * (1.0 - out),))


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)
    return _apply("exp", out, (x,), lambda g: (g * out,))


def log(x: Tensor) -> Tensor:
    if np.any(x.data <= 0):
        raise NumericDomainError("log: input has non-positive entries")
    return _apply("log", np.log(x.data), (x,), lambda g: (g / x.data,))


def square(x: Tensor) -> Tensor:
    return _apply("square", x.data * x.data, (x,), lambda g: (g * (2.0 * x.data),))


def clip(x: Tensor, lo: float, hi: float) -> Tensor:
    """Clamp values; gradient passes through inside [lo, hi], is 0 outside."""
    if lo >= hi:
        raise ContractError(f"clip: lo={lo} must be < hi={hi}")
    out = np.clip(x.data, lo, hi)
    inside = (x.data >= lo) & (x.data <= hi)
    return _apply("clip", out, (x,), lambda g: (g * inside,))


# ---------------------------------------------------------------------------
# reductions


def _normalize_axes(shape: tuple, axes) -> Optional[tuple]:
    if axes is None:
        return None
    if isinstance(axes, int):
        axes = (axes,)
    axes = tuple(axes)
    if len(axes) == 0:  # empty axis set means full reduction
        return None
    nd = len(shape)
    norm = []
    for ax in axes:
        if not -nd <= ax < nd:
            raise DimensionError(f"reduce: axis {ax} invalid for shape {shape}")
        norm.append(ax % nd)
    if len(set(norm)) != len(norm):
        raise DimensionError(f"reduce: duplicate axes {axes}")
    return tuple(sorted(norm))


def reduce_sum(x: Tensor, axes=None) -> Tensor:
    axes = _normalize_axes(x.shape, axes)
    out = np.asarray(x.data.sum(axis=axes))
    in_shape = x.data.shape

    def vjp(g):
        if axes is None:
            return (np.broadcast_to(g, in_shape).astype(x.data.dtype, copy=True),)
        expanded = np.expand_dims(g, axes)
        return (np.broadcast_to(expanded, in_shape).astype(x.data.dtype, copy=True),)

    return _apply("reduce_sum", out, (x,), vjp)


def reduce_mean(x: Tensor, axes=None) -> Tensor:
    axes = _normalize_axes(x.shape, axes)
    count = x.data.size if axes is None else int(np.prod([x.data.shape[a] for a in axes]))
    out = np.asarray(x.data.sum(axis=axes) / x.data.dtype.type(count))
    in_shape = x.data.shape

    def vjp(g):
        gs = g / x.data.dtype.type(count)
        if axes is None:
            return (np.broadcast_to(gs, in_shape).astype(x.data.dtype, copy=True),)
        expanded = np.expand_dims(gs, axes)
        return (np.broadcast_to(expanded, in_shape).astype(x.data.dtype, copy=True),)

    return _apply("reduce_mean", out, (x,), vjp)


# ---------------------------------------------------------------------------
# shape plumbing


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)
    try:
        out = x.data.reshape(shape)
    except ValueError as e:
        raise DimensionError(f"reshape: {e}") from None
    in_shape = x.data.shape
    return _apply("reshape", out, (x,), lambda g: (g.reshape(in_shape),))


def transpose(x: Tensor) -> Tensor:
    if x.ndim != 2:
        raise DimensionError(f"transpose expects a matrix, got shape {x.shape}")
    return _apply("transpose", x.data.T, (x,), lambda g: (g.T,))


def slice0(x: Tensor, i: int) -> Tensor:
    """Select index i along axis 0; gradient scatters back into that slot."""
    if not 0 <= i < x.shape[0]:
        raise DimensionError(f"slice0: index {i} out of range for shape {x.shape}")

    def vjp(g):
        full = np.zeros_like(x.data)
        full[i] = g
        return (full,)

    return _apply("slice0", x.data[i], (x,), vjp)


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2:
        raise DimensionError(f"matmul expects matrices, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: inner dims differ, {a.shape} @ {b.shape}")
    if a.data.dtype != b.data.dtype:
        raise ContractError(f"matmul: mixed dtypes {a.dtype} vs {b.dtype}")
    out = a.data @ b.data
    return _apply("matmul", out, (a, b), lambda g: (g @ b.data.T, a.data.T @ g))


def dense(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Affine map x @ w + b for x:[N,D], w:[D,K], b:[K]."""
    if x.ndim != 2 or w.ndim != 2 or b.ndim != 1:
        raise DimensionError(
            f"dense expects x:[N,D], w:[D,K], b:[K]; got {x.shape}, {w.shape}, {b.shape}"
        )
    if x.shape[1] != w.shape[0] or w.shape[1] != b.shape[0]:
        raise DimensionError(f"dense: dims disagree, {x.shape} @ {w.shape} + {b.shape}")
    out = x.data @ w.data + b.data
    return _apply(
        "dense",
        out,
        (x, w, b),
        lambda g: (g @ w.data.T, x.data.T @ g, g.sum(axis=0)),
    )


# ---------------------------------------------------------------------------
# convolution / pooling / upsampling


def conv2d(x: Tensor, w: Tensor, b: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation of an NCHW batch with an FCkk kernel bank plus bias."""
    if x.ndim != 4 or w.ndim != 4:
        raise DimensionError(f"conv2d expects 4-d input and kernel, got {x.shape}, {w.shape}")
    n, c, h, wdt = x.shape
    f, cw, kh, kw = w.shape
    if cw != c:
        raise DimensionError(f"conv2d: kernel channels {cw} != input channels {c}")
    if b.shape != (f,):
        raise DimensionError(f"conv2d: bias shape {b.shape} != ({f},)")
    if stride < 1 or padding < 0:
        raise ContractError(f"conv2d: bad stride={stride} or padding={padding}")
    hp, wp = h + 2 * padding, wdt + 2 * padding
    if kh > hp or kw > wp:
        raise DimensionError(f"conv2d: kernel {kh}x{kw} larger than padded input {hp}x{wp}")
    oh = (hp - kh) // stride + 1
    ow = (wp - kw) // stride + 1

    if padding:
        xp = np.zeros((n, c, hp, wp), dtype=x.data.dtype)
        xp[:, :, padding : padding + h, padding : padding + wdt] = x.data
    else:
        xp = x.data
    cols = kernels.im2col(xp, kh, kw, stride)  # (C*kh*kw, N*OH*OW)
    wmat = w.data.reshape(f, c * kh * kw)
    out_fnl = wmat @ cols
    out_fnl += b.data[:, None]
    out = np.ascontiguousarray(out_fnl.reshape(f, n, oh, ow).transpose(1, 0, 2, 3))

    def vjp(g):
        gt = np.ascontiguousarray(g.transpose(1, 0, 2, 3)).reshape(f, n * oh * ow)
        dw = (gt @ cols.T).reshape(f, c, kh, kw) if w.requires_grad else None
        db = gt.sum(axis=1) if b.requires_grad else None
        dx = None
        if x.requires_grad:
            if stride == 1 and padding <= kh - 1 and padding <= kw - 1:
                # input gradient of a stride-1 cross-correlation is another
                # cross-correlation with channel-swapped, spatially flipped
                # kernels (avoids a skinny GEMM plus scatter-add)
                ph, pw2 = kh - 1 - padding, kw - 1 - padding
                if ph or pw2:
                    gp = np.zeros((n, f, oh + 2 * ph, ow + 2 * pw2), dtype=g.dtype)
                    gp[:, :, ph : ph + oh, pw2 : pw2 + ow] = g
                else:
                    gp = np.ascontiguousarray(g)
                gcols = kernels.im2col(gp, kh, kw, 1)
                wswap = np.ascontiguousarray(
                    w.data.transpose(1, 0, 2, 3)[:, :, ::-1, ::-1]
                ).reshape(c, f * kh * kw)
                dx = np.ascontiguousarray(
                    (wswap @ gcols).reshape(c, n, h, wdt).transpose(1, 0, 2, 3)
                )
            else:
                dcols = wmat.T @ gt
                dxp = kernels.col2im(dcols, n, c, hp, wp, kh, kw, stride)
                if padding:
                    dx = dxp[:, :, padding : padding + h, padding : padding + wdt].copy()
                else:
                    dx = dxp
        return (dx, dw, db)

    return _apply("conv2d", out, (x, w, b), vjp)


def maxpool2(x: Tensor) -> Tensor:
    """Disjoint 2x2 max pooling; ties route the gradient to the first
    (row-major) maximal element of the window."""
    if x.ndim != 4:
        raise DimensionError(f"maxpool2 expects 4-d input, got {x.shape}")
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise DimensionError(f"maxpool2 requires even spatial dims, got {h}x{w}")
    out, idx = kernels.maxpool2_forward(x.data)
    return _apply("maxpool2", out, (x,), lambda g: (kernels.maxpool2_backward(g, idx),))


def upsample2(x: Tensor) -> Tensor:
    """Nearest-neighbor 2x upsampling; gradient sums each 2x2 duplicate block."""
    if x.ndim != 4:
        raise DimensionError(f"upsample2 expects 4-d input, got {x.shape}")
    n, c, h, w = x.shape
    out = np.ascontiguousarray(
        np.broadcast_to(x.data[:, :, :, None, :, None], (n, c, h, 2, w, 2)).reshape(
            n, c, 2 * h, 2 * w
        )
    )

    def vjp(g):
        return (g.reshape(n, c, h, 2, w, 2).sum(axis=(3, 5)),)

    return _apply("upsample2", out, (x,), vjp)


# ---------------------------------------------------------------------------
# backward


def backward(loss: Tensor) -> None:
    """Propagate dLoss/d(leaf) into every reachable requires_grad leaf.

    Accumulates additively: repeated backward calls sum into the same
    buffers (reset with zero_grad between steps).
    """
    if loss.data.shape != ():
        raise ContractError(f"backward requires a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ContractError("backward: loss does not require grad (dead graph?)")

    seed = np.ones((), dtype=loss.data.dtype)
    if loss._node is None:  # loss is itself a leaf
        loss._accum(seed)
        return

    # Gather tensors that own nodes, reachable from the loss.
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[Tensor] = [loss]
    while stack:
        t = stack.pop()
        if id(t) in seen:
            continue
        seen.add(id(t))
        if t._node is not None:
            order.append(t)
            stack.extend(t._node.inputs)
    order.sort(key=lambda t: t._node.index, reverse=True)

    buffers: dict[int, np.ndarray] = {id(loss): seed}
    for t in order:
        g = buffers.pop(id(t), None)
        if g is None:
            continue  # no gradient reached this branch
        for inp, ig in zip(t._node.inputs, t._node.vjp(g)):
            if ig is None:
                continue
            if inp._node is not None:
                key = id(inp)
                if key in buffers:
                    buffers[key] = buffers[key] + ig
                else:
                    buffers[key] = ig
            elif inp.requires_grad:
                inp._accum(ig)


def zero_grads(params: Iterable[Tensor]) -> None:
    """Zero every gradient buffer in an iterable of parameters."""
    for p in params:
        p.zero_grad()
