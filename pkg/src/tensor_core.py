"""
Tensor Core - Reverse-Mode Automatic Differentiation

Dense float tensors backed by numpy with a recorded operation graph.
Gradients are expressed with the same tensor operations as the forward
pass, so a gradient computed with ``create_graph=True`` is itself
differentiable. The gradient penalty on the discriminator relies on this.

Key Components:
- Tensor and Parameter with operator overloads
- Function: primitive with a numpy forward and a tensor-level backward
- backward() / grad() graph traversal
- Convolution through unfold (im2col) and fold (col2im) adjoints
- Module: named parameter registry for layers and networks

Version: 1.0.0
License: MIT License
"""

from __future__ import annotations

import contextlib
from typing import Any, Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np
import structlog

from .errors import GraphError, ShapeError

logger = structlog.get_logger(__name__)

ArrayLike = Union[np.ndarray, float, int, Sequence]

_STATE = {"dtype": np.float32, "grad_enabled": True}


def default_dtype() -> type:
    return _STATE["dtype"]


def is_grad_enabled() -> bool:
    return _STATE["grad_enabled"]


@contextlib.contextmanager
def precision(dtype: Any) -> Iterator[None]:
    """Create new tensors with ``dtype`` inside the block (float64 for gradient checks)."""
    previous = _STATE["dtype"]
    _STATE["dtype"] = np.dtype(dtype).type
    try:
        yield
    finally:
        _STATE["dtype"] = previous


@contextlib.contextmanager
def _grad_mode(enabled: bool) -> Iterator[None]:
    previous = _STATE["grad_enabled"]
    _STATE["grad_enabled"] = enabled
    try:
        yield
    finally:
        _STATE["grad_enabled"] = previous


def no_grad():
    """Disable graph recording inside the block."""
    return _grad_mode(False)


def enable_grad():
    return _grad_mode(True)


class Tensor:
    """
    A numpy array with an optional gradient and the op that produced it.

    Attributes:
        data (np.ndarray): Values
        requires_grad (bool): Whether gradients flow to this tensor
        grad (Optional[np.ndarray]): Accumulated gradient after backward()
        name (Optional[str]): Label used in error messages
    """

    __array_priority__ = 100
    # ndarray <op> Tensor defers to the Tensor's reflected operator.
    __array_ufunc__ = None

    def __init__(self, data: ArrayLike, requires_grad: bool = False,
                 name: Optional[str] = None):
        self.data = np.array(data, dtype=_STATE["dtype"])
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.name = name
        self._ctx: Optional[Function] = None

    @classmethod
    def _from_op(cls, data: np.ndarray, ctx: Optional["Function"]) -> "Tensor":
        out = cls.__new__(cls)
        out.data = data
        out.requires_grad = ctx is not None
        out.grad = None
        out.name = None
        out._ctx = ctx
        return out

    # Introspection ---------------------------------------------------------

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
    def dtype(self):
        return self.data.dtype

    @property
    def is_leaf(self) -> bool:
        return self._ctx is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        out = Tensor.__new__(Tensor)
        out.data = self.data
        out.requires_grad = False
        out.grad = None
        out.name = self.name
        out._ctx = None
        return out

    def zero_grad(self):
        self.grad = None

    def __repr__(self) -> str:
        label = f" name={self.name}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{label}, requires_grad={self.requires_grad})"

    def _lift(self, other: Any) -> "Tensor":
        if isinstance(other, Tensor):
            return other
        out = Tensor.__new__(Tensor)
        out.data = np.asarray(other, dtype=self.data.dtype)
        out.requires_grad = False
        out.grad = None
        out.name = None
        out._ctx = None
        return out

    # Arithmetic ------------------------------------------------------------

    def __add__(self, other):
        return Add.apply(self, self._lift(other))

    def __radd__(self, other):
        return Add.apply(self._lift(other), self)

    def __sub__(self, other):
        return Sub.apply(self, self._lift(other))

    def __rsub__(self, other):
        return Sub.apply(self._lift(other), self)

    def __mul__(self, other):
        return Mul.apply(self, self._lift(other))

    def __rmul__(self, other):
        return Mul.apply(self._lift(other), self)

    def __truediv__(self, other):
        return Div.apply(self, self._lift(other))

    def __rtruediv__(self, other):
        return Div.apply(self._lift(other), self)

    def __neg__(self):
        return Neg.apply(self)

    def __pow__(self, exponent: float):
        if isinstance(exponent, Tensor):
            raise TypeError("only scalar exponents are supported")
        return PowScalar.apply(self, exponent=float(exponent))

    def __matmul__(self, other):
        return MatMul.apply(self, self._lift(other))

    # Elementwise -----------------------------------------------------------

    def exp(self):
        return Exp.apply(self)

    def log(self):
        return Log.apply(self)

    def tanh(self):
        return Tanh.apply(self)

    def sigmoid(self):
        return Sigmoid.apply(self)

    def softplus(self):
        return Softplus.apply(self)

    def leaky_relu(self, slope: float = 0.2):
        return LeakyReLU.apply(self, slope=slope)

    def sqrt(self):
        return PowScalar.apply(self, exponent=0.5)

    # Reductions and shape --------------------------------------------------

    def sum(self, axis: Optional[Union[int, Tuple[int, ...]]] = None, keepdims: bool = False):
        return Sum.apply(self, axis=_normalize_axis(axis, self.ndim), keepdims=keepdims)

    def mean(self, axis: Optional[Union[int, Tuple[int, ...]]] = None, keepdims: bool = False):
        axes = _normalize_axis(axis, self.ndim)
        count = self.size if axes is None else int(np.prod([self.shape[a] for a in axes]))
        return self.sum(axis=axes, keepdims=keepdims) * (1.0 / count)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        new_shape = _resolve_shape(self.shape, shape)
        if new_shape == self.shape:
            return self
        return Reshape.apply(self, shape=new_shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        if not axes:
            axes = tuple(reversed(range(self.ndim)))
        return Transpose.apply(self, axes=tuple(axes))

    def swapaxes(self, a: int, b: int):
        axes = list(range(self.ndim))
        axes[a], axes[b] = axes[b], axes[a]
        return self.transpose(tuple(axes))

    def broadcast_to(self, shape: Tuple[int, ...]):
        shape = tuple(shape)
        if shape == self.shape:
            return self
        return BroadcastTo.apply(self, shape=shape)

    def sum_to(self, shape: Tuple[int, ...]):
        shape = tuple(shape)
        if shape == self.shape:
            return self
        return SumTo.apply(self, shape=shape)

    # Image ops -------------------------------------------------------------

    def unfold(self, kernel: int, stride: int = 1, padding: int = 0):
        return Unfold.apply(self, kernel=kernel, stride=stride, padding=padding)

    def upsample2x(self):
        return Upsample2x.apply(self)

    def sum_pool2x(self):
        return SumPool2x.apply(self)

    def avg_pool2x(self):
        return self.sum_pool2x() * 0.25


class Parameter(Tensor):
    """
    A trainable leaf tensor.

    Attributes:
        frozen (bool): Frozen parameters never receive gradients or updates
        role (str): weight, bias, modulation, affine or fc
    """

    def __init__(self, data: ArrayLike, role: str = "weight", name: Optional[str] = None):
        super().__init__(data, requires_grad=True, name=name)
        self.frozen = False
        self.role = role

    def freeze(self):
        self.frozen = True
        self.requires_grad = False
        self.grad = None

    def unfreeze(self):
        self.frozen = False
        self.requires_grad = True


def _normalize_axis(axis, ndim: int) -> Optional[Tuple[int, ...]]:
    if axis is None:
        return None
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(sorted(a % ndim for a in axis))


def _resolve_shape(current: Tuple[int, ...], shape: Sequence[int]) -> Tuple[int, ...]:
    size = int(np.prod(current)) if current else 1
    shape = [int(s) for s in shape]
    if shape.count(-1) > 1:
        raise ShapeError("only one reshape extent may be -1")
    if -1 in shape:
        known = int(np.prod([s for s in shape if s != -1])) if len(shape) > 1 else 1
        if known == 0 or size % known:
            raise ShapeError(f"cannot reshape {current} to {tuple(shape)}")
        shape[shape.index(-1)] = size // known
    if int(np.prod(shape)) != size:
        raise ShapeError(f"cannot reshape {current} to {tuple(shape)}")
    return tuple(shape)


def _sum_to(arr: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    lead = arr.ndim - len(shape)
    if lead < 0:
        raise ShapeError(f"cannot reduce {arr.shape} to {shape}")
    axes = list(range(lead))
    for i, extent in enumerate(shape):
        if extent == 1 and arr.shape[lead + i] != 1:
            axes.append(lead + i)
        elif extent != arr.shape[lead + i]:
            raise ShapeError(f"cannot reduce {arr.shape} to {shape}")
    out = arr.sum(axis=tuple(axes), keepdims=True) if axes else arr
    return out.reshape(shape)


# ---------------------------------------------------------------------------
# Primitive operations
# ---------------------------------------------------------------------------


class Function:
    """
    One recorded primitive.

    Subclasses implement ``forward`` on numpy arrays and ``backward`` with
    tensor operations so the backward pass can itself be recorded.
    """

    def __init__(self, **attrs):
        self.__dict__.update(attrs)
        self.inputs: Tuple[Tensor, ...] = ()
        self.needs: Tuple[bool, ...] = ()
        self.consumed = False

    @classmethod
    def apply(cls, *inputs: Tensor, **attrs) -> Tensor:
        fn = cls(**attrs)
        out_data = fn.forward(*(t.data for t in inputs))
        if _STATE["grad_enabled"] and any(t.requires_grad for t in inputs):
            fn.inputs = inputs
            fn.needs = tuple(t.requires_grad for t in inputs)
            return Tensor._from_op(out_data, fn)
        return Tensor._from_op(out_data, None)

    def forward(self, *arrays: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad: Tensor) -> Tuple[Optional[Tensor], ...]:
        raise NotImplementedError


class Add(Function):
    def forward(self, a, b):
        return a + b

    def backward(self, grad):
        a, b = self.inputs
        return (grad.sum_to(a.shape) if self.needs[0] else None,
                grad.sum_to(b.shape) if self.needs[1] else None)


class Sub(Function):
    def forward(self, a, b):
        return a - b

    def backward(self, grad):
        a, b = self.inputs
        return (grad.sum_to(a.shape) if self.needs[0] else None,
                (-grad).sum_to(b.shape) if self.needs[1] else None)


class Mul(Function):
    def forward(self, a, b):
        return a * b

    def backward(self, grad):
        a, b = self.inputs
        return ((grad * b).sum_to(a.shape) if self.needs[0] else None,
                (grad * a).sum_to(b.shape) if self.needs[1] else None)


class Div(Function):
    def forward(self, a, b):
        return a / b

    def backward(self, grad):
        a, b = self.inputs
        ga = (grad / b).sum_to(a.shape) if self.needs[0] else None
        gb = (-(grad * a) / (b * b)).sum_to(b.shape) if self.needs[1] else None
        return ga, gb


class Neg(Function):
    def forward(self, x):
        return -x

    def backward(self, grad):
        return (-grad,)


class PowScalar(Function):
    def forward(self, x):
        return np.power(x, self.exponent).astype(x.dtype, copy=False)

    def backward(self, grad):
        (x,) = self.inputs
        return (grad * (x ** (self.exponent - 1.0)) * self.exponent,)


class Exp(Function):
    def forward(self, x):
        return np.exp(x)

    def backward(self, grad):
        (x,) = self.inputs
        return (grad * x.exp(),)


class Log(Function):
    def forward(self, x):
        return np.log(x)

    def backward(self, grad):
        (x,) = self.inputs
        return (grad / x,)


class Tanh(Function):
    def forward(self, x):
        return np.tanh(x)

    def backward(self, grad):
        (x,) = self.inputs
        t = x.tanh()
        return (grad * (1.0 - t * t),)


def _stable_sigmoid(x: np.ndarray) -> np.ndarray:
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(x.dtype, copy=False)


class Sigmoid(Function):
    def forward(self, x):
        return _stable_sigmoid(x)

    def backward(self, grad):
        (x,) = self.inputs
        s = x.sigmoid()
        return (grad * s * (1.0 - s),)


class Softplus(Function):
    """log(1 + e^x) without overflow for large |x|"""

    def forward(self, x):
        return (np.maximum(x, 0) + np.log1p(np.exp(-np.abs(x)))).astype(x.dtype, copy=False)

    def backward(self, grad):
        (x,) = self.inputs
        return (grad * x.sigmoid(),)


class LeakyReLU(Function):
    def forward(self, x):
        self.mask = np.where(x > 0, 1.0, self.slope).astype(x.dtype)
        return x * self.mask

    def backward(self, grad):
        return (grad * self.mask,)


class Sum(Function):
    def forward(self, x):
        self.in_shape = x.shape
        return np.asarray(x.sum(axis=self.axis, keepdims=self.keepdims))

    def backward(self, grad):
        if self.axis is None:
            kept = (1,) * len(self.in_shape)
        elif self.keepdims:
            kept = grad.shape
        else:
            kept = tuple(1 if i in self.axis else n for i, n in enumerate(self.in_shape))
        return (grad.reshape(kept).broadcast_to(self.in_shape),)


class Reshape(Function):
    def forward(self, x):
        self.in_shape = x.shape
        return x.reshape(self.shape)

    def backward(self, grad):
        return (grad.reshape(self.in_shape),)


class Transpose(Function):
    def forward(self, x):
        return np.transpose(x, self.axes)

    def backward(self, grad):
        return (grad.transpose(tuple(np.argsort(self.axes))),)


class BroadcastTo(Function):
    def forward(self, x):
        self.in_shape = x.shape
        return np.array(np.broadcast_to(x, self.shape))

    def backward(self, grad):
        return (grad.sum_to(self.in_shape),)


class SumTo(Function):
    def forward(self, x):
        self.in_shape = x.shape
        return _sum_to(x, self.shape)

    def backward(self, grad):
        return (grad.broadcast_to(self.in_shape),)


class MatMul(Function):
    """Batched matrix product with numpy broadcasting over leading axes"""

    def forward(self, a, b):
        if a.ndim < 2 or b.ndim < 2:
            raise ShapeError("matmul operands need at least two dimensions")
        if a.shape[-1] != b.shape[-2]:
            raise ShapeError(f"matmul inner extents differ: {a.shape} @ {b.shape}")
        return np.matmul(a, b)

    def backward(self, grad):
        a, b = self.inputs
        ga = (grad @ b.swapaxes(-1, -2)).sum_to(a.shape) if self.needs[0] else None
        gb = (a.swapaxes(-1, -2) @ grad).sum_to(b.shape) if self.needs[1] else None
        return ga, gb


def _output_extent(size: int, kernel: int, stride: int, padding: int) -> int:
    extent = (size + 2 * padding - kernel) // stride + 1
    if extent < 1:
        raise ShapeError(
            f"kernel {kernel} with padding {padding} does not fit input extent {size}"
        )
    return extent


def im2col(x: np.ndarray, kernel: int, stride: int, padding: int) -> np.ndarray:
    """(N, C, H, W) -> (N, C*K*K, Ho*Wo), rows ordered channel-major then kernel row, column"""
    n, c, h, w = x.shape
    ho = _output_extent(h, kernel, stride, padding)
    wo = _output_extent(w, kernel, stride, padding)
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    cols = np.empty((n, c, kernel, kernel, ho, wo), dtype=x.dtype)
    for i in range(kernel):
        i_end = i + stride * ho
        for j in range(kernel):
            j_end = j + stride * wo
            cols[:, :, i, j] = x[:, :, i:i_end:stride, j:j_end:stride]
    return cols.reshape(n, c * kernel * kernel, ho * wo)


def col2im(cols: np.ndarray, shape: Tuple[int, int, int, int], kernel: int,
           stride: int, padding: int) -> np.ndarray:
    """Adjoint of :func:`im2col`: scatter-add columns back into an image."""
    n, c, h, w = shape
    ho = _output_extent(h, kernel, stride, padding)
    wo = _output_extent(w, kernel, stride, padding)
    cols = cols.reshape(n, c, kernel, kernel, ho, wo)
    out = np.zeros((n, c, h + 2 * padding, w + 2 * padding), dtype=cols.dtype)
    for i in range(kernel):
        i_end = i + stride * ho
        for j in range(kernel):
            j_end = j + stride * wo
            out[:, :, i:i_end:stride, j:j_end:stride] += cols[:, :, i, j]
    if padding:
        out = out[:, :, padding:padding + h, padding:padding + w]
    return np.ascontiguousarray(out)


class Unfold(Function):
    def forward(self, x):
        if x.ndim != 4:
            raise ShapeError(f"unfold expects (N, C, H, W), got {x.shape}")
        self.in_shape = x.shape
        return im2col(x, self.kernel, self.stride, self.padding)

    def backward(self, grad):
        return (Fold.apply(grad, shape=self.in_shape, kernel=self.kernel,
                           stride=self.stride, padding=self.padding),)


class Fold(Function):
    def forward(self, cols):
        return col2im(cols, self.shape, self.kernel, self.stride, self.padding)

    def backward(self, grad):
        return (grad.unfold(self.kernel, self.stride, self.padding),)


class Upsample2x(Function):
    """Nearest-neighbour 2x upsampling"""

    def forward(self, x):
        if x.ndim != 4:
            raise ShapeError(f"upsample expects (N, C, H, W), got {x.shape}")
        return x.repeat(2, axis=2).repeat(2, axis=3)

    def backward(self, grad):
        return (grad.sum_pool2x(),)


class SumPool2x(Function):
    """Sum over non-overlapping 2x2 windows; adjoint of nearest upsampling"""

    def forward(self, x):
        if x.ndim != 4 or x.shape[2] % 2 or x.shape[3] % 2:
            raise ShapeError(f"2x pooling expects (N, C, even H, even W), got {x.shape}")
        n, c, h, w = x.shape
        return x.reshape(n, c, h // 2, 2, w // 2, 2).sum(axis=(3, 5))

    def backward(self, grad):
        return (grad.upsample2x(),)


# ---------------------------------------------------------------------------
# Composite operations
# ---------------------------------------------------------------------------


def conv2d(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None,
           stride: int = 1, padding: int = 0) -> Tensor:
    """
    2-D cross-correlation.

    Args:
        x: Input of shape (N, Cin, H, W)
        weight: Shared filters (Cout, Cin, K, K) or per-sample filters (N, Cout, Cin, K, K)
        bias: Optional (Cout,) bias
        stride: Step between windows
        padding: Zero padding on each side

    Returns:
        Tensor: (N, Cout, Ho, Wo)
    """
    if x.ndim != 4:
        raise ShapeError(f"conv2d input must be (N, C, H, W), got {x.shape}")
    if weight.ndim not in (4, 5):
        raise ShapeError(f"conv2d weight must have 4 or 5 dimensions, got {weight.shape}")
    if stride < 1 or padding < 0:
        raise ShapeError(f"invalid stride {stride} or padding {padding}")
    n, cin, h, w = x.shape
    cout, wcin, kh, kw = weight.shape[-4:]
    if kh != kw:
        raise ShapeError(f"only square kernels are supported, got {kh}x{kw}")
    if wcin != cin:
        raise ShapeError(f"conv2d channel mismatch: input has {cin}, filters expect {wcin}")
    if weight.ndim == 5 and weight.shape[0] != n:
        raise ShapeError(f"per-sample filters for {weight.shape[0]} samples, batch has {n}")
    ho = _output_extent(h, kh, stride, padding)
    wo = _output_extent(w, kw, stride, padding)

    cols = x.unfold(kh, stride, padding)
    if weight.ndim == 4:
        flat = weight.reshape(cout, cin * kh * kw)
    else:
        flat = weight.reshape(n, cout, cin * kh * kw)
    out = (flat @ cols).reshape(n, cout, ho, wo)
    if bias is not None:
        out = out + bias.reshape(1, cout, 1, 1)
    return out


def conv2d_reference(x: np.ndarray, weight: np.ndarray, bias: Optional[np.ndarray] = None,
                     stride: int = 1, padding: int = 0) -> np.ndarray:
    """Direct loop convolution used to check :func:`conv2d`."""
    n, cin, h, w = x.shape
    cout, _, k, _ = weight.shape
    ho = _output_extent(h, k, stride, padding)
    wo = _output_extent(w, k, stride, padding)
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    out = np.zeros((n, cout, ho, wo), dtype=np.float64)
    for b in range(n):
        for o in range(cout):
            for r in range(ho):
                for c in range(wo):
                    window = xp[b, :, r * stride:r * stride + k, c * stride:c * stride + k]
                    out[b, o, r, c] = np.sum(window * weight[o])
            if bias is not None:
                out[b, o] += bias[o]
    return out


def dense(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """Affine map x @ W + b with W of shape (in, out)."""
    if x.shape[-1] != weight.shape[0]:
        raise ShapeError(f"dense input width {x.shape[-1]} does not match weight {weight.shape}")
    out = x @ weight
    if bias is not None:
        out = out + bias
    return out


# ---------------------------------------------------------------------------
# Graph traversal
# ---------------------------------------------------------------------------


def _topological_order(root: Tensor) -> List[Tensor]:
    """Nodes reachable from ``root`` that require grad, inputs before outputs"""
    order: List[Tensor] = []
    visited = set()
    stack: List[Tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        if node._ctx is not None:
            for parent in reversed(node._ctx.inputs):
                if parent.requires_grad and id(parent) not in visited:
                    stack.append((parent, False))
    return order


def _propagate(order: List[Tensor], root: Tensor, seed: Tensor,
               create_graph: bool) -> Dict[int, Tensor]:
    grads: Dict[int, Tensor] = {id(root): seed}
    with _grad_mode(create_graph):
        for node in reversed(order):
            grad_out = grads.get(id(node))
            ctx = node._ctx
            if grad_out is None or ctx is None:
                continue
            if ctx.consumed:
                raise GraphError(
                    "graph already consumed by backward(); pass retain_graph=True "
                    "to differentiate through it again"
                )
            for parent, parent_grad in zip(ctx.inputs, ctx.backward(grad_out)):
                if parent_grad is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = parent_grad if key not in grads else grads[key] + parent_grad
    return grads


def _seed_for(output: Tensor) -> Tensor:
    if output.size != 1:
        raise ShapeError(f"gradient roots must be scalar, got shape {output.shape}")
    if not output.requires_grad:
        raise GraphError("output does not depend on any tensor that requires grad")
    return Tensor._from_op(np.ones_like(output.data), None)


def backward(loss: Tensor, retain_graph: bool = False) -> None:
    """
    Accumulate d(loss)/d(node) into ``.grad`` of every graph node that requires grad.

    Raises:
        ShapeError: If ``loss`` is not a scalar
        GraphError: If the graph was consumed by an earlier backward()
    """
    seed = _seed_for(loss)
    order = _topological_order(loss)
    grads = _propagate(order, loss, seed, create_graph=False)
    for node in order:
        g = grads.get(id(node))
        if g is None:
            continue
        node.grad = g.data.copy() if node.grad is None else node.grad + g.data
    if not retain_graph:
        for node in order:
            if node._ctx is not None:
                node._ctx.consumed = True


def grad(output: Tensor, inputs: Sequence[Tensor], create_graph: bool = False) -> List[Tensor]:
    """
    Gradients of a scalar ``output`` with respect to ``inputs``.

    The graph is left intact. With ``create_graph=True`` the returned
    gradients are recorded and can be differentiated again.

    Raises:
        GraphError: If an input is not on the graph of ``output``
    """
    seed = _seed_for(output)
    order = _topological_order(output)
    on_graph = {id(node) for node in order}
    for position, tensor in enumerate(inputs):
        if id(tensor) not in on_graph:
            label = tensor.name or f"inputs[{position}]"
            raise GraphError(f"{label} is not on the graph of the output")
    grads = _propagate(order, output, seed, create_graph=create_graph)
    results = []
    for tensor in inputs:
        g = grads.get(id(tensor))
        if g is None:
            g = Tensor._from_op(np.zeros_like(tensor.data), None)
        results.append(g)
    return results


def second_order_grad_norm(d_out: Tensor, x: Tensor) -> Tensor:
    """
    Differentiable sum of squared input gradients, sum((d d_out / dx)^2).
    """
    (g,) = grad(d_out, [x], create_graph=True)
    return (g * g).sum()


# ---------------------------------------------------------------------------
# Modules
# ---------------------------------------------------------------------------


class Module:
    """
    Container of parameters and sub-modules.

    Public attributes holding a Parameter or Module are registered in
    assignment order; names are joined with ``/``.
    """

    def named_parameters(self, prefix: str = "") -> Iterator[Tuple[str, Parameter]]:
        for key, value in vars(self).items():
            if key.startswith("_"):
                continue
            if isinstance(value, Parameter):
                yield f"{prefix}{key}", value
            elif isinstance(value, Module):
                yield from value.named_parameters(f"{prefix}{key}/")

    def parameters(self) -> List[Parameter]:
        return [p for _, p in self.named_parameters()]

    def named_modules(self, prefix: str = "") -> Iterator[Tuple[str, "Module"]]:
        yield prefix.rstrip("/"), self
        for key, value in vars(self).items():
            if not key.startswith("_") and isinstance(value, Module):
                yield from value.named_modules(f"{prefix}{key}/")

    def freeze(self):
        for p in self.parameters():
            p.freeze()

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)
