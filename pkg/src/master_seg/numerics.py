"""Small dense-tensor library with reverse-mode differentiation.

Only what the patch transformers, fusion core and mask decoder need. Shapes
must match exactly; the single exception is adding a 1-D bias along the last
axis. Every op checks its output for NaN/Inf and raises ``NumericError``.
"""
from __future__ import annotations

import math
import zlib
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import NumericError, ShapeError

GELU_C = math.sqrt(2.0 / math.pi)  # tanh approximation constant
GELU_A = 0.044715
MASK_FILL = -1e9


class Tensor:
    """n-d array with an optional gradient accumulator."""

    __slots__ = ("data", "requires_grad", "grad", "name", "op", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None, dtype=None):
        arr = np.array(data, dtype=dtype if dtype is not None else np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(())
        self.data = arr
        self.requires_grad = requires_grad
        self.grad = np.zeros_like(arr) if requires_grad else None
        self.name = name
        self.op = "leaf"
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        if self.requires_grad:
            self.grad = np.zeros_like(self.data)

    def backward(self) -> "ComputeGraph":
        return backward(self)

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, op={self.op}{tag}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if np.isscalar(other):
            return scale(self, float(other))
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return scale(self, -1.0)

    def __truediv__(self, other):
        if np.isscalar(other):
            return scale(self, 1.0 / float(other))
        return div(self, other)

    def __matmul__(self, other):
        return matmul(self, other)


def _as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(x, dtype=dtype)


def _make(data: np.ndarray, parents: Sequence[Tensor], backward_fn, op: str) -> Tensor:
    if not np.isfinite(data).all():
        raise NumericError(f"non-finite values produced by {op}")
    out = Tensor.__new__(Tensor)
    out.data = data
    out.name = None
    out.op = op
    needs = any(p.requires_grad for p in parents)
    out.requires_grad = needs
    out.grad = None
    if needs:
        out._parents = tuple(parents)
        out._backward = backward_fn
    else:
        out._parents = ()
        out._backward = None
    return out


# ---------------------------------------------------------------------------
# graph


class ComputeGraph:
    """Topologically ordered record of the ops that produced ``output``."""

    def __init__(self, output: Tensor):
        self.output = output
        self.nodes = self._toposort(output)

    @staticmethod
    def _toposort(root: Tensor) -> list[Tensor]:
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(root, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        return order

    @property
    def parameters(self) -> dict[str, Tensor]:
        """Leaf tensors that require grad, keyed by name (or positional index)."""
        out = {}
        for i, node in enumerate(self.nodes):
            if node.requires_grad and node._backward is None and not node._parents:
                out[node.name if node.name is not None else f"leaf{i}"] = node
        return out

    def backward(self) -> None:
        loss = self.output
        if loss.data.size != 1:
            raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
        if not loss.requires_grad:
            return
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        for node in reversed(self.nodes):
            g = grads.pop(id(node), None)
            if g is None:
                g = np.zeros_like(node.data)
            if not np.isfinite(g).all():
                raise NumericError(f"non-finite gradient reaching {node.op}" + (f" {node.name}" if node.name else ""))
            node.grad = g
            if node._backward is None:
                continue
            with np.errstate(over="ignore", invalid="ignore"):
                parent_grads = node._backward(g)
            for p, pg in zip(node._parents, parent_grads):
                if pg is None or not p.requires_grad:
                    continue
                key = id(p)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg


def backward(loss: Tensor) -> ComputeGraph:
    """Fill ``.grad`` of every requires-grad tensor feeding ``loss``."""
    graph = ComputeGraph(loss)
    graph.backward()
    return graph


# ---------------------------------------------------------------------------
# elementwise


def add(a, b) -> Tensor:
    a = _as_tensor(a, b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, a)
    if a.shape == b.shape:
        return _make(a.data + b.data, (a, b), lambda g: (g, g), "add")
    if b.ndim == 1 and a.ndim >= 1 and b.shape[0] == a.shape[-1]:
        axes = tuple(range(a.ndim - 1))
        return _make(a.data + b.data, (a, b), lambda g: (g, g.sum(axis=axes)), "bias_add")
    raise ShapeError(f"add: shapes {a.shape} and {b.shape} do not match")


def sub(a, b) -> Tensor:
    a = _as_tensor(a, b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, a)
    if a.shape != b.shape:
        raise ShapeError(f"sub: shapes {a.shape} and {b.shape} do not match")
    return _make(a.data - b.data, (a, b), lambda g: (g, -g), "sub")


def mul(a, b) -> Tensor:
    a = _as_tensor(a, b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, a)
    if a.shape != b.shape:
        raise ShapeError(f"mul: shapes {a.shape} and {b.shape} do not match")
    ad, bd = a.data, b.data
    return _make(ad * bd, (a, b), lambda g: (g * bd, g * ad), "mul")


def div(a, b) -> Tensor:
    a = _as_tensor(a, b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, a)
    if a.shape != b.shape:
        raise ShapeError(f"div: shapes {a.shape} and {b.shape} do not match")
    ad, bd = a.data, b.data
    out = ad / bd
    return _make(out, (a, b), lambda g: (g / bd, -g * out / bd), "div")


def scale(x: Tensor, c: float) -> Tensor:
    return _make(x.data * c, (x,), lambda g: (g * c,), "scale")


def add_scalar(x: Tensor, c: float) -> Tensor:
    return _make(x.data + c, (x,), lambda g: (g,), "add_scalar")


def exp(x: Tensor) -> Tensor:
    with np.errstate(over="ignore"):
        out = np.exp(x.data)
    return _make(out, (x,), lambda g: (g * out,), "exp")


def log(x: Tensor) -> Tensor:
    xd = x.data
    if (xd <= 0).any():
        raise NumericError("log of non-positive value")
    return _make(np.log(xd), (x,), lambda g: (g / xd,), "log")


def relu(x: Tensor) -> Tensor:
    xd = x.data
    return _make(np.maximum(xd, 0), (x,), lambda g: (g * (xd > 0),), "relu")


def gelu(x: Tensor) -> Tensor:
    """GELU, tanh form: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))."""
    xd = x.data
    inner = GELU_C * (xd + GELU_A * xd**3)
    t = np.tanh(inner)
    out = 0.5 * xd * (1.0 + t)

    def bw(g):
        dinner = GELU_C * (1.0 + 3.0 * GELU_A * xd**2)
        return (g * (0.5 * (1.0 + t) + 0.5 * xd * (1.0 - t * t) * dinner),)

    return _make(out, (x,), bw, "gelu")


# ---------------------------------------------------------------------------
# linear algebra and shape


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes; leading axes must be identical."""
    a = _as_tensor(a, b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, a)
    if a.ndim < 2 or b.ndim != a.ndim or a.shape[:-2] != b.shape[:-2] or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: cannot multiply shapes {a.shape} and {b.shape}")
    ad, bd = a.data, b.data

    def bw(g):
        ga = g @ np.swapaxes(bd, -1, -2) if a.requires_grad else None
        gb = np.swapaxes(ad, -1, -2) @ g if b.requires_grad else None
        return ga, gb

    with np.errstate(over="ignore", invalid="ignore"):
        out = ad @ bd
    return _make(out, (a, b), bw, "matmul")


def transpose(x: Tensor, axes: Sequence[int] | None = None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(x.ndim)))
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return _make(np.transpose(x.data, axes), (x,), lambda g: (np.transpose(g, inv),), "transpose")


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    src = x.shape
    out = x.data.reshape(tuple(shape))
    return _make(out, (x,), lambda g: (g.reshape(src),), "reshape")


def concat(xs: Sequence[Tensor], axis: int = 0) -> Tensor:
    xs = list(xs)
    if not xs:
        raise ShapeError("concat of an empty list")
    nd = xs[0].ndim
    ax = axis % nd
    for x in xs[1:]:
        if x.ndim != nd or x.shape[:ax] + x.shape[ax + 1:] != xs[0].shape[:ax] + xs[0].shape[ax + 1:]:
            raise ShapeError(f"concat: shapes {xs[0].shape} and {x.shape} differ off axis {axis}")
    sizes = [x.shape[ax] for x in xs]
    bounds = np.cumsum(sizes)[:-1]
    out = np.concatenate([x.data for x in xs], axis=ax)
    return _make(out, xs, lambda g: tuple(np.split(g, bounds, axis=ax)), "concat")


def take(x: Tensor, index, axis: int = 0) -> Tensor:
    """Gather along ``axis`` with an integer index array (repeats allowed)."""
    idx = np.asarray(index, dtype=np.int64)
    ax = axis % x.ndim
    if idx.size and (idx.min() < 0 or idx.max() >= x.shape[ax]):
        raise ShapeError(f"take: index out of range for axis {axis} of size {x.shape[ax]}")
    src_shape, dtype = x.shape, x.dtype

    def bw(g):
        full = np.zeros(src_shape, dtype=dtype)
        np.add.at(full, (slice(None),) * ax + (idx,), g)
        return (full,)

    return _make(np.take(x.data, idx, axis=ax), (x,), bw, "take")


def slice_rows(x: Tensor, start: int, stop: int) -> Tensor:
    src_shape, dtype = x.shape, x.dtype

    def bw(g):
        full = np.zeros(src_shape, dtype=dtype)
        full[start:stop] = g
        return (full,)

    return _make(x.data[start:stop], (x,), bw, "slice_rows")


def embedding(table: Tensor, ids) -> Tensor:
    """Rows of ``table`` selected by integer ids."""
    return take(table, ids, axis=0)


def sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    src_shape = x.shape

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, src_shape).copy(),)

    return _make(np.asarray(x.data.sum(axis=axis, keepdims=keepdims)), (x,), bw, "sum")


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = x.data.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return scale(sum(x, axis=axis, keepdims=keepdims), 1.0 / float(n))


# ---------------------------------------------------------------------------
# normalisation


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Softmax with max-subtraction."""
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _make(out, (x,), bw, "softmax")


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse
    sm = np.exp(out)

    def bw(g):
        return (g - sm * g.sum(axis=axis, keepdims=True),)

    return _make(out, (x,), bw, "log_softmax")


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalise over the last axis, then apply ``gamma * xhat + beta``."""
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ShapeError(f"layer_norm: gamma/beta {gamma.shape}/{beta.shape} vs last axis {d}")
    if eps <= 0:
        raise ValueError("eps must be positive")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    with np.errstate(over="ignore"):
        var = (xc * xc).mean(axis=-1, keepdims=True)
    if not np.isfinite(var).all():
        # an infinite variance would silently zero the output
        raise NumericError("non-finite variance in layer_norm")
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    gd = gamma.data
    out = xhat * gd + beta.data
    red = tuple(range(x.ndim - 1))

    def bw(g):
        gx = g * gd
        dx = inv * (gx - gx.mean(axis=-1, keepdims=True) - xhat * (gx * xhat).mean(axis=-1, keepdims=True))
        return dx, (g * xhat).sum(axis=red), g.sum(axis=red)

    return _make(out, (x, gamma, beta), bw, "layer_norm")


# ---------------------------------------------------------------------------
# randomness and initialisation


class Rng:
    """Seeded stream; ``child(name)`` derives an independent, reproducible stream."""

    def __init__(self, seed: int, key: tuple[int, ...] = ()):
        self.seed = int(seed)
        self.key = tuple(key)
        ss = np.random.SeedSequence(self.seed, spawn_key=self.key)
        self.gen = np.random.Generator(np.random.PCG64(ss))

    def child(self, name: str | int) -> "Rng":
        tag = name if isinstance(name, int) else zlib.crc32(str(name).encode("utf-8"))
        return Rng(self.seed, self.key + (int(tag),))

    def normal(self, loc=0.0, scale=1.0, size=None):
        return self.gen.normal(loc, scale, size)

    def uniform(self, low=0.0, high=1.0, size=None):
        return self.gen.uniform(low, high, size)

    def integers(self, low, high=None, size=None):
        return self.gen.integers(low, high, size)

    def permutation(self, n):
        return self.gen.permutation(n)


def xavier_uniform(rng: Rng, fan_in: int, fan_out: int, dtype=np.float64) -> np.ndarray:
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out)).astype(dtype)


def normal_init(rng: Rng, shape, std: float = 0.02, dtype=np.float64) -> np.ndarray:
    return rng.normal(0.0, std, size=shape).astype(dtype)


# ---------------------------------------------------------------------------
# finite differences


def numerical_grad(fn: Callable[[], float], arr: np.ndarray, index, h: float = 1e-5) -> float:
    """Central difference of ``fn`` w.r.t. one element of ``arr`` (mutated in place, restored)."""
    old = arr[index]
    arr[index] = old + h
    fp = fn()
    arr[index] = old - h
    fm = fn()
    arr[index] = old
    return (fp - fm) / (2.0 * h)


def rel_error(analytic, numeric, floor: float = 1e-6) -> float:
    """Max elementwise |a - n| / max(|a|, |n|, floor)."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom)) if a.size else 0.0


def gradcheck(
    fn: Callable[[Sequence[Tensor]], Tensor],
    inputs: Iterable[Tensor],
    h: float = 1e-5,
    max_elems: int | None = None,
    rng: Rng | None = None,
) -> float:
    """Compare backprop against central differences for every input element.

    ``fn`` maps the input tensors to a scalar tensor. With ``max_elems`` only
    that many randomly chosen elements per input are probed. Returns the max
    relative error.
    """
    inputs = list(inputs)
    loss = fn(inputs)
    backward(loss)
    worst = 0.0
    for t in inputs:
        if not t.requires_grad:
            continue
        analytic = t.grad.copy()
        flat = list(np.ndindex(t.shape)) if t.ndim else [()]
        if max_elems is not None and len(flat) > max_elems:
            pick = (rng or Rng(0)).gen.choice(len(flat), size=max_elems, replace=False)
            flat = [flat[i] for i in pick]
        num = [numerical_grad(lambda: fn(inputs).item(), t.data, idx, h) for idx in flat]
        ana = [analytic[idx] for idx in flat]
        worst = max(worst, rel_error(ana, num))
    return worst
