"""Minimal reverse-mode autodiff over float64 numpy arrays.

Only the operations the Q-profile model needs are provided: matmul, elementwise
add/sub/mul, scaling, relu, last-axis softmax, concat/stack, basic slicing,
transpose/reshape, and sum/mean reductions. Every op records a closure mapping
the upstream gradient to per-parent gradients; :func:`backward` replays them in
reverse topological order.
"""

from __future__ import annotations

import contextlib
import zlib
from dataclasses import dataclass
from typing import Callable, Iterator, Sequence

import numpy as np

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Disable graph recording inside the block (evaluation passes)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class Tensor:
    """Dense float64 array with optional gradient tracking.

    Leaf tensors created with ``requires_grad=True`` own a zero-initialised
    ``grad`` buffer of the same shape; gradients from :func:`backward`
    accumulate into it until :meth:`zero_grad` is called.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.array(data, dtype=np.float64) if not isinstance(data, np.ndarray) \
            else data.astype(np.float64, copy=False)
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(self.data) if self.requires_grad else None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        if self.requires_grad:
            self.grad = np.zeros_like(self.data)

    def detach(self) -> Tensor:
        return Tensor(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def backward(self) -> None:
        backward(self)

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes or None)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: tuple[Tensor, ...], fn) -> Tensor:
    out = Tensor(data)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = fn
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into every reachable leaf's ``grad``."""
    if loss.data.size != 1:
        raise ValueError(f"backward() needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return

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
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = node.grad + g if node.grad is not None else g.copy()
            continue
        for p, pg in zip(node._parents, node._backward(g)):
            if pg is None or not p.requires_grad:
                continue
            key = id(p)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg


# ---------------------------------------------------------------- elementwise

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return _make(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return _make(a.data - b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    return _make(ad * bd, (a, b),
                 lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)))


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return _make(a.data * c, (a,), lambda g: (g * c,))


def square(a: Tensor) -> Tensor:
    ad = a.data
    return _make(ad * ad, (a,), lambda g: (2.0 * ad * g,))


def relu(x: Tensor) -> Tensor:
    """Rectifier; the subgradient at exactly 0 is taken as 0."""
    mask = x.data > 0
    return _make(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,))


def softmax_lastdim(x: Tensor) -> Tensor:
    if x.ndim == 0 or x.shape[-1] == 0:
        raise ValueError(f"softmax over an empty last dimension (shape {x.shape})")
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)

    def fn(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return _make(y, (x,), fn)


# ---------------------------------------------------------------- linear algebra

def matmul(a, b) -> Tensor:
    """Matrix product over the last two axes, batched over leading axes."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data

    def fn(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(g @ np.swapaxes(bd, -1, -2), ad.shape)
        if b.requires_grad:
            gb = _unbroadcast(np.swapaxes(ad, -1, -2) @ g, bd.shape)
        return ga, gb

    return _make(ad @ bd, (a, b), fn)


def transpose(a: Tensor, axes=None) -> Tensor:
    axes = tuple(range(a.ndim))[::-1] if axes is None else tuple(axes)
    inv = tuple(np.argsort(axes))
    return _make(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),))


def swap_last(a: Tensor) -> Tensor:
    axes = list(range(a.ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return transpose(a, axes)


def reshape(a: Tensor, shape) -> Tensor:
    old = a.shape
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


# ---------------------------------------------------------------- structure

def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ValueError("concat of an empty list")
    if len(tensors) == 1:
        return tensors[0]
    ref = tensors[0].shape
    ax = axis % len(ref)
    for t in tensors[1:]:
        if t.ndim != len(ref) or any(t.shape[i] != ref[i] for i in range(len(ref)) if i != ax):
            raise ValueError(f"concat: ragged shapes {[t.shape for t in tensors]} along axis {axis}")
    bounds = np.cumsum([t.shape[ax] for t in tensors])[:-1]

    def fn(g):
        return tuple(np.split(g, bounds, axis=ax))

    return _make(np.concatenate([t.data for t in tensors], axis=ax), tuple(tensors), fn)


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ValueError("stack of an empty list")
    ref = tensors[0].shape
    if any(t.shape != ref for t in tensors):
        raise ValueError(f"stack: ragged shapes {[t.shape for t in tensors]}")
    ax = axis % (len(ref) + 1)

    def fn(g):
        return tuple(np.take(g, i, axis=ax) for i in range(len(tensors)))

    return _make(np.stack([t.data for t in tensors], axis=ax), tuple(tensors), fn)


def getitem(a: Tensor, idx) -> Tensor:
    """Basic (view) indexing; advanced indexing with repeats is not supported."""
    shape = a.shape

    def fn(g):
        full = np.zeros(shape)
        full[idx] += g
        return (full,)

    return _make(a.data[idx], (a,), fn)


# ---------------------------------------------------------------- reductions

def sum_(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    shape = a.shape

    def fn(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _make(np.asarray(a.data.sum(axis=axis, keepdims=keepdims)), (a,), fn)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return scale(sum_(a, axis=axis, keepdims=keepdims), 1.0 / float(n))


# ---------------------------------------------------------------- parameters

def param_rng(seed: int, name: str) -> np.random.Generator:
    """Deterministic PRNG stream keyed by (seed, parameter name)."""
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(zlib.crc32(name.encode()),)))


class ParamStore:
    """Named learnable tensors, iterated in lexicographic name order."""

    def __init__(self, seed: int = 0):
        self.seed = int(seed)
        self._params: dict[str, Tensor] = {}

    def add(self, name: str, value: np.ndarray) -> Tensor:
        if name in self._params:
            raise KeyError(f"duplicate parameter name {name!r}")
        value = np.asarray(value, dtype=np.float64)
        if not np.all(np.isfinite(value)):
            raise ValueError(f"parameter {name!r} initialised with non-finite values")
        t = Tensor(value.copy(), requires_grad=True)
        self._params[name] = t
        return t

    def uniform(self, name: str, shape: tuple[int, ...], bound: float) -> Tensor:
        return self.add(name, param_rng(self.seed, name).uniform(-bound, bound, size=shape))

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return sorted(self._params)

    def items(self) -> list[tuple[str, Tensor]]:
        return [(n, self._params[n]) for n in self.names()]

    def __iter__(self):
        return iter(self.names())

    def num_scalars(self) -> int:
        return int(sum(t.data.size for t in self._params.values()))

    def zero_grad(self) -> None:
        for t in self._params.values():
            t.zero_grad()

    def state_dict(self) -> dict[str, np.ndarray]:
        return {n: t.data.copy() for n, t in self.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        missing = set(self._params) ^ set(state)
        if missing:
            raise KeyError(f"state/param name mismatch: {sorted(missing)}")
        for n, t in self._params.items():
            arr = np.asarray(state[n], dtype=np.float64)
            if arr.shape != t.shape:
                raise ValueError(f"{n}: shape {arr.shape} != {t.shape}")
            t.data = arr.copy()
            t.zero_grad()


# ---------------------------------------------------------------- gradient check

@dataclass
class GradcheckReport:
    max_rel_error: float
    worst_param: str | None
    worst_index: tuple[int, ...] | None
    n_checked: int
    tol: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tol


def gradcheck(f: Callable[[ParamStore], Tensor], params: ParamStore, eps: float = 1e-4,
              tol: float = 1e-4, floor: float = 1e-5) -> GradcheckReport:
    """Compare backprop gradients with central finite differences.

    Relative error per coordinate is ``|a - n| / max(|a|, |n|, floor)``; the
    floor keeps coordinates whose true gradient is ~0 from dividing noise by
    noise.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    base = float(f(params).data)
    if float(f(params).data) != base:
        raise RuntimeError("gradcheck: f is not deterministic (repeated evaluation differs)")

    params.zero_grad()
    backward(f(params))
    analytic = {n: t.grad.copy() for n, t in params.items()}

    worst, worst_name, worst_idx, count = 0.0, None, None, 0
    with no_grad():
        for name, t in params.items():
            flat = t.data.reshape(-1)
            a_flat = analytic[name].reshape(-1)
            for k in range(flat.size):
                orig = flat[k]
                flat[k] = orig + eps
                fp = float(f(params).data)
                flat[k] = orig - eps
                fm = float(f(params).data)
                flat[k] = orig
                num = (fp - fm) / (2.0 * eps)
                a = a_flat[k]
                rel = abs(a - num) / max(abs(a), abs(num), floor)
                count += 1
                if rel > worst:
                    worst, worst_name = rel, name
                    worst_idx = tuple(int(i) for i in np.unravel_index(k, t.shape))
    params.zero_grad()
    return GradcheckReport(worst, worst_name, worst_idx, count, tol)
