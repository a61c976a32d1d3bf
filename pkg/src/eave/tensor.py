"""Dense tensors with reverse-mode automatic differentiation.

Storage is a numpy array (float32 on the main path, float64 in shadow mode
for gradient checks). Every differentiable op records a closure that maps
the upstream gradient to one gradient per parent; :meth:`Tensor.backward`
replays those closures in exact reverse creation order.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

DEFAULT_DTYPE = np.float32
RMS_EPS = 1e-6

_creation_counter = itertools.count()


class GraphConsumedError(RuntimeError):
    pass


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    __slots__ = (
        "data",
        "grad",
        "requires_grad",
        "name",
        "_parents",
        "_backward",
        "_order",
        "_consumed",
    )

    def __init__(self, data, requires_grad: bool = False, name: str | None = None,
                 _parents: tuple["Tensor", ...] = (), _backward=None):
        arr = np.asarray(data)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents = _parents
        self._backward = _backward
        self._order = next(_creation_counter)
        self._consumed = False

    # -- basic properties -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def __len__(self) -> int:
        return len(self.data)

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{label})"

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    # -- graph construction -----------------------------------------------
    @staticmethod
    def _make(data, parents: Sequence["Tensor"], backward) -> "Tensor":
        live = any(p.requires_grad for p in parents)
        if not live:
            return Tensor(data)
        return Tensor(data, requires_grad=True, _parents=tuple(parents), _backward=backward)

    def backward(self) -> None:
        """Populate ``.grad`` on every requires-grad tensor reachable from this scalar."""
        if self.data.size != 1:
            raise ValueError(f"backward() needs a scalar loss, got shape {self.shape}")
        if self._consumed:
            raise GraphConsumedError("this graph was already consumed by a backward pass")
        if not self.requires_grad:
            return

        nodes: list[Tensor] = []
        seen: set[int] = set()
        stack = [self]
        while stack:
            node = stack.pop()
            if id(node) in seen:
                continue
            seen.add(id(node))
            nodes.append(node)
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append(p)
        # parents are always created before children, so descending creation
        # order is a reverse topological order
        nodes.sort(key=lambda t: t._order, reverse=True)

        upstream: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in nodes:
            g = upstream.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g if node.grad is None else node.grad + g
                continue
            node.grad = g
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                prev = upstream.get(id(parent))
                upstream[id(parent)] = pg if prev is None else prev + pg
        for node in nodes:
            if node._backward is not None:
                node._consumed = True
                node._backward = None
                node._parents = ()

    # -- arithmetic -------------------------------------------------------
    def __add__(self, other) -> "Tensor":
        other = as_tensor(other, self.dtype)
        a_shape, b_shape = self.shape, other.shape
        return Tensor._make(
            self.data + other.data,
            (self, other),
            lambda g: (_unbroadcast(g, a_shape), _unbroadcast(g, b_shape)),
        )

    __radd__ = __add__

    def __sub__(self, other) -> "Tensor":
        other = as_tensor(other, self.dtype)
        a_shape, b_shape = self.shape, other.shape
        return Tensor._make(
            self.data - other.data,
            (self, other),
            lambda g: (_unbroadcast(g, a_shape), _unbroadcast(-g, b_shape)),
        )

    def __rsub__(self, other) -> "Tensor":
        return as_tensor(other, self.dtype) - self

    def __neg__(self) -> "Tensor":
        return Tensor._make(-self.data, (self,), lambda g: (-g,))

    def __mul__(self, other) -> "Tensor":
        other = as_tensor(other, self.dtype)
        a, b = self.data, other.data
        need_a, need_b = self.requires_grad, other.requires_grad
        return Tensor._make(
            a * b,
            (self, other),
            lambda g: (_unbroadcast(g * b, a.shape) if need_a else None,
                       _unbroadcast(g * a, b.shape) if need_b else None),
        )

    __rmul__ = __mul__

    def __truediv__(self, other) -> "Tensor":
        if isinstance(other, Tensor):
            raise TypeError("division is only supported by a constant")
        return self * (1.0 / other)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)

    def __getitem__(self, index) -> "Tensor":
        shape, dtype = self.shape, self.dtype
        parts = index if isinstance(index, tuple) else (index,)
        fancy = any(isinstance(i, (list, np.ndarray)) for i in parts)

        def backward(g):
            out = np.zeros(shape, dtype=dtype)
            if fancy:
                np.add.at(out, index, g)
            else:
                out[index] = g
            return (out,)

        return Tensor._make(self.data[index], (self,), backward)

    # -- shape ops --------------------------------------------------------
    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        orig = self.shape
        return Tensor._make(self.data.reshape(shape), (self,), lambda g: (g.reshape(orig),))

    def transpose(self, *axes) -> "Tensor":
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        inverse = tuple(np.argsort(axes))
        return Tensor._make(self.data.transpose(axes), (self,), lambda g: (g.transpose(inverse),))

    def swapaxes(self, a: int, b: int) -> "Tensor":
        return Tensor._make(np.swapaxes(self.data, a, b), (self,),
                            lambda g: (np.swapaxes(g, a, b),))

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        shape = self.shape

        def backward(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, shape).copy(),)

        return Tensor._make(self.data.sum(axis=axis, keepdims=keepdims), (self,), backward)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        n = self.data.size if axis is None else np.prod([self.shape[a] for a in np.atleast_1d(axis)])
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / float(n))

    # -- serialization ----------------------------------------------------
    def dump(self, fp) -> None:
        """Write the debugging dump: a shape line, then row-major decimal floats."""
        fp.write(" ".join(str(n) for n in self.shape) + "\n")
        flat = self.data.reshape(-1)
        fp.write(" ".join(repr(float(v)) for v in flat) + "\n")


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype or DEFAULT_DTYPE))


def parameter(data, name: str | None = None) -> Tensor:
    return Tensor(np.array(data, dtype=DEFAULT_DTYPE), requires_grad=True, name=name)


def load_dump(fp) -> np.ndarray:
    shape = tuple(int(n) for n in fp.readline().split())
    values = [float(v) for v in fp.readline().split()]
    return np.array(values).reshape(shape)


# -- differentiable functions ---------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul dimension mismatch: {a.shape} x {b.shape}")
    ad, bd = a.data, b.data
    if bd.ndim == 2:
        # shared weight: fold the leading axes into rows for one BLAS call
        a2 = ad.reshape(-1, ad.shape[-1])
        out = (a2 @ bd).reshape(*ad.shape[:-1], bd.shape[-1])

        def backward(g):
            g2 = g.reshape(-1, g.shape[-1])
            ga = (g2 @ bd.T).reshape(ad.shape) if a.requires_grad else None
            gb = a2.T @ g2 if b.requires_grad else None
            return ga, gb

        return Tensor._make(out, (a, b), backward)

    def backward(g):
        ga = g @ np.swapaxes(bd, -1, -2) if a.requires_grad else None
        gb = np.swapaxes(ad, -1, -2) @ g if b.requires_grad else None
        return (None if ga is None else _unbroadcast(ga, ad.shape),
                None if gb is None else _unbroadcast(gb, bd.shape))

    return Tensor._make(ad @ bd, (a, b), backward)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    arrays = [t.data for t in tensors]
    ax = axis % arrays[0].ndim
    bounds = np.cumsum([a.shape[ax] for a in arrays])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=ax))

    return Tensor._make(np.concatenate(arrays, axis=ax), tuple(tensors), backward)


def softmax_rows(x: Tensor, mask=None) -> Tensor:
    """Softmax over the last axis; masked positions are exactly zero.

    ``mask`` is a boolean array broadcastable to ``x`` (True = keep).
    """
    data = x.data
    if mask is not None:
        mask = np.broadcast_to(np.asarray(mask, dtype=bool), data.shape)
        valid = mask.any(axis=-1).reshape(-1)
        if not valid.all():
            row = int(np.flatnonzero(~valid)[0])
            raise ValueError(f"softmax row {row} is fully masked")
        shifted = np.where(mask, data, -np.inf)
    else:
        shifted = data
    shifted = shifted - shifted.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return Tensor._make(y, (x,), backward)


def rms_norm(x: Tensor, gain: Tensor, eps: float = RMS_EPS) -> Tensor:
    if x.shape[-1] == 0:
        raise ValueError("rms_norm needs a non-empty feature axis")
    xd, gd = x.data, gain.data
    r = 1.0 / np.sqrt((xd * xd).mean(axis=-1, keepdims=True) + eps)
    n = xd * r

    def backward(g):
        gn = g * gd
        gx = r * (gn - n * (gn * n).mean(axis=-1, keepdims=True))
        return gx, _unbroadcast(g * n, gd.shape)

    return Tensor._make(n * gd, (x, gain), backward)


_GELU_C = np.sqrt(2.0 / np.pi)


def gelu(x: Tensor) -> Tensor:
    """tanh-approximated GELU."""
    xd = x.data
    x2 = xd * xd
    t = np.tanh(_GELU_C * xd * (1.0 + 0.044715 * x2))
    y = 0.5 * xd * (1.0 + t)

    def backward(g):
        dinner = _GELU_C * (1.0 + 3 * 0.044715 * x2)
        return (g * (0.5 * (1.0 + t) + 0.5 * xd * (1.0 - t * t) * dinner),)

    return Tensor._make(y, (x,), backward)


def embedding(weight: Tensor, ids) -> Tensor:
    ids = np.asarray(ids, dtype=np.int64)
    vocab, dtype = weight.shape[0], weight.dtype

    def backward(g):
        flat = ids.reshape(-1)
        onehot = np.zeros((flat.size, vocab), dtype=dtype)
        onehot[np.arange(flat.size), flat] = 1.0
        return (onehot.T @ g.reshape(flat.size, -1),)

    return Tensor._make(weight.data[ids], (weight,), backward)


def cross_entropy(logits: Tensor, targets, mask=None) -> Tensor:
    """Mean cross-entropy over positions where ``mask`` is True."""
    targets = np.asarray(targets, dtype=np.int64)
    ld = logits.data
    if mask is None:
        mask = np.ones(targets.shape, dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    count = int(mask.sum())
    if count == 0:
        raise ValueError("cross_entropy: every position is padded")
    shifted = ld - ld.max(axis=-1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    logp = shifted - logz
    picked = np.take_along_axis(logp, targets[..., None], axis=-1)[..., 0]
    loss = -(picked * mask).sum() / count

    def backward(g):
        p = np.exp(logp)
        onehot = np.zeros_like(p)
        np.put_along_axis(onehot, targets[..., None], 1.0, axis=-1)
        return (g * (p - onehot) * (mask[..., None] / count),)

    return Tensor._make(np.asarray(loss, dtype=ld.dtype), (logits,), backward)


def dropout(x: Tensor, p: float, rng: np.random.Generator | None) -> Tensor:
    if p <= 0.0 or rng is None:
        return x
    keep = (rng.random(x.shape) >= p).astype(x.dtype) / (1.0 - p)
    return x * Tensor(keep)


# -- gradient checking ----------------------------------------------------

@dataclass
class FiniteDiffReport:
    max_rel_error: float
    mean_rel_error: float
    n_checked: int
    worst: tuple[str, int] | None = None
    max_abs_error: float = 0.0

    def passed(self, tol: float) -> bool:
        return self.max_rel_error < tol


def finite_diff_check(f: Callable[[], Tensor], params: Iterable[Tensor], step: float = 1e-3,
                      n_samples: int | None = None, seed: int = 0,
                      floor: float = 1e-8) -> FiniteDiffReport:
    """Compare analytic gradients of ``f`` to central differences.

    ``f`` rebuilds the graph from ``params`` on each call. When ``n_samples``
    is given, that many coordinates are drawn uniformly from the flattened
    parameter set; otherwise every coordinate is checked.

    The relative error is ``|a - n| / max(|a|, |n|, floor)``. Central
    differences carry an O(step**2) truncation error that does not shrink
    with the gradient, so near-zero coordinates need a nonzero ``floor``.
    """
    params = list(params)
    for p in params:
        p.grad = None
    loss = f()
    loss.backward()
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]

    sizes = np.array([p.data.size for p in params])
    total = int(sizes.sum())
    if n_samples is None or n_samples >= total:
        flat = np.arange(total)
    else:
        flat = np.sort(np.random.default_rng(seed).choice(total, size=n_samples, replace=False))
    offsets = np.concatenate([[0], np.cumsum(sizes)])

    errors = []
    max_abs = 0.0
    worst, worst_err = None, -1.0
    for k in flat:
        pi = int(np.searchsorted(offsets, k, side="right") - 1)
        j = int(k - offsets[pi])
        view = params[pi].data.reshape(-1)
        orig = view[j]
        view[j] = orig + step
        up = f().item()
        view[j] = orig - step
        down = f().item()
        view[j] = orig
        numeric = (up - down) / (2 * step)
        a = float(analytic[pi].reshape(-1)[j])
        err = abs(a - numeric) / max(abs(a), abs(numeric), floor)
        max_abs = max(max_abs, abs(a - numeric))
        errors.append(err)
        if err > worst_err:
            worst_err, worst = err, (params[pi].name or f"param{pi}", j)
    errors = np.array(errors) if errors else np.zeros(1)
    return FiniteDiffReport(float(errors.max()), float(errors.mean()), len(flat), worst, max_abs)
