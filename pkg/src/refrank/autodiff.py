"""Reverse-mode automatic differentiation over numpy arrays.

Covers exactly the operations the attention summarizer needs: broadcasted
arithmetic, batched matmul, reductions, shape moves, masked row-softmax,
layer normalization, and scaled dot-product attention.  Values are float32
by default; float64 inputs stay float64, which is what finite-difference
gradient checking runs in.

Backward walks a ComputationTape: the nodes of the forward graph in
execution order, traversed in exact reverse, accumulating gradients
additively.  Tapes are per-graph, so independent forwards may run
concurrently.  All reductions use numpy's fixed within-row order, so
results do not depend on thread count.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

_DEBUG_FINITE = False


def set_debug_finite(enabled: bool) -> None:
    """Toggle a finite-values assertion after every forward op."""
    global _DEBUG_FINITE
    _DEBUG_FINITE = bool(enabled)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """A numpy array plus a gradient slot and the edges that produced it."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}{flag})"

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def _accumulate(self, g: np.ndarray) -> None:
        g = _unbroadcast(np.asarray(g), self.data.shape)
        self.grad = g if self.grad is None else self.grad + g

    def backward(self) -> None:
        """Populate gradients of everything this scalar depends on."""
        if self.data.size != 1:
            raise ValueError(
                f"backward needs a scalar loss, got shape {self.data.shape}")
        tape = ComputationTape.trace(self)
        self._accumulate(np.ones_like(self.data))
        for node in reversed(tape.nodes):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- arithmetic ----------------------------------------------------

    def _coerce(self, other) -> "Tensor":
        if isinstance(other, Tensor):
            return other
        return Tensor(np.asarray(other, dtype=self.data.dtype))

    def __add__(self, other) -> "Tensor":
        other = self._coerce(other)

        def bw(g, a=self, b=other):
            if a.requires_grad:
                a._accumulate(g)
            if b.requires_grad:
                b._accumulate(g)

        return _node(self.data + other.data, (self, other), bw, "add")

    __radd__ = __add__

    def __neg__(self) -> "Tensor":
        def bw(g, a=self):
            if a.requires_grad:
                a._accumulate(-g)

        return _node(-self.data, (self,), bw, "neg")

    def __sub__(self, other) -> "Tensor":
        return self + (-self._coerce(other))

    def __rsub__(self, other) -> "Tensor":
        return self._coerce(other) + (-self)

    def __mul__(self, other) -> "Tensor":
        other = self._coerce(other)

        def bw(g, a=self, b=other):
            if a.requires_grad:
                a._accumulate(g * b.data)
            if b.requires_grad:
                b._accumulate(g * a.data)

        return _node(self.data * other.data, (self, other), bw, "mul")

    __rmul__ = __mul__

    def __truediv__(self, other) -> "Tensor":
        return self * (self._coerce(other) ** -1.0)

    def __rtruediv__(self, other) -> "Tensor":
        return self._coerce(other) * (self ** -1.0)

    def __pow__(self, exponent: float) -> "Tensor":
        if isinstance(exponent, Tensor):
            raise TypeError("only scalar exponents are supported")
        p = float(exponent)

        def bw(g, a=self):
            if a.requires_grad:
                a._accumulate(g * p * a.data ** (p - 1.0))

        return _node(self.data ** p, (self,), bw, "pow")

    def __matmul__(self, other) -> "Tensor":
        other = self._coerce(other)
        if self.ndim < 2 or other.ndim < 2:
            raise ValueError("matmul operands must have at least 2 dimensions")
        if self.shape[-1] != other.shape[-2]:
            raise ValueError(
                f"matmul inner dimensions disagree: {self.shape} @ {other.shape}")

        def bw(g, a=self, b=other):
            if a.requires_grad:
                a._accumulate(g @ np.swapaxes(b.data, -1, -2))
            if b.requires_grad:
                b._accumulate(np.swapaxes(a.data, -1, -2) @ g)

        return _node(self.data @ other.data, (self, other), bw, "matmul")

    def exp(self) -> "Tensor":
        out_data = np.exp(self.data)

        def bw(g, a=self):
            if a.requires_grad:
                a._accumulate(g * out_data)

        return _node(out_data, (self,), bw, "exp")

    def sqrt(self) -> "Tensor":
        return self ** 0.5

    # -- reductions and shape moves ------------------------------------

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        def bw(g, a=self):
            if not a.requires_grad:
                return
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            a._accumulate(np.broadcast_to(g, a.data.shape))

        return _node(self.data.sum(axis=axis, keepdims=keepdims),
                     (self,), bw, "sum")

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        count = self.data.size if axis is None else np.prod(
            [self.data.shape[i] for i in np.atleast_1d(axis)])
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / float(count))

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])

        def bw(g, a=self):
            if a.requires_grad:
                a._accumulate(g.reshape(a.data.shape))

        return _node(self.data.reshape(shape), (self,), bw, "reshape")

    def swapaxes(self, axis1: int, axis2: int) -> "Tensor":
        def bw(g, a=self):
            if a.requires_grad:
                a._accumulate(np.swapaxes(g, axis1, axis2))

        return _node(np.swapaxes(self.data, axis1, axis2),
                     (self,), bw, "swapaxes")

    def broadcast_to(self, shape) -> "Tensor":
        def bw(g, a=self):
            if a.requires_grad:
                a._accumulate(g)

        return _node(np.broadcast_to(self.data, shape).copy(),
                     (self,), bw, "broadcast_to")

    def __getitem__(self, index) -> "Tensor":
        def bw(g, a=self):
            if not a.requires_grad:
                return
            buf = np.zeros_like(a.data)
            np.add.at(buf, index, g)
            a._accumulate(buf)

        return _node(self.data[index], (self,), bw, "getitem")


def _node(data: np.ndarray, parents: tuple[Tensor, ...], backward,
          name: str) -> Tensor:
    if _DEBUG_FINITE and not np.all(np.isfinite(data)):
        raise FloatingPointError(f"non-finite values produced by {name}")
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    return out


@dataclass
class ComputationTape:
    """Forward graph nodes in execution order; backward walks it reversed."""

    nodes: list[Tensor] = field(default_factory=list)

    @classmethod
    def trace(cls, root: Tensor) -> "ComputationTape":
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
            for parent in node._parents:
                if id(parent) not in seen:
                    stack.append((parent, False))
        return cls(order)


def concat(tensors: list[Tensor], axis: int = 0) -> Tensor:
    """Join tensors along an axis; backward splits the gradient back."""
    if not tensors:
        raise ValueError("concat needs at least one tensor")
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def bw(g, parts=tuple(tensors)):
        moved = np.moveaxis(g, axis, 0)
        for t, start, stop in zip(parts, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                t._accumulate(np.moveaxis(moved[start:stop], 0, axis))

    return _node(np.concatenate([t.data for t in tensors], axis=axis),
                 tuple(tensors), bw, "concat")


def softmax_rows(x: Tensor, mask: np.ndarray | None = None) -> Tensor:
    """Row softmax over the last axis, stabilized by row-max subtraction.

    Masked-out positions get weight exactly 0; a fully masked row is an
    error because it has no distribution to normalize.
    """
    if x.shape[-1] < 1:
        raise ValueError("softmax_rows needs a nonempty last dimension")
    data = x.data
    if mask is not None:
        valid = np.broadcast_to(np.asarray(mask, dtype=bool), data.shape)
        if not valid.any(axis=-1).all():
            raise ValueError("softmax_rows: fully masked row")
        data = np.where(valid, data, -np.inf)
    shift = data.max(axis=-1, keepdims=True)
    exps = np.exp(data - shift)
    probs = exps / exps.sum(axis=-1, keepdims=True)

    def bw(g, a=x):
        if a.requires_grad:
            inner = (g * probs).sum(axis=-1, keepdims=True)
            a._accumulate((g - inner) * probs)

    return _node(probs, (x,), bw, "softmax_rows")


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor,
               eps: float = 1e-5) -> Tensor:
    """Zero-mean unit-variance over the last axis, then affine."""
    if x.shape[-1] < 2:
        raise ValueError("layer_norm needs a last dimension of at least 2")
    centered = x - x.mean(axis=-1, keepdims=True)
    var = (centered * centered).mean(axis=-1, keepdims=True)
    return centered * ((var + eps) ** -0.5) * gain + bias


def attention(q: Tensor, k: Tensor, v: Tensor,
              mask: np.ndarray | None = None) -> tuple[Tensor, Tensor]:
    """Scaled dot-product attention; returns (output, score rows).

    Score rows sum to 1 over valid key positions.  The mask marks valid
    keys and broadcasts against the score shape.
    """
    d_h = q.shape[-1]
    logits = (q @ k.swapaxes(-1, -2)) * (1.0 / float(np.sqrt(d_h)))
    scores = softmax_rows(logits, mask)
    return scores @ v, scores


@dataclass(frozen=True)
class GradcheckFailure:
    param: str
    index: tuple[int, ...]
    analytic: float
    numeric: float
    rel_error: float


@dataclass
class GradcheckReport:
    checked: int
    max_rel_error: float
    failures: list[GradcheckFailure]

    @property
    def passed(self) -> bool:
        return not self.failures


def gradcheck(f, params: list[Tensor], epsilon: float = 1e-4,
              tolerance: float = 1e-4, sample: int | None = 128,
              seed: int = 0, names: list[str] | None = None) -> GradcheckReport:
    """Compare analytic gradients of f() against central differences.

    f rebuilds its forward graph from params on every call and returns a
    scalar Tensor.  Parameters must be float64: finite differences at
    epsilon=1e-4 are meaningless in float32.  sample=None checks every
    scalar parameter; otherwise a seeded random sample of that size.
    """
    for p in params:
        if p.data.dtype != np.float64:
            raise ValueError("gradcheck requires float64 parameters")
        p.grad = None
    loss = f()
    if loss.data.size != 1:
        raise ValueError("gradcheck target must be scalar")
    loss.backward()
    analytic = [p.grad if p.grad is not None else np.zeros_like(p.data)
                for p in params]
    for p in params:
        p.grad = None

    coords = [(i, j) for i, p in enumerate(params) for j in range(p.data.size)]
    if sample is not None and sample < len(coords):
        rng = np.random.default_rng(seed)
        chosen = rng.choice(len(coords), size=sample, replace=False)
        coords = [coords[c] for c in chosen]

    failures = []
    max_rel = 0.0
    for i, j in coords:
        flat = params[i].data.reshape(-1)
        original = flat[j]
        flat[j] = original + epsilon
        plus = float(f().data)
        flat[j] = original - epsilon
        minus = float(f().data)
        flat[j] = original
        numeric = (plus - minus) / (2.0 * epsilon)
        a = float(analytic[i].reshape(-1)[j])
        err = abs(a - numeric)
        rel = err / max(abs(a), abs(numeric), 1e-12)
        max_rel = max(max_rel, rel)
        # Absolute floor guards finite-difference roundoff when both
        # gradients are essentially zero.
        if err > 1e-7 and rel > tolerance:
            name = (names[i] if names else f"params[{i}]")
            index = np.unravel_index(j, params[i].data.shape)
            failures.append(GradcheckFailure(name, tuple(int(x) for x in index),
                                             a, numeric, rel))
    return GradcheckReport(checked=len(coords), max_rel_error=max_rel,
                           failures=failures)
