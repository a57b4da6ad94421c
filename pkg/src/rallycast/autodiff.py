"""Dense float64 tensors with taped reverse-mode differentiation.

Small by design: rank <= 3, numpy storage, one backward closure per
primitive. Every primitive checks its output for NaN/Inf and raises
NumericHealthError on violation, so a diverging computation fails at the op
that produced the bad values instead of at the loss.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

MAX_RANK = 3
NEG_MASK_VALUE = -1e30  # finite stand-in for -inf in attention masks


class NumericHealthError(RuntimeError):
    """A primitive produced NaN or Inf."""


class Tensor:
    """Node in the computation graph. data is float64, row-major, rank <= 3."""

    __slots__ = ("data", "grad", "_parents", "_bwd")

    def __init__(self, data, _parents: tuple = (), _bwd: Callable | None = None):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim > MAX_RANK:
            raise ValueError(f"rank {arr.ndim} exceeds the rank-{MAX_RANK} cap")
        self.data = arr
        self.grad: np.ndarray | None = None
        self._parents = _parents
        self._bwd = _bwd

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, leaf={self._bwd is None})"

    # operator sugar; scalars are promoted to constant tensors
    def __add__(self, other):
        return add(self, _wrap(other))

    def __radd__(self, other):
        return add(_wrap(other), self)

    def __sub__(self, other):
        return sub(self, _wrap(other))

    def __rsub__(self, other):
        return sub(_wrap(other), self)

    def __mul__(self, other):
        return mul(self, _wrap(other))

    def __rmul__(self, other):
        return mul(_wrap(other), self)

    def __truediv__(self, other):
        return div(self, _wrap(other))

    def __rtruediv__(self, other):
        return div(_wrap(other), self)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return tslice(self, key)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: tuple, bwd: Callable, op: str) -> Tensor:
    if not np.all(np.isfinite(data)):
        raise NumericHealthError(f"{op} produced non-finite values")
    return Tensor(data, _parents=parents, _bwd=bwd)


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum gradient over the axes numpy broadcast during the forward op."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g.reshape(shape)


class Tape:
    """Topologically ordered record of the graph reachable from a root node."""

    def __init__(self, root: Tensor):
        nodes: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(root, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                nodes.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self.nodes = nodes  # parents precede children

    def __len__(self) -> int:
        return len(self.nodes)


def backward(loss: Tensor) -> Tape:
    """Accumulate d(loss)/d(node) into .grad for every node reachable from loss."""
    if loss.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    tape = Tape(loss)
    _accumulate(loss, np.ones_like(loss.data))
    for node in reversed(tape.nodes):
        if node._bwd is not None:
            node._bwd(node.grad)
    return tape


def grad_of(param: Tensor) -> np.ndarray:
    """Gradient of the last backward pass; zeros if the parameter was unused."""
    return param.grad if param.grad is not None else np.zeros_like(param.data)


# ---------------------------------------------------------------------------
# primitives
# ---------------------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    out_data = a.data + b.data

    def bwd(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(g, b.shape))

    return _make(out_data, (a, b), bwd, "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    out_data = a.data - b.data

    def bwd(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(-g, b.shape))

    return _make(out_data, (a, b), bwd, "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    out_data = a.data * b.data

    def bwd(g):
        _accumulate(a, _unbroadcast(g * b.data, a.shape))
        _accumulate(b, _unbroadcast(g * a.data, b.shape))

    return _make(out_data, (a, b), bwd, "mul")


def div(a: Tensor, b: Tensor) -> Tensor:
    out_data = a.data / b.data

    def bwd(g):
        _accumulate(a, _unbroadcast(g / b.data, a.shape))
        _accumulate(b, _unbroadcast(-g * a.data / (b.data * b.data), b.shape))

    return _make(out_data, (a, b), bwd, "div")


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    out_data = a.data * c

    def bwd(g):
        _accumulate(a, g * c)

    return _make(out_data, (a,), bwd, "scale")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError(f"matmul expects rank-2 operands, got {a.shape} @ {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    out_data = a.data @ b.data

    def bwd(g):
        _accumulate(a, g @ b.data.T)
        _accumulate(b, a.data.T @ g)

    return _make(out_data, (a, b), bwd, "matmul")


def transpose(a: Tensor) -> Tensor:
    if a.ndim != 2:
        raise ValueError("transpose expects a rank-2 tensor")
    out_data = a.data.T.copy()

    def bwd(g):
        _accumulate(a, g.T)

    return _make(out_data, (a,), bwd, "transpose")


def exp(a: Tensor) -> Tensor:
    with np.errstate(over="ignore"):  # overflow is reported as a health error
        out_data = np.exp(a.data)

    def bwd(g):
        _accumulate(a, g * out_data)

    return _make(out_data, (a,), bwd, "exp")


def log(a: Tensor) -> Tensor:
    with np.errstate(divide="ignore", invalid="ignore"):
        out_data = np.log(a.data)

    def bwd(g):
        _accumulate(a, g / a.data)

    return _make(out_data, (a,), bwd, "log")


def sqrt(a: Tensor) -> Tensor:
    out_data = np.sqrt(a.data)

    def bwd(g):
        _accumulate(a, g * 0.5 / out_data)

    return _make(out_data, (a,), bwd, "sqrt")


def tanh(a: Tensor) -> Tensor:
    out_data = np.tanh(a.data)

    def bwd(g):
        _accumulate(a, g * (1.0 - out_data * out_data))

    return _make(out_data, (a,), bwd, "tanh")


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    out_data = np.empty_like(x)
    pos = x >= 0
    out_data[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out_data[~pos] = ex / (1.0 + ex)

    def bwd(g):
        _accumulate(a, g * out_data * (1.0 - out_data))

    return _make(out_data, (a,), bwd, "sigmoid")


def relu(a: Tensor) -> Tensor:
    keep = a.data > 0
    out_data = np.where(keep, a.data, 0.0)

    def bwd(g):
        _accumulate(a, g * keep)

    return _make(out_data, (a,), bwd, "relu")


def clamp_min(a: Tensor, floor: float) -> Tensor:
    keep = a.data > floor
    out_data = np.where(keep, a.data, floor)

    def bwd(g):
        _accumulate(a, g * keep)

    return _make(out_data, (a,), bwd, "clamp_min")


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    inside = (a.data > lo) & (a.data < hi)
    out_data = np.clip(a.data, lo, hi)

    def bwd(g):
        _accumulate(a, g * inside)

    return _make(out_data, (a,), bwd, "clip")


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out_data = a.data.sum(axis=axis, keepdims=keepdims)

    def bwd(g):
        if axis is None:
            _accumulate(a, np.broadcast_to(g, a.shape).copy() if np.ndim(g) else np.full(a.shape, g))
        else:
            gg = g if keepdims else np.expand_dims(g, axis)
            _accumulate(a, np.broadcast_to(gg, a.shape).copy())

    return _make(out_data, (a,), bwd, "sum")


def tmean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = a.size if axis is None else a.shape[axis]
    return scale(tsum(a, axis=axis, keepdims=keepdims), 1.0 / n)


def concat(parts: Sequence[Tensor], axis: int = 0) -> Tensor:
    parts = list(parts)
    out_data = np.concatenate([p.data for p in parts], axis=axis)
    sizes = [p.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def bwd(g):
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(lo, hi)
            _accumulate(p, g[tuple(idx)])

    return _make(out_data, tuple(parts), bwd, "concat")


def tslice(a: Tensor, key) -> Tensor:
    out_data = a.data[key]
    if np.isscalar(out_data) or out_data.ndim == 0:
        out_data = np.asarray(out_data)

    def bwd(g):
        full = np.zeros_like(a.data)
        full[key] = g
        _accumulate(a, full)

    return _make(out_data.copy(), (a,), bwd, "slice")


def embedding_lookup(table: Tensor, ids) -> Tensor:
    ids = np.asarray(ids, dtype=np.int64)
    if ids.ndim != 1:
        raise ValueError("embedding_lookup expects a 1-D id vector")
    if ids.min(initial=0) < 0 or (ids.size and ids.max() >= table.shape[0]):
        raise ValueError("embedding id out of range")
    out_data = table.data[ids]

    def bwd(g):
        full = np.zeros_like(table.data)
        np.add.at(full, ids, g)
        _accumulate(table, full)

    return _make(out_data, (table,), bwd, "embedding_lookup")


def masked_fill(a: Tensor, mask: np.ndarray, value: float = NEG_MASK_VALUE) -> Tensor:
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != a.shape:
        raise ValueError(f"mask shape {mask.shape} does not match tensor shape {a.shape}")
    out_data = np.where(mask, value, a.data)

    def bwd(g):
        _accumulate(a, np.where(mask, 0.0, g))

    return _make(out_data, (a,), bwd, "masked_fill")


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    # shift by the (constant) rowwise max; softmax is shift-invariant, so
    # treating the shift as a constant leaves the gradient exact
    shifted = sub(a, Tensor(a.data.max(axis=axis, keepdims=True)))
    e = exp(shifted)
    return div(e, tsum(e, axis=axis, keepdims=True))


def layer_norm(a: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then affine."""
    d = a.shape[-1]
    mu = tmean(a, axis=-1, keepdims=True)
    centered = sub(a, mu)
    var = tmean(mul(centered, centered), axis=-1, keepdims=True)
    normed = div(centered, sqrt(add(var, Tensor(np.full(var.shape, eps)))))
    if gain.shape != (d,) or bias.shape != (d,):
        raise ValueError("layer_norm gain/bias must match the last axis")
    return add(mul(normed, gain), bias)


def dropout(a: Tensor, rate: float, rng: np.random.Generator | None) -> Tensor:
    """Inverted dropout; rng=None means eval mode (identity)."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if rng is None or rate == 0.0:
        return a
    keep = rng.random(a.shape) >= rate
    factor = keep / (1.0 - rate)
    out_data = a.data * factor

    def bwd(g):
        _accumulate(a, g * factor)

    return _make(out_data, (a,), bwd, "dropout")


# ---------------------------------------------------------------------------
# finite-difference gradient checking
# ---------------------------------------------------------------------------

def gradient_check(
    f: Callable[[list[Tensor]], Tensor],
    arrays: Sequence[np.ndarray],
    eps: float = 1e-5,
) -> float:
    """Max relative error between taped gradients and central differences.

    f maps a list of leaf tensors to a scalar tensor and must be pure: the
    numeric side re-evaluates it at perturbed copies of the inputs. The
    relative error of each element is |analytic - numeric| divided by
    max(|analytic|, |numeric|, 1e-8).
    """
    leaves = [Tensor(np.array(a, dtype=np.float64)) for a in arrays]
    backward(f(leaves))
    analytic = [grad_of(t) for t in leaves]

    worst = 0.0
    for i, base in enumerate(arrays):
        base = np.array(base, dtype=np.float64)
        numeric = np.zeros_like(base)
        flat = base.reshape(-1)
        num_flat = numeric.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + eps
            hi = float(f([Tensor(a) for a in _replace(arrays, i, base)]).data)
            flat[j] = orig - eps
            lo = float(f([Tensor(a) for a in _replace(arrays, i, base)]).data)
            flat[j] = orig
            num_flat[j] = (hi - lo) / (2.0 * eps)
        denom = np.maximum(np.maximum(np.abs(analytic[i]), np.abs(numeric)), 1e-8)
        err = float(np.max(np.abs(analytic[i] - numeric) / denom)) if base.size else 0.0
        worst = max(worst, err)
    return worst


def _replace(arrays: Sequence[np.ndarray], i: int, new: np.ndarray) -> list[np.ndarray]:
    out = [np.array(a, dtype=np.float64) for a in arrays]
    out[i] = new
    return out
