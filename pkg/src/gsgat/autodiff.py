"""Minimal reverse-mode tape over float64 numpy matrices.

Everything trainable in this package is built from the primitives below:
matmul, broadcasting add/mul, pointwise nonlinearities, masked row softmax,
log-sum-exp, reductions, gather/slice/concat. Each primitive wires a closure
into the tape; `backward` walks the tape once in reverse topological order.
The networks are small and static, so this beats pulling in a full ML
framework while keeping gradients exact (checked against central finite
differences, see `finite_diff_grad`).

Also home to the seeded random stream (`RngStream`, counter-based Philox so
sequences are reproducible across platforms) and the named parameter/gradient
container (`ParamStore`).
"""

from __future__ import annotations

import hashlib
from typing import Callable, Iterable

import numpy as np

MACHINE_EPS = float(np.finfo(np.float64).eps)

_U64 = (1 << 64) - 1


class ShapeError(ValueError):
    """Operand shapes violate an operation's contract."""


class ContractError(ValueError):
    """An operation precondition other than shapes was violated."""


class DegenerateRowError(ValueError):
    """A softmax row had every entry masked out."""


# ---------------------------------------------------------------------------
# Tape
# ---------------------------------------------------------------------------


class Tensor:
    """A float64 array plus the tape hooks needed for reverse-mode gradients.

    Tensors whose subgraph contains no trainable leaf are created without
    parents, so constant branches (e.g. a frozen target network) cost nothing
    at backward time.
    """

    __slots__ = ("value", "grad", "requires_grad", "_parents", "_backward_fn")

    def __init__(self, value, requires_grad: bool = False):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad: np.ndarray | None = np.zeros_like(self.value) if requires_grad else None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward_fn: Callable[[np.ndarray], None] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.value)
        self.grad += g

    def __repr__(self) -> str:  # pragma: no cover
        return f"Tensor(shape={self.value.shape}, requires_grad={self.requires_grad})"

    # operator sugar; all heavy lifting lives in the module functions
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

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(value: np.ndarray, parents: tuple[Tensor, ...], backward_fn) -> Tensor:
    """Create a tape node, pruning the graph when nothing upstream trains."""
    if not any(p.requires_grad for p in parents):
        return Tensor(value)
    out = Tensor(value)
    out.requires_grad = True
    out._parents = parents
    out._backward_fn = backward_fn
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to `shape`."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def add(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    out_val = a.value + b.value

    def bw(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.value.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.value.shape))

    return _make(out_val, (a, b), bw)


def sub(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    out_val = a.value - b.value

    def bw(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.value.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g, b.value.shape))

    return _make(out_val, (a, b), bw)


def mul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    out_val = a.value * b.value

    def bw(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.value, a.value.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.value, b.value.shape))

    return _make(out_val, (a, b), bw)


def matmul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    if a.value.ndim != 2 or b.value.ndim != 2:
        raise ShapeError(f"matmul expects 2-d operands, got {a.value.shape} and {b.value.shape}")
    if a.value.shape[1] != b.value.shape[0]:
        raise ShapeError(f"matmul inner dims differ: {a.value.shape} x {b.value.shape}")
    out_val = a.value @ b.value

    def bw(g):
        if a.requires_grad:
            a._accumulate(g @ b.value.T)
        if b.requires_grad:
            b._accumulate(a.value.T @ g)

    return _make(out_val, (a, b), bw)


def transpose(a) -> Tensor:
    a = _wrap(a)

    def bw(g):
        if a.requires_grad:
            a._accumulate(g.T)

    return _make(a.value.T.copy(), (a,), bw)


def relu(a) -> Tensor:
    a = _wrap(a)
    keep = a.value > 0.0

    def bw(g):
        if a.requires_grad:
            a._accumulate(g * keep)

    return _make(np.where(keep, a.value, 0.0), (a,), bw)


def tanh(a) -> Tensor:
    a = _wrap(a)
    out_val = np.tanh(a.value)

    def bw(g):
        if a.requires_grad:
            a._accumulate(g * (1.0 - out_val * out_val))

    return _make(out_val, (a,), bw)


def exp(a) -> Tensor:
    a = _wrap(a)
    out_val = np.exp(a.value)

    def bw(g):
        if a.requires_grad:
            a._accumulate(g * out_val)

    return _make(out_val, (a,), bw)


def square(a) -> Tensor:
    a = _wrap(a)

    def bw(g):
        if a.requires_grad:
            a._accumulate(g * 2.0 * a.value)

    return _make(a.value * a.value, (a,), bw)


def sqrt0(a) -> Tensor:
    """Elementwise sqrt of a non-negative tensor with zero gradient at zero.

    Entries that are exactly zero stay zero under the perturbations that
    arise here (masked-out rows), so the directional derivative is zero;
    regular entries get the usual 1 / (2 sqrt) factor.
    """
    a = _wrap(a)
    out_val = np.sqrt(a.value)

    def bw(g):
        if a.requires_grad:
            denom = np.where(out_val > 0.0, 2.0 * out_val, 1.0)
            a._accumulate(np.where(out_val > 0.0, g / denom, 0.0))

    return _make(out_val, (a,), bw)


def reduce_sum(a, axis: int | None = None, keepdims: bool = False) -> Tensor:
    a = _wrap(a)
    out_val = a.value.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if a.requires_grad:
            gg = np.asarray(g)
            if axis is not None and not keepdims:
                gg = np.expand_dims(gg, axis)
            a._accumulate(np.broadcast_to(gg, a.value.shape).copy())

    return _make(out_val, (a,), bw)


def mean(a, axis: int | None = None, keepdims: bool = False) -> Tensor:
    a = _wrap(a)
    n = a.value.size if axis is None else a.value.shape[axis]
    return mul(reduce_sum(a, axis=axis, keepdims=keepdims), 1.0 / n)


def reduce_max(a, axis: int, keepdims: bool = False) -> Tensor:
    """Max along an axis; the gradient flows to the first argmax per slice."""
    a = _wrap(a)
    out_val = a.value.max(axis=axis, keepdims=keepdims)
    idx = a.value.argmax(axis=axis)

    def bw(g):
        if a.requires_grad:
            gg = np.asarray(g)
            if not keepdims:
                gg = np.expand_dims(gg, axis)
            full = np.zeros_like(a.value)
            np.put_along_axis(full, np.expand_dims(idx, axis), gg, axis=axis)
            a._accumulate(full)

    return _make(out_val, (a,), bw)


def logsumexp(a, axis: int, keepdims: bool = True) -> Tensor:
    a = _wrap(a)
    m = a.value.max(axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    out_val = np.log(np.exp(a.value - m).sum(axis=axis, keepdims=True)) + m
    soft = np.exp(a.value - out_val)
    if not keepdims:
        out_val = np.squeeze(out_val, axis=axis)

    def bw(g):
        if a.requires_grad:
            gg = np.asarray(g)
            if not keepdims:
                gg = np.expand_dims(gg, axis)
            a._accumulate(gg * soft)

    return _make(out_val, (a,), bw)


def softmax_rows(m, mask: np.ndarray | None = None, allow_empty: bool = False) -> Tensor:
    """Row-wise softmax, optionally restricted to a boolean mask.

    Masked entries come out exactly zero. Numerically stabilized by
    subtracting the per-row max over unmasked entries. A fully masked row is
    an error unless `allow_empty`, in which case it yields a zero row (used
    for dead graph nodes).
    """
    m = _wrap(m)
    v = m.value
    if v.ndim != 2:
        raise ShapeError(f"softmax_rows expects a matrix, got shape {v.shape}")
    if mask is None:
        mask_arr = np.ones(v.shape, dtype=bool)
    else:
        mask_arr = np.asarray(mask, dtype=bool)
        if mask_arr.shape != v.shape:
            raise ShapeError(f"mask shape {mask_arr.shape} != input shape {v.shape}")
    row_has = mask_arr.any(axis=1)
    if not allow_empty and not row_has.all():
        bad = int(np.flatnonzero(~row_has)[0])
        raise DegenerateRowError(f"softmax row {bad} has no unmasked entries")

    shifted = np.where(mask_arr, v, -np.inf)
    row_max = np.where(row_has, shifted.max(axis=1), 0.0)[:, None]
    e = np.where(mask_arr, np.exp(shifted - row_max), 0.0)
    denom = e.sum(axis=1, keepdims=True)
    out_val = np.divide(e, denom, out=np.zeros_like(e), where=denom > 0)

    def bw(g):
        if m.requires_grad:
            inner = (g * out_val).sum(axis=1, keepdims=True)
            m._accumulate(out_val * (g - inner))

    return _make(out_val, (m,), bw)


def gather_cols(a, idx) -> Tensor:
    """Pick one column per row: out[i, 0] = a[i, idx[i]]."""
    a = _wrap(a)
    idx = np.asarray(idx, dtype=np.intp)
    if idx.ndim != 1 or idx.shape[0] != a.value.shape[0]:
        raise ShapeError(f"gather_cols index shape {idx.shape} does not match {a.value.shape}")
    rows = np.arange(a.value.shape[0])
    out_val = a.value[rows, idx][:, None]

    def bw(g):
        if a.requires_grad:
            full = np.zeros_like(a.value)
            full[rows, idx] = np.asarray(g)[:, 0]
            a._accumulate(full)

    return _make(out_val, (a,), bw)


def take_rows(a, start: int, stop: int) -> Tensor:
    a = _wrap(a)
    out_val = a.value[start:stop].copy()

    def bw(g):
        if a.requires_grad:
            full = np.zeros_like(a.value)
            full[start:stop] = g
            a._accumulate(full)

    return _make(out_val, (a,), bw)


def concat_rows(parts: Iterable) -> Tensor:
    parts = [_wrap(p) for p in parts]
    sizes = [p.value.shape[0] for p in parts]
    out_val = np.concatenate([p.value for p in parts], axis=0)
    offsets = np.cumsum([0] + sizes)

    def bw(g):
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            if p.requires_grad:
                p._accumulate(g[lo:hi])

    return _make(out_val, tuple(parts), bw)


def concat_cols(parts: Iterable) -> Tensor:
    parts = [_wrap(p) for p in parts]
    sizes = [p.value.shape[1] for p in parts]
    out_val = np.concatenate([p.value for p in parts], axis=1)
    offsets = np.cumsum([0] + sizes)

    def bw(g):
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            if p.requires_grad:
                p._accumulate(g[:, lo:hi])

    return _make(out_val, tuple(parts), bw)


def rownorm(a) -> Tensor:
    """Per-row L2 norm as an (N, 1) column; zero rows get zero gradient.

    sqrt is not differentiable at 0, but a row that is identically zero stays
    zero under parameter perturbation here (dead-agent rows), so the correct
    directional derivative is 0 and that is what finite differences measure.
    """
    a = _wrap(a)
    sq = (a.value * a.value).sum(axis=1, keepdims=True)
    out_val = np.sqrt(sq)

    def bw(g):
        if a.requires_grad:
            denom = np.where(out_val > 0.0, out_val, 1.0)
            a._accumulate(np.where(out_val > 0.0, g / denom, 0.0) * a.value)

    return _make(out_val, (a,), bw)


NONLINEARITIES: dict[str, Callable[[Tensor], Tensor]] = {
    "relu": relu,
    "tanh": tanh,
}


def backward(loss: Tensor, params: "ParamStore | None" = None) -> None:
    """Backpropagate from a scalar loss through the tape.

    If a `ParamStore` is given its gradient buffers are zeroed first, so after
    the call every parameter holds d(loss)/d(param), with zeros for parameters
    the loss never touched.
    """
    if loss.value.ndim != 0 and loss.value.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.value.shape}")
    if params is not None:
        params.zero_grads()
    if not loss.requires_grad:
        return

    # iterative topological order (graphs can be thousands of nodes deep)
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))

    loss.grad = np.ones_like(loss.value)
    for node in reversed(order):
        if node._backward_fn is not None and node.grad is not None:
            node._backward_fn(node.grad)


# ---------------------------------------------------------------------------
# Parameters
# ---------------------------------------------------------------------------


class ParamStore:
    """Named trainable tensors with matched gradient buffers and a step count.

    Insertion order is the declaration order used by checkpoints. A store
    created with `trainable=False` (target networks) never receives gradients:
    forward passes through it are pruned from the tape.
    """

    def __init__(self, trainable: bool = True):
        self._params: dict[str, Tensor] = {}
        self.trainable = trainable
        self.step = 0

    def add(self, name: str, value: np.ndarray) -> Tensor:
        if name in self._params:
            raise ContractError(f"duplicate parameter {name!r}")
        t = Tensor(np.array(value, dtype=np.float64), requires_grad=self.trainable)
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return list(self._params)

    def items(self):
        return self._params.items()

    def shapes(self) -> list[tuple[str, tuple[int, ...]]]:
        return [(k, tuple(t.value.shape)) for k, t in self._params.items()]

    def zero_grads(self) -> None:
        for t in self._params.values():
            if t.grad is None:
                t.grad = np.zeros_like(t.value)
            else:
                t.grad.fill(0.0)

    def copy_values_from(self, other: "ParamStore") -> None:
        if self.shapes() != other.shapes():
            raise ShapeError("parameter stores have different shape manifests")
        for k, t in self._params.items():
            np.copyto(t.value, other[k].value)

    def clone(self, trainable: bool = False) -> "ParamStore":
        out = ParamStore(trainable=trainable)
        for k, t in self._params.items():
            out.add(k, t.value.copy())
        return out

    def grads(self) -> dict[str, np.ndarray]:
        return {k: np.array(t.grad if t.grad is not None else np.zeros_like(t.value))
                for k, t in self._params.items()}


# ---------------------------------------------------------------------------
# Random streams
# ---------------------------------------------------------------------------


def _mix_seed(seed: int, tag) -> int:
    digest = hashlib.blake2s(
        repr(tag).encode("utf-8"),
        digest_size=8,
        key=int(seed & _U64).to_bytes(8, "little"),
    ).digest()
    return int.from_bytes(digest, "little")


class RngStream:
    """Seeded counter-based random stream (Philox).

    Identical seeds give bit-identical sequences across runs and platforms.
    `spawn(tag)` derives an independent stream deterministically, so separate
    concerns (placement, exploration, replay, noise) never share state.
    """

    def __init__(self, seed: int):
        self.seed = int(seed) & _U64
        self._gen = np.random.Generator(np.random.Philox(key=self.seed))

    def spawn(self, tag) -> "RngStream":
        return RngStream(_mix_seed(self.seed, tag))

    def uniform(self, shape=()) -> np.ndarray:
        return self._gen.random(shape, dtype=np.float64)

    def normal(self, shape=(), scale: float = 1.0) -> np.ndarray:
        return self._gen.normal(0.0, scale, shape)

    def integers(self, high: int, size=None):
        return self._gen.integers(0, high, size=size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def choice_without_replacement(self, n: int, k: int) -> np.ndarray:
        return self._gen.choice(n, size=k, replace=False)


def gumbel_from_uniform(u: np.ndarray) -> np.ndarray:
    """Standard Gumbel transform -log(-log(u)), with u clamped off {0, 1}."""
    u = np.clip(np.asarray(u, dtype=np.float64), MACHINE_EPS, 1.0 - MACHINE_EPS)
    return -np.log(-np.log(u))


def sample_gumbel(rows: int, cols: int, rng: RngStream) -> np.ndarray:
    if rows < 1 or cols < 1:
        raise ContractError(f"sample_gumbel needs positive dims, got {rows}x{cols}")
    return gumbel_from_uniform(rng.uniform((rows, cols)))


# ---------------------------------------------------------------------------
# Finite differences
# ---------------------------------------------------------------------------


def finite_diff_grad(loss_fn: Callable[[ParamStore], float],
                     params: ParamStore,
                     eps: float = 1e-5) -> dict[str, np.ndarray]:
    """Central-difference gradient estimate, one coordinate at a time.

    This is the independent oracle for `backward`; it only ever calls
    `loss_fn` on perturbed parameter values.
    """
    if eps <= 0:
        raise ContractError("eps must be positive")
    out: dict[str, np.ndarray] = {}
    for name, t in params.items():
        flat = t.value.reshape(-1)
        g = np.zeros_like(flat)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            up = float(loss_fn(params))
            flat[i] = orig - eps
            down = float(loss_fn(params))
            flat[i] = orig
            g[i] = (up - down) / (2.0 * eps)
        out[name] = g.reshape(t.value.shape)
    return out


def max_relative_error(analytic: dict[str, np.ndarray],
                       numeric: dict[str, np.ndarray],
                       floor: float = 1e-5) -> float:
    """max over coordinates of |a - n| / max(|a|, |n|, floor).

    The floor keeps near-zero coordinates comparable: central differences at
    eps ~ 1e-5 on an O(1) loss carry ~1e-10 of roundoff, so relative error is
    not measurable below the floor and a plain ratio would amplify noise. A
    sign or scale bug on such a coordinate still trips the check through the
    absolute difference.
    """
    worst = 0.0
    for name, a in analytic.items():
        n = numeric[name]
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
        worst = max(worst, float((np.abs(a - n) / denom).max()))
    return worst
