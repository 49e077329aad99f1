"""Dense float64 tensors with reverse-mode differentiation and Adam.

The graph is define-by-run: every forward pass records closures that map the
output gradient back to the operand gradients. Values are numpy arrays and are
treated as immutable once a tensor is built; only the ``grad`` slot mutates.
All math is 64-bit so that analytic gradients can be checked against central
finite differences at 1e-4 relative tolerance.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, DimensionError, NumericError

Array = np.ndarray


def _as_array(values) -> Array:
    arr = np.asarray(values, dtype=np.float64)
    return arr


def _unbroadcast(grad: Array, shape: tuple[int, ...]) -> Array:
    """Sum `grad` over the axes that numpy broadcasting expanded."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    """A numpy array plus a gradient slot and a backward recipe.

    ``parents`` and ``vjp`` are populated only when gradients can flow, so
    inference graphs carry no bookkeeping.
    """

    __slots__ = ("values", "grad", "requires_grad", "_parents", "_vjp")

    def __init__(self, values, requires_grad: bool = False, _parents=(), _vjp=None):
        self.values = _as_array(values)
        self.grad: Array | None = None
        self.requires_grad = bool(requires_grad)
        self._parents = _parents
        self._vjp = _vjp

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    @property
    def ndim(self) -> int:
        return self.values.ndim

    @property
    def size(self) -> int:
        return self.values.size

    def item(self) -> float:
        return float(self.values)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # -- operator sugar -------------------------------------------------

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

    def __truediv__(self, scalar):
        if isinstance(scalar, Tensor):
            raise ContractError("division is supported by scalar constants only")
        return mul(self, 1.0 / float(scalar))

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        return reshape(self, *shape)

    def transpose(self, *axes):
        return transpose(self, *axes)

    def sum(self, axis=None, keepdims=False):
        return tensor_sum(self, axis=axis, keepdims=keepdims)

    def backward(self):
        backward(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


_grad_enabled = True


class no_grad:
    """Context manager: skip graph recording (read-only inference)."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


def _make(values: Array, parents: tuple[Tensor, ...], vjp) -> Tensor:
    if not _grad_enabled:
        return Tensor(values)
    tracked = tuple(p for p in parents if p.requires_grad)
    if not tracked:
        return Tensor(values)
    return Tensor(values, requires_grad=True, _parents=parents, _vjp=vjp)


# -- elementwise arithmetic ---------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        out = a.values + b.values
    except ValueError:
        raise DimensionError(f"cannot broadcast {a.shape} + {b.shape}") from None

    def vjp(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(out, (a, b), vjp)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        out = a.values - b.values
    except ValueError:
        raise DimensionError(f"cannot broadcast {a.shape} - {b.shape}") from None

    def vjp(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _make(out, (a, b), vjp)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        out = a.values * b.values
    except ValueError:
        raise DimensionError(f"cannot broadcast {a.shape} * {b.shape}") from None

    def vjp(g):
        return (_unbroadcast(g * b.values, a.shape),
                _unbroadcast(g * a.values, b.shape))

    return _make(out, (a, b), vjp)


# -- activations ----------------------------------------------------------


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.values)

    def vjp(g):
        return (g * (1.0 - out * out),)

    return _make(out, (x,), vjp)


def sigmoid(x: Tensor) -> Tensor:
    # tanh form is overflow-safe on both tails
    out = 0.5 * (1.0 + np.tanh(0.5 * x.values))

    def vjp(g):
        return (g * out * (1.0 - out),)

    return _make(out, (x,), vjp)


def relu(x: Tensor) -> Tensor:
    out = np.maximum(x.values, 0.0)

    def vjp(g):
        return (g * (x.values > 0.0),)

    return _make(out, (x,), vjp)


def softplus(x: Tensor) -> Tensor:
    # logaddexp(0, x) == x + log1p(exp(-x)) on the large-x branch, so no overflow
    out = np.logaddexp(0.0, x.values)
    sig = 0.5 * (1.0 + np.tanh(0.5 * x.values))

    def vjp(g):
        return (g * sig,)

    return _make(out, (x,), vjp)


def log(x: Tensor) -> Tensor:
    out = np.log(x.values)

    def vjp(g):
        return (g / x.values,)

    return _make(out, (x,), vjp)


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.values)

    def vjp(g):
        return (g * out,)

    return _make(out, (x,), vjp)


def clip(x: Tensor, lo: float, hi: float) -> Tensor:
    """Clamp to [lo, hi]; gradient is zero where the clamp is active."""
    out = np.clip(x.values, lo, hi)
    inside = (x.values > lo) & (x.values < hi)

    def vjp(g):
        return (g * inside,)

    return _make(out, (x,), vjp)


# -- softmax ---------------------------------------------------------------


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Numerically stabilized softmax along `axis` (max-subtraction)."""
    if not -x.ndim <= axis < x.ndim:
        raise DimensionError(f"axis {axis} invalid for shape {x.shape}")
    if not np.all(np.isfinite(x.values)):
        raise NumericError("softmax requires finite input")
    shifted = x.values - x.values.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        inner = (g * out).sum(axis=axis, keepdims=True)
        return (out * (g - inner),)

    return _make(out, (x,), vjp)


# -- linear algebra / structure --------------------------------------------


def _matmul_forward(av: Array, bv: Array) -> Array:
    # shape-specialized paths turn broadcast-batched products into a few large
    # GEMM calls instead of hundreds of tiny ones
    if bv.ndim == 2 and av.ndim > 2:
        return (av.reshape(-1, av.shape[-1]) @ bv).reshape(av.shape[:-1] + (bv.shape[-1],))
    if av.ndim == 4 and bv.ndim == 3:
        b0, p, q = av.shape[0], av.shape[-2], av.shape[-1]
        if av.shape[1] == bv.shape[0]:  # (b, n, p, q) @ (n, q, r): n big GEMMs
            flat = av.transpose(1, 0, 2, 3).reshape(bv.shape[0], b0 * p, q)
            return (flat @ bv).reshape(bv.shape[0], b0, p, -1).transpose(1, 0, 2, 3)
        if av.shape[1] == 1:            # (b, 1, p, q) @ (n, q, r): n big GEMMs
            out = av.reshape(b0 * p, q) @ bv
            return out.reshape(bv.shape[0], b0, p, -1).transpose(1, 0, 2, 3)
    return av @ bv


def _matmul_grad_b(av: Array, g: Array, b_shape: tuple[int, ...]) -> Array:
    # dB = sum over broadcast batch of A^T @ g
    if len(b_shape) == 2:
        return av.reshape(-1, av.shape[-1]).T @ g.reshape(-1, g.shape[-1])
    if av.ndim == 4 and len(b_shape) == 3 and g.shape[:2] == (av.shape[0], b_shape[0]):
        b0, p, q = av.shape[0], av.shape[-2], av.shape[-1]
        gt = np.ascontiguousarray(g.transpose(1, 0, 2, 3)).reshape(b_shape[0], b0 * p, -1)
        if av.shape[1] == b_shape[0]:
            at = np.ascontiguousarray(av.transpose(1, 3, 0, 2)).reshape(b_shape[0], q, b0 * p)
            return at @ gt
        if av.shape[1] == 1:
            return av.reshape(b0 * p, q).T[None] @ gt
    return _unbroadcast(av.swapaxes(-1, -2) @ g, b_shape)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product with numpy batch broadcasting over leading axes."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul needs >=2-d operands, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul inner dims disagree: {a.shape} @ {b.shape}")
    try:
        out = _matmul_forward(a.values, b.values)
    except ValueError:
        raise DimensionError(f"matmul batch dims disagree: {a.shape} @ {b.shape}") from None

    def vjp(g):
        if b.ndim == 2 and a.ndim > 2:
            da = (g.reshape(-1, g.shape[-1]) @ b.values.T).reshape(a.shape)
        else:
            da = _unbroadcast(g @ b.values.swapaxes(-1, -2), a.shape)
        db = _matmul_grad_b(a.values, g, b.shape)
        return da, db

    return _make(out, (a, b), vjp)


def transpose(x: Tensor, *axes) -> Tensor:
    """Permute axes; default swaps the last two."""
    if not axes:
        perm = tuple(range(x.ndim - 2)) + (x.ndim - 1, x.ndim - 2)
    elif len(axes) == 1 and isinstance(axes[0], (tuple, list)):
        perm = tuple(axes[0])
    else:
        perm = tuple(axes)
    out = np.transpose(x.values, perm)
    inv = tuple(np.argsort(perm))

    def vjp(g):
        return (np.transpose(g, inv),)

    return _make(out, (x,), vjp)


def reshape(x: Tensor, *shape) -> Tensor:
    if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
        shape = tuple(shape[0])
    out = x.values.reshape(shape)
    orig = x.shape

    def vjp(g):
        return (g.reshape(orig),)

    return _make(out, (x,), vjp)


def broadcast_to(x: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    try:
        out = np.broadcast_to(x.values, shape)
    except ValueError:
        raise DimensionError(f"cannot broadcast {x.shape} to {shape}") from None

    def vjp(g):
        return (_unbroadcast(g, x.shape),)

    return _make(out, (x,), vjp)


def concat(tensors, axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out = np.concatenate([t.values for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, splits, axis=axis))

    return _make(out, tuple(tensors), vjp)


def gather(table: Tensor, ids: Array) -> Tensor:
    """Row lookup `table[ids]`; backward scatter-adds into the table rows."""
    ids = np.asarray(ids)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise ContractError(f"gather ids out of range for table with {table.shape[0]} rows")
    out = table.values[ids]

    def vjp(g):
        gt = np.zeros_like(table.values)
        np.add.at(gt, ids, g)
        return (gt,)

    return _make(out, (table,), vjp)


def tensor_sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = x.values.sum(axis=axis, keepdims=keepdims)
    shape = x.shape

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, shape).copy(),)
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _make(out, (x,), vjp)


# -- backward pass ----------------------------------------------------------


def backward(loss: Tensor) -> None:
    """Populate `.grad` on every tensor reachable from a scalar loss.

    Repeated calls accumulate into existing grads; callers zero grads (set to
    None) between optimization steps.
    """
    if loss.size != 1:
        raise ContractError(f"backward requires a scalar loss, got shape {loss.shape}")

    topo: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in visited:
                stack.append((p, False))

    # per-call accumulation is local so that repeated backward calls add the
    # same contribution instead of compounding through stale interior grads
    local: dict[int, Array] = {id(loss): np.ones_like(loss.values)}

    for node in reversed(topo):
        g_in = local.pop(id(node), None)
        if g_in is None:
            continue
        node.grad = g_in if node.grad is None else node.grad + g_in
        if node._vjp is None:
            continue
        grads = node._vjp(g_in)
        for parent, g in zip(node._parents, grads):
            if g is None or not parent.requires_grad:
                continue
            g = np.asarray(g, dtype=np.float64)
            prev = local.get(id(parent))
            local[id(parent)] = g if prev is None else prev + g


# -- Adam --------------------------------------------------------------------


@dataclass
class AdamState:
    """Adam optimizer state: moments, step counter, hyperparameters.

    `l2` couples into the gradient (g <- g + l2 * theta) before the moment
    updates, keeping the loss itself regularization-free.
    """

    lr: float = 2e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    l2: float = 0.0
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def adam_step(params: list[Tensor], grads: list[Array], state: AdamState) -> None:
    """One bias-corrected Adam update, in place on `params`."""
    if len(params) != len(grads):
        raise ContractError(f"{len(params)} params vs {len(grads)} grads")
    if not state.m:
        state.m = [np.zeros_like(p.values) for p in params]
        state.v = [np.zeros_like(p.values) for p in params]
    if len(state.m) != len(params):
        raise ContractError(f"optimizer state holds {len(state.m)} moments for {len(params)} params")

    state.step += 1
    t = state.step
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    for i, (p, g) in enumerate(zip(params, grads)):
        if g is None:
            g = np.zeros_like(p.values)
        if state.l2:
            g = g + state.l2 * p.values
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * (g * g)
        m_hat = state.m[i] / bc1
        v_hat = state.v[i] / bc2
        p.values = p.values - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)


# -- gradient verification ----------------------------------------------------


@dataclass
class GradCheckReport:
    """Per-parameter max relative error between analytic and numeric grads."""

    tol_rel: float
    per_param: dict[str, float]

    @property
    def max_rel_err(self) -> float:
        return max(self.per_param.values()) if self.per_param else 0.0

    @property
    def passed(self) -> bool:
        return self.max_rel_err <= self.tol_rel

    def lines(self) -> list[str]:
        out = []
        for name, err in self.per_param.items():
            status = "ok" if err <= self.tol_rel else "FAIL"
            out.append(f"{status:4s} {name:32s} max_rel_err={err:.3e}")
        verdict = "PASS" if self.passed else "FAIL"
        out.append(f"{verdict}: max relative error {self.max_rel_err:.3e} (tol {self.tol_rel:.1e})")
        return out


def _rel_err(a: float, b: float) -> float:
    return abs(a - b) / max(abs(a), abs(b), 1e-8)


def finite_diff_check(model_fn, params: dict[str, Tensor], h: float = 1e-5,
                      tol_rel: float = 1e-4) -> GradCheckReport:
    """Compare analytic gradients of `model_fn` to central finite differences.

    `model_fn` must rebuild the graph from the current parameter values and
    return the scalar loss tensor; it is re-evaluated 2x per parameter scalar.
    """
    for p in params.values():
        p.grad = None
    loss = model_fn()
    backward(loss)
    analytic = {name: (p.grad if p.grad is not None else np.zeros_like(p.values))
                for name, p in params.items()}

    per_param: dict[str, float] = {}
    for name, p in params.items():
        flat = p.values.reshape(-1)
        worst = 0.0
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = float(model_fn().values)
            flat[i] = orig - h
            down = float(model_fn().values)
            flat[i] = orig
            numeric = (up - down) / (2.0 * h)
            worst = max(worst, _rel_err(float(analytic[name].reshape(-1)[i]), numeric))
        per_param[name] = worst
    return GradCheckReport(tol_rel=tol_rel, per_param=per_param)
