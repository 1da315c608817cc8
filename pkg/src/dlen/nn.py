"""
Minimal reverse-mode autodiff over numpy arrays.

Only the operations the three multi-task architectures need are provided:
affine layers, ReLU, sigmoid, softmax, elementwise arithmetic with
broadcasting, reductions, stacking/concatenation, row lookup for embedding
tables and a fused binary cross-entropy.  Every op records a closure that
pushes the upstream gradient to its parents; ``backward`` walks the recorded
graph in reverse topological order.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

DEFAULT_DTYPE = np.float32
BCE_EPS = 1e-7


class ShapeError(ValueError):
    """Operands of an op do not conform."""

    def __init__(self, op: str, *shapes: tuple[int, ...]):
        self.op = op
        self.shapes = shapes
        desc = " vs ".join(str(tuple(s)) for s in shapes)
        super().__init__(f"{op}: shape mismatch {desc}")


class GraphError(RuntimeError):
    """``backward`` was called without a recorded forward pass."""


class NonFiniteError(FloatingPointError):
    """A loss or checked value is NaN or infinite."""


class Tensor:
    """An ndarray plus the bookkeeping needed to differentiate through it."""

    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward")

    def __init__(
        self,
        data,
        requires_grad: bool = False,
        name: str | None = None,
        parents: Sequence["Tensor"] = (),
        backward: Callable[[np.ndarray], None] | None = None,
        dtype=None,
    ):
        if isinstance(data, (np.ndarray, np.generic)) and dtype is None:
            arr = np.asarray(data)
            if arr.dtype.kind != "f":
                arr = arr.astype(DEFAULT_DTYPE)
        else:
            arr = np.asarray(data, dtype=dtype or DEFAULT_DTYPE)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents = tuple(parents)
        self._backward = backward

    # -- introspection -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{label})"

    def __len__(self) -> int:
        return len(self.data)

    # -- graph ---------------------------------------------------------
    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(np.broadcast_to(g, self.data.shape), dtype=self.data.dtype)
        else:
            self.grad += g

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def backward(self, grad: np.ndarray | None = None) -> None:
        backward(self, grad)

    # -- operator sugar ------------------------------------------------
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
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims: bool = False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self):
        return tmean(self)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


class Parameter(Tensor):
    """A named trainable leaf; its gradient buffer always exists."""

    __slots__ = ()

    def __init__(self, data, name: str):
        super().__init__(data, requires_grad=True, name=name)
        self.grad = np.zeros_like(self.data)


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype or DEFAULT_DTYPE))


def _pair(a, b) -> tuple[Tensor, Tensor]:
    # constants adopt the dtype of the tensor operand
    if isinstance(a, Tensor) and not isinstance(b, Tensor):
        b = Tensor(np.asarray(b, dtype=a.dtype))
    elif isinstance(b, Tensor) and not isinstance(a, Tensor):
        a = Tensor(np.asarray(a, dtype=b.dtype))
    return as_tensor(a), as_tensor(b)


def _result(data: np.ndarray, parents: Sequence[Tensor], backward) -> Tensor:
    req = any(p.requires_grad for p in parents)
    return Tensor(
        data,
        requires_grad=req,
        parents=parents if req else (),
        backward=backward if req else None,
    )


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def backward(loss: Tensor, grad: np.ndarray | None = None) -> None:
    """Populate ``.grad`` of every leaf that requires a gradient.

    The recorded graph is released afterwards, so a second call on the same
    node (or a call on a node that never went through an op) raises
    ``GraphError``.
    """
    if loss._backward is None:
        raise GraphError(
            "backward() needs a loss produced by a recorded forward pass "
            "(graph missing or already consumed)"
        )
    if grad is None:
        if loss.data.size != 1:
            raise ShapeError("backward (implicit grad needs a scalar)", loss.shape)
        grad = np.ones_like(loss.data)

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

    loss.grad = np.asarray(grad, dtype=loss.dtype).copy()
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)
    for node in order:
        if node._backward is not None:
            node._backward = None
            node._parents = ()
            node.grad = None


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a, b) -> Tensor:
    a, b = _pair(a, b)

    def bw(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.shape))

    return _result(a.data + b.data, (a, b), bw)


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)

    def bw(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g, b.shape))

    return _result(a.data - b.data, (a, b), bw)


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)

    def bw(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.shape))

    return _result(a.data * b.data, (a, b), bw)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _pair(a, b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError("matmul", a.shape, b.shape)

    def bw(g):
        if a.requires_grad:
            a._accumulate(g @ b.data.T)
        if b.requires_grad:
            b._accumulate(a.data.T @ g)

    return _result(a.data @ b.data, (a, b), bw)


def affine(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """``x @ weight + bias`` for ``x`` of shape (batch, in)."""
    x = as_tensor(x)
    if (
        x.data.ndim != 2
        or weight.data.ndim != 2
        or bias.data.ndim != 1
        or x.shape[1] != weight.shape[0]
        or weight.shape[1] != bias.shape[0]
    ):
        raise ShapeError("affine", x.shape, weight.shape, bias.shape)
    xd, wd = x.data, weight.data
    if xd.dtype != wd.dtype:
        xd = xd.astype(wd.dtype)

    def bw(g):
        if x.requires_grad:
            x._accumulate(g @ wd.T)
        if weight.requires_grad:
            weight._accumulate(xd.T @ g)
        if bias.requires_grad:
            bias._accumulate(g.sum(axis=0))

    return _result(xd @ wd + bias.data, (x, weight, bias), bw)


# ---------------------------------------------------------------------------
# activations


# grad_check installs a list here to capture ReLU activation patterns
_relu_trace: list | None = None


def relu(x: Tensor) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0
    if _relu_trace is not None:
        _relu_trace.append(mask)

    def bw(g):
        x._accumulate(g * mask)

    return _result(np.maximum(x.data, x.data.dtype.type(0)), (x,), bw)


def _stable_sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    with np.errstate(over="ignore", under="ignore"):
        out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
        ez = np.exp(z[~pos])
        out[~pos] = ez / (1.0 + ez)
    info = np.finfo(z.dtype)
    # keep probabilities strictly inside (0, 1) at the dtype's resolution
    return np.clip(out, info.tiny, 1.0 - info.epsneg)


def sigmoid(x: Tensor) -> Tensor:
    x = as_tensor(x)
    s = _stable_sigmoid(x.data)

    def bw(g):
        x._accumulate(g * s * (1 - s))

    return _result(s, (x,), bw)


def softmax(x: Tensor) -> Tensor:
    """Row-wise softmax over the last axis."""
    x = as_tensor(x)
    if x.data.ndim < 1 or x.shape[-1] < 1:
        raise ShapeError("softmax", x.shape)
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=-1, keepdims=True)

    def bw(g):
        x._accumulate(s * (g - (g * s).sum(axis=-1, keepdims=True)))

    return _result(s, (x,), bw)


def log(x: Tensor) -> Tensor:
    x = as_tensor(x)

    def bw(g):
        x._accumulate(g / x.data)

    return _result(np.log(x.data), (x,), bw)


def clip(x: Tensor, lo: float, hi: float) -> Tensor:
    """Clamp; gradient flows only where the input was inside the interval."""
    x = as_tensor(x)
    inside = (x.data >= lo) & (x.data <= hi)

    def bw(g):
        x._accumulate(g * inside)

    return _result(np.clip(x.data, lo, hi).astype(x.dtype), (x,), bw)


# ---------------------------------------------------------------------------
# shape manipulation and reductions


def tsum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        x._accumulate(np.broadcast_to(g, x.shape))

    return _result(np.asarray(out, dtype=x.dtype), (x,), bw)


def tmean(x: Tensor) -> Tensor:
    x = as_tensor(x)
    n = x.data.size

    def bw(g):
        x._accumulate(np.broadcast_to(g / n, x.shape))

    return _result(np.asarray(x.data.mean(), dtype=x.dtype), (x,), bw)


def reshape(x: Tensor, shape) -> Tensor:
    x = as_tensor(x)

    def bw(g):
        x._accumulate(g.reshape(x.shape))

    return _result(x.data.reshape(shape), (x,), bw)


def getitem(x: Tensor, idx) -> Tensor:
    x = as_tensor(x)

    def bw(g):
        full = np.zeros_like(x.data)
        np.add.at(full, idx, g)
        x._accumulate(full)

    return _result(x.data[idx], (x,), bw)


def stack(xs: Sequence[Tensor], axis: int = 0) -> Tensor:
    xs = [as_tensor(x) for x in xs]
    shapes = {x.shape for x in xs}
    if len(shapes) != 1:
        raise ShapeError("stack", *sorted(shapes))

    def bw(g):
        for i, x in enumerate(xs):
            if x.requires_grad:
                x._accumulate(np.take(g, i, axis=axis))

    return _result(np.stack([x.data for x in xs], axis=axis), xs, bw)


def concat(xs: Sequence[Tensor], axis: int = -1) -> Tensor:
    xs = [as_tensor(x) for x in xs]
    dtype = np.result_type(*[x.dtype for x in xs])
    sizes = [x.shape[axis] for x in xs]
    bounds = np.cumsum([0] + sizes)

    def bw(g):
        for x, lo, hi in zip(xs, bounds[:-1], bounds[1:]):
            if x.requires_grad:
                sl = [slice(None)] * g.ndim
                sl[axis] = slice(lo, hi)
                x._accumulate(g[tuple(sl)])

    data = np.concatenate([x.data.astype(dtype, copy=False) for x in xs], axis=axis)
    return _result(data, xs, bw)


def take_rows(table: Tensor, ids: np.ndarray) -> Tensor:
    """Embedding lookup: ``table[ids]`` with scatter-add backward."""
    ids = np.asarray(ids, dtype=np.int64)

    def bw(g):
        full = np.zeros_like(table.data)
        np.add.at(full, ids, g)
        table._accumulate(full)

    return _result(table.data[ids], (table,), bw)


def weighted_mix(weights: Tensor, experts: Sequence[Tensor]) -> Tensor:
    """``sum_e weights[:, e] * experts[e]``: the gate/expert combination."""
    stacked = stack(experts, axis=1)  # (batch, n_experts, width)
    if weights.shape != stacked.shape[:2]:
        raise ShapeError("weighted_mix", weights.shape, stacked.shape)
    w = reshape(weights, weights.shape + (1,))
    return tsum(mul(w, stacked), axis=1)


# ---------------------------------------------------------------------------
# loss


def _check_labels(y: np.ndarray) -> np.ndarray:
    y = np.asarray(y)
    bad = (y != 0) & (y != 1)
    if bad.any():
        raise ValueError(f"labels must be 0 or 1; got {y[bad][:5].tolist()}")
    return y


def bce_loss(p: Tensor, y, eps: float = BCE_EPS, reduction: str = "mean") -> Tensor:
    """Binary cross-entropy on probabilities clamped to ``[eps, 1 - eps]``."""
    p = as_tensor(p)
    y = _check_labels(y).astype(p.dtype).reshape(p.shape)
    if reduction not in ("mean", "sum"):
        raise ValueError(f"unknown reduction {reduction!r}")
    lo, hi = p.dtype.type(eps), p.dtype.type(1 - eps)
    pc = np.clip(p.data, lo, hi)
    inside = (p.data >= lo) & (p.data <= hi)
    per = -(y * np.log(pc) + (1 - y) * np.log1p(-pc))
    scale = 1.0 / max(p.data.size, 1) if reduction == "mean" else 1.0
    value = per.sum(dtype=np.float64) * scale
    if not np.isfinite(value):
        raise NonFiniteError(f"non-finite loss {value}")

    def bw(g):
        d = (pc - y) / (pc * (1 - pc)) * inside * scale
        p._accumulate((g * d).astype(p.dtype))

    return _result(np.asarray(value, dtype=p.dtype), (p,), bw)


# ---------------------------------------------------------------------------
# layers


@dataclass(frozen=True)
class MlpSpec:
    """Widths of consecutive fully connected layers, each followed by ReLU."""

    layer_widths: tuple[int, ...] = (256, 128, 64)
    activation: str = "relu"

    def __post_init__(self):
        widths = tuple(int(w) for w in self.layer_widths)
        if not widths or any(w < 1 for w in widths):
            raise ValueError(f"MlpSpec needs >=1 positive widths, got {self.layer_widths}")
        if self.activation != "relu":
            raise ValueError(f"unsupported activation {self.activation!r}")
        object.__setattr__(self, "layer_widths", widths)

    @property
    def out_width(self) -> int:
        return self.layer_widths[-1]

    def n_params(self, in_width: int) -> int:
        total, prev = 0, in_width
        for w in self.layer_widths:
            total += prev * w + w
            prev = w
        return total


def mlp_forward(x: Tensor, params: dict, prefix: str, n_layers: int) -> Tensor:
    h = x
    for i in range(n_layers):
        h = relu(affine(h, params[f"{prefix}.{i}.W"], params[f"{prefix}.{i}.b"]))
    return h


# ---------------------------------------------------------------------------
# optimizers


@dataclass
class OptimizerState:
    kind: str
    learning_rate: float
    step_count: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    first_moment: dict | None = None
    second_moment: dict | None = None


class Optimizer:
    def __init__(self, params: Iterable[Parameter], state: OptimizerState):
        self.params = list(params)
        if state.learning_rate <= 0:
            raise ValueError("learning rate must be positive")
        self.state = state

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()

    def step(self) -> None:
        raise NotImplementedError


class SGD(Optimizer):
    def __init__(self, params, lr: float = 1e-2):
        super().__init__(params, OptimizerState("sgd", lr))

    def step(self) -> None:
        lr = self.state.learning_rate
        for p in self.params:
            p.data -= p.dtype.type(lr) * p.grad
        self.state.step_count += 1


class Adam(Optimizer):
    def __init__(self, params, lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        params = list(params)
        state = OptimizerState(
            "adam", lr, beta1=beta1, beta2=beta2, eps=eps,
            first_moment={p.name: np.zeros_like(p.data) for p in params},
            second_moment={p.name: np.zeros_like(p.data) for p in params},
        )
        super().__init__(params, state)

    def step(self) -> None:
        st = self.state
        st.step_count += 1
        t = st.step_count
        c1 = 1.0 - st.beta1 ** t
        c2 = 1.0 - st.beta2 ** t
        for p in self.params:
            m = st.first_moment[p.name]
            v = st.second_moment[p.name]
            m *= st.beta1
            m += (1 - st.beta1) * p.grad
            v *= st.beta2
            v += (1 - st.beta2) * p.grad * p.grad
            upd = (st.learning_rate * (m / c1)) / (np.sqrt(v / c2) + st.eps)
            p.data -= upd.astype(p.dtype)


def make_optimizer(kind: str, params, lr: float | None = None) -> Optimizer:
    kind = kind.lower()
    if kind == "sgd":
        return SGD(params, lr=1e-2 if lr is None else lr)
    if kind == "adam":
        return Adam(params, lr=1e-3 if lr is None else lr)
    raise ValueError(f"unknown optimizer {kind!r}")


# ---------------------------------------------------------------------------
# finite-difference checking


@dataclass
class GradCheckResult:
    max_rel_error: float
    worst_param: str
    worst_index: tuple[int, ...]
    n_checked: int
    n_kink_retries: int = 0
    n_on_kink: int = 0

    def passed(self, tol: float = 1e-3) -> bool:
        return self.max_rel_error < tol


def _traced(forward_fn, batch) -> tuple[float, list]:
    global _relu_trace
    _relu_trace = []
    try:
        val = float(forward_fn(batch).data)
        return val, _relu_trace
    finally:
        _relu_trace = None


def _same_pattern(a: list, b: list) -> bool:
    return len(a) == len(b) and all(np.array_equal(x, y) for x, y in zip(a, b))


def grad_check(
    forward_fn: Callable[[object], Tensor],
    params: Sequence[Parameter],
    batch,
    h: float = 1e-3,
    dtype=np.float64,
    min_h: float = 1e-7,
) -> GradCheckResult:
    """Compare analytic gradients with central differences, entry by entry.

    ``forward_fn(batch)`` must build a scalar loss from ``params``.  The
    check runs on a copy of every parameter cast to ``dtype`` (float64 by
    default; pass ``np.float32`` to check in training precision) and
    restores the original arrays bit-for-bit afterwards.

    A difference quotient is only meaningful if the perturbation does not
    move any ReLU across its kink.  When ``theta +- h`` changes an activation
    pattern, the step for that entry is divided by 10 until the pattern is
    stable or ``min_h`` is reached; such entries are counted in
    ``n_kink_retries``.  If even ``min_h`` flips a pattern, the entry sits
    exactly on a kink (typically a pre-activation of exactly 0.0) where the
    loss has no derivative.  There the analytic value only has to lie between
    the two one-sided slopes; these entries are counted in ``n_on_kink``.
    """
    originals = [p.data for p in params]
    try:
        for p in params:
            p.data = p.data.astype(dtype)
            p.zero_grad()
        loss = forward_fn(batch)
        if not np.isfinite(loss.data).all():
            raise NonFiniteError("grad_check: non-finite loss")
        loss.backward()
        analytic = [p.grad.copy() for p in params]
        base_val, base_pattern = _traced(forward_fn, batch)

        def f(flat, i, value):
            flat[i] = value
            val, pattern = _traced(forward_fn, batch)
            if not np.isfinite(val):
                raise NonFiniteError("grad_check: non-finite loss under perturbation")
            return val, pattern

        worst = (0.0, "", 0, ())
        n = retries = on_kink = 0
        for p, a in zip(params, analytic):
            flat = p.data.reshape(-1)
            a_flat = a.reshape(-1)
            for i in range(flat.size):
                keep = flat[i]
                step = h
                while True:
                    fp, pat_p = f(flat, i, keep + step)
                    fm, pat_m = f(flat, i, keep - step)
                    flat[i] = keep
                    smooth = _same_pattern(pat_p, base_pattern) and _same_pattern(pat_m, base_pattern)
                    if smooth or step / 10 < min_h:
                        break
                    step /= 10
                retries += step != h
                an = float(a_flat[i])
                if smooth:
                    num = (fp - fm) / (2 * step)
                    err = abs(an - num) / max(abs(an), abs(num), 1e-8)
                else:
                    on_kink += 1
                    lo, hi = sorted(((fp - base_val) / step, (base_val - fm) / step))
                    gap = max(lo - an, an - hi, 0.0)
                    err = gap / max(abs(an), abs(lo), abs(hi), 1e-8)
                n += 1
                if err > worst[0]:
                    worst = (err, p.name, i, p.shape)
        idx = np.unravel_index(worst[2], worst[3]) if worst[1] else ()
        return GradCheckResult(worst[0], worst[1], tuple(int(j) for j in idx), n, retries, on_kink)
    finally:
        for p, orig in zip(params, originals):
            p.data = orig
            p.zero_grad()
