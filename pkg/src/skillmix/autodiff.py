"""Reverse-mode automatic differentiation on float64 numpy arrays.

The engine is define-by-run: every operation builds a graph node holding its
inputs and a closure that propagates the output gradient to them.  Parameters
of a model are leaf tensors with ``requires_grad=True``; calling
:func:`backward` on a scalar loss fills ``grad`` buffers for every tracked
leaf.  Repeated backward calls accumulate into the same buffers, which the
training loop relies on for gradient accumulation across a batch.

Everything is float64.  The toolkit exists to verify model behaviour, not to
maximize throughput, and the finite-difference gradient checks need the
headroom.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np


class ShapeError(ValueError):
    """Operand shapes violate an operation's contract."""


class GradientError(RuntimeError):
    """Backward-pass contract violation (non-scalar loss, missing grads)."""


_grad_enabled = True
_finite_checks = False


@contextlib.contextmanager
def no_grad():
    """Disable graph construction inside the block (inference mode)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def set_finite_checks(flag: bool) -> None:
    """Toggle per-op NaN/Inf validation (slow; used by tests)."""
    global _finite_checks
    _finite_checks = bool(flag)


# ---------------------------------------------------------------------------
# operation counters


class OpCounter:
    """Monotone counters for one instrumented region.

    ``madds`` counts multiply-accumulate operations of the dense kernels,
    ``decoder_invocations`` counts full decoder forward passes, and
    ``param_sum_elements`` counts elements touched while summing parameter
    sets.
    """

    __slots__ = ("madds", "decoder_invocations", "param_sum_elements")

    def __init__(self) -> None:
        self.madds = 0
        self.decoder_invocations = 0
        self.param_sum_elements = 0

    def as_dict(self) -> dict:
        return {
            "madds": self.madds,
            "decoder_invocations": self.decoder_invocations,
            "param_sum_elements": self.param_sum_elements,
        }


_counter_stack: list[OpCounter] = []


@contextlib.contextmanager
def count_ops():
    """Collect operation counts for everything executed inside the block."""
    counter = OpCounter()
    _counter_stack.append(counter)
    try:
        yield counter
    finally:
        _counter_stack.remove(counter)


def _count_madds(n: int) -> None:
    for c in _counter_stack:
        c.madds += n


def count_decoder_invocation() -> None:
    for c in _counter_stack:
        c.decoder_invocations += 1


def _count_param_sum(n: int) -> None:
    for c in _counter_stack:
        c.param_sum_elements += n


# ---------------------------------------------------------------------------
# tensor


class Tensor:
    """A float64 array plus an optional gradient buffer and graph linkage."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_bwd")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple = ()
        self._bwd: Callable[[np.ndarray], None] | None = None

    # -- introspection ----------------------------------------------------

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:  # pragma: no cover - debugging aid
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # -- operator sugar ----------------------------------------------------

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

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise ShapeError("tensor/tensor division is not an engine op")
        return mul(self, 1.0 / float(other))

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _make(data: np.ndarray, parents: tuple, bwd) -> Tensor:
    if _finite_checks and not np.all(np.isfinite(data)):
        raise GradientError("non-finite value produced in forward pass")
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    track = _grad_enabled and any(p.requires_grad for p in parents)
    out.requires_grad = track
    out._parents = parents if track else ()
    out._bwd = bwd if track else None
    return out


def _accum(t: Tensor, g: np.ndarray) -> None:
    # No in-place mutation happens anywhere in the engine, so aliasing the
    # first contribution is safe; later ones allocate fresh sums.
    if t.grad is None:
        t.grad = g
    else:
        t.grad = t.grad + g


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcast gradient back down to the originating shape."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    data = a.data + b.data

    def bwd(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g, a.data.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(g, b.data.shape))

    return _make(data, (a, b), bwd)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    data = a.data - b.data

    def bwd(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g, a.data.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(-g, b.data.shape))

    return _make(data, (a, b), bwd)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    data = a.data * b.data

    def bwd(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(g * a.data, b.data.shape))

    return _make(data, (a, b), bwd)


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product of two 2-D tensors; gradients flow to both inputs."""
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError(f"matmul needs 2-D operands, got {a.data.shape} @ {b.data.shape}")
    if a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"inner dimensions disagree: {a.data.shape} @ {b.data.shape}")
    m, k = a.data.shape
    n = b.data.shape[1]
    _count_madds(m * k * n)
    data = a.data @ b.data

    def bwd(g):
        if a.requires_grad:
            _accum(a, g @ b.data.T)
        if b.requires_grad:
            _accum(b, a.data.T @ g)

    return _make(data, (a, b), bwd)


def transpose(a: Tensor) -> Tensor:
    a = as_tensor(a)
    if a.data.ndim != 2:
        raise ShapeError("transpose expects a 2-D tensor")
    data = a.data.T

    def bwd(g):
        if a.requires_grad:
            _accum(a, g.T)

    return _make(data, (a,), bwd)


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    a = as_tensor(a)
    data = a.data.reshape(shape)

    def bwd(g):
        if a.requires_grad:
            _accum(a, g.reshape(a.data.shape))

    return _make(data, (a,), bwd)


def narrow(a: Tensor, axis: int, start: int, length: int) -> Tensor:
    """Contiguous slice along one axis."""
    a = as_tensor(a)
    idx = [slice(None)] * a.data.ndim
    idx[axis] = slice(start, start + length)
    idx = tuple(idx)
    data = a.data[idx]

    def bwd(g):
        if a.requires_grad:
            full = np.zeros_like(a.data)
            full[idx] = g
            _accum(a, full)

    return _make(data, (a,), bwd)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    data = np.concatenate([t.data for t in tensors], axis=axis)
    offsets = np.cumsum([0] + [t.data.shape[axis] for t in tensors])

    def bwd(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(lo, hi)
                _accum(t, g[tuple(idx)])

    return _make(data, tuple(tensors), bwd)


# ---------------------------------------------------------------------------
# nonlinearities and reductions


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Numerically stable softmax along ``axis``; slices sum to one."""
    x = as_tensor(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    data = e / e.sum(axis=axis, keepdims=True)

    def bwd(g):
        if x.requires_grad:
            inner = (g * data).sum(axis=axis, keepdims=True)
            _accum(x, data * (g - inner))

    return _make(data, (x,), bwd)


def sigmoid(x: Tensor) -> Tensor:
    x = as_tensor(x)
    data = _sigmoid_np(x.data)

    def bwd(g):
        if x.requires_grad:
            _accum(x, g * data * (1.0 - data))

    return _make(data, (x,), bwd)


def _sigmoid_np(a: np.ndarray) -> np.ndarray:
    # Evaluate through exp of a negative magnitude only, so large |a| saturates
    # cleanly instead of overflowing.
    out = np.empty_like(a)
    pos = a >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-a[pos]))
    ea = np.exp(a[~pos])
    out[~pos] = ea / (1.0 + ea)
    return out


def tanh(x: Tensor) -> Tensor:
    x = as_tensor(x)
    data = np.tanh(x.data)

    def bwd(g):
        if x.requires_grad:
            _accum(x, g * (1.0 - data * data))

    return _make(data, (x,), bwd)


def relu(x: Tensor) -> Tensor:
    x = as_tensor(x)
    data = np.maximum(x.data, 0.0)

    def bwd(g):
        if x.requires_grad:
            _accum(x, g * (x.data > 0.0))

    return _make(data, (x,), bwd)


def exp(x: Tensor) -> Tensor:
    x = as_tensor(x)
    data = np.exp(x.data)

    def bwd(g):
        if x.requires_grad:
            _accum(x, g * data)

    return _make(data, (x,), bwd)


def log(x: Tensor) -> Tensor:
    x = as_tensor(x)
    data = np.log(x.data)

    def bwd(g):
        if x.requires_grad:
            _accum(x, g / x.data)

    return _make(data, (x,), bwd)


def softplus(x: Tensor) -> Tensor:
    """log(1 + e^x) evaluated stably; the gradient is sigmoid(x)."""
    x = as_tensor(x)
    data = np.maximum(x.data, 0.0) + np.log1p(np.exp(-np.abs(x.data)))

    def bwd(g):
        if x.requires_grad:
            _accum(x, g * _sigmoid_np(x.data))

    return _make(data, (x,), bwd)


def clip_min(x: Tensor, floor: float) -> Tensor:
    """max(x, floor); the gradient passes only where x exceeds the floor."""
    x = as_tensor(x)
    data = np.maximum(x.data, floor)

    def bwd(g):
        if x.requires_grad:
            _accum(x, g * (x.data > floor))

    return _make(data, (x,), bwd)


def tsum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    data = x.data.sum(axis=axis, keepdims=keepdims)
    data = np.asarray(data, dtype=np.float64)

    def bwd(g):
        if x.requires_grad:
            if axis is None:
                _accum(x, np.full_like(x.data, g))
            else:
                gg = g if keepdims else np.expand_dims(g, axis)
                _accum(x, np.broadcast_to(gg, x.data.shape).copy())

    return _make(data, (x,), bwd)


def tmean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    count = x.data.size if axis is None else x.data.shape[axis]
    return mul(tsum(x, axis=axis, keepdims=keepdims), 1.0 / count)


# ---------------------------------------------------------------------------
# lookup / scatter kernels (embeddings, token NLL, copy distribution)


def gather_columns(table: Tensor, ids: np.ndarray) -> Tensor:
    """Select columns ``table[:, ids]``; gradients scatter-add back."""
    table = as_tensor(table)
    ids = np.asarray(ids, dtype=np.int64)
    data = table.data[:, ids]

    def bwd(g):
        if table.requires_grad:
            full = np.zeros_like(table.data)
            np.add.at(full.T, ids, g.T)
            _accum(table, full)

    return _make(data, (table,), bwd)


def pick_positions(p: Tensor, ids: np.ndarray) -> Tensor:
    """out[t] = p[t, ids[t]] for a 2-D tensor of per-step distributions."""
    p = as_tensor(p)
    ids = np.asarray(ids, dtype=np.int64)
    rows = np.arange(p.data.shape[0])
    data = p.data[rows, ids]

    def bwd(g):
        if p.requires_grad:
            full = np.zeros_like(p.data)
            full[rows, ids] = g
            _accum(p, full)

    return _make(data, (p,), bwd)


def scatter_columns_add(weights: Tensor, ids: np.ndarray, width: int) -> Tensor:
    """Accumulate attention mass onto token ids.

    ``weights`` is (steps, positions); position j contributes its column mass
    to output column ``ids[j]``.  Output is (steps, width); each row keeps the
    row-sum of ``weights`` because scattering only reindexes mass.
    """
    weights = as_tensor(weights)
    ids = np.asarray(ids, dtype=np.int64)
    if ids.max(initial=-1) >= width:
        raise ShapeError("scatter id exceeds output width")
    data = np.zeros((weights.data.shape[0], width))
    np.add.at(data.T, ids, weights.data.T)

    def bwd(g):
        if weights.requires_grad:
            _accum(weights, g[:, ids])

    return _make(data, (weights,), bwd)


# ---------------------------------------------------------------------------
# fused model kernels


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-6) -> Tensor:
    """Normalize each column of (features, positions) to zero mean/unit var."""
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    mu = x.data.mean(axis=0, keepdims=True)
    centered = x.data - mu
    var = (centered * centered).mean(axis=0, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv_std
    data = gain.data * xhat + bias.data

    def bwd(g):
        if bias.requires_grad:
            _accum(bias, g.sum(axis=1, keepdims=True))
        if gain.requires_grad:
            _accum(gain, (g * xhat).sum(axis=1, keepdims=True))
        if x.requires_grad:
            gx = g * gain.data
            m1 = gx.mean(axis=0, keepdims=True)
            m2 = (gx * xhat).mean(axis=0, keepdims=True)
            _accum(x, inv_std * (gx - m1 - xhat * m2))

    return _make(data, (x, gain, bias), bwd)


def gru_scan(x: Tensor, wz, wr, wh, uz, ur, uh, bz, br, bh,
             return_sequence: bool = False) -> Tensor:
    """Gated recurrent scan over the columns of ``x`` from a zero state.

    Returns the final hidden state as a (hidden, 1) tensor, or every state as
    (hidden, steps) when ``return_sequence`` is set.  The backward pass is
    hand-rolled backpropagation through time over the saved per-step gates.
    """
    x = as_tensor(x)
    params = [as_tensor(p) for p in (wz, wr, wh, uz, ur, uh, bz, br, bh)]
    wz, wr, wh, uz, ur, uh, bz, br, bh = params
    if x.data.ndim != 2 or x.data.shape[1] < 1:
        raise ShapeError("gru_scan needs a (features, steps>=1) input")
    d_h = wz.data.shape[0]
    n = x.data.shape[1]
    _count_madds(3 * d_h * x.data.shape[0] * n + 3 * d_h * d_h * n)

    xz = wz.data @ x.data + bz.data
    xr = wr.data @ x.data + br.data
    xh = wh.data @ x.data + bh.data

    h = np.zeros((d_h, 1))
    states = np.empty((d_h, n))
    steps = []
    for t in range(n):
        z = _sigmoid_np(xz[:, t : t + 1] + uz.data @ h)
        r = _sigmoid_np(xr[:, t : t + 1] + ur.data @ h)
        rh = r * h
        c = np.tanh(xh[:, t : t + 1] + uh.data @ rh)
        h = (1.0 - z) * h + z * c
        steps.append((z, r, c, rh))
        states[:, t : t + 1] = h
    data = states if return_sequence else states[:, -1:].copy()

    def bwd(g):
        dh = np.zeros((d_h, 1))
        d_pre_z = np.zeros((d_h, n))
        d_pre_r = np.zeros((d_h, n))
        d_pre_c = np.zeros((d_h, n))
        d_uz = np.zeros_like(uz.data)
        d_ur = np.zeros_like(ur.data)
        d_uh = np.zeros_like(uh.data)
        for t in range(n - 1, -1, -1):
            if return_sequence:
                dh = dh + g[:, t : t + 1]
            elif t == n - 1:
                dh = dh + g
            z, r, c, rh = steps[t]
            h_prev = states[:, t - 1 : t] if t > 0 else np.zeros((d_h, 1))
            pc = dh * z * (1.0 - c * c)
            drh = uh.data.T @ pc
            pr = drh * h_prev * r * (1.0 - r)
            pz = dh * (c - h_prev) * z * (1.0 - z)
            d_pre_z[:, t : t + 1] = pz
            d_pre_r[:, t : t + 1] = pr
            d_pre_c[:, t : t + 1] = pc
            d_uz += pz @ h_prev.T
            d_ur += pr @ h_prev.T
            d_uh += pc @ rh.T
            dh = dh * (1.0 - z) + drh * r + uz.data.T @ pz + ur.data.T @ pr
        if x.requires_grad:
            _accum(x, wz.data.T @ d_pre_z + wr.data.T @ d_pre_r + wh.data.T @ d_pre_c)
        for w, dp in ((wz, d_pre_z), (wr, d_pre_r), (wh, d_pre_c)):
            if w.requires_grad:
                _accum(w, dp @ x.data.T)
        for u, du in ((uz, d_uz), (ur, d_ur), (uh, d_uh)):
            if u.requires_grad:
                _accum(u, du)
        for b, dp in ((bz, d_pre_z), (br, d_pre_r), (bh, d_pre_c)):
            if b.requires_grad:
                _accum(b, dp.sum(axis=1, keepdims=True))

    return _make(data, (x, *params), bwd)


def weighted_sum(weights: Tensor, tensors: Sequence[Tensor]) -> Tensor:
    """sum_i weights[i] * tensors[i], all tensors sharing one shape.

    The building block of parameter-space mixing: gradients flow both into
    the weight vector and into every summand.
    """
    weights = as_tensor(weights)
    tensors = [as_tensor(t) for t in tensors]
    w = weights.data.reshape(-1)
    if len(w) != len(tensors):
        raise ShapeError(f"{len(w)} weights for {len(tensors)} tensors")
    base = tensors[0].data.shape
    for t in tensors[1:]:
        if t.data.shape != base:
            raise ShapeError("weighted_sum operands must share a shape")
    numel = tensors[0].data.size
    _count_madds(len(tensors) * numel)
    _count_param_sum(len(tensors) * numel)
    data = np.zeros(base)
    for wi, t in zip(w, tensors):
        data += wi * t.data

    def bwd(g):
        if weights.requires_grad:
            gw = np.array([(g * t.data).sum() for t in tensors])
            _accum(weights, gw.reshape(weights.data.shape))
        for wi, t in zip(w, tensors):
            if t.requires_grad:
                _accum(t, wi * g)

    return _make(data, (weights, *tensors), bwd)


# ---------------------------------------------------------------------------
# backward driver


def backward(loss: Tensor) -> None:
    """Populate gradients of every tracked tensor reachable from ``loss``.

    Raises :class:`GradientError` unless the loss is a single element.  A
    second call without zeroing gradients accumulates on top of the first.
    """
    if not isinstance(loss, Tensor):
        raise GradientError("backward expects a Tensor")
    if loss.data.size != 1:
        raise GradientError(f"loss must be scalar, got shape {loss.data.shape}")

    topo: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, Iterable]] = [(loss, iter(loss._parents))]
    visited.add(id(loss))
    while stack:
        node, parents = stack[-1]
        advanced = False
        for p in parents:
            if id(p) not in visited:
                visited.add(id(p))
                stack.append((p, iter(p._parents)))
                advanced = True
                break
        if not advanced:
            topo.append(node)
            stack.pop()

    loss.grad = np.ones_like(loss.data) if loss.grad is None else loss.grad + np.ones_like(loss.data)
    for node in reversed(topo):
        if node._bwd is not None and node.grad is not None:
            node._bwd(node.grad)
            if _finite_checks and not np.all(np.isfinite(node.grad)):
                raise GradientError("non-finite gradient in backward pass")


# ---------------------------------------------------------------------------
# parameters and optimizer


class ParamStore:
    """Named parameter tensors plus per-tensor adaptive-moment state."""

    def __init__(self) -> None:
        self._params: dict[str, Tensor] = {}
        self._m: dict[str, np.ndarray] = {}
        self._v: dict[str, np.ndarray] = {}
        self.step_count = 0

    def add(self, name: str, tensor: Tensor) -> Tensor:
        if name in self._params:
            raise ValueError(f"duplicate parameter name: {name}")
        tensor.requires_grad = True
        self._params[name] = tensor
        return tensor

    def merge(self, other: "ParamStore", prefix: str = "") -> None:
        for name, t in other.items():
            self.add(prefix + name, t)

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

    def tensors(self) -> list[Tensor]:
        return list(self._params.values())

    def num_elements(self) -> int:
        return sum(t.size for t in self._params.values())

    def zero_grad(self) -> None:
        for t in self._params.values():
            t.grad = None

    def grad_norm(self) -> float:
        total = 0.0
        for t in self._params.values():
            if t.grad is not None:
                total += float((t.grad * t.grad).sum())
        return float(np.sqrt(total))

    def clip_gradients(self, max_norm: float) -> float:
        """Scale all gradients so their global norm is at most ``max_norm``."""
        norm = self.grad_norm()
        if norm > max_norm > 0:
            factor = max_norm / norm
            for t in self._params.values():
                if t.grad is not None:
                    t.grad = t.grad * factor
        return norm

    def adam_step(
        self,
        lr: float,
        betas: tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
        scale: float = 1.0,
    ) -> None:
        """One adaptive-moment update over every parameter.

        ``scale`` divides raw gradients first (gradient accumulation over a
        batch leaves sums in the buffers).  Missing or non-finite gradients
        are contract errors.
        """
        b1, b2 = betas
        self.step_count += 1
        t = self.step_count
        bias1 = 1.0 - b1**t
        bias2 = 1.0 - b2**t
        for name, p in self._params.items():
            if p.grad is None:
                raise GradientError(f"parameter {name} has no gradient")
            g = p.grad * scale if scale != 1.0 else p.grad
            if not np.all(np.isfinite(g)):
                raise GradientError(f"non-finite gradient for parameter {name}")
            m = self._m.get(name)
            if m is None:
                m = np.zeros_like(p.data)
                self._m[name] = m
                self._v[name] = np.zeros_like(p.data)
            v = self._v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            p.data = p.data - lr * (m / bias1) / (np.sqrt(v / bias2) + eps)


def warmup_lr(step: int, d_model: int, warmup_steps: int = 4000, factor: float = 1.0) -> float:
    """Inverse-square-root schedule: linear ramp for ``warmup_steps``, decay after."""
    step = max(step, 1)
    return factor * d_model**-0.5 * min(step**-0.5, step * warmup_steps**-1.5)


def make_schedule(name: str, lr: float, d_model: int, warmup_steps: int = 4000):
    """Return step -> learning-rate callable for 'constant' or 'warmup'."""
    if name == "constant":
        return lambda step: lr
    if name == "warmup":
        return lambda step: warmup_lr(step, d_model, warmup_steps, factor=lr / warmup_lr(warmup_steps, d_model, warmup_steps))
    raise ValueError(f"unknown schedule: {name}")
