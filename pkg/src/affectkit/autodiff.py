"""Reverse-mode automatic differentiation over small dense tensors.

Everything differentiable in the toolkit flows through :class:`DiffTensor`:
a 64-bit numpy array plus a gradient accumulator and the edges that link it
to the tensors it was computed from. Each edge carries a closure mapping
the output gradient to the contribution for one parent, so ``backward``
is a reverse-topological sweep calling closures in construction order,
which makes repeated runs on the same graph bit-identical.

The op set is exactly what the model zoo and loss stack need: dense
layers, the usual activations, softmax, concatenation/slicing, inverted
dropout, a gated recurrent cell, reductions, and elementwise arithmetic
with numpy-style broadcasting. The Adam optimizer and a binary checkpoint
format for named parameter sets live here too.

Floats are 64-bit throughout; at this scale gradient-check fidelity is
worth more than speed.
"""

from __future__ import annotations

import struct
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .errors import (
    BadCheckpoint,
    ConfigError,
    NonScalarRoot,
    ShapeMismatch,
    ValueOutOfRange,
)


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to ``shape``."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class DiffTensor:
    """Array node in a reverse-mode computation graph.

    ``data`` holds the value, ``grad`` the accumulated gradient of the
    eventual scalar root with respect to this node. ``_edges`` pairs each
    parent with the closure producing its gradient contribution.
    """

    __slots__ = ("data", "grad", "_edges")

    def __init__(self, data, edges: Sequence = ()):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = np.zeros_like(self.data)
        self._edges = tuple(edges)

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        self.grad[...] = 0.0

    def __repr__(self) -> str:
        return f"DiffTensor(shape={self.shape}, edges={len(self._edges)})"

    # arithmetic sugar; constants are wrapped as edge-free tensors
    def __add__(self, other):
        return add(self, as_tensor(other))

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, as_tensor(other))

    __rmul__ = __mul__

    def __sub__(self, other):
        return sub(self, as_tensor(other))

    def __rsub__(self, other):
        return sub(as_tensor(other), self)

    def __truediv__(self, other):
        return div(self, as_tensor(other))

    def __rtruediv__(self, other):
        return div(as_tensor(other), self)

    def __neg__(self):
        return mul(self, as_tensor(-1.0))

    def __pow__(self, exponent):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(value) -> DiffTensor:
    return value if isinstance(value, DiffTensor) else DiffTensor(value)


def constant(value) -> DiffTensor:
    """Alias of :func:`as_tensor` for readability at call sites."""
    return as_tensor(value)


# ---------------------------------------------------------------------------
# primitive operations


def add(a: DiffTensor, b: DiffTensor) -> DiffTensor:
    try:
        out_data = a.data + b.data
    except ValueError as exc:
        raise ShapeMismatch(f"add {a.shape} vs {b.shape}") from exc
    return DiffTensor(
        out_data,
        edges=(
            (a, lambda g: _unbroadcast(g, a.shape)),
            (b, lambda g: _unbroadcast(g, b.shape)),
        ),
    )


def sub(a: DiffTensor, b: DiffTensor) -> DiffTensor:
    try:
        out_data = a.data - b.data
    except ValueError as exc:
        raise ShapeMismatch(f"sub {a.shape} vs {b.shape}") from exc
    return DiffTensor(
        out_data,
        edges=(
            (a, lambda g: _unbroadcast(g, a.shape)),
            (b, lambda g: _unbroadcast(-g, b.shape)),
        ),
    )


def mul(a: DiffTensor, b: DiffTensor) -> DiffTensor:
    try:
        out_data = a.data * b.data
    except ValueError as exc:
        raise ShapeMismatch(f"mul {a.shape} vs {b.shape}") from exc
    return DiffTensor(
        out_data,
        edges=(
            (a, lambda g: _unbroadcast(g * b.data, a.shape)),
            (b, lambda g: _unbroadcast(g * a.data, b.shape)),
        ),
    )


def div(a: DiffTensor, b: DiffTensor) -> DiffTensor:
    try:
        out_data = a.data / b.data
    except ValueError as exc:
        raise ShapeMismatch(f"div {a.shape} vs {b.shape}") from exc
    return DiffTensor(
        out_data,
        edges=(
            (a, lambda g: _unbroadcast(g / b.data, a.shape)),
            (b, lambda g: _unbroadcast(-g * a.data / (b.data * b.data), b.shape)),
        ),
    )


def power(a: DiffTensor, exponent: float) -> DiffTensor:
    n = float(exponent)
    out_data = a.data**n
    return DiffTensor(
        out_data, edges=((a, lambda g: g * n * a.data ** (n - 1.0)),)
    )


def matmul(a: DiffTensor, b: DiffTensor) -> DiffTensor:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeMismatch(f"matmul {a.shape} @ {b.shape}")
    return DiffTensor(
        a.data @ b.data,
        edges=(
            (a, lambda g: g @ b.data.T),
            (b, lambda g: a.data.T @ g),
        ),
    )


def dense(x: DiffTensor, w: DiffTensor, b: DiffTensor) -> DiffTensor:
    """Affine layer x @ w + b with b broadcast over rows."""
    return add(matmul(x, w), b)


def relu(x: DiffTensor) -> DiffTensor:
    mask = x.data > 0
    return DiffTensor(np.where(mask, x.data, 0.0), edges=((x, lambda g: g * mask),))


def tanh(x: DiffTensor) -> DiffTensor:
    t = np.tanh(x.data)
    return DiffTensor(t, edges=((x, lambda g: g * (1.0 - t * t)),))


def _sigmoid_values(v: np.ndarray) -> np.ndarray:
    out = np.empty_like(v)
    pos = v >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    ev = np.exp(v[~pos])
    out[~pos] = ev / (1.0 + ev)
    return out


def sigmoid(x: DiffTensor) -> DiffTensor:
    s = _sigmoid_values(x.data)
    return DiffTensor(s, edges=((x, lambda g: g * s * (1.0 - s)),))


def softmax(x: DiffTensor, axis: int = -1) -> DiffTensor:
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        return s * (g - np.sum(g * s, axis=axis, keepdims=True))

    return DiffTensor(s, edges=((x, vjp),))


def log(x: DiffTensor) -> DiffTensor:
    return DiffTensor(np.log(x.data), edges=((x, lambda g: g / x.data),))


def exp(x: DiffTensor) -> DiffTensor:
    e = np.exp(x.data)
    return DiffTensor(e, edges=((x, lambda g: g * e),))


def clip(x: DiffTensor, lo: float, hi: float) -> DiffTensor:
    """Clamp values to [lo, hi]; gradient is zero where clamping bit."""
    inside = (x.data >= lo) & (x.data <= hi)
    return DiffTensor(
        np.clip(x.data, lo, hi), edges=((x, lambda g: g * inside),)
    )


def tsum(x: DiffTensor, axis: Optional[int] = None, keepdims: bool = False) -> DiffTensor:
    out_data = x.data.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return np.broadcast_to(g, x.shape)

    return DiffTensor(out_data, edges=((x, vjp),))


def tmean(x: DiffTensor, axis: Optional[int] = None, keepdims: bool = False) -> DiffTensor:
    count = x.size if axis is None else x.shape[axis]
    return mul(tsum(x, axis=axis, keepdims=keepdims), as_tensor(1.0 / count))


def concat(tensors: Sequence[DiffTensor], axis: int = -1) -> DiffTensor:
    if not tensors:
        raise ShapeMismatch("concat of zero tensors")
    try:
        out_data = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise ShapeMismatch(str(exc)) from exc
    sizes = [t.shape[axis if axis >= 0 else t.ndim + axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def make_vjp(i, t):
        def vjp(g):
            sl = [slice(None)] * g.ndim
            ax = axis if axis >= 0 else g.ndim + axis
            sl[ax] = slice(int(offsets[i]), int(offsets[i + 1]))
            return g[tuple(sl)]

        return vjp

    return DiffTensor(
        out_data, edges=tuple((t, make_vjp(i, t)) for i, t in enumerate(tensors))
    )


def slice_axis(x: DiffTensor, start: int, stop: int, axis: int = -1) -> DiffTensor:
    ax = axis if axis >= 0 else x.ndim + axis
    if not 0 <= start <= stop <= x.shape[ax]:
        raise ShapeMismatch(f"slice [{start}:{stop}] on axis {ax} of {x.shape}")
    sl = [slice(None)] * x.ndim
    sl[ax] = slice(start, stop)
    sl = tuple(sl)

    def vjp(g):
        full = np.zeros(x.shape, dtype=np.float64)
        full[sl] = g
        return full

    return DiffTensor(x.data[sl], edges=((x, vjp),))


def take_rows(x: DiffTensor, indices) -> DiffTensor:
    """Gather rows of a 2-d tensor; duplicate indices accumulate on backward."""
    if x.ndim != 2:
        raise ShapeMismatch(f"take_rows expects a matrix, got {x.shape}")
    idx = np.asarray(indices, dtype=np.int64)
    if idx.ndim != 1:
        raise ShapeMismatch("row indices must be a flat list")
    if idx.size and (idx.min() < 0 or idx.max() >= x.shape[0]):
        raise ShapeMismatch(f"row index out of range for {x.shape}")

    def vjp(g):
        full = np.zeros(x.shape, dtype=np.float64)
        np.add.at(full, idx, g)
        return full

    return DiffTensor(x.data[idx], edges=((x, vjp),))


def dropout(
    x: DiffTensor,
    p: float,
    train: bool,
    rng: Optional[np.random.Generator] = None,
) -> DiffTensor:
    """Inverted dropout: surviving units are scaled by 1/(1-p) at train
    time so evaluation is a plain identity."""
    if not 0.0 <= p < 1.0:
        raise ValueOutOfRange(f"dropout probability {p} outside [0,1)")
    if not train or p == 0.0:
        return x
    if rng is None:
        raise ConfigError("dropout in training mode needs a random generator")
    mask = (rng.random(x.shape) >= p) / (1.0 - p)
    return DiffTensor(x.data * mask, edges=((x, lambda g: g * mask),))


# ---------------------------------------------------------------------------
# gated recurrent cell


class GruCell:
    """Single gated recurrent layer.

    Update convention: z and r gates are sigmoids of the concatenated
    [x, h] input; the candidate uses the reset-scaled state, and the new
    state is h' = (1-z)*h + z*candidate.
    """

    def __init__(self, input_dim: int, hidden_dim: int, rng: np.random.Generator):
        self.input_dim = int(input_dim)
        self.hidden_dim = int(hidden_dim)
        cat = self.input_dim + self.hidden_dim
        self.w_z = DiffTensor(glorot_uniform((cat, hidden_dim), rng))
        self.b_z = DiffTensor(np.zeros(hidden_dim))
        self.w_r = DiffTensor(glorot_uniform((cat, hidden_dim), rng))
        self.b_r = DiffTensor(np.zeros(hidden_dim))
        self.w_h = DiffTensor(glorot_uniform((cat, hidden_dim), rng))
        self.b_h = DiffTensor(np.zeros(hidden_dim))

    def parameters(self) -> List[DiffTensor]:
        return [self.w_z, self.b_z, self.w_r, self.b_r, self.w_h, self.b_h]

    def named_parameters(self, prefix: str) -> Dict[str, DiffTensor]:
        return {
            f"{prefix}.w_z": self.w_z,
            f"{prefix}.b_z": self.b_z,
            f"{prefix}.w_r": self.w_r,
            f"{prefix}.b_r": self.b_r,
            f"{prefix}.w_h": self.w_h,
            f"{prefix}.b_h": self.b_h,
        }

    def initial_state(self, batch: int) -> DiffTensor:
        return DiffTensor(np.zeros((batch, self.hidden_dim)))


def gru_step(cell: GruCell, x: DiffTensor, h_prev: DiffTensor) -> DiffTensor:
    """One recurrence step; x is (B, input_dim), h_prev is (B, hidden_dim)."""
    if x.ndim != 2 or x.shape[1] != cell.input_dim:
        raise ShapeMismatch(f"gru input {x.shape}, expected (B,{cell.input_dim})")
    if h_prev.ndim != 2 or h_prev.shape[1] != cell.hidden_dim:
        raise ShapeMismatch(f"gru state {h_prev.shape}, expected (B,{cell.hidden_dim})")
    xh = concat([x, h_prev], axis=1)
    z = sigmoid(dense(xh, cell.w_z, cell.b_z))
    r = sigmoid(dense(xh, cell.w_r, cell.b_r))
    candidate = tanh(dense(concat([x, mul(r, h_prev)], axis=1), cell.w_h, cell.b_h))
    return add(mul(sub(as_tensor(1.0), z), h_prev), mul(z, candidate))


# ---------------------------------------------------------------------------
# backward sweep


def backward(root: DiffTensor) -> None:
    """Accumulate d(root)/d(node) into every reachable node's ``grad``.

    Deterministic: nodes are visited in reverse construction-topological
    order and each node's edges fire in stored order.
    """
    if root.size != 1:
        raise NonScalarRoot(f"backward root must be scalar, got shape {root.shape}")
    order: List[DiffTensor] = []
    visited = set()
    stack: List[Tuple[DiffTensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent, _ in node._edges:
            if id(parent) not in visited:
                stack.append((parent, False))
    root.grad = np.ones_like(root.data)
    for node in reversed(order):
        g = node.grad
        for parent, vjp in node._edges:
            parent.grad = parent.grad + vjp(g)


# ---------------------------------------------------------------------------
# initialization and optimization


def glorot_uniform(
    shape: Tuple[int, ...],
    rng: np.random.Generator,
    fan_in: Optional[int] = None,
    fan_out: Optional[int] = None,
) -> np.ndarray:
    """Uniform samples in +/- sqrt(6/(fan_in+fan_out)). Fans default to the
    two matrix dimensions (or the length, twice, for vectors)."""
    if fan_in is None or fan_out is None:
        if len(shape) == 2:
            fan_in, fan_out = shape
        else:
            fan_in = fan_out = int(np.prod(shape))
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


class Adam:
    """Bias-corrected Adam over a fixed parameter list.

    ``lr`` stays writable so training loops can decay it between epochs.
    """

    def __init__(
        self,
        params: Iterable[DiffTensor],
        lr: float = 1e-4,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        self.params = list(params)
        self.lr = float(lr)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.step_count = 0
        self._m = [np.zeros_like(p.data) for p in self.params]
        self._v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = np.zeros_like(p.data)

    def step(self) -> None:
        self.step_count += 1
        t = self.step_count
        for p, m, v in zip(self.params, self._m, self._v):
            g = p.grad
            if g.shape != p.data.shape:
                raise ShapeMismatch(f"gradient {g.shape} vs parameter {p.data.shape}")
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            m_hat = m / (1.0 - self.beta1**t)
            v_hat = v / (1.0 - self.beta2**t)
            p.data = p.data - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


# ---------------------------------------------------------------------------
# checkpoints

CHECKPOINT_MAGIC = b"AFMT"
CHECKPOINT_VERSION = 1


def _read_exact(fh, n: int) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise BadCheckpoint(f"truncated checkpoint: wanted {n} bytes, got {len(buf)}")
    return buf


def save_checkpoint(path, params: Mapping[str, object]) -> None:
    """Write named arrays (or DiffTensors) sorted by name.

    Layout: magic, u32 version, u32 entry count; per entry a u16 name
    length, UTF-8 name, u8 ndim, u32 per dimension, then the raw
    little-endian 64-bit values. Round-trips bit-exactly.
    """
    items = sorted(params.items())
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(items)))
        for name, value in items:
            arr = np.asarray(
                value.data if isinstance(value, DiffTensor) else value,
                dtype=np.float64,
            )
            encoded = name.encode("utf-8")
            if not encoded or len(encoded) > 0xFFFF:
                raise BadCheckpoint(f"bad parameter name {name!r}")
            if arr.ndim > 0xFF:
                raise BadCheckpoint(f"too many dimensions for {name!r}")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<B", arr.ndim))
            for d in arr.shape:
                fh.write(struct.pack("<I", d))
            fh.write(arr.astype("<f8", copy=False).tobytes(order="C"))


def load_checkpoint(path) -> Dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        if _read_exact(fh, 4) != CHECKPOINT_MAGIC:
            raise BadCheckpoint("bad magic")
        version, count = struct.unpack("<II", _read_exact(fh, 8))
        if version != CHECKPOINT_VERSION:
            raise BadCheckpoint(f"unsupported version {version}")
        out: Dict[str, np.ndarray] = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<H", _read_exact(fh, 2))
            try:
                name = _read_exact(fh, name_len).decode("utf-8")
            except UnicodeDecodeError as exc:
                raise BadCheckpoint("parameter name is not UTF-8") from exc
            (ndim,) = struct.unpack("<B", _read_exact(fh, 1))
            dims = tuple(
                struct.unpack("<I", _read_exact(fh, 4))[0] for _ in range(ndim)
            )
            n_values = int(np.prod(dims, dtype=np.int64)) if ndim else 1
            raw = _read_exact(fh, 8 * n_values)
            if name in out:
                raise BadCheckpoint(f"duplicate parameter {name!r}")
            out[name] = np.frombuffer(raw, dtype="<f8").astype(
                np.float64
            ).reshape(dims)
        trailing = fh.read(1)
        if trailing:
            raise BadCheckpoint("trailing bytes after last entry")
    return out
