"""Dense 2-D tensors with reverse-mode differentiation, plus layers and RMSProp.

Each operation returns a new :class:`Tensor` remembering its inputs and a
closure that pushes the output gradient back to them. ``Tensor.backward``
walks that record in reverse topological order. Everything is float64 and
two-dimensional.
"""
from __future__ import annotations

import contextlib
import json
from pathlib import Path

import numpy as np

LEAKY_SLOPE = 0.01
LN_EPS = 1e-5

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Build tensors without recording how they were made."""
    global _grad_enabled
    prev, _grad_enabled = _grad_enabled, False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad=False, name=""):
        data = np.array(data, dtype=np.float64)
        if data.ndim == 0:
            data = data.reshape(1, 1)
        elif data.ndim == 1:
            data = data.reshape(1, -1)
        if data.ndim != 2:
            raise ValueError(f"tensors are 2-D, got shape {data.shape}")
        self.data = data
        self.grad = np.zeros_like(data) if requires_grad else None
        self.requires_grad = requires_grad
        self._parents: tuple = ()
        self._backward = None
        self.name = name

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.shape}{', ' + self.name if self.name else ''})"

    def zero_grad(self):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        else:
            self.grad.fill(0.0)

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def backward(self):
        """Accumulate d(self)/d(leaf) into every reachable leaf's ``grad``.

        ``self`` must be 1x1.
        """
        if self.data.size != 1:
            raise ValueError("backward() needs a scalar output")
        order = []
        seen = set()
        stack = [(self, False)]
        while stack:
            t, done = stack.pop()
            if done:
                order.append(t)
                continue
            if id(t) in seen:
                continue
            seen.add(id(t))
            stack.append((t, True))
            for p in t._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        for t in order:
            if t._parents:
                t.grad = np.zeros_like(t.data)
        self.grad = np.ones_like(self.data) if self._parents else self.grad + 1.0
        for t in reversed(order):
            if t._backward is not None:
                t._backward(t.grad)

    __add__ = lambda self, other: add(self, other)
    __sub__ = lambda self, other: sub(self, other)
    __matmul__ = lambda self, other: matmul(self, other)
    __neg__ = lambda self: scale(self, -1.0)


def _result(data, parents, backward) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = ""
    track = _grad_enabled and any(p.requires_grad for p in parents)
    out.requires_grad = track
    out._parents = tuple(parents) if track else ()
    out._backward = backward if track else None
    return out


def _acc(t: Tensor, g):
    if t.requires_grad:
        t.grad += g


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.shape} @ {b.shape}")

    def bw(g):
        _acc(a, g @ b.data.T)
        _acc(b, a.data.T @ g)
    return _result(a.data @ b.data, (a, b), bw)


def transpose(a: Tensor) -> Tensor:
    return _result(a.data.T.copy(), (a,), lambda g: _acc(a, g.T))


def gram(a: Tensor) -> Tensor:
    """``a @ a.T``."""
    def bw(g):
        _acc(a, (g + g.T) @ a.data)
    return _result(a.data @ a.data.T, (a,), bw)


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; ``b`` may be a 1xq row broadcast over rows of ``a``."""
    if b.shape == a.shape:
        def bw(g):
            _acc(a, g)
            _acc(b, g)
    elif b.shape == (1, a.shape[1]):
        def bw(g):
            _acc(a, g)
            _acc(b, g.sum(axis=0, keepdims=True))
    else:
        raise ValueError(f"add shape mismatch: {a.shape} + {b.shape}")
    return _result(a.data + b.data, (a, b), bw)


def sub(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ValueError(f"sub shape mismatch: {a.shape} - {b.shape}")

    def bw(g):
        _acc(a, g)
        _acc(b, -g)
    return _result(a.data - b.data, (a, b), bw)


def mul_row(a: Tensor, r: Tensor) -> Tensor:
    """Scale each column of ``a`` by the matching entry of row vector ``r``."""
    if r.shape != (1, a.shape[1]):
        raise ValueError(f"mul_row shape mismatch: {a.shape} * {r.shape}")

    def bw(g):
        _acc(a, g * r.data)
        _acc(r, (g * a.data).sum(axis=0, keepdims=True))
    return _result(a.data * r.data, (a, r), bw)


def scale(a: Tensor, k: float) -> Tensor:
    return _result(a.data * k, (a,), lambda g: _acc(a, g * k))


def concat_cols(*ts: Tensor) -> Tensor:
    rows = {t.shape[0] for t in ts}
    if len(rows) != 1:
        raise ValueError(f"concat needs equal row counts, got {[t.shape for t in ts]}")
    widths = np.cumsum([0] + [t.shape[1] for t in ts])

    def bw(g):
        for t, lo, hi in zip(ts, widths[:-1], widths[1:]):
            _acc(t, g[:, lo:hi])
    return _result(np.concatenate([t.data for t in ts], axis=1), ts, bw)


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _result(a.data * mask, (a,), lambda g: _acc(a, g * mask))


def leaky_relu(a: Tensor, slope: float = LEAKY_SLOPE) -> Tensor:
    factor = np.where(a.data > 0, 1.0, slope)
    return _result(a.data * factor, (a,), lambda g: _acc(a, g * factor))


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)
    return _result(y, (a,), lambda g: _acc(a, g * (1.0 - y * y)))


def identity(a: Tensor) -> Tensor:
    return a


def _softmax(x, axis):
    e = np.exp(x - x.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


def softmax_rows(a: Tensor) -> Tensor:
    y = _softmax(a.data, 1)
    return _result(y, (a,), lambda g: _acc(a, y * (g - (g * y).sum(axis=1, keepdims=True))))


def softmax_cols(a: Tensor) -> Tensor:
    y = _softmax(a.data, 0)
    return _result(y, (a,), lambda g: _acc(a, y * (g - (g * y).sum(axis=0, keepdims=True))))


def normalize_rows(a: Tensor, eps: float = LN_EPS) -> Tensor:
    """Per-row zero mean, unit (population) variance."""
    if a.shape[1] < 2:
        raise ValueError("row normalization needs at least 2 columns")
    mu = a.data.mean(axis=1, keepdims=True)
    xc = a.data - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=1, keepdims=True) + eps)
    y = xc * inv

    def bw(g):
        gm = g.mean(axis=1, keepdims=True)
        gy = (g * y).mean(axis=1, keepdims=True)
        _acc(a, inv * (g - gm - y * gy))
    return _result(y, (a,), bw)


def max_all(a: Tensor) -> Tensor:
    k = int(np.argmax(a.data))
    idx = np.unravel_index(k, a.shape)

    def bw(g):
        if a.requires_grad:
            a.grad[idx] += g[0, 0]
    return _result(a.data[idx].reshape(1, 1), (a,), bw)


def sum_all(a: Tensor) -> Tensor:
    return _result(a.data.sum().reshape(1, 1), (a,), lambda g: _acc(a, np.full(a.shape, g[0, 0])))


ACTIVATIONS = {
    "relu": relu,
    "leaky_relu": leaky_relu,
    "tanh": tanh,
    "identity": identity,
    "softmax_rows": softmax_rows,
    "softmax_cols": softmax_cols,
}


# --- layers -----------------------------------------------------------------

def _uniform(rng, fan_in, shape):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Module:
    """Holds named parameter tensors."""

    def parameters(self) -> dict[str, Tensor]:
        out = {}
        for key, val in vars(self).items():
            if isinstance(val, Tensor):
                out[key] = val
            elif isinstance(val, Module):
                out.update({f"{key}.{k}": v for k, v in val.parameters().items()})
        return out

    def zero_grad(self):
        for p in self.parameters().values():
            p.zero_grad()

    def set_requires_grad(self, flag: bool):
        for p in self.parameters().values():
            p.requires_grad = flag
            if flag and p.grad is None:
                p.grad = np.zeros_like(p.data)


class Linear(Module):
    """Fully connected layer ``x W + b``."""

    def __init__(self, p: int, q: int, rng, bias: bool = True):
        self.weight = Tensor(_uniform(rng, p, (p, q)), requires_grad=True)
        self.bias = Tensor(_uniform(rng, p, (1, q)), requires_grad=True) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        y = matmul(x, self.weight)
        return add(y, self.bias) if self.bias is not None else y


def fc_forward(x: Tensor, layer: Linear) -> Tensor:
    return layer(x)


class Embedding(Module):
    """Lookup table applied as ``onehot @ table``; soft rows mix table rows."""

    def __init__(self, k: int, e: int, rng):
        self.table = Tensor(_uniform(rng, k, (k, e)), requires_grad=True)

    def __call__(self, onehot: Tensor) -> Tensor:
        return matmul(onehot, self.table)


def embedding_forward(onehot: Tensor, layer: Embedding) -> Tensor:
    return layer(onehot)


class LayerNorm(Module):
    def __init__(self, width: int, eps: float = LN_EPS):
        self.gain = Tensor(np.ones((1, width)), requires_grad=True)
        self.shift = Tensor(np.zeros((1, width)), requires_grad=True)
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return add(mul_row(normalize_rows(x, self.eps), self.gain), self.shift)


def layer_norm(x: Tensor, layer: LayerNorm | None = None) -> Tensor:
    return normalize_rows(x) if layer is None else layer(x)


class GCN(Module):
    """Graph convolution ``act(A X W)`` over a row-normalized adjacency."""

    def __init__(self, p: int, q: int, rng, activation="leaky_relu"):
        self.weight = Tensor(_uniform(rng, p, (p, q)), requires_grad=True)
        self.activation = activation

    def __call__(self, a_norm: Tensor, x: Tensor) -> Tensor:
        act = ACTIVATIONS[self.activation] if isinstance(self.activation, str) else self.activation
        return act(matmul(matmul(a_norm, x), self.weight))


def gcn_forward(a_norm: Tensor, x: Tensor, layer: GCN, activation=None) -> Tensor:
    if a_norm.shape[0] != a_norm.shape[1] or a_norm.shape[1] != x.shape[0]:
        raise ValueError(f"gcn shape mismatch: A {a_norm.shape}, X {x.shape}")
    if activation is None:
        return layer(a_norm, x)
    act = ACTIVATIONS[activation] if isinstance(activation, str) else activation
    return act(matmul(matmul(a_norm, x), layer.weight))


# --- optimisation -------------------------------------------------------------

def rmsprop_update(grad: np.ndarray, acc: np.ndarray, lr: float, decay: float = 0.9,
                   eps: float = 1e-8) -> np.ndarray:
    """Update ``acc`` in place and return the step ``lr * g / sqrt(acc + eps)``.

    The caller adds the step (ascent) or subtracts it (descent).
    """
    acc *= decay
    acc += (1.0 - decay) * grad * grad
    return lr * grad / np.sqrt(acc + eps)


class RMSProp:
    def __init__(self, params: dict[str, Tensor], lr: float = 1e-4, decay: float = 0.9, eps: float = 1e-8):
        if lr <= 0:
            raise ValueError("learning rate must be positive")
        self.params = params
        self.lr, self.decay, self.eps = lr, decay, eps
        self.acc = {k: np.zeros_like(p.data) for k, p in params.items()}

    def step(self, ascend: bool = False):
        sign = 1.0 if ascend else -1.0
        for k, p in self.params.items():
            p.data += sign * rmsprop_update(p.grad, self.acc[k], self.lr, self.decay, self.eps)

    def state(self) -> dict[str, np.ndarray]:
        return {k: v.copy() for k, v in self.acc.items()}

    def load_state(self, state: dict[str, np.ndarray]):
        for k, v in state.items():
            if self.acc[k].shape != v.shape:
                raise ValueError(f"optimizer state {k}: shape {v.shape} != {self.acc[k].shape}")
            self.acc[k][...] = v


def rmsprop_step(params, lr: float, decay: float = 0.9, eps: float = 1e-8, acc=None, ascend=False):
    """Functional one-shot update of a list of tensors from their ``grad``.

    Returns the (mutated) accumulators so they can be passed back in.
    """
    if acc is None:
        acc = [np.zeros_like(p.data) for p in params]
    sign = 1.0 if ascend else -1.0
    for p, a in zip(params, acc):
        p.data += sign * rmsprop_update(p.grad, a, lr, decay, eps)
    return acc


def clip_weights(params, c: float):
    if c <= 0:
        raise ValueError("clip limit must be positive")
    values = params.values() if isinstance(params, dict) else params
    for p in values:
        np.clip(p.data, -c, c, out=p.data)
    return params


# --- checkpoints --------------------------------------------------------------

CHECKPOINT_FORMAT = "synthfeeder-params"
CHECKPOINT_VERSION = 1


def save_arrays(path: str | Path, arrays: dict[str, np.ndarray], meta: dict | None = None):
    """Write named arrays to an ``.npz`` container with a JSON header entry."""
    header = {"format": CHECKPOINT_FORMAT, "version": CHECKPOINT_VERSION,
              "shapes": {k: list(v.shape) for k, v in arrays.items()}, "meta": meta or {}}
    with open(path, "wb") as fh:
        np.savez(fh, __header__=np.array(json.dumps(header)), **arrays)


def load_arrays(path: str | Path, expected_shapes: dict[str, tuple] | None = None):
    with np.load(path, allow_pickle=False) as z:
        header = json.loads(str(z["__header__"]))
        if header.get("format") != CHECKPOINT_FORMAT:
            raise ValueError(f"{path}: not a parameter checkpoint")
        if header.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {header.get('version')}")
        arrays = {k: z[k] for k in z.files if k != "__header__"}
    if expected_shapes is not None:
        missing = set(expected_shapes) - set(arrays)
        if missing:
            raise ValueError(f"{path}: missing parameters {sorted(missing)}")
        for k, shape in expected_shapes.items():
            if tuple(arrays[k].shape) != tuple(shape):
                raise ValueError(f"{path}: parameter {k} has shape {arrays[k].shape}, expected {tuple(shape)}")
    return arrays, header["meta"]
