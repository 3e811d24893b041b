"""Small reverse-mode autodiff engine over float64 numpy arrays.

Operations executed inside ``with Tape() as tape:`` are recorded in creation
order (a valid topological order); ``tape.backward(loss)`` replays them in
reverse, accumulating gradients additively into every tensor that requires
them. Outside a tape nothing is recorded, which is how inference runs.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

_TAPES: list[Tape] = []


class ShapeError(ValueError):
    pass


class NonFiniteGradient(FloatingPointError):
    pass


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")
    __array_ufunc__ = None  # make numpy defer to the reflected operators

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._backward = None
        self.name = name

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, o):
        return add(self, o)

    __radd__ = __add__

    def __sub__(self, o):
        return sub(self, o)

    def __rsub__(self, o):
        return sub(o, self)

    def __mul__(self, o):
        return mul(self, o)

    __rmul__ = __mul__

    def __truediv__(self, o):
        if isinstance(o, Tensor):
            raise TypeError("division by a tensor is not supported")
        return mul(self, 1.0 / o)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, o):
        return matmul(self, o)

    def __rmatmul__(self, o):
        return matmul(o, self)


class Tape:
    def __init__(self):
        self.nodes: list[Tensor] = []

    def __enter__(self):
        _TAPES.append(self)
        return self

    def __exit__(self, *exc):
        _TAPES.remove(self)

    def backward(self, loss: Tensor) -> None:
        if loss.data.size != 1:
            raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
        loss.grad = np.ones_like(loss.data)
        for node in reversed(self.nodes):
            if node.grad is not None and node._backward is not None:
                node._backward(node.grad)
        for node in self.nodes:
            # intermediates are not needed after the sweep
            node._backward = None
            node._parents = ()


def no_grad_active() -> bool:
    return not _TAPES


def _t(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data, parents, backward) -> Tensor:
    out = Tensor(data)
    if _TAPES and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
        _TAPES[-1].nodes.append(out)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _accum(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    g = _unbroadcast(g, t.shape)
    if t.grad is None:
        t.grad = g.copy()
    else:
        t.grad = t.grad + g


def _check_broadcast(a: Tensor, b: Tensor, op: str) -> tuple:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


# -- primitives --------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _t(a), _t(b)
    _check_broadcast(a, b, "add")

    def back(g):
        _accum(a, g)
        _accum(b, g)
    return _result(a.data + b.data, (a, b), back)


def sub(a, b) -> Tensor:
    a, b = _t(a), _t(b)
    _check_broadcast(a, b, "sub")

    def back(g):
        _accum(a, g)
        _accum(b, -g)
    return _result(a.data - b.data, (a, b), back)


def mul(a, b) -> Tensor:
    a, b = _t(a), _t(b)
    _check_broadcast(a, b, "mul")

    def back(g):
        _accum(a, g * b.data)
        _accum(b, g * a.data)
    return _result(a.data * b.data, (a, b), back)


def matmul(a, b) -> Tensor:
    a, b = _t(a), _t(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")

    if b.ndim == 2 and a.ndim > 2:
        # stacked rows times a weight matrix: one flat GEMM instead of many small ones
        lead = a.shape[:-1]
        a2 = a.data.reshape(-1, a.shape[-1])

        def back(g):
            g2 = g.reshape(-1, g.shape[-1])
            if a.requires_grad:
                _accum(a, (g2 @ b.data.T).reshape(a.shape))
            if b.requires_grad:
                _accum(b, a2.T @ g2)
        return _result((a2 @ b.data).reshape(lead + (b.shape[-1],)), (a, b), back)

    def back(g):
        if a.requires_grad:
            _accum(a, g @ np.swapaxes(b.data, -1, -2))
        if b.requires_grad:
            _accum(b, np.swapaxes(a.data, -1, -2) @ g)
    return _result(a.data @ b.data, (a, b), back)


def relu(a) -> Tensor:
    a = _t(a)
    mask = a.data > 0

    def back(g):
        _accum(a, g * mask)
    return _result(a.data * mask, (a,), back)


def exp(a) -> Tensor:
    a = _t(a)
    out = np.exp(a.data)

    def back(g):
        _accum(a, g * out)
    return _result(out, (a,), back)


def square(a) -> Tensor:
    a = _t(a)

    def back(g):
        _accum(a, 2.0 * g * a.data)
    return _result(a.data * a.data, (a,), back)


def sum(a, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    a = _t(a)

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _accum(a, np.broadcast_to(g, a.shape))
    return _result(a.data.sum(axis=axis, keepdims=keepdims), (a,), back)


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _t(a)
    n = a.data.size if axis is None else np.prod([a.shape[k] for k in np.atleast_1d(axis)])
    return mul(sum(a, axis, keepdims), 1.0 / float(n))


def reshape(a, shape) -> Tensor:
    a = _t(a)

    def back(g):
        _accum(a, g.reshape(a.shape))
    return _result(a.data.reshape(shape), (a,), back)


def swap_last(a) -> Tensor:
    a = _t(a)

    def back(g):
        _accum(a, np.swapaxes(g, -1, -2))
    return _result(np.swapaxes(a.data, -1, -2), (a,), back)


def broadcast_to(a, shape) -> Tensor:
    a = _t(a)

    def back(g):
        _accum(a, g)
    return _result(np.broadcast_to(a.data, shape).copy(), (a,), back)


def concat(tensors, axis: int = -1) -> Tensor:
    tensors = [_t(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    cuts = np.cumsum(sizes)[:-1]

    def back(g):
        for t, part in zip(tensors, np.split(g, cuts, axis=axis)):
            _accum(t, part)
    return _result(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), back)


def softmax_rows(a) -> Tensor:
    """Softmax over the last axis."""
    a = _t(a)
    z = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=-1, keepdims=True)

    def back(g):
        _accum(a, s * (g - (g * s).sum(axis=-1, keepdims=True)))
    return _result(s, (a,), back)


def layer_norm_rows(a, eps: float = 1e-5) -> Tensor:
    """Zero-mean, unit-variance normalisation over the last axis (no affine)."""
    a = _t(a)
    mu = a.data.mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(a.data.var(axis=-1, keepdims=True) + eps)
    xhat = (a.data - mu) * inv

    def back(g):
        gm = g.mean(axis=-1, keepdims=True)
        gx = (g * xhat).mean(axis=-1, keepdims=True)
        _accum(a, inv * (g - gm - xhat * gx))
    return _result(xhat, (a,), back)


def mse(a, b) -> Tensor:
    a, b = _t(a), _t(b)
    if a.shape != b.shape:
        raise ShapeError(f"mse: shapes differ {a.shape} and {b.shape}")
    d = a.data - b.data
    n = float(d.size)

    def back(g):
        _accum(a, g * 2.0 * d / n)
        _accum(b, -g * 2.0 * d / n)
    return _result(np.array((d * d).sum() / n), (a, b), back)


# -- optimisation ------------------------------------------------------------

@dataclass
class AdamState:
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_step(params: list[Tensor], grads: list[np.ndarray], state: AdamState, lr: float) -> list[Tensor]:
    if len(params) != len(grads):
        raise ShapeError("params and grads differ in length")
    for p, g in zip(params, grads):
        if g.shape != p.shape:
            raise ShapeError(f"gradient shape {g.shape} does not match parameter {p.shape}")
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradient(f"non-finite gradient for {p.name or 'parameter'}")
    if not state.m:
        state.m = [np.zeros_like(p.data) for p in params]
        state.v = [np.zeros_like(p.data) for p in params]
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p.data -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params


def lr_schedule(epoch: int, base: float = 1e-4, floor: float = 5e-6, decay: float = 0.9) -> float:
    """Geometric decay ``base * decay**(epoch / 2) + floor``."""
    if epoch < 0:
        raise ValueError("epoch must be nonnegative")
    return base * decay ** (epoch / 2.0) + floor


# -- checkpoints -------------------------------------------------------------

CKPT_MAGIC = b"MDPW"
CKPT_VERSION = 1


def save_params(path, params: dict[str, Tensor | np.ndarray], meta: dict | None = None) -> None:
    meta_blob = json.dumps(meta or {}, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC + struct.pack("<II", CKPT_VERSION, len(meta_blob)) + meta_blob)
        fh.write(struct.pack("<I", len(params)))
        for name, p in params.items():
            arr = np.ascontiguousarray(p.data if isinstance(p, Tensor) else p, dtype="<f8")
            key = name.encode()
            fh.write(struct.pack("<I", len(key)) + key)
            fh.write(struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.tobytes())


def load_params(path) -> tuple[dict[str, np.ndarray], dict]:
    blob = Path(path).read_bytes()
    if blob[:4] != CKPT_MAGIC:
        raise ValueError("not a parameter checkpoint")
    version, mlen = struct.unpack_from("<II", blob, 4)
    if version != CKPT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    off = 12
    meta = json.loads(blob[off:off + mlen].decode())
    off += mlen
    (count,) = struct.unpack_from("<I", blob, off)
    off += 4
    out = {}
    for _ in range(count):
        (klen,) = struct.unpack_from("<I", blob, off)
        off += 4
        name = blob[off:off + klen].decode()
        off += klen
        (ndim,) = struct.unpack_from("<I", blob, off)
        off += 4
        shape = struct.unpack_from(f"<{ndim}I", blob, off)
        off += 4 * ndim
        n = int(np.prod(shape))
        out[name] = np.frombuffer(blob, "<f8", n, off).reshape(shape).copy()
        off += 8 * n
    return out, meta
