"""Small reverse-mode differentiation toolkit on float64 numpy arrays.

Ops take an optional ``tape``. With a tape they record a node whose
closure pushes the output gradient back to the inputs; without one they
are plain numpy evaluation. Only what the relational actor-critic needs
is here: affine layers, ReLU, dropout, (log-)softmax, row scaling,
segment sums and a few elementwise reductions.
"""

from __future__ import annotations

import io
import struct
import threading
from typing import Callable, Iterable, Mapping

import numpy as np


class ShapeError(ValueError):
    pass


class NumericError(FloatingPointError):
    pass


class UsageError(ValueError):
    pass


class FormatError(ValueError):
    pass


class Tensor:
    __slots__ = ("data", "grad", "name")

    def __init__(self, data, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.data.shape})"


class Tape:
    """Operation record of one forward pass."""

    def __init__(self):
        self.nodes: list[tuple[Tensor, Callable[[np.ndarray], None]]] = []
        self.params: dict[str, Tensor] = {}

    def param(self, name: str, value: np.ndarray) -> Tensor:
        t = self.params.get(name)
        if t is None:
            t = Tensor(value, name)
            self.params[name] = t
        return t

    def record(self, out: Tensor, backward: Callable[[np.ndarray], None]) -> Tensor:
        self.nodes.append((out, backward))
        return out


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if t.grad is None:
        t.grad = np.array(g, dtype=np.float64, copy=True)
    else:
        t.grad += g


def _check(arr: np.ndarray, op: str) -> np.ndarray:
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"non-finite values produced by {op}")
    return arr


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def backward(tape: Tape, loss: Tensor) -> dict[str, np.ndarray]:
    """Reverse sweep from a scalar loss; returns gradients by parameter name.

    Parameters that did not influence the loss get zero gradients.
    """
    if loss.data.size != 1:
        raise UsageError(f"loss must be scalar, got shape {loss.data.shape}")
    for out, _ in tape.nodes:
        out.grad = None
    for t in tape.params.values():
        t.grad = None
    loss.grad = np.ones_like(loss.data)
    for out, fn in reversed(tape.nodes):
        if out.grad is not None:
            fn(out.grad)
    return {
        name: (t.grad if t.grad is not None else np.zeros_like(t.data))
        for name, t in tape.params.items()
    }


# -- layers ---------------------------------------------------------------

def affine(W: Tensor, b: Tensor, x: Tensor, tape: Tape | None = None) -> Tensor:
    """y = x W^T + b for x of shape (batch, in) and W of shape (out, in)."""
    W, b, x = as_tensor(W), as_tensor(b), as_tensor(x)
    if W.data.ndim != 2 or x.data.ndim != 2 or W.shape[1] != x.shape[1]:
        raise ShapeError(f"affine: W{W.shape} incompatible with x{x.shape}")
    if b.shape != (W.shape[0],):
        raise ShapeError(f"affine: bias {b.shape} does not match W{W.shape}")
    out = Tensor(_check(x.data @ W.data.T + b.data, "affine"))
    if tape is not None:
        def back(g):
            _accumulate(W, g.T @ x.data)
            _accumulate(b, g.sum(axis=0))
            _accumulate(x, g @ W.data)
        tape.record(out, back)
    return out


def relu(x: Tensor, tape: Tape | None = None) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0
    out = Tensor(np.where(mask, x.data, 0.0))
    if tape is not None:
        tape.record(out, lambda g: _accumulate(x, g * mask))
    return out


def dropout(x: Tensor, rate: float, train_mode: bool, rng: np.random.Generator | None = None,
            tape: Tape | None = None) -> Tensor:
    """Inverted dropout; identity in eval mode or at rate 0."""
    if not 0.0 <= rate < 1.0:
        raise UsageError(f"dropout rate must lie in [0, 1), got {rate}")
    x = as_tensor(x)
    if not train_mode or rate == 0.0:
        return x
    if rng is None:
        raise UsageError("dropout in train mode needs an rng")
    mask = (rng.random(x.shape) >= rate) / (1.0 - rate)
    out = Tensor(x.data * mask)
    if tape is not None:
        tape.record(out, lambda g: _accumulate(x, g * mask))
    return out


def softmax(x: Tensor, tape: Tape | None = None) -> Tensor:
    x = as_tensor(x)
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=-1, keepdims=True)
    out = Tensor(p)
    if tape is not None:
        def back(g):
            _accumulate(x, p * (g - (g * p).sum(axis=-1, keepdims=True)))
        tape.record(out, back)
    return out


def log_softmax(x: Tensor, tape: Tape | None = None) -> Tensor:
    x = as_tensor(x)
    z = x.data - x.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    out = Tensor(_check(z - lse, "log_softmax"))
    if tape is not None:
        p = np.exp(out.data)
        def back(g):
            _accumulate(x, g - p * g.sum(axis=-1, keepdims=True))
        tape.record(out, back)
    return out


def scale_rows(x: Tensor, s: Tensor, tape: Tape | None = None) -> Tensor:
    """Multiply row i of a (n, d) tensor by the scalar s[i]."""
    x, s = as_tensor(x), as_tensor(s)
    if s.shape != (x.shape[0],):
        raise ShapeError(f"scale_rows: gates {s.shape} for {x.shape[0]} rows")
    out = Tensor(x.data * s.data[:, None])
    if tape is not None:
        def back(g):
            _accumulate(x, g * s.data[:, None])
            _accumulate(s, (g * x.data).sum(axis=1))
        tape.record(out, back)
    return out


def segment_sum(x: Tensor, segments: np.ndarray, n_segments: int,
                tape: Tape | None = None) -> Tensor:
    """Sum rows of x into n_segments buckets; empty buckets are zero.

    Rows are added in their given order, so the result is reproducible
    bit for bit for a fixed row order.
    """
    x = as_tensor(x)
    segments = np.asarray(segments, dtype=np.intp)
    if segments.shape != (x.shape[0],):
        raise ShapeError("segment_sum: one segment id per row required")
    if n_segments == 1:
        acc = x.data.sum(axis=0, keepdims=True)
    else:
        acc = np.zeros((n_segments,) + x.shape[1:])
        np.add.at(acc, segments, x.data)
    out = Tensor(acc)
    if tape is not None:
        tape.record(out, lambda g: _accumulate(x, g[segments]))
    return out


def pick(x: Tensor, idx: np.ndarray, tape: Tape | None = None) -> Tensor:
    """x[i, idx[i]] for each row i."""
    x = as_tensor(x)
    idx = np.asarray(idx, dtype=np.intp)
    rows = np.arange(x.shape[0])
    out = Tensor(x.data[rows, idx])
    if tape is not None:
        def back(g):
            full = np.zeros_like(x.data)
            full[rows, idx] = g
            _accumulate(x, full)
        tape.record(out, back)
    return out


def column(x: Tensor, j: int, tape: Tape | None = None) -> Tensor:
    x = as_tensor(x)
    out = Tensor(x.data[:, j])
    if tape is not None:
        def back(g):
            full = np.zeros_like(x.data)
            full[:, j] = g
            _accumulate(x, full)
        tape.record(out, back)
    return out


# -- elementwise and reductions -------------------------------------------

def add(a: Tensor, b: Tensor, tape: Tape | None = None) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"add: {a.shape} vs {b.shape}")
    out = Tensor(a.data + b.data)
    if tape is not None:
        def back(g):
            _accumulate(a, g)
            _accumulate(b, g)
        tape.record(out, back)
    return out


def sub(a: Tensor, b: Tensor, tape: Tape | None = None) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"sub: {a.shape} vs {b.shape}")
    out = Tensor(a.data - b.data)
    if tape is not None:
        def back(g):
            _accumulate(a, g)
            _accumulate(b, -g)
        tape.record(out, back)
    return out


def mul(a: Tensor, b: Tensor, tape: Tape | None = None) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"mul: {a.shape} vs {b.shape}")
    out = Tensor(a.data * b.data)
    if tape is not None:
        def back(g):
            _accumulate(a, g * b.data)
            _accumulate(b, g * a.data)
        tape.record(out, back)
    return out


def scale(a: Tensor, c: float, tape: Tape | None = None) -> Tensor:
    a = as_tensor(a)
    out = Tensor(a.data * c)
    if tape is not None:
        tape.record(out, lambda g: _accumulate(a, g * c))
    return out


def square(a: Tensor, tape: Tape | None = None) -> Tensor:
    a = as_tensor(a)
    out = Tensor(a.data * a.data)
    if tape is not None:
        tape.record(out, lambda g: _accumulate(a, 2.0 * g * a.data))
    return out


def total(a: Tensor, tape: Tape | None = None) -> Tensor:
    """Sum of all entries, as a 0-d tensor."""
    a = as_tensor(a)
    out = Tensor(a.data.sum())
    if tape is not None:
        tape.record(out, lambda g: _accumulate(a, np.broadcast_to(g, a.shape)))
    return out


def sum_last(a: Tensor, tape: Tape | None = None) -> Tensor:
    a = as_tensor(a)
    out = Tensor(a.data.sum(axis=-1))
    if tape is not None:
        tape.record(out, lambda g: _accumulate(a, np.broadcast_to(g[..., None], a.shape)))
    return out


# -- optimization ----------------------------------------------------------

def global_norm(grads: Mapping[str, np.ndarray]) -> float:
    return float(np.sqrt(sum(float(np.sum(grads[k] ** 2)) for k in sorted(grads))))


def clip_global_norm(grads: Mapping[str, np.ndarray], max_norm: float) -> dict[str, np.ndarray]:
    if max_norm <= 0:
        raise UsageError("max_norm must be positive")
    norm = global_norm(grads)
    if norm <= max_norm:
        return dict(grads)
    factor = max_norm / norm
    return {k: g * factor for k, g in grads.items()}


class ParameterStore(dict):
    """Named float64 arrays. Names and shapes are fixed once created."""

    def copy(self) -> ParameterStore:
        return ParameterStore({k: v.copy() for k, v in self.items()})

    def shapes(self) -> dict[str, tuple]:
        return {k: v.shape for k, v in self.items()}

    def assign(self, other: Mapping[str, np.ndarray]) -> None:
        if self.shapes() != {k: np.shape(v) for k, v in other.items()}:
            raise UsageError("parameter names or shapes differ")
        for k, v in other.items():
            self[k][...] = v


class RMSProp:
    """RMSProp with one set of squared-gradient statistics.

    ``g2 <- rho g2 + (1 - rho) grad^2; param <- param - lr grad / sqrt(g2 + eps)``.
    Updates are serialized by an internal lock so several workers can
    share one optimizer and one parameter store.
    """

    def __init__(self, params: Mapping[str, np.ndarray], lr: float, rho: float = 0.99,
                 eps: float = 0.1):
        self.lr = lr
        self.rho = rho
        self.eps = eps
        self.g2 = {k: np.zeros_like(v) for k, v in params.items()}
        self.lock = threading.Lock()

    def update(self, params: dict, grads: Mapping[str, np.ndarray]) -> None:
        if set(grads) != set(params) or set(grads) != set(self.g2):
            raise UsageError("gradient keys do not match parameter keys")
        with self.lock:
            for k in grads:
                g = grads[k]
                g2 = self.g2[k]
                g2 *= self.rho
                g2 += (1.0 - self.rho) * g * g
                params[k] -= self.lr * g / np.sqrt(g2 + self.eps)


def rmsprop_update(params: dict, grads: Mapping[str, np.ndarray], opt: RMSProp) -> dict:
    opt.update(params, grads)
    return params


# -- binary tensor files -----------------------------------------------------

CHECKPOINT_HEADER = b"RNAC1\n"
OPTIMIZER_HEADER = b"RNOPT1\n"


def dump_tensors(tensors: Mapping[str, np.ndarray], header: bytes) -> bytes:
    buf = io.BytesIO()
    buf.write(header)
    for name in sorted(tensors):
        arr = np.asarray(tensors[name], dtype="<f8")
        raw = name.encode("utf-8")
        buf.write(struct.pack("<I", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<I", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        buf.write(np.ascontiguousarray(arr).tobytes())
    return buf.getvalue()


def parse_tensors(blob: bytes, header: bytes) -> dict[str, np.ndarray]:
    if not blob.startswith(header):
        raise FormatError(f"bad header, expected {header!r}")
    pos = len(header)
    out = {}

    def take(n):
        nonlocal pos
        if pos + n > len(blob):
            raise FormatError("truncated tensor file")
        chunk = blob[pos:pos + n]
        pos += n
        return chunk

    while pos < len(blob):
        (nlen,) = struct.unpack("<I", take(4))
        name = take(nlen).decode("utf-8")
        (rank,) = struct.unpack("<I", take(4))
        dims = struct.unpack(f"<{rank}I", take(4 * rank))
        count = int(np.prod(dims)) if rank else 1
        arr = np.frombuffer(take(8 * count), dtype="<f8").astype(np.float64).reshape(dims)
        out[name] = arr
    return out


def save_tensors(path, tensors: Mapping[str, np.ndarray], header: bytes = CHECKPOINT_HEADER) -> None:
    with open(path, "wb") as fh:
        fh.write(dump_tensors(tensors, header))


def load_tensors(path, header: bytes = CHECKPOINT_HEADER) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        return parse_tensors(fh.read(), header)


def iter_coordinates(shape: tuple, limit: int | None, rng: np.random.Generator) -> Iterable[tuple]:
    """All coordinates of `shape`, or a random sample of `limit` of them."""
    size = int(np.prod(shape))
    if limit is None or limit >= size:
        flat = range(size)
    else:
        flat = rng.choice(size, size=limit, replace=False)
    for f in flat:
        yield np.unravel_index(int(f), shape)
