"""Dense float64 tensors with a reverse-mode autodiff tape.

The conversation model runs entirely on the primitives in this module:
2-D matmul, row softmax (plain and neighborhood-masked), layer norm,
relu, column concatenation, inverted dropout, bias adds, and the two
classification losses. Forward ops record onto an explicit ``Tape``;
``backward`` replays the tape in reverse and accumulates adjoints, so a
tensor consumed by several ops receives the sum of all contributions.

Storage is always row-major contiguous float64. Any op that produces a
NaN or Inf from finite inputs raises ``NonFiniteError`` instead of
letting the value propagate silently.
"""

from __future__ import annotations

import json
from typing import Callable, Sequence

import numpy as np

PARAMS_FORMAT = "convemo-params"
PARAMS_VERSION = 1


class ShapeError(ValueError):
    """Operand shapes do not satisfy an op's contract."""


class NonFiniteError(ArithmeticError):
    """A forward op produced NaN or Inf."""


class Tensor:
    """Dense n-dimensional float64 array with an optional gradient slot."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.ascontiguousarray(np.asarray(data, dtype=np.float64))
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


def parameter(data) -> Tensor:
    """A tensor that collects gradients."""
    return Tensor(data, requires_grad=True)


class Tape:
    """Execution-ordered record of ops, replayed in reverse by ``backward``."""

    __slots__ = ("entries",)

    def __init__(self):
        self.entries: list[tuple[str, tuple[Tensor, ...], Tensor, Callable]] = []

    def record(self, op: str, inputs: tuple[Tensor, ...], output: Tensor, grad_fn: Callable) -> None:
        self.entries.append((op, inputs, output, grad_fn))

    def __len__(self) -> int:
        return len(self.entries)


def backward(loss: Tensor, tape: Tape) -> None:
    """Populate ``grad`` on every requires_grad tensor reachable from ``loss``.

    ``loss`` must be a scalar whose history is fully covered by ``tape``.
    """
    if loss.data.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    loss.grad = np.ones_like(loss.data)
    for _op, inputs, output, grad_fn in reversed(tape.entries):
        d_out = output.grad
        if d_out is None:
            continue
        for t, g in zip(inputs, grad_fn(d_out)):
            if g is None or not t.requires_grad:
                continue
            t.grad = g if t.grad is None else t.grad + g


def _finite_or_raise(arr: np.ndarray, op: str) -> None:
    if not np.isfinite(arr).all():
        raise NonFiniteError(f"op '{op}' produced non-finite values")


def _make(out_data: np.ndarray, inputs: tuple[Tensor, ...], op: str,
          tape: Tape | None, grad_fn: Callable) -> Tensor:
    _finite_or_raise(out_data, op)
    requires = any(t.requires_grad for t in inputs)
    out = Tensor(out_data, requires_grad=requires)
    if tape is not None and requires:
        tape.record(op, inputs, out, grad_fn)
    return out


def _check_2d(name: str, *tensors: Tensor) -> None:
    for t in tensors:
        if t.data.ndim != 2:
            raise ShapeError(f"{name} expects 2-D operands, got shape {t.shape}")


def _scalar(d: np.ndarray) -> float:
    return float(d.reshape(-1)[0])


# ---------------------------------------------------------------------------
# primitives

def matmul(a: Tensor, b: Tensor, tape: Tape | None = None) -> Tensor:
    _check_2d("matmul", a, b)
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner dimensions disagree: {a.shape} x {b.shape}")
    a_data, b_data = a.data, b.data

    def grad_fn(d):
        return d @ b_data.T, a_data.T @ d

    return _make(a_data @ b_data, (a, b), "matmul", tape, grad_fn)


def transpose(x: Tensor, tape: Tape | None = None) -> Tensor:
    _check_2d("transpose", x)

    def grad_fn(d):
        return (d.T,)

    return _make(x.data.T, (x,), "transpose", tape, grad_fn)


def add(a: Tensor, b: Tensor, tape: Tape | None = None) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"add needs matching shapes, got {a.shape} and {b.shape}")

    def grad_fn(d):
        return d, d

    return _make(a.data + b.data, (a, b), "add", tape, grad_fn)


def add_bias(x: Tensor, b: Tensor, tape: Tape | None = None) -> Tensor:
    """Row-broadcast add: (m, n) + (n,)."""
    _check_2d("add_bias", x)
    if b.data.ndim != 1 or b.shape[0] != x.shape[1]:
        raise ShapeError(f"add_bias needs bias of width {x.shape[1]}, got shape {b.shape}")

    def grad_fn(d):
        return d, d.sum(axis=0)

    return _make(x.data + b.data, (x, b), "add_bias", tape, grad_fn)


def mul(a: Tensor, b: Tensor, tape: Tape | None = None) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"mul needs matching shapes, got {a.shape} and {b.shape}")
    a_data, b_data = a.data, b.data

    def grad_fn(d):
        return d * b_data, d * a_data

    return _make(a_data * b_data, (a, b), "mul", tape, grad_fn)


def mul_scalar(x: Tensor, c: float, tape: Tape | None = None) -> Tensor:
    def grad_fn(d):
        return (d * c,)

    return _make(x.data * c, (x,), "mul_scalar", tape, grad_fn)


def relu(x: Tensor, tape: Tape | None = None) -> Tensor:
    gate = x.data > 0

    def grad_fn(d):
        return (d * gate,)

    return _make(np.maximum(x.data, 0.0), (x,), "relu", tape, grad_fn)


def sigmoid(x: Tensor, tape: Tape | None = None) -> Tensor:
    z = x.data
    out = np.where(z >= 0, 1.0 / (1.0 + np.exp(-np.abs(z))),
                   np.exp(-np.abs(z)) / (1.0 + np.exp(-np.abs(z))))

    def grad_fn(d):
        return (d * out * (1.0 - out),)

    return _make(out, (x,), "sigmoid", tape, grad_fn)


def softmax_rows(x: Tensor, tape: Tape | None = None) -> Tensor:
    """Row-wise softmax, stabilized by row-max subtraction."""
    _check_2d("softmax_rows", x)
    shifted = x.data - x.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=1, keepdims=True)

    def grad_fn(d):
        s = (d * out).sum(axis=1, keepdims=True)
        return (out * (d - s),)

    return _make(out, (x,), "softmax_rows", tape, grad_fn)


def masked_softmax_rows(x: Tensor, mask: np.ndarray, tape: Tape | None = None) -> Tensor:
    """Row softmax restricted to positions where ``mask`` is true.

    Excluded positions get weight 0; rows whose mask is empty come out
    all-zero (callers treat such nodes as having no neighbors).
    """
    _check_2d("masked_softmax_rows", x)
    m = np.asarray(mask, dtype=bool)
    if m.shape != x.shape:
        raise ShapeError(f"mask shape {m.shape} does not match input {x.shape}")
    row_has = m.any(axis=1)
    neg_inf = np.where(m, x.data, -np.inf)
    row_max = np.where(row_has, neg_inf.max(axis=1, initial=-np.inf), 0.0)
    e = np.exp(np.where(m, neg_inf - row_max[:, None], -np.inf))
    e = np.where(m, e, 0.0)
    denom = e.sum(axis=1, keepdims=True)
    out = np.divide(e, denom, out=np.zeros_like(e), where=denom > 0)

    def grad_fn(d):
        s = (d * out).sum(axis=1, keepdims=True)
        return (out * (d - s),)

    return _make(out, (x,), "masked_softmax_rows", tape, grad_fn)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5,
               tape: Tape | None = None) -> Tensor:
    """Per-row normalization to mean 0 / variance 1, then affine scale and shift."""
    _check_2d("layer_norm", x)
    d_width = x.shape[1]
    if gamma.shape != (d_width,) or beta.shape != (d_width,):
        raise ShapeError(f"layer_norm affine params must have shape ({d_width},), "
                         f"got {gamma.shape} and {beta.shape}")
    mu = x.data.mean(axis=1, keepdims=True)
    centered = x.data - mu
    var = (centered * centered).mean(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv
    out = xhat * gamma.data + beta.data
    g_data = gamma.data

    def grad_fn(d):
        d_xhat = d * g_data
        d_gamma = (d * xhat).sum(axis=0)
        d_beta = d.sum(axis=0)
        mean_dxhat = d_xhat.mean(axis=1, keepdims=True)
        mean_dxhat_xhat = (d_xhat * xhat).mean(axis=1, keepdims=True)
        d_x = inv * (d_xhat - mean_dxhat - xhat * mean_dxhat_xhat)
        return d_x, d_gamma, d_beta

    return _make(out, (x, gamma, beta), "layer_norm", tape, grad_fn)


def concat_cols(parts: Sequence[Tensor], tape: Tape | None = None) -> Tensor:
    """Column-wise concatenation; backward slices adjoints back to each part."""
    if not parts:
        raise ShapeError("concat_cols needs at least one part")
    _check_2d("concat_cols", *parts)
    rows = parts[0].shape[0]
    for p in parts:
        if p.shape[0] != rows:
            raise ShapeError(f"concat_cols row counts disagree: {rows} vs {p.shape[0]}")
    widths = [p.shape[1] for p in parts]
    offsets = np.cumsum([0] + widths)

    def grad_fn(d):
        return tuple(d[:, offsets[i]:offsets[i + 1]] for i in range(len(widths)))

    return _make(np.concatenate([p.data for p in parts], axis=1),
                 tuple(parts), "concat_cols", tape, grad_fn)


def dropout(x: Tensor, p: float, training: bool, rng: np.random.Generator | None = None,
            tape: Tape | None = None) -> Tensor:
    """Inverted dropout: survivors scaled by 1/(1-p) at train time, identity in eval."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must be in [0, 1), got {p}")
    if not training or p == 0.0:
        return x
    if rng is None:
        raise ValueError("dropout in training mode needs an rng")
    scale = 1.0 / (1.0 - p)
    keep = (rng.random(x.shape) >= p) * scale

    def grad_fn(d):
        return (d * keep,)

    return _make(x.data * keep, (x,), "dropout", tape, grad_fn)


def sum_all(x: Tensor, tape: Tape | None = None) -> Tensor:
    shape = x.shape

    def grad_fn(d):
        return (np.full(shape, _scalar(d)),)

    return _make(np.asarray(x.data.sum()), (x,), "sum_all", tape, grad_fn)


# ---------------------------------------------------------------------------
# losses

def cross_entropy_logits(logits: Tensor, labels: np.ndarray, tape: Tape | None = None) -> Tensor:
    """Mean categorical cross-entropy from logits via stabilized log-softmax."""
    _check_2d("cross_entropy_logits", logits)
    labels = np.asarray(labels, dtype=np.int64)
    n, c = logits.shape
    if labels.shape != (n,):
        raise ShapeError(f"expected {n} labels, got shape {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= c):
        raise ValueError(f"label out of range for {c} classes: {labels.min()}..{labels.max()}")
    z = logits.data
    z_max = z.max(axis=1, keepdims=True)
    lse = z_max + np.log(np.exp(z - z_max).sum(axis=1, keepdims=True))
    log_p = z - lse
    loss = -log_p[np.arange(n), labels].mean()
    soft = np.exp(log_p)

    def grad_fn(d):
        g = soft.copy()
        g[np.arange(n), labels] -= 1.0
        return (g * (_scalar(d) / n),)

    return _make(np.asarray(loss), (logits,), "cross_entropy_logits", tape, grad_fn)


def bce_with_logits(logits: Tensor, targets: np.ndarray, tape: Tape | None = None) -> Tensor:
    """Mean element-wise binary cross-entropy from logits (stabilized)."""
    t = np.asarray(targets, dtype=np.float64)
    if t.shape != logits.shape:
        raise ShapeError(f"targets shape {t.shape} does not match logits {logits.shape}")
    z = logits.data
    loss = (np.maximum(z, 0.0) - z * t + np.log1p(np.exp(-np.abs(z)))).mean()
    sig = np.where(z >= 0, 1.0 / (1.0 + np.exp(-np.abs(z))),
                   np.exp(-np.abs(z)) / (1.0 + np.exp(-np.abs(z))))
    size = z.size

    def grad_fn(d):
        return ((sig - t) * (_scalar(d) / size),)

    return _make(np.asarray(loss), (logits,), "bce_with_logits", tape, grad_fn)


# ---------------------------------------------------------------------------
# parameter serialization

def save_params(path, params: dict[str, Tensor]) -> None:
    """Write a named parameter map as versioned JSON (name -> shape + flat data)."""
    payload = {
        "format": PARAMS_FORMAT,
        "version": PARAMS_VERSION,
        "params": {
            name: {"shape": list(t.shape), "data": t.data.reshape(-1).tolist()}
            for name, t in params.items()
        },
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, sort_keys=True)
        fh.write("\n")


def load_params(path) -> dict[str, np.ndarray]:
    """Read a parameter map written by ``save_params``; validates header and shapes."""
    with open(path) as fh:
        payload = json.load(fh)
    if payload.get("format") != PARAMS_FORMAT:
        raise ValueError(f"not a {PARAMS_FORMAT} file: {path}")
    if payload.get("version") != PARAMS_VERSION:
        raise ValueError(f"unsupported params version {payload.get('version')} in {path}")
    out = {}
    for name, entry in payload["params"].items():
        shape = tuple(entry["shape"])
        arr = np.asarray(entry["data"], dtype=np.float64)
        if arr.size != int(np.prod(shape, dtype=np.int64)):
            raise ValueError(f"parameter '{name}' has {arr.size} values for shape {shape}")
        out[name] = np.ascontiguousarray(arr.reshape(shape))
    return out


def xavier_uniform(shape: tuple[int, ...], rng: np.random.Generator) -> np.ndarray:
    """Uniform init in +-sqrt(6/(fan_in+fan_out))."""
    fan_in, fan_out = shape[0], shape[-1]
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)
