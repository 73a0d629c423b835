"""A small dense-tensor engine with tape-based reverse-mode gradients.

Only the primitives needed by graph-isomorphism-network and MLP predictors
are provided.  Everything is float64.  Operations record themselves on the
active :class:`Tape` when any input requires a gradient::

    with Tape() as tape:
        loss = mse(linear(x, W, b), y)
    grads = backward(tape, loss, [W, b])
"""
from __future__ import annotations

import json
import math
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)
BN_EPS = 1e-5


class NonFiniteError(FloatingPointError):
    pass


class ShapeError(ValueError):
    pass


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def __repr__(self):
        tag = f" {self.name}" if self.name else ""
        return f"Tensor{tag}(shape={self.shape}, requires_grad={self.requires_grad})"


@dataclass
class _Entry:
    inputs: tuple[Tensor, ...]
    output: Tensor
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]


_local = threading.local()


class Tape:
    """Ordered record of primitive ops; one per forward/backward pass."""

    def __init__(self):
        self.entries: list[_Entry] = []
        self.watched: set[int] = set()

    def __enter__(self):
        stack = getattr(_local, "stack", None)
        if stack is None:
            stack = _local.stack = []
        stack.append(self)
        return self

    def __exit__(self, *exc):
        _local.stack.pop()
        return False

    def watch(self, t: Tensor) -> Tensor:
        """Register a leaf so it can itself serve as the loss."""
        self.watched.add(id(t))
        return t

    def record(self, inputs, output, backward):
        self.entries.append(_Entry(tuple(inputs), output, backward))

    def __len__(self):
        return len(self.entries)


def _active() -> Tape | None:
    stack = getattr(_local, "stack", None)
    return stack[-1] if stack else None


def _finite(arr: np.ndarray, what: str) -> np.ndarray:
    if not np.isfinite(arr).all():
        raise NonFiniteError(f"non-finite values produced by {what}")
    return arr


def _emit(data: np.ndarray, inputs: Sequence[Tensor], backward, what: str) -> Tensor:
    out = Tensor(_finite(data, what))
    tape = _active()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        tape.record(inputs, out, backward)
    return out


def backward(tape: Tape, loss: Tensor, params: Sequence[Tensor] | None = None):
    """Reverse-mode sweep from a scalar ``loss``.

    Sets ``.grad`` on every tensor reached.  When ``params`` is given,
    returns their gradients in order, zeros for parameters the loss does
    not depend on.
    """
    if loss.data.size != 1:
        raise ShapeError("loss must be a scalar")
    on_tape = id(loss) in tape.watched or any(e.output is loss for e in tape.entries)
    if not on_tape:
        raise KeyError("loss was not recorded on this tape")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    reached: dict[int, Tensor] = {id(loss): loss}
    for entry in reversed(tape.entries):
        g = grads.get(id(entry.output))
        if g is None:
            continue
        for t, gi in zip(entry.inputs, entry.backward(g)):
            if gi is None or not t.requires_grad:
                continue
            _finite(gi, "backward")
            if id(t) in grads:
                grads[id(t)] = grads[id(t)] + gi
            else:
                grads[id(t)] = gi
                reached[id(t)] = t
    for k, t in reached.items():
        t.grad = grads[k]
    if params is None:
        return None
    return [grads[id(p)] if id(p) in grads else np.zeros_like(p.data) for p in params]


# ---------------------------------------------------------------------------
# elementary ops


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"add: {a.shape} vs {b.shape}")
    return _emit(a.data + b.data, (a, b), lambda g: (g, g), "add")


def shift(x: Tensor, c: float) -> Tensor:
    return _emit(x.data + c, (x,), lambda g: (g,), "shift")


def reshape(x: Tensor, shape) -> Tensor:
    old = x.shape
    return _emit(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),), "reshape")


def total(x: Tensor) -> Tensor:
    return _emit(np.array(x.data.sum()), (x,), lambda g: (np.full(x.shape, float(g)),), "sum")


def linear(x: Tensor, W: Tensor, b: Tensor | None = None) -> Tensor:
    """``x @ W + b`` for ``x`` of shape (B, F_in)."""
    if x.data.ndim != 2 or W.data.ndim != 2 or x.shape[1] != W.shape[0]:
        raise ShapeError(f"linear: x{x.shape} @ W{W.shape}")
    if b is not None and b.shape != (W.shape[1],):
        raise ShapeError(f"linear: bias {b.shape} for {W.shape[1]} outputs")
    y = x.data @ W.data
    if b is not None:
        y = y + b.data

    def bw(g):
        gx = g @ W.data.T
        gW = x.data.T @ g
        return (gx, gW) if b is None else (gx, gW, g.sum(axis=0))

    return _emit(y, (x, W) if b is None else (x, W, b), bw, "linear")


def _softplus(x):
    return np.logaddexp(0.0, x)


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def activation(x: Tensor, kind: str) -> Tensor:
    d = x.data
    if kind == "relu":
        y = np.maximum(d, 0.0)
        return _emit(y, (x,), lambda g: (g * (d > 0),), "relu")
    if kind == "celu":
        neg = np.expm1(np.minimum(d, 0.0))
        y = np.where(d > 0, d, neg)
        return _emit(y, (x,), lambda g: (g * np.where(d > 0, 1.0, neg + 1.0),), "celu")
    if kind == "sigmoid":
        y = _sigmoid(d)
        return _emit(y, (x,), lambda g: (g * y * (1.0 - y),), "sigmoid")
    if kind == "softplus":
        y = _softplus(d)
        return _emit(y, (x,), lambda g: (g * _sigmoid(d),), "softplus")
    raise ValueError(f"unknown activation {kind!r}")


# ---------------------------------------------------------------------------
# normalization and regularization


@dataclass
class BatchNormStats:
    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = 0.1

    @classmethod
    def fresh(cls, features: int, momentum: float = 0.1) -> "BatchNormStats":
        return cls(np.zeros(features), np.ones(features), momentum)


def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor, stats: BatchNormStats, training: bool) -> Tensor:
    """Per-feature normalization of a (B, F) input.

    Training mode uses biased batch statistics and folds the unbiased
    variance into the running estimate; eval mode uses the running values.
    """
    d = x.data
    if d.ndim != 2 or gamma.shape != (d.shape[1],) or beta.shape != (d.shape[1],):
        raise ShapeError(f"batch_norm: x{x.shape}, gamma{gamma.shape}, beta{beta.shape}")
    m = d.shape[0]
    if training:
        if m < 2:
            raise ShapeError("batch_norm needs at least 2 rows in training mode")
        mu = d.mean(axis=0)
        var = ((d - mu) ** 2).mean(axis=0)
        mom = stats.momentum
        stats.running_mean[...] = (1 - mom) * stats.running_mean + mom * mu
        stats.running_var[...] = (1 - mom) * stats.running_var + mom * var * (m / (m - 1))
    else:
        mu, var = stats.running_mean, stats.running_var
    inv = 1.0 / np.sqrt(var + BN_EPS)
    xhat = (d - mu) * inv
    y = gamma.data * xhat + beta.data

    def bw(g):
        ggamma = (g * xhat).sum(axis=0)
        gbeta = g.sum(axis=0)
        gxhat = g * gamma.data
        if training:
            gx = (inv / m) * (m * gxhat - gxhat.sum(axis=0) - xhat * (gxhat * xhat).sum(axis=0))
        else:
            gx = gxhat * inv
        return gx, ggamma, gbeta

    return _emit(y, (x, gamma, beta), bw, "batch_norm")


def dropout_mask(shape, rate: float, rng: np.random.Generator) -> np.ndarray:
    return (rng.random(shape) >= rate) / (1.0 - rate)


def dropout(
    x: Tensor, rate: float, training: bool, rng: np.random.Generator | None = None, mask: np.ndarray | None = None
) -> Tensor:
    """Inverted dropout.  Identity in eval mode or when ``rate`` is 0."""
    if not 0.0 <= rate < 1.0:
        raise ValueError("dropout rate must be in [0, 1)")
    if not training or rate == 0.0:
        return x
    if mask is None:
        if rng is None:
            raise ValueError("dropout in training mode needs an rng or a mask")
        mask = dropout_mask(x.shape, rate, rng)
    return _emit(x.data * mask, (x,), lambda g: (g * mask,), "dropout")


# ---------------------------------------------------------------------------
# graph ops


def neighbor_matrix(adj: np.ndarray, direction: str = "symmetric") -> np.ndarray:
    """Message operator from upper-triangular adjacency; row v sums over
    the nodes that send to v."""
    a = np.asarray(adj, dtype=np.float64)
    at = np.swapaxes(a, -1, -2)
    if direction == "symmetric":
        return a + at
    if direction == "in":
        return at
    raise ValueError(f"unknown direction {direction!r}")


def aggregate_neighbors(H: Tensor, adj: np.ndarray, eps: float = 0.0, direction: str = "symmetric") -> Tensor:
    """``(1 + eps) h_v + sum of neighbour features`` (GIN aggregation).

    ``H`` is (N, F) with ``adj`` (N, N), or batched (G, N, F) with (G, N, N).
    """
    S = neighbor_matrix(adj, direction)
    h = H.data
    if h.ndim not in (2, 3) or S.shape[-1] != h.shape[-2] or S.shape[:-1] != h.shape[:-1]:
        raise ShapeError(f"aggregate_neighbors: H{h.shape}, adj{np.shape(adj)}")
    y = (1.0 + eps) * h + S @ h
    St = np.swapaxes(S, -1, -2)
    return _emit(y, (H,), lambda g: ((1.0 + eps) * g + St @ g,), "aggregate_neighbors")


def global_mean_pool(H: Tensor, membership: np.ndarray, num_graphs: int | None = None) -> Tensor:
    """Per-graph mean of node rows; ``membership[i]`` is the graph of row i."""
    memb = np.asarray(membership, dtype=np.int64)
    if memb.shape != (H.shape[0],):
        raise ShapeError("membership must label every row")
    g_count = int(memb.max()) + 1 if num_graphs is None else num_graphs
    sizes = np.bincount(memb, minlength=g_count).astype(np.float64)
    if np.any(sizes == 0):
        raise ShapeError("global_mean_pool: empty graph in batch")
    sums = np.zeros((g_count, H.shape[1]))
    np.add.at(sums, memb, H.data)
    y = sums / sizes[:, None]
    return _emit(y, (H,), lambda g: ((g / sizes[:, None])[memb],), "global_mean_pool")


# ---------------------------------------------------------------------------
# losses


def gaussian_nll(mu: Tensor, sigma: Tensor, y) -> Tensor:
    """Mean of ``log sigma + (y - mu)^2 / (2 sigma^2) + log(2 pi) / 2``."""
    yv = y.data if isinstance(y, Tensor) else np.asarray(y, dtype=np.float64)
    if mu.shape != sigma.shape or mu.shape != yv.shape:
        raise ShapeError(f"gaussian_nll: mu{mu.shape}, sigma{sigma.shape}, y{yv.shape}")
    s = sigma.data
    if np.any(s <= 0):
        raise ValueError("sigma must be positive")
    r = yv - mu.data
    b = r.size
    val = np.array(np.mean(np.log(s) + r * r / (2.0 * s * s)) + HALF_LOG_2PI)

    def bw(g):
        g = float(g)
        gmu = -g * r / (s * s) / b
        gs = g * (1.0 / s - r * r / s**3) / b
        return gmu, gs

    return _emit(val, (mu, sigma), bw, "gaussian_nll")


def mse(yhat: Tensor, y) -> Tensor:
    yv = y.data if isinstance(y, Tensor) else np.asarray(y, dtype=np.float64)
    if yhat.shape != yv.shape:
        raise ShapeError(f"mse: {yhat.shape} vs {yv.shape}")
    r = yhat.data - yv
    return _emit(np.array(np.mean(r * r)), (yhat,), lambda g: (2.0 * float(g) * r / r.size,), "mse")


# ---------------------------------------------------------------------------
# optimizer


@dataclass
class AdamState:
    lr: float = 5e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)
    t: int = 0


def adam_step(params: Sequence[np.ndarray], grads: Sequence[np.ndarray], state: AdamState) -> Sequence[np.ndarray]:
    """In-place Adam update with L2 weight decay folded into the gradient."""
    if len(params) != len(grads):
        raise ShapeError("params and grads differ in length")
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape or p.shape != m.shape:
            raise ShapeError(f"adam: param {p.shape}, grad {g.shape}")
        if state.weight_decay:
            g = g + state.weight_decay * p
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(path: str | Path, arrays: dict[str, np.ndarray]) -> None:
    """Flat little-endian float64 blob plus a JSON sidecar of (name, shape, offset)."""
    path = Path(path)
    entries, chunks, offset = [], [], 0
    for name, arr in arrays.items():
        a = np.ascontiguousarray(arr, dtype="<f8")
        entries.append({"name": name, "shape": list(a.shape), "offset": offset})
        chunks.append(a.tobytes())
        offset += a.size
    path.write_bytes(b"".join(chunks))
    Path(str(path) + ".json").write_text(json.dumps(entries, indent=1), encoding="utf-8")


def load_checkpoint(path: str | Path) -> dict[str, np.ndarray]:
    path = Path(path)
    flat = np.frombuffer(path.read_bytes(), dtype="<f8")
    entries = json.loads(Path(str(path) + ".json").read_text(encoding="utf-8"))
    out = {}
    for e in entries:
        size = int(np.prod(e["shape"], dtype=np.int64))
        out[e["name"]] = flat[e["offset"]: e["offset"] + size].reshape(e["shape"]).astype(np.float64)
    return out
