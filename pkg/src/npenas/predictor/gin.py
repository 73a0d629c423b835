"""GIN predictor layout, initialization and the numgrad reference route.

Parameters live in one flat float64 vector so the optimizer and the
compiled kernel can treat them as a single buffer; named views slice it.
Batch-norm running statistics live in a second flat vector.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np

from .. import numgrad as ng
from ..archgraph import ArchGraph, Vocab

SIGMA_FLOOR = 1e-4
HEADS = ("point", "uncertainty")


class VocabularyMismatch(ValueError):
    pass


@dataclass(frozen=True)
class NetSpec:
    n_nodes: int
    vocab_size: int
    head: str = "point"
    hidden: int = 32
    fc: int = 16
    layers: int = 3
    direction: str = "in"
    dropout: float = 0.1

    def __post_init__(self):
        if self.head not in HEADS:
            raise ValueError(f"head must be one of {HEADS}")
        if self.direction not in ("symmetric", "in"):
            raise ValueError("direction must be 'symmetric' or 'in'")

    @property
    def activation(self) -> str:
        return "celu" if self.head == "uncertainty" else "relu"

    def param_shapes(self) -> list[tuple[str, tuple[int, ...]]]:
        out = []
        f_in = self.vocab_size
        for l in range(1, self.layers + 1):
            out += [
                (f"gin{l}.W", (f_in, self.hidden)),
                (f"gin{l}.b", (self.hidden,)),
                (f"bn{l}.gamma", (self.hidden,)),
                (f"bn{l}.beta", (self.hidden,)),
            ]
            f_in = self.hidden
        out += [
            ("fc.W", (self.hidden, self.fc)),
            ("fc.b", (self.fc,)),
            ("bnf.gamma", (self.fc,)),
            ("bnf.beta", (self.fc,)),
        ]
        if self.head == "point":
            out += [("out.W", (self.fc, 1)), ("out.b", (1,))]
        else:
            out += [("mu.W", (self.fc, 1)), ("mu.b", (1,)), ("sigma.W", (self.fc, 1)), ("sigma.b", (1,))]
        return out

    def buffer_shapes(self) -> list[tuple[str, tuple[int, ...]]]:
        out = []
        for l in range(1, self.layers + 1):
            out += [(f"bn{l}.mean", (self.hidden,)), (f"bn{l}.var", (self.hidden,))]
        out += [("bnf.mean", (self.fc,)), ("bnf.var", (self.fc,))]
        return out

    @cached_property
    def param_slices(self) -> dict[str, tuple[slice, tuple[int, ...]]]:
        return _slices(self.param_shapes())

    @cached_property
    def buffer_slices(self) -> dict[str, tuple[slice, tuple[int, ...]]]:
        return _slices(self.buffer_shapes())

    @property
    def n_params(self) -> int:
        return sum(int(np.prod(s)) for _, s in self.param_shapes())

    @property
    def n_buffers(self) -> int:
        return sum(int(np.prod(s)) for _, s in self.buffer_shapes())


def _slices(shapes):
    out, off = {}, 0
    for name, shape in shapes:
        size = int(np.prod(shape))
        out[name] = (slice(off, off + size), shape)
        off += size
    return out


def _views(flat: np.ndarray, slices) -> dict[str, np.ndarray]:
    return {name: flat[sl].reshape(shape) for name, (sl, shape) in slices.items()}


class GinNet:
    """Parameters and running statistics of one GIN predictor."""

    def __init__(self, spec: NetSpec, params: np.ndarray, buffers: np.ndarray):
        if params.shape != (spec.n_params,) or buffers.shape != (spec.n_buffers,):
            raise ValueError("flat vectors do not match the layout")
        self.spec = spec
        self.params = params
        self.buffers = buffers

    @classmethod
    def initialize(cls, spec: NetSpec, rng: np.random.Generator) -> "GinNet":
        params = np.zeros(spec.n_params)
        views = _views(params, spec.param_slices)
        for name, arr in views.items():
            kind = name.split(".")[1]
            if kind == "W":
                bound = np.sqrt(6.0 / arr.shape[0])
                arr[...] = rng.uniform(-bound, bound, arr.shape)
            elif kind == "b":
                fan_in = views[name[:-1] + "W"].shape[0]
                bound = 1.0 / np.sqrt(fan_in)
                arr[...] = rng.uniform(-bound, bound, arr.shape)
            elif kind == "gamma":
                arr[...] = 1.0
        return cls(spec, params, fresh_buffers(spec))

    def copy(self) -> "GinNet":
        return GinNet(self.spec, self.params.copy(), self.buffers.copy())

    def named_params(self) -> dict[str, np.ndarray]:
        return _views(self.params, self.spec.param_slices)

    def named_buffers(self) -> dict[str, np.ndarray]:
        return _views(self.buffers, self.spec.buffer_slices)

    def state_dict(self) -> dict[str, np.ndarray]:
        return {**self.named_params(), **self.named_buffers()}


def fresh_buffers(spec: NetSpec) -> np.ndarray:
    buffers = np.zeros(spec.n_buffers)
    for name, arr in _views(buffers, spec.buffer_slices).items():
        if name.endswith(".var"):
            arr[...] = 1.0
    return buffers


def graph_arrays(archs: Sequence[ArchGraph], spec: NetSpec, vocab: Vocab | None = None):
    """One-hot node features (G, N, V) and adjacency (G, N, N) as float64."""
    G, N, V = len(archs), spec.n_nodes, spec.vocab_size
    X = np.zeros((G, N, V))
    A = np.zeros((G, N, N))
    for i, g in enumerate(archs):
        if g.num_nodes != N or len(g.vocab) != V or (vocab is not None and g.vocab != vocab):
            raise VocabularyMismatch(f"architecture with {g.num_nodes} nodes over {len(g.vocab)} kinds")
        X[i, np.arange(N), g.ops] = 1.0
        A[i] = g.adj
    return X, A


# ---------------------------------------------------------------------------
# numgrad route


def _forward_tensors(spec, P, B, X, A, training, mask):
    """Returns (embedding, fc output, head tensors) built with numgrad ops."""
    G, N, _ = X.shape
    M = G * N
    h = ng.Tensor(X)
    act = spec.activation
    for l in range(1, spec.layers + 1):
        z = ng.aggregate_neighbors(h, A, 0.0, spec.direction)
        z = ng.reshape(z, (M, z.shape[-1]))
        p = ng.linear(z, P[f"gin{l}.W"], P[f"gin{l}.b"])
        a = ng.activation(p, act)
        stats = ng.BatchNormStats(B[f"bn{l}.mean"], B[f"bn{l}.var"])
        hn = ng.batch_norm(a, P[f"bn{l}.gamma"], P[f"bn{l}.beta"], stats, training)
        h = ng.reshape(hn, (G, N, spec.hidden))
    emb = ng.global_mean_pool(ng.reshape(h, (M, spec.hidden)), np.repeat(np.arange(G), N), G)
    q = ng.activation(ng.linear(emb, P["fc.W"], P["fc.b"]), act)
    stats = ng.BatchNormStats(B["bnf.mean"], B["bnf.var"])
    q = ng.batch_norm(q, P["bnf.gamma"], P["bnf.beta"], stats, training)
    if training and spec.dropout > 0:
        q = ng.dropout(q, spec.dropout, True, mask=mask)
    if spec.head == "point":
        o = ng.reshape(ng.linear(q, P["out.W"], P["out.b"]), (G,))
        return emb, (ng.activation(o, "sigmoid"),)
    mu = ng.reshape(ng.linear(q, P["mu.W"], P["mu.b"]), (G,))
    s = ng.activation(ng.reshape(ng.linear(q, P["sigma.W"], P["sigma.b"]), (G,)), "softplus")
    return emb, (mu, ng.shift(s, SIGMA_FLOOR))


def _tensor_views(net: GinNet, requires_grad: bool):
    return {k: ng.Tensor(v, requires_grad=requires_grad, name=k) for k, v in net.named_params().items()}


def reference_loss_grad(net: GinNet, X, A, y, mask) -> tuple[float, np.ndarray]:
    """Training-mode loss and flat gradient; updates running statistics."""
    P = _tensor_views(net, True)
    with ng.Tape() as tape:
        _, head = _forward_tensors(net.spec, P, net.named_buffers(), X, A, True, mask)
        if net.spec.head == "point":
            loss = ng.mse(head[0], y)
        else:
            loss = ng.gaussian_nll(head[0], head[1], y)
    names = list(P)
    grads = ng.backward(tape, loss, [P[k] for k in names])
    flat = np.empty_like(net.params)
    for k, g in zip(names, grads):
        flat[net.spec.param_slices[k][0]] = g.reshape(-1)
    return float(loss.data), flat


def reference_eval(net: GinNet, X, A):
    """Eval-mode forward: (embeddings, head outputs as arrays)."""
    P = _tensor_views(net, False)
    # eval mode never touches running stats, but keep them safe anyway
    B = {k: v.copy() for k, v in net.named_buffers().items()}
    emb, head = _forward_tensors(net.spec, P, B, X, A, False, None)
    return emb.data, tuple(t.data for t in head)
