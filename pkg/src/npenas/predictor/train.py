"""Training loops, eval-mode prediction and Thompson sampling for the GIN predictors."""
from __future__ import annotations

import threading
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .. import numgrad as ng
from ..archgraph import ArchGraph
from ..space import EvalRecord
from . import backend
from .gin import GinNet, NetSpec, graph_arrays, reference_eval, reference_loss_grad

PLAN_CHUNK = 50


class TrainingError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    epochs: int
    batch_size: int = 16
    lr: float = 5e-3
    weight_decay: float = 1e-4
    seed: int = 0
    direction: str = "in"
    dropout: float = 0.1

    @classmethod
    def uncertainty(cls, seed: int = 0, **kw) -> "TrainConfig":
        return cls(epochs=kw.pop("epochs", 1000), seed=seed, **kw)

    @classmethod
    def point(cls, seed: int = 0, **kw) -> "TrainConfig":
        return cls(epochs=kw.pop("epochs", 300), seed=seed, **kw)

    def with_seed(self, seed: int) -> "TrainConfig":
        return replace(self, seed=seed)


@dataclass
class TrainedPredictor:
    net: GinNet
    losses: np.ndarray

    @property
    def spec(self) -> NetSpec:
        return self.net.spec

    def arrays(self, archs: Sequence[ArchGraph]):
        return graph_arrays(archs, self.spec)

    def embed(self, archs: Sequence[ArchGraph]) -> np.ndarray:
        emb, _ = reference_eval(self.net, *self.arrays(archs))
        return emb


class UncertaintyPredictor(TrainedPredictor):
    def predict(self, archs: Sequence[ArchGraph]) -> tuple[np.ndarray, np.ndarray]:
        """Eval-mode (mu, sigma) arrays."""
        if not archs:
            return np.empty(0), np.empty(0)
        _, (mu, sigma) = reference_eval(self.net, *self.arrays(archs))
        return mu, sigma


class PointPredictor(TrainedPredictor):
    def predict(self, archs: Sequence[ArchGraph]) -> np.ndarray:
        if not archs:
            return np.empty(0)
        _, (yhat,) = reference_eval(self.net, *self.arrays(archs))
        return yhat


def _dataset(D: Sequence[EvalRecord] | tuple[Sequence[ArchGraph], Sequence[float]]):
    if isinstance(D, tuple):
        archs, y = list(D[0]), np.asarray(D[1], dtype=np.float64)
    else:
        archs, y = [r.arch for r in D], np.array([r.val_err for r in D], dtype=np.float64)
    if len(archs) < 2:
        raise TrainingError("need at least two training samples (batch norm)")
    if len(archs) != len(y):
        raise TrainingError("architectures and targets differ in length")
    if not np.all((y > 0) & (y < 1)):
        raise TrainingError("targets must lie in (0, 1)")
    return archs, y


def batch_bounds(n: int, batch: int) -> list[tuple[int, int]]:
    """Consecutive minibatches; a trailing batch of one joins its predecessor."""
    out, start = [], 0
    while start < n:
        size = min(batch, n - start)
        if n - start - size == 1:
            size += 1
        out.append((start, start + size))
        start += size
    return out


def epoch_plan(rng: np.random.Generator, n: int, epochs: int, fc: int, rate: float):
    """Sample orderings and per-sample dropout rows for ``epochs`` epochs."""
    perms = np.stack([rng.permutation(n) for _ in range(epochs)]).astype(np.int64)
    if rate > 0:
        masks = ng.dropout_mask((epochs, n, fc), rate, rng)
    else:
        masks = np.ones((epochs, n, fc))
    return perms, masks


_kernels = threading.local()


def _kernel(spec: NetSpec, batch: int):
    cache = getattr(_kernels, "cache", None)
    if cache is None:
        cache = _kernels.cache = {}
    key = (spec, batch)
    if key not in cache:
        cache[key] = backend.core().GinKernel(
            spec.n_nodes, spec.vocab_size, spec.hidden, spec.fc, spec.layers, spec.head == "uncertainty", batch + 1
        )
    return cache[key]


def fit(D, head: str, cfg: TrainConfig) -> TrainedPredictor:
    """Re-initialize a predictor from ``cfg.seed`` and train it on ``D``."""
    archs, y = _dataset(D)
    if cfg.batch_size < 2:
        raise TrainingError("batch size must be at least 2")
    g0 = archs[0]
    spec = NetSpec(g0.num_nodes, len(g0.vocab), head, direction=cfg.direction, dropout=cfg.dropout)
    rng = np.random.default_rng(cfg.seed)
    net = GinNet.initialize(spec, rng)
    X, A = graph_arrays(archs, spec, g0.vocab)
    n = len(archs)
    losses = np.empty(cfg.epochs)
    adam = ng.AdamState(lr=cfg.lr, weight_decay=cfg.weight_decay)
    adam.m, adam.v = [np.zeros(spec.n_params)], [np.zeros(spec.n_params)]
    compiled = backend.get_backend() == "compiled"
    if compiled:
        S = np.ascontiguousarray(ng.neighbor_matrix(A, spec.direction))
        kern = _kernel(spec, cfg.batch_size)
        grad = np.zeros(spec.n_params)
    bounds = batch_bounds(n, cfg.batch_size)
    for e0 in range(0, cfg.epochs, PLAN_CHUNK):
        k = min(PLAN_CHUNK, cfg.epochs - e0)
        perms, masks = epoch_plan(rng, n, k, spec.fc, spec.dropout)
        if compiled:
            adam.t = kern.train_epochs(
                net.params, grad, net.buffers, X, S, y, perms, masks, cfg.batch_size,
                adam.m[0], adam.v[0], adam.t, adam.lr, adam.beta1, adam.beta2, adam.eps, adam.weight_decay,
                losses[e0:e0 + k],
            )
            continue
        for e in range(k):
            total = 0.0
            for a, b in bounds:
                idx = perms[e, a:b]
                loss, grad = reference_loss_grad(net, X[idx], A[idx], y[idx], masks[e, a:b])
                ng.adam_step([net.params], [grad], adam)
                total += loss * (b - a)
            losses[e0 + e] = total / n
    cls = UncertaintyPredictor if head == "uncertainty" else PointPredictor
    return cls(net, losses)


def train_uncertainty(D, cfg: TrainConfig | None = None) -> UncertaintyPredictor:
    return fit(D, "uncertainty", cfg or TrainConfig.uncertainty())


def train_point(D, cfg: TrainConfig | None = None) -> PointPredictor:
    return fit(D, "point", cfg or TrainConfig.point())


def embed(model: TrainedPredictor | GinNet, arch: ArchGraph) -> np.ndarray:
    net = model.net if isinstance(model, TrainedPredictor) else model
    emb, _ = reference_eval(net, *graph_arrays([arch], net.spec))
    return emb[0]


def predict_uncertainty(model: UncertaintyPredictor, arch: ArchGraph) -> tuple[float, float]:
    mu, sigma = model.predict([arch])
    return float(mu[0]), float(sigma[0])


def predict_point(model: PointPredictor, arch: ArchGraph) -> float:
    return float(model.predict([arch])[0])


def thompson_sample(mu, sigma, rng: np.random.Generator):
    """One draw from N(mu, sigma^2) per entry."""
    sigma = np.asarray(sigma, dtype=np.float64)
    if np.any(sigma <= 0):
        raise ValueError("sigma must be positive")
    out = np.asarray(rng.normal(np.asarray(mu, dtype=np.float64), sigma))
    return float(out) if out.ndim == 0 else out
