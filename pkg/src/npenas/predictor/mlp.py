"""Fully connected baselines over vector encodings of a cell.

Two hidden ReLU layers of width 64 and a linear output, trained with MSE on
the numgrad engine.  ``path`` uses the path-encoding bits; ``adjacency`` uses
the upper-triangular adjacency bits followed by one-hot ops.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

import numpy as np

from .. import numgrad as ng
from ..archgraph import ArchGraph, PathUniverse, Vocab, adjacency_encoding, path_encode
from .train import TrainConfig, _dataset, batch_bounds

ENCODINGS = ("path", "adjacency")
HIDDEN = 64


@lru_cache(maxsize=None)
def _universe(vocab: Vocab, max_len: int) -> PathUniverse:
    return PathUniverse(vocab, max_len)


def encode(archs: Sequence[ArchGraph], encoding: str) -> np.ndarray:
    if encoding not in ENCODINGS:
        raise ValueError(f"encoding must be one of {ENCODINGS}")
    if encoding == "adjacency":
        return np.stack([adjacency_encoding(g) for g in archs])
    rows = []
    for g in archs:
        uni = _universe(g.vocab, g.num_nodes - 2)
        rows.append(path_encode(g, uni).bits.astype(np.float64))
    return np.stack(rows)


@dataclass
class MlpPredictor:
    encoding: str
    weights: list[np.ndarray]
    losses: np.ndarray

    def predict(self, archs: Sequence[ArchGraph]) -> np.ndarray:
        if not archs:
            return np.empty(0)
        return _forward(self.weights, encode(archs, self.encoding)).data.reshape(-1)


def _forward(weights, X, watched=None):
    h = ng.Tensor(X)
    ws = watched or [ng.Tensor(w) for w in weights]
    n_layers = len(ws) // 2
    for i in range(n_layers):
        h = ng.linear(h, ws[2 * i], ws[2 * i + 1])
        if i < n_layers - 1:
            h = ng.activation(h, "relu")
    return h


def _init(sizes, rng):
    weights = []
    for fin, fout in zip(sizes[:-1], sizes[1:]):
        weights.append(rng.uniform(-np.sqrt(6.0 / fin), np.sqrt(6.0 / fin), (fin, fout)))
        weights.append(rng.uniform(-1.0 / np.sqrt(fin), 1.0 / np.sqrt(fin), fout))
    return weights


def baseline_mlp(encoding: str, D, cfg: TrainConfig | None = None) -> MlpPredictor:
    """Train a fresh MLP baseline on ``D`` (EvalRecords or an (archs, y) pair)."""
    cfg = cfg or TrainConfig.point()
    archs, y = _dataset(D)
    X = encode(archs, encoding)
    rng = np.random.default_rng(cfg.seed)
    weights = _init([X.shape[1], HIDDEN, HIDDEN, 1], rng)
    adam = ng.AdamState(lr=cfg.lr, weight_decay=cfg.weight_decay)
    bounds = batch_bounds(len(y), cfg.batch_size)
    losses = np.empty(cfg.epochs)
    for e in range(cfg.epochs):
        perm = rng.permutation(len(y))
        total = 0.0
        for a, b in bounds:
            idx = perm[a:b]
            params = [ng.Tensor(w, requires_grad=True) for w in weights]
            with ng.Tape() as tape:
                out = ng.reshape(_forward(weights, X[idx], params), (b - a,))
                loss = ng.mse(out, y[idx])
            grads = ng.backward(tape, loss, params)
            ng.adam_step(weights, grads, adam)
            total += float(loss.data) * (b - a)
        losses[e] = total / len(y)
    return MlpPredictor(encoding, weights, losses)
