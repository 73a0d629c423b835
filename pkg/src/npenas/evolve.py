"""Predictor-guided evolutionary search loops and their baselines.

Every algorithm here returns a :class:`RunRecord`.  A run owns its random
streams, all derived from one integer seed, so a record is a pure function
of (space, oracle, config).  Oracle queries use ``seed * QUERY_STRIDE +
query_index`` as their noise seed.
"""
from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .archgraph import ArchGraph, GraphKey, canonical_key
from .predictor import TrainConfig, thompson_sample, train_point, train_uncertainty
from .space import EvalRecord, FitnessOracle, NeighborhoodExhausted, SearchSpace, evaluate, mutate, sample_direct

VARIANTS = ("bo", "np", "oracle")
P_MAX = 10
QUERY_STRIDE = 1 << 20
LOSS_STRIDE = 50
MAX_STALLED = 100


class SearchFailed(RuntimeError):
    """Raised when a run aborts; ``record`` holds everything up to the failure."""

    def __init__(self, message: str, record: "RunRecord"):
        super().__init__(message)
        self.record = record


@dataclass(frozen=True)
class NpenasConfig:
    n0: int = 10
    total_num: int = 150
    mu_num: int = 100
    t: int = 10
    variant: str = "np"
    seed: int = 0
    p_max: int = P_MAX
    epochs: int | None = None  # None keeps the head's default

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}")
        if self.n0 < 2:
            raise ValueError("n0 must be at least 2")
        if not 1 <= self.t <= self.mu_num:
            raise ValueError("need 1 <= t <= mu_num")
        if self.total_num < self.n0:
            raise ValueError("total_num must be at least n0")
        if self.p_max < 1:
            raise ValueError("p_max must be positive")

    def with_seed(self, seed: int) -> "NpenasConfig":
        return NpenasConfig(**{**asdict(self), "seed": seed})


class Pool:
    """Evaluated architectures in query order, unique by key."""

    def __init__(self, records: Iterable[EvalRecord] = ()):
        self.records: list[EvalRecord] = []
        self.keys: set[GraphKey] = set()
        for r in records:
            self.append(r)

    def append(self, record: EvalRecord) -> None:
        if record.key in self.keys:
            raise ValueError(f"duplicate key {record.key[:12]} in pool")
        self.records.append(record)
        self.keys.add(record.key)

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def ranked(self) -> list[EvalRecord]:
        """Ascending validation error; earlier queries win ties."""
        return sorted(self.records, key=lambda r: r.val_err)

    def best(self) -> EvalRecord:
        return min(self.records, key=lambda r: r.val_err)


@dataclass
class RunRecord:
    algo: str
    seed: int
    config: dict
    iterations: list[dict] = field(default_factory=list)
    trace: list[dict] = field(default_factory=list)
    queries: int = 0
    best: EvalRecord | None = None
    wall_time: float = 0.0

    def observe(self, best: EvalRecord) -> None:
        """Append a best-so-far checkpoint at the current query count."""
        self.best = best
        self.trace.append(
            {"queries": self.queries, "best_key": best.key, "best_val_err": best.val_err, "best_test_err": best.test_err}
        )

    def summary(self) -> dict:
        b = self.best
        return {
            "best_key": None if b is None else b.key,
            "best_val_err": None if b is None else b.val_err,
            "best_test_err": None if b is None else b.test_err,
            "queries": self.queries,
        }

    def regret(self, oracle: FitnessOracle) -> float:
        """Mean validation error of the reported cell minus the space optimum."""
        return oracle.mean_val(self.best.key) - oracle.optimum[1]

    def lines(self) -> list[dict]:
        head = {"type": "config", "algo": self.algo, "seed": self.seed, **self.config}
        iters = [{"type": "iteration", **it} for it in self.iterations]
        trace = [{"type": "checkpoint", **c} for c in self.trace]
        return [head, *iters, *trace, {"type": "summary", **self.summary()}]


def _query(oracle, arch, seed, record: RunRecord) -> EvalRecord:
    r = evaluate(oracle, arch, seed * QUERY_STRIDE + record.queries, record.queries)
    record.queries += 1
    return r


def _streams(seed: int, n: int) -> list[np.random.Generator]:
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(n)]


def init_pool(space: SearchSpace, oracle: FitnessOracle, n0: int, rng: np.random.Generator,
              record: RunRecord | None = None, seed: int = 0) -> Pool:
    """``n0`` distinct direct samples, each evaluated once."""
    record = record if record is not None else RunRecord("init", seed, {})
    pool = Pool()
    for g in sample_direct(space, n0, rng):
        pool.append(_query(oracle, g, seed, record))
    return pool


def generate_candidates(pool: Pool, space: SearchSpace, mu_num: int, rng: np.random.Generator,
                        p_max: int = P_MAX) -> list[ArchGraph]:
    """``mu_num`` distinct mutants of the best pool members, none already in the pool.

    Parents are the ``min(len(pool), p_max)`` lowest-error records, visited in
    order and cycled; each visit asks for ``ceil(mu_num / parents)`` mutants.
    A parent whose two-edit neighborhood runs dry is replaced by the next
    record in rank order.
    """
    if len(pool) == 0:
        raise ValueError("empty pool")
    ranked = pool.ranked()
    n_par = min(len(pool), p_max)
    active = [r.arch for r in ranked[:n_par]]
    reserve = [r.arch for r in ranked[n_par:]]
    k = math.ceil(mu_num / n_par)
    forbidden = set(pool.keys)
    out: list[ArchGraph] = []
    i = 0
    while len(out) < mu_num:
        if not active:
            raise NeighborhoodExhausted(f"pool neighborhoods hold only {len(out)} of {mu_num} candidates")
        i %= len(active)
        want = min(k, mu_num - len(out))
        batch = mutate(space, active[i], want, rng, forbidden, partial=True)
        for g in batch:
            forbidden.add(canonical_key(g))
        out.extend(batch)
        if len(batch) < want:
            active.pop(i)
            if reserve:
                active.insert(i, reserve.pop(0))
        else:
            i += 1
    return out


def select_top(candidates: Sequence, scores: Sequence[float], t: int) -> list:
    """The ``t`` candidates with the smallest scores; ties keep generation order."""
    if len(candidates) != len(scores):
        raise ValueError("candidates and scores differ in length")
    if not 0 <= t <= len(candidates):
        raise ValueError("t out of range")
    order = np.argsort(np.asarray(scores, dtype=np.float64), kind="stable")[:t]
    return [candidates[i] for i in order]


def _scorer(variant: str, oracle: FitnessOracle, epochs: int | None) -> Callable:
    if variant == "oracle":
        return lambda pool, cands, seed, rng: (np.array([oracle.mean_val(canonical_key(g)) for g in cands]), None)
    if variant == "np":
        def score(pool, cands, seed, rng):
            cfg = TrainConfig.point(seed) if epochs is None else TrainConfig.point(seed, epochs=epochs)
            model = train_point(pool.records, cfg)
            return model.predict(cands), model.losses
        return score

    def score_bo(pool, cands, seed, rng):
        cfg = TrainConfig.uncertainty(seed) if epochs is None else TrainConfig.uncertainty(seed, epochs=epochs)
        model = train_uncertainty(pool.records, cfg)
        mu, sigma = model.predict(cands)
        return np.atleast_1d(thompson_sample(mu, sigma, rng)), model.losses
    return score_bo


def npenas(space: SearchSpace, oracle: FitnessOracle, cfg: NpenasConfig) -> RunRecord:
    """Shared loop: retrain from scratch, mutate, score, evaluate the top ``t``."""
    if cfg.total_num > len(space):
        raise ValueError("budget exceeds the space size")
    record = RunRecord(f"npenas-{cfg.variant}", cfg.seed, asdict(cfg))
    start = time.perf_counter()
    r_init, r_mut, r_ts, r_train = _streams(cfg.seed, 4)
    score = _scorer(cfg.variant, oracle, cfg.epochs)
    try:
        pool = init_pool(space, oracle, cfg.n0, r_init, record, cfg.seed)
        record.iterations.append({"iteration": 0, "n": len(pool), "selected": [r.key for r in pool],
                                  "scores": None, "val_errs": [r.val_err for r in pool]})
        record.observe(pool.best())
        it = 0
        while len(pool) < cfg.total_num:
            it += 1
            train_seed = int(r_train.integers(2**63))
            cands = generate_candidates(pool, space, cfg.mu_num, r_mut, cfg.p_max)
            scores, losses = score(pool, cands, train_seed, r_ts)
            take = min(cfg.t, cfg.total_num - len(pool))
            chosen = select_top(list(range(len(cands))), scores, take)
            new = [_query(oracle, cands[i], cfg.seed, record) for i in chosen]
            for r in new:
                pool.append(r)
            entry = {"iteration": it, "n": len(pool), "selected": [r.key for r in new],
                     "scores": [float(scores[i]) for i in chosen], "val_errs": [r.val_err for r in new]}
            if losses is not None:
                entry["train_loss"] = [float(x) for x in losses[::LOSS_STRIDE]] + [float(losses[-1])]
            record.iterations.append(entry)
            record.observe(pool.best())
    except Exception as exc:
        record.wall_time = time.perf_counter() - start
        raise SearchFailed(f"{record.algo} seed {cfg.seed}: {exc}", record) from exc
    record.wall_time = time.perf_counter() - start
    return record


def npenas_bo(space: SearchSpace, oracle: FitnessOracle, cfg: NpenasConfig | None = None) -> RunRecord:
    cfg = cfg or NpenasConfig(variant="bo")
    return npenas(space, oracle, NpenasConfig(**{**asdict(cfg), "variant": "bo"}))


def npenas_np(space: SearchSpace, oracle: FitnessOracle, cfg: NpenasConfig | None = None) -> RunRecord:
    cfg = cfg or NpenasConfig(variant="np")
    return npenas(space, oracle, NpenasConfig(**{**asdict(cfg), "variant": "np"}))


def npenas_oracle(space: SearchSpace, oracle: FitnessOracle, cfg: NpenasConfig | None = None) -> RunRecord:
    """NPENAS with the true mean validation error standing in for the predictor."""
    cfg = cfg or NpenasConfig(variant="oracle")
    return npenas(space, oracle, NpenasConfig(**{**asdict(cfg), "variant": "oracle"}))


def random_search(space: SearchSpace, oracle: FitnessOracle, budget: int, seed: int = 0) -> RunRecord:
    """``budget`` distinct direct samples; a checkpoint after every query."""
    if not 1 <= budget <= len(space):
        raise ValueError("budget must be in [1, space size]")
    record = RunRecord("random", seed, {"budget": budget})
    start = time.perf_counter()
    (rng,) = _streams(seed, 1)
    best = None
    for g in sample_direct(space, budget, rng):
        r = _query(oracle, g, seed, record)
        if best is None or r.val_err < best.val_err:
            best = r
        record.observe(best)
    record.wall_time = time.perf_counter() - start
    return record


def ea_fanout(space: SearchSpace, oracle: FitnessOracle, budget: int, k: int, seed: int = 0,
              n0: int = 10, offspring: int = 10, parents: int | None = None) -> RunRecord:
    """Plain EA with ``k`` children per parent and no predictor.

    Each generation draws ``parents`` parents (default ``ceil(offspring / k)``)
    by binary tournament over the whole pool, evaluates every child, and
    appends the best ``offspring`` of them.  Every evaluation is charged to
    the budget.
    """
    if k < 1 or offspring < 1:
        raise ValueError("k and offspring must be positive")
    if not 2 <= n0 <= budget <= len(space):
        raise ValueError("need 2 <= n0 <= budget <= space size")
    n_parents = parents if parents is not None else math.ceil(offspring / k)
    if n_parents < 1:
        raise ValueError("parents must be positive")
    record = RunRecord("ea", seed, {"budget": budget, "k": k, "n0": n0, "offspring": offspring, "parents": n_parents})
    start = time.perf_counter()
    r_init, r_sel, r_mut = _streams(seed, 3)
    pool = init_pool(space, oracle, n0, r_init, record, seed)
    seen = set(pool.keys)
    best = pool.best()
    record.observe(best)
    stalled = 0
    while record.queries < budget:
        children: list[EvalRecord] = []
        for _ in range(n_parents):
            a, b = r_sel.choice(len(pool), size=2, replace=False)
            ra, rb = pool.records[a], pool.records[b]
            parent = ra if (ra.val_err, a) <= (rb.val_err, b) else rb
            room = budget - record.queries
            if room == 0:
                break
            for g in mutate(space, parent.arch, min(k, room), r_mut, seen, partial=True):
                seen.add(canonical_key(g))
                children.append(_query(oracle, g, seed, record))
        stalled = 0 if children else stalled + 1
        if stalled > MAX_STALLED:
            raise NeighborhoodExhausted("tournament parents have no unseen neighbors left")
        if not children:
            continue
        for r in sorted(children, key=lambda r: r.val_err)[:offspring]:
            pool.append(r)
        for r in children:
            if r.val_err < best.val_err:
                best = r
        record.iterations.append({"n": len(pool), "queries": record.queries, "evaluated": len(children)})
        record.observe(best)
    record.wall_time = time.perf_counter() - start
    return record


def best_at(record: RunRecord | Sequence[dict], queries: int) -> dict | None:
    """Latest checkpoint at or before ``queries`` evaluations."""
    trace = record.trace if isinstance(record, RunRecord) else record
    hit = None
    for c in trace:
        if c["queries"] > queries:
            break
        hit = c
    return hit
