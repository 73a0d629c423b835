"""Sampler, predictor-comparison and mutation fan-out studies."""
from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from ..predictor import TrainConfig, baseline_mlp, train_point, train_uncertainty
from ..space import (
    FitnessOracle,
    PathDistribution,
    SearchSpace,
    evaluate,
    kl_divergence,
    path_distribution_positions,
    sample_direct_positions,
    sample_prune_positions,
)
from .config import SpaceSource

SAMPLERS = ("direct", "prune")
METHODS = ("NPGE", "NPUGE", "MNPE", "MNAE")
TEST_SIZE = 500


class StudyError(ValueError):
    pass


def direct_positions(space: SearchSpace, n: int, rng: np.random.Generator) -> np.ndarray:
    """``n`` direct draws; beyond the space size, in chunks of distinct cells."""
    parts, left = [], n
    while left > 0:
        take = min(left, len(space))
        parts.append(sample_direct_positions(space, take, rng))
        left -= take
    return np.concatenate(parts) if parts else np.empty(0, dtype=np.int64)


def draw_positions(space: SearchSpace, sampler: str, n: int, rng: np.random.Generator) -> np.ndarray:
    if sampler == "direct":
        return direct_positions(space, n, rng)
    if sampler == "prune":
        return sample_prune_positions(space, n, rng)
    raise StudyError(f"unknown sampler {sampler!r}")


# ---------------------------------------------------------------------------
# sampler bias


@dataclass
class SamplerReport:
    direct: PathDistribution
    prune: PathDistribution
    truth: PathDistribution

    @property
    def kl(self) -> dict[str, float]:
        return {
            "direct_vs_truth": kl_divergence(self.direct, self.truth),
            "prune_vs_truth": kl_divergence(self.prune, self.truth),
        }


def sampler_study(space: SearchSpace, n_samples: int, seed: int) -> SamplerReport:
    if n_samples < 1:
        raise StudyError("n_samples must be positive")
    rng = np.random.default_rng(seed)
    direct = path_distribution_positions(space, direct_positions(space, n_samples, rng))
    prune = path_distribution_positions(space, sample_prune_positions(space, n_samples, rng))
    truth = path_distribution_positions(space, np.arange(len(space)))
    return SamplerReport(direct, prune, truth)


def path_label(space: SearchSpace, path: tuple[int, ...]) -> str:
    names = space.vocab.names
    return ">".join(["input", *(names[i] for i in path), "output"])


def distribution_csv(space: SearchSpace, dist: PathDistribution) -> str:
    lines = ["path,count,prob"]
    for p, c, pr in zip(space.universe.paths, dist.raw_counts, dist.probs):
        lines.append(f"{path_label(space, p)},{int(c)},{pr:.10f}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# predictor comparison


def _test_positions(space, sampler, exclude: set[int], rng, size=TEST_SIZE) -> np.ndarray:
    """``size`` distinct cells outside ``exclude``, drawn with ``sampler``."""
    if sampler == "direct":
        pool = np.array([i for i in range(len(space)) if i not in exclude], dtype=np.int64)
        return rng.choice(pool, size=size, replace=False)
    out: list[int] = []
    seen = set(exclude)
    for _ in range(1000):
        for i in sample_prune_positions(space, 4 * size, rng):
            i = int(i)
            if i not in seen:
                seen.add(i)
                out.append(i)
                if len(out) == size:
                    return np.asarray(out, dtype=np.int64)
    raise StudyError(f"prune sampler found only {len(out)} distinct test cells")


def _predict(method, D, test, seed):
    if method == "NPGE":
        return train_point(D, TrainConfig.point(seed)).predict(test)
    if method == "NPUGE":
        return train_uncertainty(D, TrainConfig.uncertainty(seed)).predict(test)[0]
    enc = "path" if method == "MNPE" else "adjacency"
    return baseline_mlp(enc, D, TrainConfig.point(seed)).predict(test)


def predictor_repeat(space: SearchSpace, oracle: FitnessOracle, sampler: str, sizes, repeat: int, seed: int,
                     methods=METHODS) -> list[dict]:
    """One repeat: nested training prefixes of one draw, one disjoint test set.

    Errors are mean absolute deviations from the true mean validation error,
    in percentage points.
    """
    rng = np.random.default_rng([seed, repeat, SAMPLERS.index(sampler)])
    n_max = max(sizes)
    train_pos = draw_positions(space, sampler, n_max, rng)
    test_pos = _test_positions(space, sampler, set(int(i) for i in train_pos), rng)
    qbase = int(rng.integers(2**40))
    D = [evaluate(oracle, space.archs[i], qbase + j, j) for j, i in enumerate(train_pos)]
    test = [space.archs[i] for i in test_pos]
    truth = oracle.val_mean[test_pos]
    test_dist = path_distribution_positions(space, test_pos)
    rows = []
    for size in sorted(sizes):
        kl = kl_divergence(path_distribution_positions(space, train_pos[:size]), test_dist)
        rows.append({"sampler": sampler, "method": "KL", "size": size, "repeat": repeat, "value": kl})
        for method in methods:
            train_seed = int(rng.integers(2**63))
            pred = _predict(method, D[:size], test, train_seed)
            err = 100.0 * float(np.mean(np.abs(pred - truth)))
            rows.append({"sampler": sampler, "method": method, "size": size, "repeat": repeat, "value": err})
    return rows


def _repeat_task(args):
    source, sampler, sizes, repeat, seed, methods, backend = args
    if backend is not None:
        from ..predictor import set_backend
        set_backend(backend)
    space, oracle = source.load()
    return predictor_repeat(space, oracle, sampler, sizes, repeat, seed, methods)


def predictor_study(source: SpaceSource, sizes, repeats: int, seed: int, jobs: int = 1,
                    methods=METHODS, samplers=SAMPLERS, backend: str | None = None) -> list[dict]:
    space, _ = source.load()
    if len(space) < max(sizes) + TEST_SIZE:
        raise StudyError(f"space of {len(space)} cells cannot hold {max(sizes)} training and {TEST_SIZE} test cells")
    tasks = [(source, s, tuple(sizes), r, seed, tuple(methods), backend) for r in range(repeats) for s in samplers]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            parts = list(ex.map(_repeat_task, tasks))
    else:
        parts = [_repeat_task(t) for t in tasks]
    return [row for part in parts for row in part]


def summarize_predictor_rows(rows: list[dict]) -> list[dict]:
    """Mean and sample std per (sampler, method, size), in a fixed order."""
    groups: dict[tuple, list[float]] = {}
    for r in rows:
        groups.setdefault((r["sampler"], r["method"], r["size"]), []).append(r["value"])
    order = {m: i for i, m in enumerate((*METHODS, "KL"))}
    out = []
    for (sampler, method, size), vals in sorted(
        groups.items(), key=lambda kv: (SAMPLERS.index(kv[0][0]), order.get(kv[0][1], 99), kv[0][2])
    ):
        v = np.asarray(vals)
        std = float(v.std(ddof=1)) if len(v) > 1 else 0.0
        out.append({"sampler": sampler, "method": method, "size": size, "mean": float(v.mean()), "std": std,
                    "repeats": len(v)})
    return out


def predictor_csv(summary: list[dict]) -> str:
    lines = ["sampler,method,size,mean,std,repeats"]
    for r in summary:
        lines.append(f"{r['sampler']},{r['method']},{r['size']},{r['mean']:.6f},{r['std']:.6f},{r['repeats']}")
    return "\n".join(lines) + "\n"


def predictor_table(summary: list[dict]) -> str:
    """Wide layout: one row per (sampler, method), one column per size."""
    sizes = sorted({r["size"] for r in summary})
    cells: dict[tuple, dict] = {}
    for r in summary:
        cells.setdefault((r["sampler"], r["method"]), {})[r["size"]] = r
    lines = ["sampler,method," + ",".join(str(s) for s in sizes)]
    for (sampler, method), by_size in cells.items():
        vals = [f"{by_size[s]['mean']:.3f} ± {by_size[s]['std']:.3f}" if s in by_size else "" for s in sizes]
        lines.append(f"{sampler},{method}," + ",".join(vals))
    return "\n".join(lines) + "\n"


def monotone_decreasing(summary: list[dict], sampler: str, method: str) -> bool:
    vals = [r["mean"] for r in sorted(summary, key=lambda r: r["size"]) if r["sampler"] == sampler and r["method"] == method]
    return all(b <= a for a, b in zip(vals, vals[1:])) and len(vals) > 0


def checkpoints(step: int, budget: int) -> list[int]:
    return list(range(step, budget + 1, step))


def paired_bootstrap_lower(diffs: np.ndarray, rng: np.random.Generator, n_boot: int = 10_000,
                           level: float = 0.95) -> float:
    """One-sided lower confidence bound on the mean of paired differences."""
    diffs = np.asarray(diffs, dtype=np.float64)
    idx = rng.integers(0, len(diffs), size=(n_boot, len(diffs)))
    means = diffs[idx].mean(axis=1)
    return float(np.quantile(means, 1.0 - level))

