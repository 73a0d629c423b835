"""Parallel trial execution, trial files and aggregation."""
from __future__ import annotations

import json
import logging
import os
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from ..evolve import NpenasConfig, RunRecord, SearchFailed, best_at, ea_fanout, npenas, random_search
from ..predictor import set_backend
from .config import AlgoSpec, SpaceSource

log = logging.getLogger(__name__)

SUMMARY_COLUMNS = ("algo", "queries", "mean_test_err", "p30", "p70", "trials")


def atomic_write(path: Path, text: str) -> None:
    """Write via a sibling temp file and rename, so readers never see half a file."""
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def run_algo(space, oracle, algo: AlgoSpec, seed: int) -> RunRecord:
    kw = algo.kw
    if algo.kind == "npenas":
        return npenas(space, oracle, NpenasConfig(**kw, seed=seed))
    if algo.kind == "random":
        return random_search(space, oracle, int(kw.get("budget", 150)), seed)
    return ea_fanout(space, oracle, int(kw.get("budget", 150)), int(kw["k"]), seed=seed,
                     **{k: kw[k] for k in ("n0", "offspring", "parents") if k in kw})


@dataclass(frozen=True)
class Trial:
    source: SpaceSource
    algo: AlgoSpec
    index: int
    seed: int
    backend: str | None = None


@dataclass
class TrialResult:
    trial: Trial
    lines: list[dict]
    wall_time: float
    regret: float | None
    error: str | None = None


def execute(trial: Trial) -> TrialResult:
    if trial.backend is not None:
        set_backend(trial.backend)
    space, oracle = trial.source.load()
    try:
        rec = run_algo(space, oracle, trial.algo, trial.seed)
    except SearchFailed as exc:
        lines = exc.record.lines() + [{"type": "error", "message": str(exc)}]
        return TrialResult(trial, lines, exc.record.wall_time, None, str(exc))
    except Exception as exc:  # surfaced as a runtime failure by the caller
        return TrialResult(trial, [{"type": "error", "message": f"{type(exc).__name__}: {exc}"}], 0.0, None, str(exc))
    lines = rec.lines()
    lines[0]["name"] = trial.algo.name
    return TrialResult(trial, lines, rec.wall_time, rec.regret(oracle))


def trial_path(out: Path, algo: str, index: int) -> Path:
    return out / "trials" / algo / f"trial_{index:04d}.jsonl"


def run_trials(trials: Sequence[Trial], jobs: int = 1, out: Path | None = None) -> list[TrialResult]:
    """Run trials, in worker processes when ``jobs > 1``; results keep input order.

    With ``out`` each finished trial is written as soon as it completes.
    """
    results = []

    def finish(res: TrialResult):
        if out is not None:
            path = trial_path(out, res.trial.algo.name, res.trial.index)
            if res.error is not None:
                path.unlink(missing_ok=True)  # a stale complete file must not be aggregated
                path = path.with_suffix(".partial.jsonl")
            atomic_write(path, "".join(dumps(l) + "\n" for l in res.lines))
        level = logging.ERROR if res.error else logging.INFO
        log.log(level, "%s trial %d seed %d: %.2fs%s", res.trial.algo.name, res.trial.index, res.trial.seed,
                res.wall_time, f" FAILED {res.error}" if res.error else "")
        results.append(res)

    if jobs <= 1 or len(trials) <= 1:
        for t in trials:
            finish(execute(t))
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            for res in pool.map(execute, trials, chunksize=1):
                finish(res)
    return results


def load_traces(out: Path, algo: str) -> list[list[dict]]:
    """Checkpoint lists from every completed trial file of ``algo``, in index order."""
    traces = []
    for path in sorted((out / "trials" / algo).glob("trial_*.jsonl")):
        if path.name.endswith(".partial.jsonl"):
            continue
        with path.open(encoding="utf-8") as fh:
            traces.append([c for c in map(json.loads, fh) if c.get("type") == "checkpoint"])
    return traces


def aggregate_traces(algo: str, traces: Sequence[Sequence[dict]], step: int, budget: int) -> list[dict]:
    """Mean and 30/70 percentiles of the best-so-far test error at every multiple of ``step``."""
    rows = []
    for q in range(step, budget + 1, step):
        vals = []
        for tr in traces:
            hit = best_at(tr, q)
            if hit is None:
                break
            vals.append(hit["best_test_err"])
        if not traces or len(vals) < len(traces):
            continue
        v = np.asarray(vals)
        rows.append({"algo": algo, "queries": q, "mean_test_err": float(v.mean()),
                     "p30": float(np.percentile(v, 30)), "p70": float(np.percentile(v, 70)), "trials": len(v)})
    return rows


def summary_csv(rows: Iterable[dict]) -> str:
    lines = [",".join(SUMMARY_COLUMNS)]
    for r in rows:
        lines.append(f"{r['algo']},{r['queries']},{r['mean_test_err']:.8f},{r['p30']:.8f},{r['p70']:.8f},{r['trials']}")
    return "\n".join(lines) + "\n"


def aggregate_dir(out: Path, algos: Sequence[AlgoSpec], step: int) -> str:
    rows = []
    for a in algos:
        rows.extend(aggregate_traces(a.name, load_traces(out, a.name), step, a.budget))
    return summary_csv(rows)
