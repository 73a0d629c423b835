"""Acceptance criteria 1-8.

Each test records one PASS/FAIL line; the lines are printed together in the
terminal summary.  Run alone with ``pytest tests/test_acceptance.py -v`` or
``python tests/test_acceptance.py``.
"""
import itertools
import json
import math
import os
import sys
import time
from collections import defaultdict

import numpy as np
import pytest

from npenas import numgrad as ng
from npenas.archgraph import ArchGraph, EdgeOpCell, NB201_VOCAB, canonical_key, convert_edge_op_cell
from npenas.cli import main as cli_main
from npenas.cli.config import AlgoSpec, SpaceSource
from npenas.cli.runner import Trial, run_trials
from npenas.cli.studies import monotone_decreasing, paired_bootstrap_lower, predictor_study, sampler_study, \
    summarize_predictor_rows
from npenas.evolve import best_at
from npenas.predictor import GinNet, NetSpec, graph_arrays, thompson_sample
from npenas.predictor.gin import reference_loss_grad
from npenas.space import MICRO_NOISE, mutate, neighborhood

from oracles import all_raw_cells, brute_canonical, central_difference, node_paths, normalize_cell, rel_error
from test_numgrad import check_grads

RESULTS: list[str] = []
JOBS = os.cpu_count() or 1
SOURCE = SpaceSource(micro_seed=0)


def report(n: int, ok: bool, detail: str) -> None:
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}"
    RESULTS.append(line)
    print(line)


def finals(results, field):
    return np.array([r.lines[-1][field] for r in results], dtype=np.float64)


@pytest.fixture(scope="module")
def search_runs():
    """600 paired trials (seeds 0..599) of NPENAS-NP, NPENAS-BO and random search."""
    algos = [AlgoSpec("npenas-np", "npenas", (("variant", "np"),)),
             AlgoSpec("npenas-bo", "npenas", (("variant", "bo"),)),
             AlgoSpec("random", "random", (("budget", 150),))]
    start = time.perf_counter()
    res = run_trials([Trial(SOURCE, a, i, i) for a in algos for i in range(600)], JOBS)
    elapsed = time.perf_counter() - start
    by = defaultdict(list)
    for r in res:
        assert r.error is None, r.error
        by[r.trial.algo.name].append(r)
    return by, elapsed


# ---------------------------------------------------------------------------


def test_criterion_1_gradient_integrity(micro_space):
    start = time.perf_counter()
    worst_smooth = worst_relu = 0.0
    for seed in range(5):
        rng = np.random.default_rng(seed)
        x, W, b = rng.standard_normal((4, 3)), rng.standard_normal((3, 5)), rng.standard_normal(5)
        errs = [check_grads(lambda t: ng.linear(*t), [x, W, b], seed)]
        for kind in ("celu", "sigmoid", "softplus"):
            errs.append(check_grads(lambda t, k=kind: ng.activation(t[0], k), [3 * rng.standard_normal((6, 4))], seed))
        for training in (True, False):
            def bn(t, tr=training):
                return ng.batch_norm(t[0], t[1], t[2], ng.BatchNormStats(np.full(3, 0.2), np.full(3, 1.5)), tr)
            errs.append(check_grads(bn, [rng.standard_normal((4, 3)), rng.standard_normal(3), rng.standard_normal(3)], seed))
        mask = ng.dropout_mask((5, 4), 0.3, rng)
        errs.append(check_grads(lambda t: ng.dropout(t[0], 0.3, True, mask=mask), [rng.standard_normal((5, 4))], seed))
        adj = np.triu(rng.random((6, 6)) < 0.5, 1).astype(float)
        for direction in ("symmetric", "in"):
            errs.append(check_grads(lambda t, d=direction: ng.aggregate_neighbors(t[0], adj, 0.1, d),
                                    [rng.standard_normal((6, 3))], seed))
        memb = np.array([0, 0, 1, 1, 1, 2, 2])
        errs.append(check_grads(lambda t: ng.global_mean_pool(t[0], memb), [rng.standard_normal((7, 3))], seed))
        y = rng.standard_normal(5)
        errs.append(check_grads(lambda t: ng.gaussian_nll(t[0], t[1], y),
                                [rng.standard_normal(5), np.abs(rng.standard_normal(5)) + 0.5], seed))
        errs.append(check_grads(lambda t: ng.mse(t[0], y), [rng.standard_normal(5)], seed))
        worst_smooth = max(worst_smooth, *errs)
        r = rng.standard_normal((6, 4))
        r = np.sign(r) * (np.abs(r) + 0.1)
        worst_relu = max(worst_relu, check_grads(lambda t: ng.activation(t[0], "relu"), [r], seed))

    rng = np.random.default_rng(11)
    spec = NetSpec(5, 6, "uncertainty")
    net = GinNet.initialize(spec, rng)
    X, A = graph_arrays([micro_space.archs[i] for i in rng.choice(len(micro_space), 3, replace=False)], spec)
    y = rng.uniform(0.05, 0.5, 3)
    mask = ng.dropout_mask((3, spec.fc), spec.dropout, rng)
    _, grad = reference_loss_grad(net.copy(), X, A, y, mask)
    numeric = central_difference(
        lambda p: reference_loss_grad(GinNet(spec, p.copy(), net.buffers.copy()), X, A, y, mask)[0], net.params)
    e2e = rel_error(grad, numeric)
    elapsed = time.perf_counter() - start

    ok = worst_smooth < 1e-6 and worst_relu < 1e-4 and e2e < 1e-4 and elapsed < 60
    report(1, ok, f"smooth max rel err {worst_smooth:.2e}, relu {worst_relu:.2e}, "
                  f"end-to-end uncertainty net {e2e:.2e}, {elapsed:.1f}s")
    assert ok


def test_criterion_2_analytic_losses():
    start = time.perf_counter()
    half_log_2pi = 0.5 * math.log(2 * math.pi)
    nll_dev = max(
        abs(float(ng.gaussian_nll(ng.Tensor(np.array([m])), ng.Tensor(np.ones(1)), np.array([m])).data) - half_log_2pi)
        for m in (-3.0, 0.0, 0.1, 0.5, 7.0)
    )
    rng = np.random.default_rng(2024)
    n, worst = 100_000, []
    for mu, sigma in ((0.1, 0.02), (0.5, 1.0), (-2.0, 3e-3)):
        d = thompson_sample(np.full(n, mu), np.full(n, sigma), rng)
        mean_z = abs(d.mean() - mu) / (sigma / math.sqrt(n))
        var_z = abs(d.var(ddof=1) - sigma**2) / (sigma**2 * math.sqrt(2 / (n - 1)))
        worst.append(max(mean_z, var_z))
    elapsed = time.perf_counter() - start
    ok = nll_dev <= 1e-12 and max(worst) < 3 and elapsed < 10
    report(2, ok, f"nll deviation {nll_dev:.1e}, largest TS z-score {max(worst):.2f}, {elapsed:.1f}s")
    assert ok


def test_criterion_3_sampler_bias(micro_space):
    start = time.perf_counter()
    kls = [sampler_study(micro_space, 5000, seed).kl for seed in range(600)]
    elapsed = time.perf_counter() - start
    first = kls[0]
    held = np.mean([k["direct_vs_truth"] < k["prune_vs_truth"] for k in kls])
    ok = (first["direct_vs_truth"] < first["prune_vs_truth"] and first["direct_vs_truth"] < 0.02
          and max(k["direct_vs_truth"] for k in kls) < 0.02 and held >= 0.99 and elapsed < 120)
    report(3, ok, f"KL direct {first['direct_vs_truth']:.2e} vs prune {first['prune_vs_truth']:.3f} (seed 0), "
                  f"ordering held in {held:.1%} of 600 seeds, {elapsed:.1f}s")
    assert ok


def test_criterion_4_mutation_fanout():
    algos = [AlgoSpec(f"ea-k{k}", "ea", (("budget", 150), ("k", k))) for k in (1, 10)]
    start = time.perf_counter()
    res = run_trials([Trial(SOURCE, a, i, i) for a in algos for i in range(200)], JOBS)
    elapsed = time.perf_counter() - start
    curves = {}
    for a in algos:
        traces = [[l for l in r.lines if l["type"] == "checkpoint"] for r in res if r.trial.algo == a]
        curves[a.name] = np.array([[best_at(t, q)["best_test_err"] for q in range(10, 151, 10)] for t in traces])
    k1, k10 = curves["ea-k1"], curves["ea-k10"]
    qs = np.arange(10, 151, 10)
    past = qs > 30
    dominated = np.all(k10.mean(axis=0)[past] <= k1.mean(axis=0)[past])
    lower = paired_bootstrap_lower(k1[:, -1] - k10[:, -1], np.random.default_rng(0))
    worst = qs[past][np.argmax((k10.mean(axis=0) - k1.mean(axis=0))[past])]
    ok = dominated and lower > 0 and elapsed < 300
    report(4, ok, f"k=10 <= k=1 past 30 queries: {dominated} (largest excess at {worst} queries), "
                  f"final paired diff lower 95% bound {lower:.2e}, {elapsed:.1f}s")
    assert ok


def test_criterion_5_search_quality(search_runs, micro_oracle):
    by, elapsed = search_runs
    opt = micro_oracle.optimum[1]
    regret = {name: np.array([micro_oracle.mean_val(r.lines[-1]["best_key"]) - opt for r in rs])
              for name, rs in by.items()}
    rs_mean = regret["random"].mean()
    np_test = finals(by["npenas-np"], "best_test_err").mean()
    gap = abs(np_test - micro_oracle.oracle_test_err)
    ok = (regret["npenas-np"].mean() < 0.7 * rs_mean and regret["npenas-bo"].mean() < 0.7 * rs_mean
          and gap <= 2 * MICRO_NOISE and elapsed < 1800)
    report(5, ok, f"regret NP {regret['npenas-np'].mean():.4f}, BO {regret['npenas-bo'].mean():.4f}, "
                  f"RS {rs_mean:.4f}; NP test {np_test:.5f} vs oracle {micro_oracle.oracle_test_err:.5f}; "
                  f"{elapsed / 60:.1f} min on {JOBS} worker(s)")
    assert ok


def test_criterion_6_predictor_study():
    start = time.perf_counter()
    rows = predictor_study(SOURCE, [20, 100, 150], 50, seed=0, jobs=JOBS)
    elapsed = time.perf_counter() - start
    summary = summarize_predictor_rows(rows)
    mono = {(s, m): monotone_decreasing(summary, s, m) for s in ("direct", "prune") for m in ("NPGE", "NPUGE")}
    at150 = {r["method"]: r["mean"] for r in summary if r["sampler"] == "direct" and r["size"] == 150}
    beats = at150["NPGE"] < at150["MNPE"] and at150["NPGE"] < at150["MNAE"]
    ok = all(mono.values()) and beats and elapsed < 1200
    means = ", ".join(f"{m} {at150[m]:.3f}" for m in ("NPGE", "NPUGE", "MNPE", "MNAE"))
    report(6, ok, f"monotone {sorted(k for k, v in mono.items() if v)}; direct n=150 abs err (%): {means}; "
                  f"{elapsed / 60:.1f} min")
    assert ok


def test_criterion_7_structural_invariants(micro_space, tmp_path):
    start = time.perf_counter()
    vocab = micro_space.vocab
    iso = vocab.index("isolated")
    interior = [vocab.index(x) for x in ("A", "B", "C")]
    key_to_form, form_to_key, raw = {}, {}, 0
    for ops, adj in all_raw_cells(5, vocab.input_id, vocab.output_id, interior):
        norm = normalize_cell(ops, adj, iso)
        if norm is None:
            continue
        raw += 1
        k = canonical_key(ArchGraph(norm[0], np.array(norm[1], dtype=np.uint8), vocab))
        form = brute_canonical(*norm)
        key_to_form.setdefault(k, set()).add(form)
        form_to_key.setdefault(form, set()).add(k)
    key_exact = (all(len(v) == 1 for v in key_to_form.values()) and all(len(v) == 1 for v in form_to_key.values())
                 and set(key_to_form) == set(micro_space.keys))

    rng = np.random.default_rng(7)
    mutate_ok = True
    for _ in range(10_000):
        parent = micro_space.archs[rng.integers(len(micro_space))]
        pool = {micro_space.keys[i] for i in rng.choice(len(micro_space), 20, replace=False)}
        k = int(rng.integers(1, 31))
        kids = mutate(micro_space, parent, k, rng, pool, partial=True)
        keys = [canonical_key(g) for g in kids]
        near = set(neighborhood(micro_space, parent, 1)) | set(neighborhood(micro_space, parent, 2))
        pkey = canonical_key(parent)
        if (len(set(keys)) != len(keys) or pkey in keys or set(keys) & pool or not set(keys) <= near
                or len(keys) < min(k, len(near - pool - {pkey}))):
            mutate_ok = False
            break

    conv_ok, cells = True, 0
    ops = NB201_VOCAB.names[1:6]
    for m in (2, 3, 4):
        pairs = [(i, j) for i in range(m) for j in range(i + 1, m)]
        for labels in itertools.product((None, *ops), repeat=len(pairs)):
            edges = {p: o for p, o in zip(pairs, labels) if o is not None}
            g = convert_edge_op_cell(EdgeOpCell(m, edges))
            names = g.op_names()
            got = sorted(tuple(names[v] for v in p[1:-1]) for p in node_paths(g.adj.tolist()))
            cells += 1
            if got != _edge_paths(m, edges):
                conv_ok = False

    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"trials": 2, "algorithms": [
        {"kind": "npenas", "variant": "bo", "total_num": 40, "epochs": 50},
        {"kind": "npenas", "variant": "np", "total_num": 40, "epochs": 50},
        {"kind": "random", "budget": 40}, {"kind": "ea", "k": 10, "budget": 40}]}))
    outs = [tmp_path / "a", tmp_path / "b"]
    codes = [cli_main(["search", "--config", str(cfg), "--out", str(o), "--jobs", str(j)]) for o, j in zip(outs, (1, 2))]
    trees = [{p.relative_to(o): p.read_bytes() for p in sorted(o.rglob("*")) if p.is_file()} for o in outs]
    determinism = codes == [0, 0] and trees[0] == trees[1]
    elapsed = time.perf_counter() - start

    ok = key_exact and mutate_ok and conv_ok and determinism
    report(7, ok, f"keys exact over {raw} raw cells / {len(key_to_form)} classes: {key_exact}; "
                  f"10^4 mutate calls: {mutate_ok}; {cells} edge cells: {conv_ok}; "
                  f"byte-identical reruns: {determinism}; {elapsed:.1f}s")
    assert ok


def _edge_paths(m, edges):
    succ = defaultdict(list)
    for (u, v), op in edges.items():
        succ[u].append((v, op))
    out = []

    def go(u, trail):
        if u == m - 1:
            out.append(tuple(trail))
            return
        for v, op in succ[u]:
            go(v, trail + [op])

    go(0, [])
    return sorted(out)


def test_criterion_8_oracle_sandwich(search_runs, micro_oracle):
    by, _ = search_runs
    oracle_algo = AlgoSpec("npenas-oracle", "npenas", (("variant", "oracle"),))
    res = run_trials([Trial(SOURCE, oracle_algo, i, i) for i in range(200)], JOBS)
    opt = micro_oracle.optimum[1]

    def mean_regret(rs):
        return float(np.mean([micro_oracle.mean_val(r.lines[-1]["best_key"]) - opt for r in rs]))

    o, n, r = mean_regret(res), mean_regret(by["npenas-np"][:200]), mean_regret(by["random"][:200])
    ok = o <= n <= r
    report(8, ok, f"mean final regret over 200 trials: oracle {o:.5f} <= NP {n:.5f} <= RS {r:.5f}")
    assert ok


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v"]))
