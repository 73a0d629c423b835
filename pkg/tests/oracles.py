"""Independent reference computations used as test oracles.

None of these share code with the package: they work on plain Python
lists or on networkx graphs.
"""
from __future__ import annotations

import itertools
import math

import networkx as nx
import numpy as np


def adjacency_lists(adj) -> list[list[int]]:
    n = len(adj)
    return [[j for j in range(n) if adj[i][j]] for i in range(n)]


def node_paths(adj) -> list[list[int]]:
    """Every input-to-output node path, by naive recursion."""
    n = len(adj)
    succ = adjacency_lists(adj)
    out = []

    def go(v, trail):
        if v == n - 1:
            out.append(trail[:])
            return
        for w in succ[v]:
            trail.append(w)
            go(w, trail)
            trail.pop()

    if n >= 2:
        go(0, [0])
    return out


def op_sequences(ops, adj) -> list[tuple]:
    """Interior op sequence of every node path (with repeats)."""
    return [tuple(ops[v] for v in p[1:-1]) for p in node_paths(adj)]


def on_some_path(adj) -> set[int]:
    return {v for p in node_paths(adj) for v in p}


def to_nx(ops, adj, names) -> nx.DiGraph:
    n = len(ops)
    g = nx.DiGraph()
    for v, o in enumerate(ops):
        g.add_node(v, label=(names[o], v == 0, v == n - 1))
    for i in range(n):
        for j in range(n):
            if adj[i][j]:
                g.add_edge(i, j)
    return g


def isomorphic(a, b) -> bool:
    """Labelled DAG isomorphism preserving op names and input/output roles."""
    ga = to_nx(a.ops, a.adj.tolist(), a.vocab.names)
    gb = to_nx(b.ops, b.adj.tolist(), b.vocab.names)
    return nx.is_isomorphic(ga, gb, node_match=lambda x, y: x["label"] == y["label"])


def brute_canonical(ops, adj) -> tuple:
    """Lexicographically smallest relabelling over interior permutations.

    A complete isomorphism invariant for cells whose input is node 0 and
    output node N-1.
    """
    n = len(ops)
    best = None
    for perm in itertools.permutations(range(1, n - 1)):
        order = (0, *perm, n - 1)
        form = (
            tuple(ops[v] for v in order),
            tuple(adj[order[i]][order[j]] for i in range(n) for j in range(n)),
        )
        if best is None or form < best:
            best = form
    return best


def central_difference(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Numerical gradient of scalar ``f`` at ``x`` (any shape).

    Five-point central stencil, so truncation error is O(h^4) and the
    comparison is limited by rounding rather than curvature.
    """
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat, gflat = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        vals = []
        for step in (2, 1, -1, -2):
            flat[i] = old + step * h
            vals.append(f(x))
        flat[i] = old
        gflat[i] = (-vals[0] + 8 * vals[1] - 8 * vals[2] + vals[3]) / (12 * h)
    return g


def rel_error(analytic, numeric) -> float:
    """Largest absolute deviation relative to the largest numeric entry."""
    a, n = np.asarray(analytic, dtype=np.float64), np.asarray(numeric, dtype=np.float64)
    scale = max(float(np.max(np.abs(n))), float(np.max(np.abs(a))), 1e-12)
    return float(np.max(np.abs(a - n))) / scale


def expected_min_without_replacement(values, n: int) -> float:
    """E[min] of ``n`` draws without replacement from ``values``."""
    v = sorted(values)
    N = len(v)
    total = math.comb(N, n)
    return sum(v[i] * math.comb(N - 1 - i, n - 1) / total for i in range(N - n + 1))


def normalize_cell(ops, adj, isolated_id):
    """Retype every node off all input-to-output paths as isolated, fed by
    the input.  Returns (ops, adj) as tuples/lists, or None without a path."""
    n = len(ops)
    live = on_some_path(adj)
    if not live:
        return None
    new_ops = [ops[v] if v in live or v in (0, n - 1) else isolated_id for v in range(n)]
    new_adj = [[int(adj[i][j] and i in live and j in live) for j in range(n)] for i in range(n)]
    for v in range(1, n - 1):
        if v not in live:
            new_adj[0][v] = 1
    return tuple(new_ops), new_adj


def all_raw_cells(n, input_id, output_id, interior):
    """Every upper-triangular adjacency with every interior op assignment."""
    pos = [(i, j) for i in range(n) for j in range(i + 1, n)]
    for bits in itertools.product((0, 1), repeat=len(pos)):
        adj = [[0] * n for _ in range(n)]
        for b, (i, j) in zip(bits, pos):
            adj[i][j] = b
        for ops in itertools.product(interior, repeat=n - 2):
            yield (input_id, *ops, output_id), adj


def one_edit_forms(ops, adj, interior, isolated_id) -> set:
    """Canonical forms of cells one atomic edit away from a normalized cell.

    An edit flips one upper-triangular bit or changes one interior op.  A
    flip that puts an isolated node back on a path also gives it an op.
    """
    n = len(ops)
    forms = set()

    def add(o, a):
        r = normalize_cell(o, a, isolated_id)
        if r is not None:
            forms.add(brute_canonical(*r))

    for i in range(n):
        for j in range(i + 1, n):
            a = [row[:] for row in adj]
            a[i][j] ^= 1
            live = on_some_path(a)
            revived = [v for v in (i, j) if ops[v] == isolated_id and v in live]
            for choice in itertools.product(interior, repeat=len(revived)):
                o = list(ops)
                for v, c in zip(revived, choice):
                    o[v] = c
                add(tuple(o), a)
    for v in range(1, n - 1):
        for c in interior:
            if c != ops[v]:
                add(tuple(ops[:v]) + (c,) + tuple(ops[v + 1:]), adj)
    return forms
