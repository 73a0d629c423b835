"""Cell architectures as small labelled DAGs.

A cell is stored as an upper-triangular 0/1 adjacency matrix plus one
operation id per node.  Node 0 is always the input and node ``N-1`` the
output.  Nodes that do not lie on any input-to-output path are normalized
to the ``isolated`` kind and wired from the input, so that every node
receives messages in a graph network.
"""
from __future__ import annotations

import hashlib
import itertools
from dataclasses import dataclass, field
from functools import cached_property, lru_cache
from typing import Iterable, Mapping, NamedTuple, Sequence

import numpy as np

INPUT = "input"
OUTPUT = "output"
ISOLATED = "isolated"

GraphKey = str  # lowercase hex digest


class ArchGraphError(ValueError):
    pass


class NoPath(ArchGraphError):
    """The input node cannot reach the output node."""


class SizeOverflow(ArchGraphError):
    pass


class SizeMismatch(ArchGraphError):
    pass


class UnknownPath(ArchGraphError):
    pass


class CycleDetected(ArchGraphError):
    pass


class OpKind(NamedTuple):
    id: int
    name: str


@dataclass(frozen=True)
class Vocab:
    """Operation vocabulary of a search space.

    Must contain exactly one ``input``, one ``output`` and one ``isolated``
    entry; every other name is an interior operation.
    """

    names: tuple[str, ...]

    def __post_init__(self):
        names = tuple(self.names)
        object.__setattr__(self, "names", names)
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate operation names in {names}")
        for special in (INPUT, OUTPUT, ISOLATED):
            if names.count(special) != 1:
                raise ValueError(f"vocabulary needs exactly one {special!r} entry")

    def __len__(self):
        return len(self.names)

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise KeyError(f"unknown operation {name!r}") from None

    def kind(self, op_id: int) -> OpKind:
        return OpKind(op_id, self.names[op_id])

    @cached_property
    def input_id(self) -> int:
        return self.names.index(INPUT)

    @cached_property
    def output_id(self) -> int:
        return self.names.index(OUTPUT)

    @cached_property
    def isolated_id(self) -> int:
        return self.names.index(ISOLATED)

    @cached_property
    def interior_ids(self) -> tuple[int, ...]:
        special = {self.input_id, self.output_id, self.isolated_id}
        return tuple(i for i in range(len(self.names)) if i not in special)


NB101_VOCAB = Vocab((INPUT, "conv1x1-bn-relu", "conv3x3-bn-relu", "maxpool3x3", OUTPUT, ISOLATED))
NB201_VOCAB = Vocab(
    (INPUT, "none", "skip_connect", "nor_conv_1x1", "nor_conv_3x3", "avg_pool_3x3", OUTPUT, ISOLATED)
)
DARTS_VOCAB = Vocab(
    (
        INPUT,
        "none",
        "max_pool_3x3",
        "avg_pool_3x3",
        "skip_connect",
        "sep_conv_3x3",
        "sep_conv_5x5",
        "dil_conv_3x3",
        "dil_conv_5x5",
        OUTPUT,
        ISOLATED,
    )
)


@dataclass(frozen=True, eq=False)
class ArchGraph:
    """Immutable cell: operation ids plus a 0/1 adjacency matrix."""

    ops: tuple[int, ...]
    adj: np.ndarray
    vocab: Vocab = field(repr=False)

    def __post_init__(self):
        ops = tuple(int(o) for o in self.ops)
        adj = np.array(self.adj, dtype=np.uint8, copy=True)
        n = len(ops)
        if adj.shape != (n, n):
            raise SizeMismatch(f"adjacency shape {adj.shape} does not match {n} ops")
        if np.any(adj > 1):
            raise ArchGraphError("adjacency must be binary")
        for o in ops:
            if not 0 <= o < len(self.vocab):
                raise ArchGraphError(f"op id {o} outside vocabulary of size {len(self.vocab)}")
        adj.setflags(write=False)
        object.__setattr__(self, "ops", ops)
        object.__setattr__(self, "adj", adj)

    @classmethod
    def build(cls, vocab: Vocab, ops: Sequence[str | int], edges: Iterable[tuple[int, int]]) -> "ArchGraph":
        """Build from op names (or ids) and an edge list."""
        ids = [vocab.index(o) if isinstance(o, str) else int(o) for o in ops]
        adj = np.zeros((len(ids), len(ids)), dtype=np.uint8)
        for u, v in edges:
            adj[u, v] = 1
        return cls(tuple(ids), adj, vocab)

    @property
    def num_nodes(self) -> int:
        return len(self.ops)

    @property
    def num_edges(self) -> int:
        return int(self.adj.sum())

    def op_names(self) -> list[str]:
        return [self.vocab.names[o] for o in self.ops]

    def features(self) -> np.ndarray:
        """One-hot node features, shape ``(N, len(vocab))``."""
        x = np.zeros((self.num_nodes, len(self.vocab)))
        x[np.arange(self.num_nodes), self.ops] = 1.0
        return x

    def _ident(self):
        return (self.ops, self.adj.tobytes(), self.vocab.names)

    def __eq__(self, other):
        if not isinstance(other, ArchGraph):
            return NotImplemented
        return self._ident() == other._ident()

    def __hash__(self):
        return hash(self._ident())

    def to_json(self) -> dict:
        return {"ops": list(self.ops), "adj": [int(b) for b in self.adj.reshape(-1)], "n": self.num_nodes}

    @classmethod
    def from_json(cls, obj: Mapping, vocab: Vocab) -> "ArchGraph":
        n = int(obj["n"])
        flat = list(obj["adj"])
        if len(flat) != n * n or len(obj["ops"]) != n:
            raise SizeMismatch(f"arch object inconsistent with n={n}")
        return cls(tuple(obj["ops"]), np.array(flat, dtype=np.uint8).reshape(n, n), vocab)


# ---------------------------------------------------------------------------
# reachability


def _forward_reach(adj: np.ndarray, start: int = 0) -> set[int]:
    n = adj.shape[0]
    seen = {start}
    stack = [start]
    while stack:
        u = stack.pop()
        for v in np.flatnonzero(adj[u]):
            v = int(v)
            if v not in seen:
                seen.add(v)
                stack.append(v)
    return seen


def _backward_reach(adj: np.ndarray, end: int) -> set[int]:
    return _forward_reach(adj.T, end)


def live_nodes(g: ArchGraph) -> set[int]:
    """Nodes lying on at least one input-to-output path."""
    n = g.num_nodes
    fw = _forward_reach(g.adj, 0)
    if n - 1 not in fw:
        return set()
    return fw & _backward_reach(g.adj, n - 1)


# ---------------------------------------------------------------------------
# validation


class Violation(NamedTuple):
    code: str
    detail: str


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple[Violation, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.violations

    @property
    def codes(self) -> list[str]:
        return [v.code for v in self.violations]

    def __iter__(self):
        return iter(self.violations)

    def __len__(self):
        return len(self.violations)


def validate(g: ArchGraph) -> ValidationReport:
    """Check structural invariants; never raises."""
    out: list[Violation] = []
    adj = g.adj
    n = g.num_nodes
    voc = g.vocab

    lower = np.argwhere(np.tril(adj) > 0)
    for i, j in lower:
        out.append(Violation("lower-triangular edge", f"({i}, {j})"))

    for name, pos, vid in ((INPUT, 0, voc.input_id), (OUTPUT, n - 1, voc.output_id)):
        count = g.ops.count(vid)
        if count == 0:
            out.append(Violation(f"missing {name}", ""))
        elif count > 1:
            out.append(Violation(f"duplicated {name}", f"{count} nodes"))
        elif n == 0 or g.ops[pos] != vid:
            out.append(Violation(f"misplaced {name}", f"expected at node {pos}"))
    if out or n < 2:
        return ValidationReport(tuple(out))

    live = live_nodes(g)
    if not live:
        out.append(Violation("no input-to-output path", ""))
        return ValidationReport(tuple(out))
    iso = voc.isolated_id
    for v in range(1, n - 1):
        if v in live:
            if g.ops[v] == iso:
                out.append(Violation("isolated kind on live node", str(v)))
            continue
        if g.ops[v] != iso:
            out.append(Violation("isolated node unmarked", str(v)))
        elif adj[:, v].sum() != 1 or adj[0, v] != 1 or adj[v].sum() != 0:
            out.append(Violation("isolated node miswired", str(v)))
    return ValidationReport(tuple(out))


# ---------------------------------------------------------------------------
# normalization


def _check_shape(g: ArchGraph):
    if np.any(np.tril(g.adj)):
        raise ArchGraphError("adjacency is not strictly upper triangular")
    voc = g.vocab
    if g.num_nodes < 2 or g.ops[0] != voc.input_id or g.ops[-1] != voc.output_id:
        raise ArchGraphError("node 0 must be input and the last node output")


def insert_isolated_nodes(g: ArchGraph, target_size: int) -> ArchGraph:
    """Pad to ``target_size`` nodes and rewire every node that is off all
    input-to-output paths as an ``isolated`` node fed by the input.

    Padding nodes are inserted just before the output node so the output
    stays last.
    """
    _check_shape(g)
    n = g.num_nodes
    if n > target_size:
        raise SizeOverflow(f"graph has {n} nodes, target is {target_size}")
    live = live_nodes(g)
    if not live:
        raise NoPath("input cannot reach output")
    iso = g.vocab.isolated_id

    pad = target_size - n
    order = list(range(n - 1)) + [None] * pad + [n - 1]
    adj = np.zeros((target_size, target_size), dtype=np.uint8)
    ops = []
    for new_u, old_u in enumerate(order):
        if old_u is None or old_u not in live:
            ops.append(iso)
            adj[0, new_u] = 1
            continue
        ops.append(g.ops[old_u])
        for new_v, old_v in enumerate(order):
            if old_v is not None and old_v in live and g.adj[old_u, old_v]:
                adj[new_u, new_v] = 1
    return ArchGraph(tuple(ops), adj, g.vocab)


def normalize(g: ArchGraph, target_size: int | None = None) -> ArchGraph:
    return insert_isolated_nodes(g, g.num_nodes if target_size is None else target_size)


def prune_extraneous(g: ArchGraph) -> ArchGraph:
    """Keep only nodes on some input-to-output path, original order kept."""
    _check_shape(g)
    live = sorted(live_nodes(g))
    if not live:
        raise NoPath("input cannot reach output")
    sub = g.adj[np.ix_(live, live)]
    return ArchGraph(tuple(g.ops[i] for i in live), sub, g.vocab)


# ---------------------------------------------------------------------------
# canonical hashing


def _h(s: str) -> str:
    return hashlib.blake2b(s.encode("utf-8"), digest_size=16).hexdigest()


@lru_cache(maxsize=1 << 18)
def _wl_key(ops: tuple[int, ...], adj_bytes: bytes, names: tuple[str, ...]) -> str:
    n = len(ops)
    adj = np.frombuffer(adj_bytes, dtype=np.uint8).reshape(n, n)
    preds = [np.flatnonzero(adj[:, v]).tolist() for v in range(n)]
    succs = [np.flatnonzero(adj[v]).tolist() for v in range(n)]
    labels = [_h(f"{names[o]}|{int(v == 0)}|{int(v == n - 1)}") for v, o in enumerate(ops)]
    history = [",".join(sorted(labels))]
    for _ in range(n):
        labels = [
            _h(
                labels[v]
                + "<"
                + ",".join(sorted(labels[u] for u in preds[v]))
                + ">"
                + ",".join(sorted(labels[w] for w in succs[v]))
            )
            for v in range(n)
        ]
        history.append(",".join(sorted(labels)))
    return _h(";".join(history))


def canonical_key(g: ArchGraph) -> GraphKey:
    """Isomorphism-invariant digest from ``N`` rounds of directed label
    refinement seeded with op names and input/output roles."""
    return _wl_key(g.ops, g.adj.tobytes(), g.vocab.names)


# ---------------------------------------------------------------------------
# paths


def _walk(g: ArchGraph):
    n = g.num_nodes
    succs = [np.flatnonzero(g.adj[v]).tolist() for v in range(n)]

    def rec(v, trail):
        if v == n - 1:
            yield tuple(trail)
            return
        for w in succs[v]:
            if w != n - 1:
                trail.append(g.ops[w])
            yield from rec(w, trail)
            if w != n - 1:
                trail.pop()

    yield from rec(0, [])


def enumerate_paths(g: ArchGraph) -> list[tuple[int, ...]]:
    """Distinct interior op-id sequences of all input-to-output paths, sorted."""
    if g.num_nodes < 2:
        return []
    return sorted(set(_walk(g)))


def count_paths(g: ArchGraph) -> int:
    """Number of distinct input-to-output node paths (not deduplicated by ops)."""
    n = g.num_nodes
    ways = np.zeros(n, dtype=object)
    ways[0] = 1
    for v in range(1, n):
        ways[v] = sum(ways[u] for u in range(v) if g.adj[u, v])
    return int(ways[n - 1])


@dataclass(frozen=True)
class PathUniverse:
    """All interior op sequences up to ``max_len``, in lexicographic id order."""

    vocab: Vocab
    max_len: int
    paths: tuple[tuple[int, ...], ...] = field(init=False, repr=False)

    def __post_init__(self):
        ids = sorted(self.vocab.interior_ids)
        seqs = [()]
        for length in range(1, self.max_len + 1):
            seqs.extend(itertools.product(ids, repeat=length))
        object.__setattr__(self, "paths", tuple(sorted(seqs)))

    @cached_property
    def index(self) -> dict[tuple[int, ...], int]:
        return {p: i for i, p in enumerate(self.paths)}

    @property
    def universe_id(self) -> str:
        return _h("|".join(self.vocab.names) + f"#{self.max_len}")[:12]

    def __len__(self):
        return len(self.paths)


@dataclass(frozen=True, eq=False)
class PathEncoding:
    bits: np.ndarray
    universe_id: str


def path_encode(g: ArchGraph, universe: PathUniverse) -> PathEncoding:
    bits = np.zeros(len(universe), dtype=np.uint8)
    idx = universe.index
    for p in enumerate_paths(g):
        j = idx.get(p)
        if j is None:
            raise UnknownPath(f"path {p} not in universe {universe.universe_id}")
        bits[j] = 1
    bits.setflags(write=False)
    return PathEncoding(bits, universe.universe_id)


def adjacency_encoding(g: ArchGraph) -> np.ndarray:
    """Flattened upper-triangular adjacency bits followed by one-hot ops."""
    iu = np.triu_indices(g.num_nodes, k=1)
    return np.concatenate([g.adj[iu].astype(np.float64), g.features().reshape(-1)])


# ---------------------------------------------------------------------------
# edge-op cells and cell pairs


@dataclass(frozen=True)
class EdgeOpCell:
    """Cell whose nodes sum feature maps and whose edges carry operations."""

    num_sum_nodes: int
    edge_ops: Mapping[tuple[int, int], str]


def convert_edge_op_cell(c: EdgeOpCell, vocab: Vocab = NB201_VOCAB) -> ArchGraph:
    """Turn an edge-labelled cell into a node-labelled one.

    Each edge becomes a node; node ``a`` feeds node ``b`` when edge ``a``
    ends at the sum node where edge ``b`` starts.  Sum node 0 is the cell
    input and the last sum node the cell output.
    """
    m = c.num_sum_nodes
    succ = {i: [] for i in range(m)}
    indeg = [0] * m
    for (u, v) in c.edge_ops:
        if not (0 <= u < m and 0 <= v < m):
            raise ArchGraphError(f"edge ({u}, {v}) outside {m} sum nodes")
        succ[u].append(v)
        indeg[v] += 1
    # Kahn's algorithm with smallest-index tie-break
    ready = sorted(i for i in range(m) if indeg[i] == 0)
    pos = {}
    while ready:
        u = ready.pop(0)
        pos[u] = len(pos)
        for v in succ[u]:
            indeg[v] -= 1
            if indeg[v] == 0:
                ready.append(v)
                ready.sort()
    if len(pos) != m:
        raise CycleDetected("edge-op cell contains a cycle")

    edges = sorted(c.edge_ops, key=lambda e: (pos[e[0]], pos[e[1]], e))
    n = len(edges) + 2
    adj = np.zeros((n, n), dtype=np.uint8)
    ops = [vocab.input_id] + [vocab.index(c.edge_ops[e]) for e in edges] + [vocab.output_id]
    for a, (u, v) in enumerate(edges, start=1):
        if u == 0:
            adj[0, a] = 1
        if v == m - 1:
            adj[a, n - 1] = 1
        for b, (u2, _) in enumerate(edges, start=1):
            if u2 == v:
                adj[a, b] = 1
    return ArchGraph(tuple(ops), adj, vocab)


def compose_cell_pair(
    normal: ArchGraph, reduction: ArchGraph, cell_size: int = 15, vocab_size: int = 11
) -> ArchGraph:
    """Block-diagonal pair with the normal cell's output feeding the
    reduction cell's input.  The result has two input and two output nodes,
    so it is an encoding, not a cell that passes :func:`validate`."""
    for g in (normal, reduction):
        if g.num_nodes != cell_size or len(g.vocab) != vocab_size:
            raise SizeMismatch(
                f"expected {cell_size}-node cells over {vocab_size} kinds, "
                f"got {g.num_nodes} nodes / {len(g.vocab)} kinds"
            )
    if normal.vocab != reduction.vocab:
        raise SizeMismatch("cells use different vocabularies")
    n = cell_size
    adj = np.zeros((2 * n, 2 * n), dtype=np.uint8)
    adj[:n, :n] = normal.adj
    adj[n:, n:] = reduction.adj
    adj[n - 1, n] = 1
    return ArchGraph(normal.ops + reduction.ops, adj, normal.vocab)
