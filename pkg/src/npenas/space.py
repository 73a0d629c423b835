"""Search spaces, fitness oracles, samplers and path statistics."""
from __future__ import annotations

import hashlib
import itertools
import json
import logging
import math
from collections.abc import Iterable, Iterator, Sequence
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from .archgraph import (
    ISOLATED,
    INPUT,
    OUTPUT,
    ArchGraph,
    ArchGraphError,
    GraphKey,
    PathUniverse,
    Vocab,
    canonical_key,
    enumerate_paths,
    insert_isolated_nodes,
    live_nodes,
    validate,
)

log = logging.getLogger(__name__)

BENCH_FORMAT = "npenas-bench/1"
MICRO_NOISE = 0.003
MICRO_TEST_OFFSET = 0.002


class NeighborhoodExhausted(RuntimeError):
    pass


class UnknownArchitecture(KeyError):
    pass


class SamplingExhausted(RuntimeError):
    pass


class BenchFormatError(ValueError):
    def __init__(self, line: int, msg: str):
        super().__init__(f"line {line}: {msg}")
        self.line = line


# ---------------------------------------------------------------------------
# spaces


@dataclass(eq=False)
class SearchSpace:
    """Enumerated universe of normalized cells indexed by canonical key."""

    name: str
    vocab: Vocab
    cell_size: int
    archs: tuple[ArchGraph, ...]
    max_edges: int | None = None
    keys: tuple[GraphKey, ...] = field(init=False)

    def __post_init__(self):
        self.archs = tuple(self.archs)
        self.keys = tuple(canonical_key(g) for g in self.archs)
        self._pos = {k: i for i, k in enumerate(self.keys)}
        if len(self._pos) != len(self.keys):
            raise ValueError("duplicate architectures in search space")
        self._raw_cache: dict = {}
        self._nbr_cache: dict = {}

    def __len__(self):
        return len(self.keys)

    def __contains__(self, key):
        return key in self._pos

    def __iter__(self) -> Iterator[ArchGraph]:
        return iter(self.archs)

    def position(self, key: GraphKey) -> int:
        return self._pos[key]

    def arch(self, key: GraphKey) -> ArchGraph:
        return self.archs[self._pos[key]]

    @property
    def index(self) -> dict[GraphKey, ArchGraph]:
        return dict(zip(self.keys, self.archs))

    @cached_property
    def universe(self) -> PathUniverse:
        return PathUniverse(self.vocab, self.cell_size - 2)

    @cached_property
    def encodings(self) -> np.ndarray:
        """Path-encoding bits of every cell, rows aligned with ``keys``."""
        uni = self.universe
        enc = np.zeros((len(self), len(uni)), dtype=np.uint8)
        for i, g in enumerate(self.archs):
            for p in enumerate_paths(g):
                enc[i, uni.index[p]] = 1
        enc.setflags(write=False)
        return enc

    def resolve(self, ops: tuple[int, ...], adj_bytes: bytes) -> tuple[ArchGraph, GraphKey] | None:
        """Normalize a raw cell and look it up; ``None`` if it is not a member."""
        hit = self._raw_cache.get((ops, adj_bytes), False)
        if hit is not False:
            return hit
        n = len(ops)
        result = None
        try:
            raw = ArchGraph(ops, np.frombuffer(adj_bytes, dtype=np.uint8).reshape(n, n), self.vocab)
            g = insert_isolated_nodes(raw, self.cell_size)
        except ArchGraphError:
            g = None
        if g is not None and validate(g).ok:
            key = canonical_key(g)
            if key in self._pos and (self.max_edges is None or _live_edges(g) <= self.max_edges):
                result = (g, key)
        self._raw_cache[(ops, adj_bytes)] = result
        return result


def _live_edges(g: ArchGraph) -> int:
    live = sorted(live_nodes(g))
    return int(g.adj[np.ix_(live, live)].sum())


def enumerate_space(space: SearchSpace) -> Iterator[ArchGraph]:
    return iter(space.archs)


def enumerate_cells(vocab: Vocab, cell_size: int, max_edges: int | None = None) -> list[ArchGraph]:
    """All valid normalized cells, one representative per isomorphism class.

    Cells are generated by live interior-node count, then adjacency bits in
    binary order, then op tuples; the first representative of each class is
    kept, so the order is deterministic.
    """
    interior = vocab.interior_ids
    seen: dict[GraphKey, ArchGraph] = {}
    for k in range(cell_size - 1):
        n = k + 2
        pos = [(i, j) for i in range(n) for j in range(i + 1, n)]
        for bits in itertools.product((0, 1), repeat=len(pos)):
            if max_edges is not None and sum(bits) > max_edges:
                continue
            adj = np.zeros((n, n), dtype=np.uint8)
            for b, (i, j) in zip(bits, pos):
                adj[i, j] = b
            probe = ArchGraph((vocab.input_id,) + (interior[0],) * k + (vocab.output_id,), adj, vocab)
            if len(live_nodes(probe)) != n:
                continue
            for ops in itertools.product(interior, repeat=k):
                g = ArchGraph((vocab.input_id,) + ops + (vocab.output_id,), adj, vocab)
                g = insert_isolated_nodes(g, cell_size)
                seen.setdefault(canonical_key(g), g)
    return list(seen.values())


# ---------------------------------------------------------------------------
# oracles


@dataclass(frozen=True)
class EvalRecord:
    arch: ArchGraph
    key: GraphKey
    val_err: float
    test_err: float
    query_index: int = 0


@dataclass(eq=False)
class FitnessOracle:
    """Per-cell mean validation error, validation noise and test error.

    Rows are aligned with ``space.keys``.
    """

    kind: str
    space: SearchSpace
    val_mean: np.ndarray
    val_noise: np.ndarray
    test_err: np.ndarray
    seed: int = 0
    checksum: str | None = None

    def __post_init__(self):
        for name in ("val_mean", "val_noise", "test_err"):
            arr = np.array(getattr(self, name), dtype=np.float64)
            if arr.shape != (len(self.space),):
                raise ValueError(f"{name} must have one entry per cell")
            arr.setflags(write=False)
            setattr(self, name, arr)
        for name in ("val_mean", "test_err"):
            arr = getattr(self, name)
            if np.any(arr <= 0) or np.any(arr >= 1):
                raise ValueError(f"{name} values must lie in (0, 1)")

    def mean_val(self, key: GraphKey) -> float:
        return float(self.val_mean[self.space.position(key)])

    def test(self, key: GraphKey) -> float:
        return float(self.test_err[self.space.position(key)])

    @cached_property
    def optimum(self) -> tuple[GraphKey, float]:
        i = int(np.argmin(self.val_mean))
        return self.space.keys[i], float(self.val_mean[i])

    @cached_property
    def oracle_test_err(self) -> float:
        """Test error of the cell with the lowest mean validation error."""
        return float(self.test_err[int(np.argmin(self.val_mean))])


def evaluate(oracle: FitnessOracle, arch: ArchGraph, query_seed: int, query_index: int = 0) -> EvalRecord:
    """Query one noisy validation error; a pure function of (cell, seed)."""
    key = canonical_key(arch)
    if key not in oracle.space:
        raise UnknownArchitecture(key)
    i = oracle.space.position(key)
    mean, sigma = oracle.val_mean[i], oracle.val_noise[i]
    val = float(mean)
    if sigma > 0:
        rng = np.random.default_rng([oracle.seed, int(key[:16], 16), int(query_seed)])
        while True:
            val = float(mean + sigma * rng.standard_normal())
            if 0.0 < val < 1.0:
                break
    return EvalRecord(arch, key, val, float(oracle.test_err[i]), query_index)


# ---------------------------------------------------------------------------
# MicroBench


MICRO_VOCAB = Vocab((INPUT, "A", "B", "C", OUTPUT, ISOLATED))

_micro_cache: dict[int, tuple[SearchSpace, FitnessOracle]] = {}
_micro_space: SearchSpace | None = None


def _micro_space_cells() -> SearchSpace:
    global _micro_space
    if _micro_space is None:
        _micro_space = SearchSpace("microbench", MICRO_VOCAB, 5, tuple(enumerate_cells(MICRO_VOCAB, 5)))
    return _micro_space


def build_microbench(seed: int = 0) -> tuple[SearchSpace, FitnessOracle]:
    """Five-node cells over ops {A, B, C} with a synthetic fitness.

    Mean validation error is ``0.05 + 0.9 * logistic(w . x + b)`` where ``x``
    is the path encoding; ``w`` and ``b`` come from ``seed``.
    """
    if seed in _micro_cache:
        return _micro_cache[seed]
    space = _micro_space_cells()
    rng = np.random.default_rng(seed)
    w = rng.normal(0.0, 0.5, len(space.universe))
    b = rng.normal(-1.0, 0.5)
    score = space.encodings @ w + b
    mean = 0.05 + 0.9 / (1.0 + np.exp(-score))
    test = np.clip(mean + rng.normal(0.0, MICRO_TEST_OFFSET, len(space)), 1e-6, 1 - 1e-6)
    noise = np.full(len(space), MICRO_NOISE)
    oracle = FitnessOracle("micro-synthetic", space, mean, noise, test, seed=seed)
    _micro_cache[seed] = (space, oracle)
    return space, oracle


# ---------------------------------------------------------------------------
# samplers


def sample_direct(space: SearchSpace, n: int, rng: np.random.Generator) -> list[ArchGraph]:
    """``n`` distinct cells drawn uniformly from the key list."""
    return [space.archs[i] for i in sample_direct_positions(space, n, rng)]


def sample_direct_positions(space: SearchSpace, n: int, rng: np.random.Generator) -> np.ndarray:
    if n > len(space):
        raise ValueError(f"cannot draw {n} distinct cells from a space of {len(space)}")
    return rng.choice(len(space), size=n, replace=False)


RAW_TABLE_LIMIT = 1 << 17


def _raw_draws(space: SearchSpace, rng: np.random.Generator, batch: int):
    n = space.cell_size
    bits = rng.integers(0, 2, size=(batch, n * (n - 1) // 2), dtype=np.uint8)
    choice = rng.integers(0, len(space.vocab.interior_ids), size=(batch, n - 2))
    return bits, choice


def _raw_graph(space: SearchSpace, bits, choice) -> tuple[tuple[int, ...], bytes]:
    n = space.cell_size
    adj = np.zeros((n, n), dtype=np.uint8)
    adj[np.triu_indices(n, k=1)] = bits
    interior = space.vocab.interior_ids
    ops = (space.vocab.input_id,) + tuple(interior[int(c)] for c in choice) + (space.vocab.output_id,)
    return ops, adj.tobytes()


def _raw_table(space: SearchSpace) -> np.ndarray | None:
    """Row position (or -1) of every raw draw, for small raw universes."""
    n = space.cell_size
    n_bits, n_ops = n * (n - 1) // 2, len(space.vocab.interior_ids)
    size = (1 << n_bits) * n_ops ** (n - 2)
    if size > RAW_TABLE_LIMIT:
        return None
    table = space.__dict__.get("_prune_table")
    if table is None:
        table = np.full(size, -1, dtype=np.int64)
        for code in range(1 << n_bits):
            bits = [(code >> (n_bits - 1 - b)) & 1 for b in range(n_bits)]
            for oi, choice in enumerate(itertools.product(range(n_ops), repeat=n - 2)):
                hit = space.resolve(*_raw_graph(space, bits, choice))
                if hit is not None:
                    table[code * n_ops ** (n - 2) + oi] = space.position(hit[1])
        space.__dict__["_prune_table"] = table
    return table


def sample_prune_positions(
    space: SearchSpace, n: int, rng: np.random.Generator, max_tries: int | None = None
) -> np.ndarray:
    """Row positions of ``n`` accepted default-style draws (duplicates kept)."""
    max_tries = max_tries if max_tries is not None else 1000 * max(n, 1)
    table = _raw_table(space)
    n_ops = len(space.vocab.interior_ids)
    out: list[int] = []
    tries = 0
    while len(out) < n:
        batch = min(max(2 * (n - len(out)), 16), max_tries - tries)
        if batch <= 0:
            raise SamplingExhausted(f"only {len(out)} of {n} samples after {tries} draws")
        bits, choice = _raw_draws(space, rng, batch)
        if table is not None:
            weights = 1 << np.arange(bits.shape[1] - 1, -1, -1)
            codes = bits.astype(np.int64) @ weights
            op_codes = choice @ (n_ops ** np.arange(choice.shape[1] - 1, -1, -1)) if choice.shape[1] else 0
            hits = table[codes * n_ops ** choice.shape[1] + op_codes]
        else:
            hits = np.empty(batch, dtype=np.int64)
            for b in range(batch):
                hit = space.resolve(*_raw_graph(space, bits[b], choice[b]))
                hits[b] = -1 if hit is None else space.position(hit[1])
        accepted = np.flatnonzero(hits >= 0)
        need = n - len(out)
        if len(accepted) >= need:
            tries += int(accepted[need - 1]) + 1
            out.extend(hits[accepted[:need]].tolist())
        else:
            tries += batch
            out.extend(hits[accepted].tolist())
    return np.asarray(out, dtype=np.int64)


def sample_prune(space: SearchSpace, n: int, rng: np.random.Generator, max_tries: int | None = None) -> list[ArchGraph]:
    """Default-style sampler: random matrix and ops, accepted when the pruned
    cell is valid.  The accepted raw cell is returned in normalized form, so
    many raw draws collapse onto the same cell and duplicates are kept."""
    return [space.archs[i] for i in sample_prune_positions(space, n, rng, max_tries)]


# ---------------------------------------------------------------------------
# mutation


def _edits(g: ArchGraph) -> Iterator[tuple[tuple[int, ...], bytes]]:
    """Raw single edits.  A bit flip that puts an ``isolated`` node back on a
    path has to give it an op, so it branches over the interior ops."""
    n = g.num_nodes
    base = g.adj
    interior = g.vocab.interior_ids
    iso = g.vocab.isolated_id
    for i in range(n):
        for j in range(i + 1, n):
            adj = base.copy()
            adj[i, j] ^= 1
            revived = [v for v in (i, j) if g.ops[v] == iso]
            if revived:
                revived = [v for v in revived if v in live_nodes(ArchGraph(g.ops, adj, g.vocab))]
            if not revived:
                yield g.ops, adj.tobytes()
                continue
            for choice in itertools.product(interior, repeat=len(revived)):
                ops = list(g.ops)
                for v, o in zip(revived, choice):
                    ops[v] = o
                yield tuple(ops), adj.tobytes()
    for v in range(1, n - 1):
        for o in interior:
            if o != g.ops[v]:
                ops = g.ops[:v] + (o,) + g.ops[v + 1:]
                yield ops, base.tobytes()


def _raw(ops, adj_bytes, vocab) -> ArchGraph:
    n = len(ops)
    return ArchGraph(ops, np.frombuffer(adj_bytes, dtype=np.uint8).reshape(n, n), vocab)


def neighborhood(space: SearchSpace, parent: ArchGraph, edits: int) -> dict[GraphKey, ArchGraph]:
    """Member cells reachable with exactly ``edits`` (1 or 2) atomic edits,
    excluding the parent and, for 2 edits, the 1-edit ring.  Deterministic order."""
    pkey = canonical_key(parent)
    cached = space._nbr_cache.get((pkey, edits))
    if cached is not None:
        return cached
    ring: dict[GraphKey, ArchGraph] = {}
    if edits == 1:
        raws = list(_edits(parent))
        exclude = {pkey}
    elif edits == 2:
        raws = [r2 for r1 in _edits(parent) for r2 in _edits(_raw(*r1, parent.vocab))]
        exclude = {pkey} | set(neighborhood(space, parent, 1))
    else:
        raise ValueError("edits must be 1 or 2")
    for ops, adj in raws:
        hit = space.resolve(ops, adj)
        if hit is None:
            continue
        g, key = hit
        if key not in exclude and key not in ring:
            ring[key] = g
    space._nbr_cache[(pkey, edits)] = ring
    return ring


def mutate(
    space: SearchSpace,
    parent: ArchGraph,
    k: int,
    rng: np.random.Generator,
    forbidden: Iterable[GraphKey] = (),
    partial: bool = False,
) -> list[ArchGraph]:
    """``k`` distinct one-edit mutants of ``parent``, topped up from the
    two-edit ring when the one-edit ring is too small.

    An edit flips one upper-triangular adjacency bit or changes one interior
    op.  Results avoid the parent and every key in ``forbidden``.  With
    ``partial`` a short list is returned instead of raising.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    forbidden = set(forbidden)
    out: list[ArchGraph] = []
    for edits in (1, 2):
        ring = [g for key, g in neighborhood(space, parent, edits).items() if key not in forbidden]
        need = k - len(out)
        if len(ring) >= need:
            pick = rng.choice(len(ring), size=need, replace=False)
            out.extend(ring[i] for i in pick)
            return out
        out.extend(ring[i] for i in rng.permutation(len(ring)))
    if partial:
        return out
    raise NeighborhoodExhausted(f"only {len(out)} of {k} mutants within two edits")


# ---------------------------------------------------------------------------
# path distributions


@dataclass(frozen=True, eq=False)
class PathDistribution:
    raw_counts: np.ndarray
    universe_id: str
    alpha: float = 0.5

    @property
    def T(self) -> int:
        return int(self.raw_counts.sum())

    @property
    def probs(self) -> np.ndarray:
        c = self.raw_counts.astype(np.float64)
        return (c + self.alpha) / (c.sum() + self.alpha * len(c))

    @property
    def log_probs(self) -> np.ndarray:
        """Unsmoothed ``log(counts / T)``; ``-inf`` for unseen paths."""
        with np.errstate(divide="ignore"):
            return np.log(self.raw_counts / max(self.T, 1))

    def __len__(self):
        return len(self.raw_counts)


def path_distribution(archs: Sequence[ArchGraph], universe: PathUniverse, alpha: float = 0.5) -> PathDistribution:
    if len(archs) == 0:
        raise ValueError("path distribution of an empty sample")
    counts = np.zeros(len(universe), dtype=np.int64)
    idx = universe.index
    for g in archs:
        for p in enumerate_paths(g):
            counts[idx[p]] += 1
    return PathDistribution(counts, universe.universe_id, alpha)


def path_distribution_positions(space: SearchSpace, positions, alpha: float = 0.5) -> PathDistribution:
    """Fast path for cells given by row position in ``space``."""
    positions = np.asarray(positions, dtype=np.int64)
    if positions.size == 0:
        raise ValueError("path distribution of an empty sample")
    counts = np.bincount(positions, minlength=len(space)) @ space.encodings.astype(np.int64)
    return PathDistribution(counts.astype(np.int64), space.universe.universe_id, alpha)


def kl_divergence(p: PathDistribution, q: PathDistribution) -> float:
    if p.universe_id != q.universe_id or len(p) != len(q):
        raise ValueError("distributions over different path universes")
    pp, qq = p.probs, q.probs
    return max(float(np.sum(pp * np.log(pp / qq))), 0.0)


# ---------------------------------------------------------------------------
# benchmark files


def _record_line(arch: ArchGraph, mean: float, noise: float, test: float) -> str:
    rec = {"arch": arch.to_json(), "val_err_mean": float(mean), "val_noise": float(noise), "test_err": float(test)}
    return json.dumps(rec, sort_keys=True, separators=(",", ":"))


def bench_checksum(lines: Iterable[str]) -> str:
    h = hashlib.sha256()
    for line in lines:
        h.update(line.encode("utf-8"))
        h.update(b"\n")
    return h.hexdigest()


def export_tabular(space: SearchSpace, oracle: FitnessOracle, path: str | Path) -> str:
    """Write the benchmark file, rows sorted by key; returns the checksum."""
    order = sorted(range(len(space)), key=lambda i: space.keys[i])
    lines = [
        _record_line(space.archs[i], oracle.val_mean[i], oracle.val_noise[i], oracle.test_err[i]) for i in order
    ]
    checksum = bench_checksum(lines)
    header = {
        "format": BENCH_FORMAT,
        "space": space.name,
        "vocab": list(space.vocab.names),
        "cell_size": space.cell_size,
        "rows": len(lines),
        "checksum": checksum,
        "seed": int(oracle.seed),
    }
    if space.max_edges is not None:
        header["max_edges"] = space.max_edges
    text = json.dumps(header, sort_keys=True, separators=(",", ":")) + "\n" + "".join(l + "\n" for l in lines)
    Path(path).write_text(text, encoding="utf-8")
    return checksum


def _parse_records(path: str | Path):
    text = Path(path).read_text(encoding="utf-8")
    raw_lines = text.split("\n")
    if raw_lines and raw_lines[-1] == "":
        raw_lines.pop()
    if not raw_lines:
        raise BenchFormatError(1, "empty file, expected header")
    try:
        header = json.loads(raw_lines[0])
    except json.JSONDecodeError as exc:
        raise BenchFormatError(1, f"header is not JSON: {exc.msg}") from None
    if not isinstance(header, dict) or header.get("format") != BENCH_FORMAT:
        raise BenchFormatError(1, f"header must declare format {BENCH_FORMAT!r}")
    for fld in ("space", "vocab"):
        if fld not in header:
            raise BenchFormatError(1, f"header missing {fld!r}")
    try:
        vocab = Vocab(tuple(header["vocab"]))
    except (ValueError, TypeError) as exc:
        raise BenchFormatError(1, f"bad vocabulary: {exc}") from None

    records = []
    for lineno, line in enumerate(raw_lines[1:], start=2):
        if not line.strip():
            raise BenchFormatError(lineno, "blank line")
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise BenchFormatError(lineno, f"invalid JSON: {exc.msg}") from None
        if not isinstance(rec, dict):
            raise BenchFormatError(lineno, "record must be an object")
        for fld in ("arch", "val_err_mean", "val_noise", "test_err"):
            if fld not in rec:
                raise BenchFormatError(lineno, f"missing field {fld!r}")
        try:
            arch = ArchGraph.from_json(rec["arch"], vocab)
            mean, noise, test = float(rec["val_err_mean"]), float(rec["val_noise"]), float(rec["test_err"])
        except (ArchGraphError, KeyError, TypeError, ValueError) as exc:
            raise BenchFormatError(lineno, f"bad record: {exc}") from None
        for name, val in (("val_err_mean", mean), ("test_err", test)):
            if not (0.0 < val < 1.0) or not math.isfinite(val):
                raise BenchFormatError(lineno, f"{name}={val} outside (0, 1)")
        if not (noise >= 0.0 and math.isfinite(noise)):
            raise BenchFormatError(lineno, f"val_noise={noise} must be >= 0")
        records.append((lineno, arch, mean, noise, test))
    if not records:
        raise BenchFormatError(2, "no records after header")
    return header, vocab, records


@dataclass
class BenchReport:
    rows: int
    checksum: str
    header_checksum: str | None

    @property
    def checksum_ok(self) -> bool:
        return self.header_checksum is None or self.header_checksum == self.checksum


def import_tabular(path: str | Path) -> tuple[SearchSpace, FitnessOracle]:
    """Load a benchmark file into a space and a tabular oracle."""
    header, vocab, records = _parse_records(path)
    cell_size = int(header.get("cell_size", records[0][1].num_nodes))
    archs, means, noises, tests, seen = [], [], [], [], {}
    lines = []
    for lineno, arch, mean, noise, test in records:
        try:
            g = insert_isolated_nodes(arch, cell_size)
        except ArchGraphError as exc:
            raise BenchFormatError(lineno, f"invalid cell: {exc}") from None
        report = validate(g)
        if not report.ok:
            raise BenchFormatError(lineno, f"invalid cell: {report.codes}")
        key = canonical_key(g)
        if key in seen:
            raise BenchFormatError(lineno, f"duplicate architecture (first on line {seen[key]})")
        seen[key] = lineno
        archs.append(g)
        means.append(mean)
        noises.append(noise)
        tests.append(test)
        lines.append(_record_line(arch, mean, noise, test))
    space = SearchSpace(str(header["space"]), vocab, cell_size, tuple(archs), header.get("max_edges"))
    checksum = bench_checksum(lines)
    oracle = FitnessOracle(
        "tabular", space, means, noises, tests, seed=int(header.get("seed", 0)), checksum=checksum
    )
    log.info("imported %s: %d rows, checksum %s", path, len(archs), checksum)
    return space, oracle


def validate_bench(path: str | Path) -> BenchReport:
    """Parse and check a benchmark file; raises :class:`BenchFormatError`."""
    header, vocab, records = _parse_records(path)
    declared = header.get("rows")
    if declared is not None and int(declared) != len(records):
        raise BenchFormatError(1, f"header declares {declared} rows, file has {len(records)}")
    _, oracle = import_tabular(path)
    report = BenchReport(len(records), oracle.checksum, header.get("checksum"))
    if not report.checksum_ok:
        raise BenchFormatError(1, f"checksum mismatch: header {report.header_checksum}, computed {report.checksum}")
    return report
