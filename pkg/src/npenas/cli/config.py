"""JSON experiment configuration."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

from ..evolve import VARIANTS, NpenasConfig
from ..space import FitnessOracle, SearchSpace, build_microbench, import_tabular

ALGO_KINDS = ("npenas", "random", "ea")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SpaceSource:
    micro_seed: int | None = 0
    table: str | None = None

    def load(self) -> tuple[SearchSpace, FitnessOracle]:
        return _load(self.micro_seed, self.table)

    def describe(self) -> dict:
        return {"table": self.table} if self.table else {"micro_seed": self.micro_seed}


@lru_cache(maxsize=4)
def _load(micro_seed, table):
    if table is not None:
        return import_tabular(table)
    return build_microbench(micro_seed)


@dataclass(frozen=True)
class AlgoSpec:
    name: str
    kind: str
    params: tuple[tuple[str, object], ...] = ()

    @property
    def kw(self) -> dict:
        return dict(self.params)

    @property
    def budget(self) -> int:
        kw = self.kw
        return int(kw.get("total_num", kw.get("budget", 150)))

    def describe(self) -> dict:
        return {"name": self.name, "kind": self.kind, **self.kw}


@dataclass(frozen=True)
class ExperimentConfig:
    space: SpaceSource
    algorithms: tuple[AlgoSpec, ...]
    trials: int = 1
    base_seed: int = 0
    out: str | None = None
    checkpoint_step: int = 10
    backend: str | None = None
    extra: dict = field(default_factory=dict, compare=False, hash=False)


def _int(obj, key, default, lo=None):
    val = obj.get(key, default)
    if isinstance(val, bool) or not isinstance(val, int):
        raise ConfigError(f"{key!r} must be an integer")
    if lo is not None and val < lo:
        raise ConfigError(f"{key!r} must be >= {lo}")
    return val


def parse_space(obj, base: Path) -> SpaceSource:
    if obj is None:
        return SpaceSource()
    if not isinstance(obj, dict):
        raise ConfigError("'space' must be an object")
    if "table" in obj:
        path = Path(obj["table"])
        path = path if path.is_absolute() else base / path
        if not path.is_file():
            raise ConfigError(f"benchmark table not found: {path}")
        return SpaceSource(micro_seed=None, table=str(path))
    return SpaceSource(micro_seed=_int(obj, "micro_seed", 0, 0))


_NPENAS_KEYS = {"n0", "total_num", "mu_num", "t", "variant", "p_max", "epochs"}
_ALGO_KEYS = {"npenas": _NPENAS_KEYS, "random": {"budget"}, "ea": {"budget", "k", "n0", "offspring", "parents"}}


def parse_algo(obj) -> AlgoSpec:
    if not isinstance(obj, dict) or "kind" not in obj:
        raise ConfigError("each algorithm needs an object with 'kind'")
    kind = obj["kind"]
    if kind not in ALGO_KINDS:
        raise ConfigError(f"unknown algorithm kind {kind!r}; expected one of {ALGO_KINDS}")
    params = {k: v for k, v in obj.items() if k not in ("kind", "name")}
    unknown = set(params) - _ALGO_KEYS[kind]
    if unknown:
        raise ConfigError(f"unknown keys for {kind}: {sorted(unknown)}")
    if kind == "npenas":
        if params.get("variant", "np") not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}")
        try:
            NpenasConfig(**params)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"npenas: {exc}") from None
        default_name = f"npenas-{params.get('variant', 'np')}"
    elif kind == "ea":
        if "k" not in params:
            raise ConfigError("ea needs 'k'")
        default_name = f"ea-k{params['k']}"
    else:
        default_name = "random"
    for key, val in params.items():
        if key != "variant" and not (val is None and key == "epochs") and (isinstance(val, bool) or not isinstance(val, int)):
            raise ConfigError(f"{kind}.{key} must be an integer")
    name = str(obj.get("name", default_name))
    return AlgoSpec(name, kind, tuple(sorted(params.items())))


def parse_config(obj, base: Path = Path(".")) -> ExperimentConfig:
    if not isinstance(obj, dict):
        raise ConfigError("config must be a JSON object")
    algos = tuple(parse_algo(a) for a in obj.get("algorithms", []))
    names = [a.name for a in algos]
    if len(set(names)) != len(names):
        raise ConfigError(f"algorithm names must be unique: {names}")
    backend = obj.get("backend")
    if backend not in (None, "compiled", "python"):
        raise ConfigError("backend must be 'compiled' or 'python'")
    known = {"space", "algorithms", "trials", "base_seed", "out", "checkpoint_step", "backend"}
    return ExperimentConfig(
        space=parse_space(obj.get("space"), base),
        algorithms=algos,
        trials=_int(obj, "trials", 1, 1),
        base_seed=_int(obj, "base_seed", 0, 0),
        out=obj.get("out"),
        checkpoint_step=_int(obj, "checkpoint_step", 10, 1),
        backend=backend,
        extra={k: v for k, v in obj.items() if k not in known},
    )


def load_config(path: str | Path | None) -> ExperimentConfig:
    if path is None:
        return parse_config({})
    p = Path(path)
    try:
        obj = json.loads(p.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config not found: {p}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{p}: invalid JSON at line {exc.lineno}: {exc.msg}") from None
    return parse_config(obj, p.parent)
