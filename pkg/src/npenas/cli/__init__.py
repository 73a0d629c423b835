"""Command-line experiment driver.

Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from ..space import BenchFormatError, build_microbench, export_tabular, validate_bench
from . import runner, studies
from .config import AlgoSpec, ConfigError, ExperimentConfig, load_config
from .runner import Trial, aggregate_dir, atomic_write, dumps, run_trials

log = logging.getLogger("npenas")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _u64(text: str) -> int:
    try:
        val = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if not 0 <= val < 2**64:
        raise argparse.ArgumentTypeError("seed must fit in an unsigned 64-bit integer")
    return val


def _positive(text: str) -> int:
    val = _u64(text)
    if val < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return val


def _int_list(text: str) -> list[int]:
    try:
        vals = [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not vals or any(v < 1 for v in vals):
        raise argparse.ArgumentTypeError("need at least one positive integer")
    return vals


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON experiment config")
    common.add_argument("--out", type=Path, help="output directory")
    common.add_argument("--jobs", type=_positive, help="worker processes (default: all cores)")
    common.add_argument("--seed", type=_u64, help="base seed; overrides the config")
    common.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="npenas", description="Predictor-guided evolutionary architecture search experiments.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("search", parents=[common], help="run search algorithms over many trials")
    s = sub.add_parser("sampler-study", parents=[common], help="path-distribution KL of the two samplers")
    s.add_argument("--samples", type=_positive)
    s = sub.add_parser("predictor-study", parents=[common], help="compare predictors over training sizes")
    s.add_argument("--sizes", type=_int_list)
    s.add_argument("--repeats", type=_positive)
    s = sub.add_parser("fanout-study", parents=[common], help="children-per-parent study for plain EA")
    s.add_argument("--k", type=_int_list)
    s.add_argument("--trials", type=_positive)
    s.add_argument("--budget", type=_positive)
    s = sub.add_parser("export-bench", parents=[common], help="write MicroBench as a benchmark table")
    s.add_argument("file", type=Path)
    s = sub.add_parser("validate-bench", parents=[common], help="check a benchmark table")
    s.add_argument("file", type=Path)
    return p


def _jobs(args) -> int:
    return args.jobs or os.cpu_count() or 1


def _out(args, cfg: ExperimentConfig) -> Path:
    out = args.out or (Path(cfg.out) if cfg.out else None)
    if out is None:
        raise ConfigError("no output directory: pass --out or set 'out' in the config")
    return out


def _seed(args, cfg: ExperimentConfig) -> int:
    return args.seed if args.seed is not None else cfg.base_seed


def _extra(cfg: ExperimentConfig, key: str, cli_value, default):
    if cli_value is not None:
        return cli_value
    return cfg.extra.get(key, default)


def cmd_search(args) -> int:
    cfg = load_config(args.config)
    if not cfg.algorithms:
        raise ConfigError("config lists no algorithms")
    out, seed = _out(args, cfg), _seed(args, cfg)
    space, _ = cfg.space.load()
    for a in cfg.algorithms:
        if a.budget > len(space):
            raise ConfigError(f"{a.name}: budget {a.budget} exceeds the space size {len(space)}")
    trials = [Trial(cfg.space, a, i, seed + i, cfg.backend) for a in cfg.algorithms for i in range(cfg.trials)]
    results = run_trials(trials, _jobs(args), out)
    atomic_write(out / "summary.csv", aggregate_dir(out, cfg.algorithms, cfg.checkpoint_step))
    failed = [r for r in results if r.error]
    if failed:
        log.error("%d of %d trials failed; partial records kept", len(failed), len(results))
        return EXIT_RUNTIME
    return EXIT_OK


def cmd_sampler_study(args) -> int:
    cfg = load_config(args.config)
    out, seed = _out(args, cfg), _seed(args, cfg)
    n = _extra(cfg, "samples", args.samples, 5000)
    space, _ = cfg.space.load()
    rep = studies.sampler_study(space, n, seed)
    for name in ("direct", "prune", "truth"):
        atomic_write(out / f"paths_{name}.csv", studies.distribution_csv(space, getattr(rep, name)))
    atomic_write(out / "kl.json", dumps(rep.kl) + "\n")
    print(dumps(rep.kl))
    return EXIT_OK


def cmd_predictor_study(args) -> int:
    cfg = load_config(args.config)
    out, seed = _out(args, cfg), _seed(args, cfg)
    sizes = _extra(cfg, "sizes", args.sizes, [20, 100, 150])
    repeats = _extra(cfg, "repeats", args.repeats, 50)
    try:
        rows = studies.predictor_study(cfg.space, sizes, repeats, seed, _jobs(args), backend=cfg.backend)
    except studies.StudyError as exc:
        raise ConfigError(str(exc)) from None
    lines = ["sampler,method,size,repeat,value"]
    lines += [f"{r['sampler']},{r['method']},{r['size']},{r['repeat']},{r['value']:.10f}" for r in rows]
    atomic_write(out / "predictor_runs.csv", "\n".join(lines) + "\n")
    summary = studies.summarize_predictor_rows(rows)
    atomic_write(out / "predictor_summary.csv", studies.predictor_csv(summary))
    table = studies.predictor_table(summary)
    atomic_write(out / "predictor_table.csv", table)
    print(table, end="")
    return EXIT_OK


def cmd_fanout_study(args) -> int:
    cfg = load_config(args.config)
    out, seed = _out(args, cfg), _seed(args, cfg)
    ks = _extra(cfg, "k", args.k, [1, 10, 20, 30])
    n_trials = _extra(cfg, "trials_per_k", args.trials, 600)
    budget = _extra(cfg, "budget", args.budget, 150)
    space, _ = cfg.space.load()
    if budget > len(space):
        raise ConfigError(f"budget {budget} exceeds the space size {len(space)}")
    algos = [AlgoSpec(f"ea-k{k}", "ea", (("budget", budget), ("k", k))) for k in ks]
    trials = [Trial(cfg.space, a, i, seed + i, cfg.backend) for a in algos for i in range(n_trials)]
    results = run_trials(trials, _jobs(args), out)
    atomic_write(out / "fanout.csv", aggregate_dir(out, algos, cfg.checkpoint_step))
    return EXIT_RUNTIME if any(r.error for r in results) else EXIT_OK


def cmd_export_bench(args) -> int:
    cfg = load_config(args.config)
    micro = args.seed if args.seed is not None else (cfg.space.micro_seed or 0)
    space, oracle = build_microbench(micro)
    args.file.parent.mkdir(parents=True, exist_ok=True)
    checksum = export_tabular(space, oracle, args.file)
    print(f"wrote {len(space)} rows to {args.file} (sha256 {checksum})")
    return EXIT_OK


def cmd_validate_bench(args) -> int:
    if not args.file.is_file():
        raise ConfigError(f"no such file: {args.file}")
    try:
        report = validate_bench(args.file)
    except BenchFormatError as exc:
        print(f"{args.file}:{exc.line}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    print(f"{args.file}: ok, {report.rows} rows, sha256 {report.checksum}")
    return EXIT_OK


COMMANDS = {
    "search": cmd_search,
    "sampler-study": cmd_sampler_study,
    "predictor-study": cmd_predictor_study,
    "fanout-study": cmd_fanout_study,
    "export-bench": cmd_export_bench,
    "validate-bench": cmd_validate_bench,
}


def main(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:
        log.exception("runtime failure")
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
