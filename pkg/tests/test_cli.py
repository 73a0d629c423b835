import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from npenas.cli import main
from npenas.cli.config import AlgoSpec, ConfigError, parse_config
from npenas.cli.runner import SUMMARY_COLUMNS, aggregate_dir, trial_path
from npenas.cli.studies import METHODS, SAMPLERS, paired_bootstrap_lower
from npenas.space import FitnessOracle, SearchSpace, bench_checksum, export_tabular, neighborhood

SEARCH = {
    "space": {"micro_seed": 0},
    "trials": 2,
    "base_seed": 7,
    "algorithms": [
        {"kind": "npenas", "variant": "np", "total_num": 30, "epochs": 20},
        {"kind": "npenas", "variant": "bo", "total_num": 30, "epochs": 20},
        {"kind": "random", "budget": 30},
    ],
}


def write_config(tmp_path: Path, obj, name="cfg.json") -> Path:
    p = tmp_path / name
    p.write_text(json.dumps(obj), encoding="utf-8")
    return p


def tree(root: Path) -> dict[str, bytes]:
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


@pytest.fixture(scope="module")
def tiny_table(micro, tmp_path_factory):
    full, _ = micro
    hub = full.archs[245]
    ring = [*neighborhood(full, hub, 1).values(), *neighborhood(full, hub, 2).values()]
    space = SearchSpace("tiny", full.vocab, full.cell_size, [hub, *ring[:29]])
    rng = np.random.default_rng(0)
    oracle = FitnessOracle("tiny", space, rng.uniform(0.1, 0.9, 30), np.full(30, 0.01), rng.uniform(0.1, 0.9, 30))
    path = tmp_path_factory.mktemp("bench") / "tiny.jsonl"
    export_tabular(space, oracle, path)
    return path


# ---------------------------------------------------------------------------
# argument and config errors


@pytest.mark.parametrize("argv", [[], ["fly"], ["search", "--jobs", "0"], ["search", "--seed", "-1"],
                                  ["predictor-study", "--sizes", "a,b"], ["search", "--bogus"]])
def test_usage_errors_exit_1(argv, capsys):
    assert main(argv) == 1
    assert capsys.readouterr().err


def test_config_errors_exit_1(tmp_path, capsys):
    assert main(["search", "--config", str(tmp_path / "missing.json"), "--out", str(tmp_path)]) == 1
    bad = tmp_path / "bad.json"
    bad.write_text("{not json", encoding="utf-8")
    assert main(["search", "--config", str(bad), "--out", str(tmp_path)]) == 1
    cases = [
        {"algorithms": [{"kind": "sgd"}]},
        {"algorithms": [{"kind": "npenas", "variant": "xx"}]},
        {"algorithms": [{"kind": "npenas", "n0": 1}]},
        {"algorithms": [{"kind": "random", "budget": 10**6}]},
        {"algorithms": [{"kind": "random", "budget": 5, "k": 2}]},
        {"algorithms": []},
        {"algorithms": [{"kind": "random"}], "backend": "gpu"},
        {"algorithms": [{"kind": "random"}, {"kind": "random"}]},
        {"space": {"table": "nowhere.jsonl"}, "algorithms": [{"kind": "random"}]},
    ]
    for i, obj in enumerate(cases):
        cfg = write_config(tmp_path, obj, f"c{i}.json")
        assert main(["search", "--config", str(cfg), "--out", str(tmp_path / f"o{i}")]) == 1, obj
    assert "config error" in capsys.readouterr().err


def test_missing_output_directory(tmp_path):
    cfg = write_config(tmp_path, {"algorithms": [{"kind": "random", "budget": 5}]})
    assert main(["search", "--config", str(cfg)]) == 1


def test_parse_config_defaults_and_seeds():
    cfg = parse_config({"algorithms": [{"kind": "ea", "k": 10}]})
    assert cfg.trials == 1 and cfg.base_seed == 0 and cfg.checkpoint_step == 10
    assert cfg.algorithms[0] == AlgoSpec("ea-k10", "ea", (("k", 10),))
    with pytest.raises(ConfigError):
        parse_config({"algorithms": [{"kind": "ea"}]})
    with pytest.raises(ConfigError):
        parse_config({"trials": 0})


# ---------------------------------------------------------------------------
# search


def test_degenerate_search(tmp_path):
    cfg = write_config(tmp_path, {"trials": 1, "algorithms": [{"kind": "npenas", "n0": 10, "total_num": 10}]})
    out = tmp_path / "out"
    assert main(["search", "--config", str(cfg), "--out", str(out)]) == 0
    files = list((out / "trials").rglob("*.jsonl"))
    assert len(files) == 1
    rows = (out / "summary.csv").read_text().splitlines()
    assert rows[0] == ",".join(SUMMARY_COLUMNS)
    assert len(rows) == 2 and rows[1].startswith("npenas-np,10,")


def test_search_outputs(tmp_path):
    cfg = write_config(tmp_path, SEARCH)
    out = tmp_path / "out"
    assert main(["search", "--config", str(cfg), "--out", str(out), "--jobs", "1"]) == 0
    lines = [json.loads(l) for l in trial_path(out, "npenas-np", 1).read_text().splitlines()]
    assert lines[0]["type"] == "config" and lines[0]["seed"] == 8
    assert lines[-1]["type"] == "summary" and lines[-1]["queries"] == 30
    assert {l["type"] for l in lines} == {"config", "iteration", "checkpoint", "summary"}
    summary = (out / "summary.csv").read_text()
    rows = summary.splitlines()[1:]
    assert len(rows) == 9
    for r in rows:
        algo, q, mean, p30, p70, n = r.split(",")
        assert float(p30) <= float(p70) and n == "2"
    algos = parse_config(SEARCH).algorithms
    assert aggregate_dir(out, algos, 10) == summary
    assert not list(out.rglob("*.tmp"))


def test_search_is_deterministic_and_job_independent(tmp_path):
    cfg = write_config(tmp_path, SEARCH)
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["search", "--config", str(cfg), "--out", str(a), "--jobs", "1"]) == 0
    assert main(["search", "--config", str(cfg), "--out", str(b), "--jobs", "3"]) == 0
    assert tree(a) == tree(b)


def test_seed_flag_overrides_config(tmp_path):
    cfg = write_config(tmp_path, {"trials": 1, "base_seed": 3, "algorithms": [{"kind": "random", "budget": 10}]})
    assert main(["search", "--config", str(cfg), "--out", str(tmp_path / "o"), "--seed", "99"]) == 0
    head = json.loads(trial_path(tmp_path / "o", "random", 0).read_text().splitlines()[0])
    assert head["seed"] == 99


def test_partial_failure_keeps_earlier_files(tmp_path, tiny_table):
    out = tmp_path / "out"
    ok = write_config(tmp_path, {"space": {"table": str(tiny_table)}, "trials": 2,
                                 "algorithms": [{"kind": "random", "budget": 20}]}, "ok.json")
    assert main(["search", "--config", str(ok), "--out", str(out)]) == 0
    before = tree(out / "trials" / "random")
    failing = {"space": {"table": str(tiny_table)}, "trials": 2,
               "algorithms": [{"kind": "random", "budget": 20},
                              {"kind": "npenas", "variant": "oracle", "n0": 6, "mu_num": 30, "total_num": 30}]}
    bad = write_config(tmp_path, failing, "bad.json")
    assert main(["search", "--config", str(bad), "--out", str(out), "--jobs", "2"]) == 2
    assert tree(out / "trials" / "random") == before
    partial = sorted((out / "trials" / "npenas-oracle").glob("*.partial.jsonl"))
    assert len(partial) == 2
    lines = [json.loads(l) for l in partial[0].read_text().splitlines()]
    assert lines[-1]["type"] == "error" and lines[-2]["type"] == "summary" and lines[-2]["queries"] == 6
    assert "npenas-oracle" not in (out / "summary.csv").read_text()
    assert not list(out.rglob("*.tmp"))


# ---------------------------------------------------------------------------
# studies


def test_sampler_study_full_coverage(tmp_path, micro_space):
    out = tmp_path / "s"
    assert main(["sampler-study", "--out", str(out), "--samples", str(len(micro_space))]) == 0
    kl = json.loads((out / "kl.json").read_text())
    assert kl["direct_vs_truth"] < 1e-3
    assert kl["direct_vs_truth"] < kl["prune_vs_truth"]
    for name in ("direct", "prune", "truth"):
        rows = (out / f"paths_{name}.csv").read_text().splitlines()
        assert rows[0] == "path,count,prob" and len(rows) == 1 + len(micro_space.universe.paths)
        assert sum(float(r.split(",")[2]) for r in rows[1:]) == pytest.approx(1.0, abs=1e-8)


def test_predictor_study_shape(tmp_path):
    out = tmp_path / "p"
    assert main(["predictor-study", "--out", str(out), "--sizes", "20", "--repeats", "1", "--jobs", "2"]) == 0
    summary = (out / "predictor_summary.csv").read_text().splitlines()[1:]
    filled = [r.split(",") for r in summary if r.split(",")[1] in METHODS]
    assert len(filled) == len(METHODS) * len(SAMPLERS)
    assert sum(1 for r in filled for v in r[3:5] if v) == 16
    table = (out / "predictor_table.csv").read_text().splitlines()
    assert table[0] == "sampler,method,20"
    again = tmp_path / "q"
    assert main(["predictor-study", "--out", str(again), "--sizes", "20", "--repeats", "1", "--jobs", "1"]) == 0
    assert tree(out) == tree(again)


def test_predictor_study_rejects_small_space(tmp_path, tiny_table):
    cfg = write_config(tmp_path, {"space": {"table": str(tiny_table)}})
    assert main(["predictor-study", "--config", str(cfg), "--out", str(tmp_path / "o"), "--sizes", "20",
                 "--repeats", "1"]) == 1


def test_fanout_single_curve(tmp_path):
    out = tmp_path / "f"
    assert main(["fanout-study", "--out", str(out), "--k", "10", "--trials", "1", "--budget", "40"]) == 0
    rows = (out / "fanout.csv").read_text().splitlines()[1:]
    assert [r.split(",")[:2] for r in rows] == [["ea-k10", str(q)] for q in (10, 20, 30, 40)]


def test_paired_bootstrap_bound():
    rng = np.random.default_rng(0)
    assert paired_bootstrap_lower(np.full(50, 0.2), rng) == pytest.approx(0.2)
    d = rng.normal(1.0, 1.0, 400)
    assert d.mean() - 3 / 20 < paired_bootstrap_lower(d, rng) < d.mean()


# ---------------------------------------------------------------------------
# benchmark files


def test_export_validate_round_trip(tmp_path, capsys):
    f = tmp_path / "micro.jsonl"
    assert main(["export-bench", str(f)]) == 0
    lines = f.read_text(encoding="utf-8").splitlines()
    header = json.loads(lines[0])
    assert header["checksum"] == bench_checksum(lines[1:])
    assert header["rows"] == len(lines) - 1 == 2559
    assert main(["validate-bench", str(f)]) == 0
    assert header["checksum"] in capsys.readouterr().out


def test_validate_reports_truncated_line(tmp_path, capsys):
    f = tmp_path / "micro.jsonl"
    assert main(["export-bench", str(f)]) == 0
    lines = f.read_text(encoding="utf-8").splitlines()
    lines[9] = lines[9][: len(lines[9]) // 2]
    f.write_text("\n".join(lines) + "\n", encoding="utf-8")
    capsys.readouterr()
    assert main(["validate-bench", str(f)]) == 1
    assert f"{f}:10:" in capsys.readouterr().err


def test_validate_missing_file(tmp_path):
    assert main(["validate-bench", str(tmp_path / "none.jsonl")]) == 1


def test_console_entry_point(tmp_path):
    out = subprocess.run([sys.executable, "-m", "npenas", "validate-bench", str(tmp_path / "x")],
                         capture_output=True, text=True)
    assert out.returncode == 1
    assert "no such file" in out.stderr
