from __future__ import annotations

import json
import math
import os

import numpy as np
import pytest
import yaml

from levyglass.errors import ConfigError, InputError
from levyglass.harness import cli
from levyglass.harness.config import (ENV_OUTPUT, ENV_WORKERS, ExperimentConfig,
                                      apply_overrides, load_config, parse_value, workers)
from levyglass.harness.experiments import load_result, replay, run_experiment
from levyglass.harness.stats import (bonferroni, chi2_gof, dkw_epsilon, empirical_survival,
                                     ks_exponential, ks_two_sample, mean_se, tv_distance,
                                     tv_plugin, tv_to_law)

PAIR = {"schema_version": 1, "kind": "wells",
        "law": {"variant": "planted", "n": 8, "planted": [[0, 1, 6.0], [2, 3, -5.0]]},
        "regime": {"beta": 1.0, "log_t": 9.0, "log_delta": -0.5}}


# statistics --------------------------------------------------------------

def test_tv_plugin_extremes():
    same = tv_plugin([10, 20, 30], [10, 20, 30], n_bootstrap=50)
    assert same.estimate == 0.0
    assert same.null_mean > 0
    apart = tv_plugin([5, 0], [0, 7], n_bootstrap=50)
    assert apart.estimate == 1.0
    assert tv_plugin([1, 1], [1, 1], n_bootstrap=0).n_bootstrap == 0
    with pytest.raises(InputError):
        tv_plugin([1, 2], [1, 2, 3])
    with pytest.raises(InputError):
        tv_plugin([0, 0], [1, 1])
    with pytest.raises(InputError):
        tv_plugin([-1, 2], [1, 1])


def test_tv_plugin_null_is_calibrated():
    # two samples from one law: the estimate should look like a null draw
    rng = np.random.default_rng(0)
    p = np.array([0.1, 0.2, 0.3, 0.4])
    exceed = 0
    for k in range(200):
        a = rng.multinomial(2000, p)
        b = rng.multinomial(2000, p)
        r = tv_plugin(a, b, n_bootstrap=200, seed=k)
        exceed += r.estimate > r.null_ci[1]
    assert exceed / 200 < 0.08


def test_tv_to_law_and_ci_contains_truth():
    rng = np.random.default_rng(1)
    p = np.array([0.5, 0.3, 0.2])
    q = np.array([0.4, 0.4, 0.2])
    c = rng.multinomial(50000, p)
    r = tv_to_law(c, q, n_bootstrap=400)
    assert r.ci[0] <= tv_distance(p, q) + 0.005 and tv_distance(p, q) - 0.005 <= r.ci[1]


def test_ks_and_chi2():
    rng = np.random.default_rng(2)
    x = rng.exponential(0.5, 5000)
    assert ks_exponential(x, 2.0)[1] > 0.001
    assert ks_exponential(x, 1.0)[1] < 1e-6
    assert ks_two_sample(x, rng.exponential(0.5, 5000))[1] > 0.001
    c = rng.multinomial(10000, [0.25] * 4)
    assert chi2_gof(c, [1, 1, 1, 1])[1] > 0.001
    assert chi2_gof([9000, 1000], [1, 1])[1] < 1e-10
    # all mass in one pooled cell gives no test
    assert chi2_gof([1, 1], [1, 1]) == (0.0, 1.0)


def test_dkw_band_coverage():
    assert dkw_epsilon(10 ** 5) == pytest.approx(math.sqrt(math.log(200) / 2e5))
    rng = np.random.default_rng(3)
    misses = 0
    for _ in range(200):
        x = rng.random(2000)
        grid = np.linspace(0.01, 0.99, 99)
        dev = np.abs(empirical_survival(x, grid) - (1 - grid)).max()
        misses += dev > dkw_epsilon(2000, 0.95)
    assert misses / 200 <= 0.1


def test_small_helpers():
    m, se = mean_se([1.0, 2.0, 3.0])
    assert m == 2.0 and se == pytest.approx(1 / math.sqrt(3))
    assert math.isnan(mean_se([1.0])[1])
    assert bonferroni(0.05, 10) == pytest.approx(0.005)


# configuration -----------------------------------------------------------

def test_config_defaults_and_hash():
    a = ExperimentConfig(PAIR)
    assert a["engine"] == "rejection-free" and a["law"]["alpha"] == 0.5
    b = ExperimentConfig(dict(PAIR, output={"dir": "elsewhere"}))
    assert a.hash() == b.hash()
    c = ExperimentConfig(apply_overrides(PAIR, ["regime.beta=2"]))
    assert c.hash() != a.hash()


@pytest.mark.parametrize("bad", [
    {"kind": "wells"},
    dict(PAIR, schema_version=2),
    dict(PAIR, kind="nonsense"),
    dict(PAIR, law={"variant": "pareto", "n": 0}),
    dict(PAIR, law={"variant": "pareto", "n": 4, "alpha": 2.5}),
    dict(PAIR, law={"variant": "general", "n": 4}),
    dict(PAIR, law={"variant": "planted", "n": 4, "planted": [[0, 9, 1.0]]}),
    dict(PAIR, regime={"beta": 1.0, "a": 0.1, "log_t": 2.0}),
    dict(PAIR, regime={"beta": -1.0}),
    dict(PAIR, extra=1),
    dict(PAIR, samples={"n_paths": 0}),
    "not a mapping",
])
def test_config_rejects(bad):
    with pytest.raises(ConfigError):
        ExperimentConfig(bad)


def test_overrides_and_files(tmp_path):
    assert parse_value("1e4") == 10000 and parse_value("[1, 2]") == [1, 2]
    assert parse_value("true") is True and parse_value("rf") == "rf"
    with pytest.raises(ConfigError):
        apply_overrides(PAIR, ["no_equals"])
    p = tmp_path / "c.yaml"
    p.write_text(yaml.safe_dump(PAIR))
    cfg = load_config(p, overrides=["samples.n_paths=7"])
    assert cfg["samples"]["n_paths"] == 7
    q = tmp_path / "c.json"
    q.write_text(json.dumps(PAIR))
    assert load_config(q).hash() == ExperimentConfig(PAIR).hash()
    (tmp_path / "bad.json").write_text("{")
    with pytest.raises(ConfigError):
        load_config(tmp_path / "bad.json")
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.json")


def test_environment(monkeypatch):
    monkeypatch.setenv(ENV_OUTPUT, "/tmp/x")
    assert ExperimentConfig(PAIR).output_dir() == "/tmp/x"
    monkeypatch.setenv(ENV_WORKERS, "3")
    assert workers() == 3
    monkeypatch.setenv(ENV_WORKERS, "zero")
    with pytest.raises(ConfigError):
        workers()


# experiments -------------------------------------------------------------

def test_runs_are_byte_identical(tmp_path):
    cfg = dict(PAIR, kind="compare-skeleton", samples={"n_paths": 200, "times_s": [0.5, 1.0]})
    a = run_experiment(cfg, out_dir=str(tmp_path / "a"))
    b = run_experiment(cfg, out_dir=str(tmp_path / "b"))
    names = sorted(k for k in a.files if k != "manifest.json")
    assert "result.json" in names and any(k.endswith(".csv") for k in names)
    for k in names:
        assert open(a.files[k], "rb").read() == open(b.files[k], "rb").read()
    first = open(a.files[names[0]]).readline()
    assert first.startswith("# config_hash=") or names[0] == "result.json"


def test_load_result_refuses_mismatch(tmp_path):
    res = run_experiment(PAIR, out_dir=str(tmp_path / "r"))
    loaded = load_result(res.out_dir, config=PAIR)
    assert loaded["kind"] == "wells"
    with pytest.raises(ConfigError):
        load_result(res.out_dir, config=apply_overrides(PAIR, ["regime.beta=2"]))
    path = res.files["result.json"]
    data = json.load(open(path))
    data["config"]["regime"]["beta"] = 3.0
    json.dump(data, open(path, "w"))
    with pytest.raises(ConfigError):
        load_result(res.out_dir)


def test_replay_reproduces_outputs(tmp_path):
    cfg = dict(PAIR, kind="sample", law={"variant": "pareto", "n": 12})
    first = run_experiment(cfg, out_dir=str(tmp_path / "one"))
    res, bad = replay(first.files["manifest.json"], str(tmp_path / "two"))
    assert bad == []
    assert res.out_dir.endswith("two")


def test_failed_run_leaves_no_directory(tmp_path):
    cfg = dict(PAIR, kind="escape", law={"variant": "planted", "n": 6, "planted": []})
    with pytest.raises(InputError):
        run_experiment(cfg, out_dir=str(tmp_path / "none"))
    assert not os.path.exists(tmp_path / "none")


# command line ------------------------------------------------------------

@pytest.mark.parametrize("argv", [
    ["sample", "--n", "10"],
    ["wells", "--n", "8", "--planted", "0,1,6", "--planted", "2,3,-5", "--log-t", "9",
     "--set", "regime.log_delta=-0.5"],
    ["yproc", "--n", "8", "--planted", "0,1,6", "--planted", "2,3,-5", "--log-t", "9"],
    ["exact", "--n", "6", "--planted", "0,1,4", "--log-t", "4"],
    ["fk", "--n", "6", "--beta", "0.5", "--set", "samples.n_paths=200"],
    ["diagnose", "--set", "samples.sizes=[20, 40]", "--set", "samples.n_seeds=5",
     "--set", "regime.a=0.1", "--set", "regime.gamma=1.9"],
])
def test_cli_subcommands(argv, tmp_path, capsys):
    assert cli.main(argv + ["--out", str(tmp_path / "o")]) == 0
    out = capsys.readouterr().out
    assert "results in" in out
    assert len(list((tmp_path / "o").glob("*/result.json"))) == 1


def test_cli_exit_codes(tmp_path, capsys):
    # malformed input
    assert cli.main(["sample", "--n", "0", "--out", str(tmp_path / "a")]) == 2
    # dense generator over the size cap
    assert cli.main(["exact", "--n", "20", "--planted", "0,1,4", "--log-t", "4",
                     "--out", str(tmp_path / "b")]) == 3
    # relevant edges share a vertex
    assert cli.main(["wells", "--n", "6", "--planted", "0,1,9", "--planted", "1,2,8",
                     "--log-t", "6", "--out", str(tmp_path / "c")]) == 4
    err = capsys.readouterr().err
    assert err.count("error:") == 3
    with pytest.raises(SystemExit):
        cli.main(["sample", "--planted", "0,1"])


def test_cli_replay(tmp_path, capsys):
    assert cli.main(["sample", "--n", "9", "--out", str(tmp_path / "a")]) == 0
    capsys.readouterr()
    (manifest,) = (tmp_path / "a").glob("*/manifest.json")
    assert cli.main(["replay", str(manifest),
                     "--out", str(tmp_path / "b")]) == 0
    assert json.loads(capsys.readouterr().out)["mismatched"] == []
