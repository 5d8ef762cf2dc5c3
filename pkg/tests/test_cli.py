import json

import numpy as np
import pytest

from derapportion.apportion import CommandInstant, DerKind, Mode
from derapportion.cli import main, oracle_compare, random_instance, resolve_scenario_path
from derapportion.simnet import CapacityProfile, Scenario, load_scenario, save_scenario
from derapportion.topology import Graph, complete_graph, dumps_graph


def test_validate_bundled_ok(capsys):
    assert main(["validate", "testcase1", "testcase2"]) == 0
    out = capsys.readouterr().out
    assert "testcase1: scenario: ok" in out


def test_validate_graph_missing_reverse_path(tmp_path, capsys):
    p = tmp_path / "g.json"
    p.write_text(dumps_graph(Graph(3, ((0, 1), (1, 2)))))
    assert main(["validate", str(p)]) == 1
    assert "not strongly connected" in capsys.readouterr().out


def test_validate_rho_nonpositive(tmp_path, capsys):
    d = json.loads(resolve_scenario_path("testcase1").read_text())
    d["rho"] = 0.0
    p = tmp_path / "sc.json"
    p.write_text(json.dumps(d))
    assert main(["validate", str(p)]) == 1
    assert "rho: must be positive" in capsys.readouterr().out
    assert main(["validate", "testcase1", "--rho", "-1"]) == 1


def test_validate_split_files(tmp_path):
    sc = random_instance(4, np.random.default_rng(0))
    full = sc.to_json()
    (tmp_path / "graph.json").write_text(json.dumps(full.pop("graph")))
    (tmp_path / "caps.json").write_text(json.dumps({"capacities": full.pop("capacities")}))
    (tmp_path / "sched.json").write_text(json.dumps(full.pop("schedule")))
    full.update(graph_file="graph.json", capacities_file="caps.json", schedule_file="sched.json")
    (tmp_path / "sc.json").write_text(json.dumps(full))
    paths = [str(tmp_path / f) for f in ("graph.json", "caps.json", "sched.json", "sc.json")]
    assert main(["validate", *paths]) == 0
    assert load_scenario(tmp_path / "sc.json").n == 4


def test_validate_bad_schedule(tmp_path, capsys):
    p = tmp_path / "s.json"
    p.write_text(json.dumps([{"t": 5, "mode": "black", "magnitude": 1, "circulating_nodes": [0]},
                             {"t": 1, "mode": "brown", "magnitude": 1, "circulating_nodes": [0]}]))
    assert main(["validate", str(p)]) == 1
    assert "increasing" in capsys.readouterr().out


def test_run_testcase1_meets_command(tmp_path):
    assert main(["run", "testcase1", "--out", str(tmp_path), "-q"]) == 0
    rep = json.loads((tmp_path / "summary.json").read_text())
    (cmd,) = rep["commands"]
    sc = load_scenario(resolve_scenario_path("testcase1"))
    headroom = sum(c.headroom for c in sc.capacities_at(cmd["t"]))
    assert abs(cmd["sum_pi_star"] - 500.0) <= 0.01 * headroom
    assert rep["audit"]["ok"] and rep["all_converged"]
    assert (tmp_path / "trace.csv").read_text().startswith("round,node,")


def test_run_seed_override_is_deterministic(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["run", "testcase1", "--seed", "7", "--out", str(a), "-q"]) == 0
    assert main(["run", "testcase1", "--seed", "7", "--out", str(b), "-q"]) == 0
    ra = json.loads((a / "summary.json").read_text())
    rb = json.loads((b / "summary.json").read_text())
    assert ra["config_digest"] == rb["config_digest"]
    assert ra["trace_sha256"] == rb["trace_sha256"]
    assert (a / "trace.csv").read_bytes() == (b / "trace.csv").read_bytes()
    assert ra["overrides"] == {"seed": 7} and ra["seed"] == 7


def test_run_uses_env_out_dir(tmp_path, monkeypatch):
    sc = random_instance(5, np.random.default_rng(1))
    save_scenario(sc, tmp_path / "small.json")
    monkeypatch.setenv("DERAPPORTION_OUT", str(tmp_path / "env_out"))
    assert main(["run", str(tmp_path / "small.json"), "-q", "--tau-bar", "2"]) == 0
    rep = json.loads((tmp_path / "env_out" / "summary.json").read_text())
    assert rep["overrides"] == {"tau_bar": 2}


def test_run_epoch_cap_failure_exit_code(tmp_path, capsys):
    sc = random_instance(5, np.random.default_rng(1))
    save_scenario(sc, tmp_path / "small.json")
    rc = main(["run", str(tmp_path / "small.json"), "--rho", "1e-300", "--epoch-cap", "2",
               "--out", str(tmp_path / "o")])
    assert rc == 3
    assert "did not converge" in capsys.readouterr().err


def test_oracle_two_node_and_single_node():
    two = Scenario(complete_graph(2), [CapacityProfile(DerKind.RES, 0.0, 10.0),
                                       CapacityProfile(DerKind.RES, 0.0, 30.0)],
                   [CommandInstant(0.0, Mode.BLACK, 20.0, (0,))], rho=1e-3, tau_bar=1)
    (row,) = oracle_compare(two)
    assert row["oracle_ratio"] == 0.5 and row["ratio_error"] <= 1e-3 and row["ok"]
    one = Scenario(Graph(1, ()), [CapacityProfile(DerKind.RES, 0.0, 10.0)],
                   [CommandInstant(0.0, Mode.BLACK, 4.0, (0,))], rho=1e-3, tau_bar=0)
    (row,) = oracle_compare(one)
    assert row["ratio_error"] == 0.0 and row["extremum_mismatches"] == 0


def test_oracle_random_batch(capsys):
    assert main(["oracle", "--random", "8", "--nodes", "6", "--seed", "3"]) == 0
    out = capsys.readouterr().out
    assert "8/8 commands match" in out


def test_oracle_size_cap(capsys):
    assert main(["oracle", "testcase1", "--max-nodes", "10"]) == 2


def test_unknown_scenario():
    with pytest.raises(FileNotFoundError):
        resolve_scenario_path("nope")
    assert main(["run", "nope"]) == 2
