import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from robust_consensus.cli import main
from robust_consensus.graph import make_graph, random_graph, ring


def graph_file(tmp_path, g, name="g.json"):
    path = tmp_path / name
    path.write_text(json.dumps(g.to_document()))
    return str(path)


def read_csv(path):
    with open(path) as fh:
        assert fh.readline().startswith("# {")
        return list(csv.DictReader(fh))


@pytest.fixture
def ring_path(tmp_path):
    return graph_file(tmp_path, ring(5, q=0.5), "ring5.json")


@pytest.fixture
def two_path(tmp_path):
    return graph_file(tmp_path, make_graph(2, [(0, 1, 0.9), (1, 0, 0.9)]), "two.json")


def test_simulate_perfect_links(tmp_path, ring_path):
    out = tmp_path / "sim"
    code = main(["simulate", "--graph", ring_path, "--y0", "5,0,0,0,0", "--z0", "1,1,1,1,1",
                 "--q", "1.0", "--steps", "200", "--seed", "7", "--out", str(out)])
    assert code == 0
    summary = json.loads((out / "summary.json").read_text())
    np.testing.assert_allclose(summary["final_estimates"], 1.0, atol=1e-9)
    assert summary["target"] == 1.0
    rows = read_csv(out / "trace.csv")
    assert len(rows) == 201 * 10
    assert rows[0] == {"k": "0", "entity": "1", "kind": "node", "y": "5", "z": "1", "estimate": "", "gated": "0"}
    masks = read_csv(out / "masks.csv")
    assert len(masks) == 200 * 5 and all(r["reliable"] == "1" for r in masks)
    assert summary["provenance"]["flags"]["q"] == 1.0


def test_y0_from_file(tmp_path, ring_path):
    (tmp_path / "y0.txt").write_text("5\n0\n0\n0\n0\n")
    out = tmp_path / "sim"
    assert main(["simulate", "--graph", ring_path, "--y0", str(tmp_path / "y0.txt"), "--q", "1",
                 "--steps", "200", "--out", str(out)]) == 0
    assert json.loads((out / "summary.json").read_text())["max_abs_error"] < 1e-9


def test_missing_graph_is_usage_error(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["simulate", "--y0", "1,2"])
    assert exc.value.code == 1
    assert "usage" in capsys.readouterr().err


@pytest.mark.parametrize("extra", [["--steps", "0"], ["--y0", "1,2"], ["--y0", "a,b,c,d,e"],
                                   ["--q", "1.5"], ["--seed", "-1"], ["--z0", "0,0,0,0,0"]])
def test_validation_errors(tmp_path, ring_path, extra, capsys):
    argv = ["simulate", "--graph", ring_path, "--y0", "1,2,3,4,5", "--out", str(tmp_path / "o")] + extra
    assert main(argv) == 1
    assert capsys.readouterr().err.startswith("error:")


def test_missing_file_is_io_error(tmp_path, capsys):
    assert main(["simulate", "--graph", str(tmp_path / "nope.json"), "--y0", "1"]) == 2
    assert "nope.json" in capsys.readouterr().err


def test_bad_graph_is_validation_error(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"m": 3, "edges": [{"from": 1, "to": 2, "q": 0.5}, {"from": 2, "to": 3, "q": 0.5}]}))
    assert main(["analyze", "--graph", str(path)]) == 1


def test_analyze_perfect_two_node(tmp_path, two_path):
    out = tmp_path / "an"
    assert main(["analyze", "--graph", two_path, "--q", "1", "--steps", "40", "--samples", "20",
                 "--out", str(out)]) == 0
    consts = json.loads((out / "report.json").read_text())["constants"]
    assert consts["c"] == 0.5 and consts["l"] == 1
    assert consts["w"] == 1.0 and consts["mu"] == [0.0625, 0.0625]
    rows = read_csv(out / "delta.csv")
    assert list(rows[0]) == ["k", "delta_Tk", "beta_pow_k", "certified"]
    assert [int(r["k"]) for r in rows] == list(range(1, 41))
    beta = consts["beta"]
    for r in rows:
        assert float(r["beta_pow_k"]) == pytest.approx(beta ** int(r["k"]), rel=1e-15)
    assert len(read_csv(out / "lambda.csv")) == 40 // consts["block_length"]


def test_analyze_rare_scrambling_flagged(tmp_path, two_path, caplog):
    out = tmp_path / "an"
    assert main(["analyze", "--graph", two_path, "--q", "0.01", "--samples", "50", "--steps", "10",
                 "--out", str(out)]) == 0
    consts = json.loads((out / "report.json").read_text())["constants"]
    assert consts["insufficient_samples"] is True
    assert consts["alpha"] is None and consts["k_threshold"] is None
    assert "undefined" in caplog.text
    assert all(r["beta_pow_k"] == "" for r in read_csv(out / "delta.csv"))


def test_montecarlo_single_run_matches_simulate(tmp_path, ring_path):
    common = ["--graph", ring_path, "--y0", "1,2,3,4,5", "--steps", "150", "--seed", "4"]
    assert main(["montecarlo", *common, "--runs", "1", "--samples", "200", "--out", str(tmp_path / "mc")]) == 0
    assert main(["simulate", *common, "--out", str(tmp_path / "sim")]) == 0
    mc = json.loads((tmp_path / "mc" / "montecarlo.json").read_text())
    sim = json.loads((tmp_path / "sim" / "summary.json").read_text())
    assert mc["runs"] == 1
    assert mc["final_error_max"] == sim["max_abs_error"]


def test_oracle_passes_and_fails(tmp_path, two_path, capsys):
    base = ["oracle", "--graph", two_path, "--y0", "0.3,0.7", "--seed", "42", "--steps", "100"]
    assert main(base + ["--tol", "1e-12", "--out", str(tmp_path / "a")]) == 0
    assert "max deviation" in capsys.readouterr().out
    assert main(base + ["--tol", "0", "--out", str(tmp_path / "b")]) == 3
    assert "round" in capsys.readouterr().err


def test_oracle_random_six_node_sweep(tmp_path):
    g = random_graph(6, np.random.default_rng(99))
    path = graph_file(tmp_path, g)
    for seed in range(20):
        assert main(["oracle", "--graph", path, "--y0", "1,2,3,4,5,6", "--seed", str(seed),
                     "--steps", "200", "--out", str(tmp_path / "o")]) == 0


SUBCOMMANDS = {
    "simulate": ["--y0", "1,2,3,4,5", "--steps", "60", "--gating", "threshold"],
    "analyze": ["--steps", "60", "--samples", "300"],
    "montecarlo": ["--y0", "1,2,3,4,5", "--steps", "60", "--runs", "4", "--samples", "300"],
    "oracle": ["--y0", "1,2,3,4,5", "--steps", "60"],
}


@pytest.mark.parametrize("cmd", sorted(SUBCOMMANDS))
def test_byte_identical_outputs(tmp_path, ring_path, cmd):
    outs = []
    for rep in range(2):
        out = tmp_path / f"run{rep}"
        assert main([cmd, "--graph", ring_path, "--seed", "3", *SUBCOMMANDS[cmd], "--out", str(out)]) == 0
        outs.append({p.name: p.read_bytes() for p in sorted(out.iterdir())})
    assert outs[0] == outs[1] and outs[0]


def test_console_script(tmp_path, two_path):
    res = subprocess.run([sys.executable, "-m", "robust_consensus.cli", "oracle", "--graph", two_path,
                          "--y0", "1,0", "--out", str(tmp_path / "o")], capture_output=True, text=True)
    assert res.returncode == 0, res.stderr
    assert res.stdout.startswith("max deviation = ")
