import json

import numpy as np
import pytest

from tenkontract.cli import DEFAULTS, run
from tenkontract.oracle import amplitudes_for
from tenkontract.circuit import load_circuit
from tenkontract.verify import AmplitudeSet


@pytest.fixture
def workdir(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    monkeypatch.delenv("TENKONTRACT_SEED", raising=False)
    return tmp_path


def gen(path="c.txt", n=6, cycles=5, seed=1):
    assert run(["gen-circuit", "-n", str(n), "-c", str(cycles), "--seed", str(seed), "-o", path]) == 0
    return path


def test_gen_circuit_deterministic(workdir):
    gen("a.txt")
    gen("b.txt")
    gen("c.json")
    assert (workdir / "a.txt").read_text() == (workdir / "b.txt").read_text()
    assert load_circuit(workdir / "c.json") == load_circuit(workdir / "a.txt")


def test_pathfind_deterministic(workdir):
    gen()
    for out in ("o1.json", "o2.json"):
        assert run(["pathfind", "c.txt", "--mem-budget", "1GiB", "--seed", "3", "--sweeps", "20", "-o", out]) == 0
    assert (workdir / "o1.json").read_bytes() == (workdir / "o2.json").read_bytes()
    d = json.loads((workdir / "o1.json").read_text())
    assert {"leaves", "steps", "slices", "score", "params"} <= set(d)
    assert {"lhs", "rhs", "out", "spec", "Tcc", "Tmc"} <= set(d["steps"][0])


def test_seed_env_fallback(workdir, monkeypatch):
    monkeypatch.setenv("TENKONTRACT_SEED", "5")
    run(["gen-circuit", "-n", "5", "-c", "6", "-o", "env.txt"])
    run(["gen-circuit", "-n", "5", "-c", "6", "--seed", "5", "-o", "flag.txt"])
    run(["gen-circuit", "-n", "5", "-c", "6", "--seed", "6", "-o", "other.txt"])
    assert (workdir / "env.txt").read_text() == (workdir / "flag.txt").read_text()
    assert (workdir / "env.txt").read_text() != (workdir / "other.txt").read_text()


def test_config_precedence(workdir):
    (workdir / "tenkontract.toml").write_text('seed = 9\n[gen-circuit]\nqubits = 3\ncycles = 2\n')
    run(["gen-circuit", "-o", "cfg.txt"])
    assert (workdir / "cfg.txt").read_text().splitlines()[0] == "3"
    run(["gen-circuit", "-n", "4", "-o", "flag.txt"])
    assert (workdir / "flag.txt").read_text().splitlines()[0] == "4"
    run(["gen-circuit", "-n", "3", "-c", "2", "--seed", "9", "-o", "explicit.txt"])
    assert (workdir / "cfg.txt").read_text() == (workdir / "explicit.txt").read_text()


def test_defaults_table():
    assert DEFAULTS["pathfind"]["alpha"] == 64.0
    assert DEFAULTS["pathfind"]["sweeps"] == 200


def test_pipeline_end_to_end(workdir, capsys):
    gen(n=8, cycles=8, seed=2)
    assert run(["oracle", "c.txt", "--sample", "3000", "--fidelity", "1", "--seed", "4",
                "--samples-out", "samples.txt", "-o", "ref.txt"]) == 0
    assert run(["pathfind", "c.txt", "--bitstrings", "samples.txt", "--sweeps", "10", "-o", "order.json"]) == 0
    assert run(["contract", "c.txt", "order.json", "--bitstrings", "samples.txt", "--workers", "1",
                "--flop-report", "flops.json", "-o", "amps.txt"]) == 0
    amps = AmplitudeSet.load(workdir / "amps.txt")
    ref = AmplitudeSet.load(workdir / "ref.txt")
    assert amps.bitstrings == ref.bitstrings
    np.testing.assert_allclose(amps.amplitudes, ref.amplitudes, atol=1e-10)
    flops = json.loads((workdir / "flops.json").read_text())
    assert flops["executed_flops"] == flops["total_Tcc"] * flops["subtasks"]
    assert sum(s["Tcc"] for s in flops["steps"]) == flops["total_Tcc"]

    assert run(["verify", "amps.txt", "-o", "report.json"]) == 0
    rep = json.loads((workdir / "report.json").read_text())
    c = load_circuit(workdir / "c.txt")
    p = np.abs(amplitudes_for(c, [format(i, "08b") for i in range(256)]).amplitudes) ** 2
    expected = 256 * np.sum(p ** 2) - 1
    assert abs(rep["F_l"] - expected) < 4 * rep["F_l_stderr"]


def test_contract_low_precision_and_verify_csv(workdir):
    gen(n=5, cycles=5, seed=3)
    run(["pathfind", "c.txt", "--sweeps", "5", "-o", "order.json"])
    assert run(["contract", "c.txt", "order.json", "--workers", "1", "-o", "fp64.txt"]) == 0
    assert run(["contract", "c.txt", "order.json", "--workers", "1", "--precision", "tf32", "-o", "tf32.txt"]) == 0
    assert run(["verify", "tf32.txt", "--reference", "fp64.txt", "--format", "csv", "-o", "r.csv"]) == 0
    assert (workdir / "r.csv").read_text().startswith("x_lo,x_hi,mass,theory")
    assert run(["verify", "tf32.txt", "--reference", "fp64.txt", "-o", "r.json"]) == 0
    assert json.loads((workdir / "r.json").read_text())["eps_l2sq"] > 0


def test_mixed_topk_and_schedule_file(workdir):
    gen(n=5, cycles=5, seed=3)
    run(["pathfind", "c.txt", "--sweeps", "5", "-o", "order.json"])
    assert run(["contract", "c.txt", "order.json", "--workers", "1", "--precision", "tf32", "--split", "3",
                "--mixed-topk", "2", "-o", "mixed.txt"]) == 0
    sched = {"default": {"fmt": "fp64", "mode": 1}, "accum": "fp64", "overrides": []}
    (workdir / "s.json").write_text(json.dumps(sched))
    assert run(["contract", "c.txt", "order.json", "--workers", "1", "--schedule", "s.json", "-o", "s.txt"]) == 0
    assert run(["contract", "c.txt", "order.json", "--workers", "1", "-o", "plain.txt"]) == 0
    assert (workdir / "s.txt").read_text() == (workdir / "plain.txt").read_text()


def test_unknown_flag_is_usage_error(workdir, capsys):
    assert run(["pathfind", "c.txt", "--frobnicate"]) == 1
    assert "usage" in capsys.readouterr().err
    assert run([]) == 1
    assert run(["--help"]) == 0


def test_missing_file_is_data_error(workdir):
    assert run(["pathfind", "nope.txt"]) == 2


def test_malformed_circuit_is_data_error(workdir):
    (workdir / "bad.txt").write_text("2\n0 sx 7\n")
    assert run(["oracle", "bad.txt"]) == 2


def test_budget_failure_exit_code(workdir):
    gen(n=5, cycles=5)
    assert run(["pathfind", "c.txt", "--sweeps", "2", "--mem-budget", "64", "-o", "o.json"]) == 3


def test_bench_and_precision_bench(workdir):
    assert run(["bench", "--qubits", "6", "--cycles", "6", "--repeats", "1", "-o", "b.json"]) == 0
    rows = json.loads((workdir / "b.json").read_text())["topk"]
    assert rows and {"formable_before", "formable_after", "speedup"} <= set(rows[0])
    assert run(["precision-bench", "--trials", "50", "--length", "64", "--format", "csv", "-o", "p.csv"]) == 0
    lines = (workdir / "p.csv").read_text().splitlines()
    assert lines[0] == "method,median_relative_error" and len(lines) == 6
