import json

import pytest

from sinaiwalk.cli import main

W_VALUES = [0, 2, 3, 1, 2, 0, 1, -1, -2, 0, 1, 3, 2, 4, 1]


def write_potential(path, values, lo):
    lines = ["index,S"] + [f"{lo + j},{v}" for j, v in enumerate(values)]
    path.write_text("\n".join(lines) + "\n")
    return path


def run(tmp_path, *args):
    return main([*args, "--out", str(tmp_path / "out")])


def test_valleys_on_fixture(tmp_path):
    pot = write_potential(tmp_path / "w.csv", W_VALUES, -5)
    assert run(tmp_path, "valleys", "--potential", str(pot), "--Gamma", "3", "--K", "1", "--svg") == 0
    doc = json.loads((tmp_path / "out" / "valleys.json").read_text())
    dec = doc["decomposition"]
    assert dec["M"] == [-3, 8] and dec["m"] == [3] and dec["n_f"] == 1
    assert (tmp_path / "out" / "valleys.svg").read_text().startswith("<svg")


def test_flat_potential_exits_with_scan_code(tmp_path):
    pot = write_potential(tmp_path / "flat.csv", [0] * 41, -20)
    assert run(tmp_path, "valleys", "--potential", str(pot), "--Gamma", "3", "--K", "1") == 2


@pytest.mark.parametrize("args", [
    ["valleys", "--K", "0"],
    ["env", "--radius", "0"],
    ["simulate", "--t", "5"],
    ["simulate", "--set", "sim.engine=warp"],
    ["simulate", "--set", "nonsense.key=1"],
    ["valleys", "--potential", "/nonexistent/p.csv", "--Gamma", "3"],
    ["env", "--set", "env.rho0=0.6"],
])
def test_bad_input_exits_with_config_code(tmp_path, args):
    assert run(tmp_path, *args) == 1


def test_usage_error_exits_with_config_code(tmp_path):
    with pytest.raises(SystemExit) as info:
        main(["no-such-command"])
    assert info.value.code == 1


def test_missing_config_file(tmp_path):
    assert main(["env", "--config", str(tmp_path / "missing.json")]) == 1


def test_env_creates_missing_directory_and_is_reproducible(tmp_path):
    out = tmp_path / "deep" / "er"
    assert main(["env", "--radius", "30", "--seed", "4", "--out", str(out)]) == 0
    first = (out / "env.csv").read_bytes()
    assert main(["env", "--radius", "30", "--seed", "4", "--out", str(out)]) == 0
    assert (out / "env.csv").read_bytes() == first
    assert first.count(b"\r\n") == 62


def test_config_file_and_flags(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"env": {"seed": 3}, "sim": {"t": 1e4, "trials": 2}}))
    assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 0
    doc = json.loads((tmp_path / "o" / "simulate.json").read_text())
    assert doc["config"]["env"]["seed"] == 3
    assert len(doc["theorem1"]["trials"]) == 2
    assert (tmp_path / "o" / "theorem1.csv").exists()


def test_simulate_is_byte_identical(tmp_path):
    args = ["simulate", "--t", "1e4", "--trials", "2", "--seed", "9"]
    out = tmp_path / "a"
    assert main([*args, "--out", str(out)]) == 0
    first = [(out / n).read_bytes() for n in ("simulate.json", "theorem1.csv")]
    assert main([*args, "--out", str(out)]) == 0
    assert [(out / n).read_bytes() for n in ("simulate.json", "theorem1.csv")] == first


def test_localize(tmp_path):
    assert run(tmp_path, "localize", "--t", "1e4", "--trials", "1", "--set", "observables.n_starts=3") == 0
    doc = json.loads((tmp_path / "out" / "localize.json").read_text())
    assert doc["localization"][0]["status"] in ("ok", "scan_incomplete")


def test_renewal(tmp_path):
    assert run(tmp_path, "renewal", "--svg", "--set", "renewal.Gamma=6", "--set", "renewal.n_envs=10",
               "--set", "renewal.nf_envs=10", "--set", "renewal.nf_K=2", "--set", "renewal.n_boot=20") == 0
    doc = json.loads((tmp_path / "out" / "renewal.json").read_text())
    assert doc["renewal"]["laplace"][0]["lambda"] == 0
    assert doc["renewal"]["laplace"][0]["empirical"] == 1.0
    for name in ("gaps.csv", "laplace.csv", "gaps.svg"):
        assert (tmp_path / "out" / name).exists()


def test_check_subset(tmp_path):
    code = run(tmp_path, "check", "--criteria", "1,2", "--scale", "quick")
    assert code == 0
    rows = (tmp_path / "out" / "criteria.csv").read_text().splitlines()
    assert rows[0] == "number,name,passed,flagged"
    assert len(rows) == 3
