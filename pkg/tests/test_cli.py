import json
import math
import subprocess
import sys

import numpy as np
import pytest

from ratedist.cli import main, write_fixtures


@pytest.fixture
def fx(tmp_path):
    write_fixtures(tmp_path)
    return tmp_path


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def error_object(err):
    lines = err.strip().splitlines()
    assert len(lines) == 1
    obj = json.loads(lines[0])
    assert set(obj) == {"code", "message", "context"}
    return obj


def h2(p):
    return -p * math.log2(p) - (1 - p) * math.log2(1 - p)


def test_fixtures_written(fx):
    names = {p.name for p in fx.iterdir()}
    assert {"binary_source.json", "hamming_distortion.json", "spectrum_4_1.json",
            "joint_rho08.json", "game_4_1.json"} <= names


def test_fixtures_flag(tmp_path, capsys):
    code, out, _ = run(capsys, "--fixtures", tmp_path / "fx")
    assert code == 0
    assert len(out.splitlines()) == len(list((tmp_path / "fx").iterdir()))


def test_rd_curve_binary(fx, capsys):
    code, out, _ = run(capsys, "rd-curve", "--config", fx / "rd_config.json", "--format", "csv")
    assert code == 0
    lines = out.splitlines()
    assert lines[0] == "beta,rate_bits,distortion"
    assert len(lines) == 6
    for row in lines[1:]:
        _, rate, dist = map(float, row.split(","))
        assert rate == pytest.approx(1 - h2(dist), abs=2e-3)


def test_rd_curve_json_and_flag_override(fx, capsys):
    code, out, _ = run(capsys, "rd-curve", "--config", fx / "rd_config.json", "--betas", "2", "4")
    assert code == 0
    obj = json.loads(out)
    assert sorted(p["beta"] for p in obj["points"]) == [2.0, 4.0]


def test_rd_curve_empty_betas(fx, capsys):
    cfg = json.loads((fx / "rd_config.json").read_text())
    cfg["betas"] = []
    (fx / "empty.json").write_text(json.dumps(cfg))
    code, _, err = run(capsys, "rd-curve", "--config", fx / "empty.json")
    assert code == 2
    assert error_object(err)["code"] == 2


def test_rd_curve_convergence_failure(tmp_path, capsys):
    x = np.linspace(-3, 3, 31)
    p = np.exp(-x ** 2 / 2)
    (tmp_path / "src.json").write_text(json.dumps({"alphabet": x.tolist(), "mass": (p / p.sum()).tolist()}))
    d = (x[:, None] - x[None, :]) ** 2
    (tmp_path / "d.json").write_text(json.dumps({"source_alphabet": x.tolist(), "repro_alphabet": x.tolist(),
                                                 "d": d.tolist()}))
    code, _, err = run(capsys, "rd-curve", "--source", tmp_path / "src.json", "--distortion", tmp_path / "d.json",
                       "--betas", "1", "--max-iter", "3")
    assert code == 4
    obj = error_object(err)
    assert obj["context"]["beta"] == 1.0


def test_rd_curve_missing_file(capsys, tmp_path):
    code, _, err = run(capsys, "rd-curve", "--source", tmp_path / "nope.json",
                       "--distortion", tmp_path / "nope.json", "--betas", "1")
    assert code == 2
    error_object(err)


def test_waterfill_fixture(fx, capsys):
    code, out, _ = run(capsys, "waterfill", "--config", fx / "waterfill_config.json")
    assert code == 0
    obj = json.loads(out)
    assert obj["theta"] == pytest.approx(1.0, abs=1e-10)
    assert obj["total_rate_bits"] == pytest.approx(1.0, abs=1e-10)
    assert [m["R_i"] for m in obj["modes"]] == pytest.approx([1.0, 0.0], abs=1e-10)


def test_waterfill_csv_covariance_and_summary(fx, capsys, tmp_path):
    out_file = tmp_path / "wf.json"
    code, out, _ = run(capsys, "waterfill", "--covariance", fx / "spectrum_4_1.csv", "-D", "2",
                       "--out", out_file)
    assert code == 0
    assert json.loads(out_file.read_text())["theta"] == pytest.approx(1.0)
    summary = out.splitlines()
    assert summary[0] == "D_i R_i"
    assert [row.split() for row in summary[1:3]] == [["1", "1"], ["1", "0"]]


def test_waterfill_full_distortion_and_errors(fx, capsys):
    code, out, _ = run(capsys, "waterfill", "--eigenvalues", "4", "1", "-D", "5")
    assert code == 0 and json.loads(out)["total_rate_bits"] == 0.0
    code, _, err = run(capsys, "waterfill", "--eigenvalues", "4", "1", "-D", "0")
    assert code == 3
    assert error_object(err)["code"] == 3
    code, _, err = run(capsys, "waterfill", "--eigenvalues", "4", "1", "-D", "6")
    assert code == 3
    assert "exceeds" in error_object(err)["message"]


def test_wz_bound_fixture(fx, capsys):
    code, out, _ = run(capsys, "wz-bound", "--config", fx / "wz_bound_config.json")
    assert code == 0
    assert json.loads(out)["total_rate_bits"] == pytest.approx(1.0, abs=1e-12)


def test_wz_sim_single_bin(capsys):
    code, out, _ = run(capsys, "wz-sim", "--sigma2", "1", "--noise-var", "1", "--nesting-ratio", "1",
                       "--samples", "2000")
    assert code == 0
    assert json.loads(out)["empirical_rate"] == 0.0


def test_wz_sim_trace_file(capsys, tmp_path):
    trace = tmp_path / "trace.csv"
    code, _, _ = run(capsys, "wz-sim", "--sigma2", "1", "--noise-var", "0.01", "--samples", "1000",
                     "--trace", trace)
    assert code == 0
    assert trace.read_text().splitlines()[0] == "x,y,dither,index,xhat,err"


def test_wz_sim_missing_key(capsys):
    code, _, err = run(capsys, "wz-sim", "--sigma2", "1")
    assert code == 2
    error_object(err)


def test_wz_sim_bad_value(capsys):
    code, _, err = run(capsys, "wz-sim", "--sigma2", "1", "--noise-var", "0.01", "--samples", "10")
    assert code == 3
    error_object(err)


def test_game_fixture(fx, capsys):
    code, out, _ = run(capsys, "game", "--config", fx / "game_4_1.json")
    assert code == 0
    obj = json.loads(out)
    assert obj["matches_waterfill"] is True
    assert max(obj["kkt_residuals"].values()) < 1e-8
    assert obj["allocation"]["R_i"] == pytest.approx([1.0, 0.0], abs=1e-10)


def test_game_single_player(tmp_path, capsys):
    (tmp_path / "g.json").write_text(json.dumps({"lambdas": [3.0], "budget": {"type": "rate", "value": 2.5}}))
    code, out, _ = run(capsys, "game", "--config", tmp_path / "g.json")
    assert code == 0
    assert json.loads(out)["allocation"]["R_i"] == pytest.approx([2.5], abs=1e-10)


def test_game_infeasible(tmp_path, capsys):
    (tmp_path / "g.json").write_text(json.dumps({"lambdas": [1.0], "budget": {"type": "distortion", "value": 2}}))
    code, _, err = run(capsys, "game", "--config", tmp_path / "g.json")
    assert code == 3
    error_object(err)


def test_malformed_json(tmp_path, capsys):
    (tmp_path / "bad.json").write_text("{lambdas: [1, 2")
    code, _, err = run(capsys, "game", "--config", tmp_path / "bad.json")
    assert code == 2
    error_object(err)


def test_unknown_config_key(fx, capsys):
    cfg = json.loads((fx / "game_4_1.json").read_text())
    cfg["temperature"] = 3
    (fx / "extra.json").write_text(json.dumps(cfg))
    code, _, err = run(capsys, "game", "--config", fx / "extra.json")
    assert code == 2
    assert "temperature" in json.dumps(error_object(err))


def test_lattice_probe_points(tmp_path, capsys):
    (tmp_path / "pts.csv").write_text("0.6,-1.2\n0.5,0.5\n")
    code, out, _ = run(capsys, "lattice-probe", "--lattice", "Z2", "--points", tmp_path / "pts.csv")
    assert code == 0
    obj = json.loads(out)
    assert obj["nearest"] == [[1.0, -1.0], [0.0, 0.0]]
    code, out, _ = run(capsys, "lattice-probe", "--lattice", "Z2", "--points", tmp_path / "pts.csv",
                       "--format", "csv")
    assert out.splitlines()[0] == "x0,x1,q0,q1,e0,e1"


def test_lattice_probe_dither(capsys):
    code, out, _ = run(capsys, "lattice-probe", "--lattice", "E8", "--dither-samples", "20000")
    assert code == 0
    obj = json.loads(out)
    assert obj["outside_cell"] == 0
    assert obj["second_moment_per_dim"] == pytest.approx(obj["second_moment_theory"], rel=0.02)


def test_lattice_probe_unknown_lattice(capsys):
    code, _, err = run(capsys, "lattice-probe", "--lattice", "Leech")
    assert code == 3
    error_object(err)


def test_entropy(fx, capsys, tmp_path):
    code, out, _ = run(capsys, "entropy", "--dist", fx / "binary_source.json")
    assert code == 0
    assert json.loads(out)["entropy_bits"] == pytest.approx(1.0)
    joint = {"rows": [0, 1], "cols": [0, 1], "mass": [[0.445, 0.055], [0.055, 0.445]]}
    (tmp_path / "j.json").write_text(json.dumps(joint))
    code, out, _ = run(capsys, "entropy", "--dist", tmp_path / "j.json")
    assert json.loads(out)["mutual_information_bits"] == pytest.approx(1 - h2(0.11), abs=1e-12)


def test_entropy_invalid_distribution(tmp_path, capsys):
    (tmp_path / "p.json").write_text(json.dumps({"alphabet": [0, 1], "mass": [0.5, 0.6]}))
    code, _, err = run(capsys, "entropy", "--dist", tmp_path / "p.json")
    assert code == 3
    error_object(err)


def test_usage_errors(capsys):
    code, _, err = run(capsys)
    assert code == 2
    error_object(err)
    code, _, err = run(capsys, "waterfill", "--no-such-flag")
    assert code == 2
    error_object(err)
    code, _, err = run(capsys, "--seed", "banana", "entropy")
    assert code == 2
    code, _, err = run(capsys, "--threads", "0", "waterfill", "--eigenvalues", "1", "-D", "1")
    assert code == 2


def test_seed_is_reported_and_changes_dither(capsys):
    _, a, _ = run(capsys, "lattice-probe", "--lattice", "D4", "--dither-samples", "1000")
    _, b, _ = run(capsys, "--seed", "0xC0DEC0DE", "lattice-probe", "--lattice", "D4", "--dither-samples", "1000")
    _, c, _ = run(capsys, "--seed", "7", "lattice-probe", "--lattice", "D4", "--dither-samples", "1000")
    assert a == b != c
    assert json.loads(a)["seed"] == 0xC0DEC0DE


def test_module_entry_point(fx):
    proc = subprocess.run([sys.executable, "-m", "ratedist", "wz-bound", "--config",
                           str(fx / "wz_bound_config.json")], capture_output=True, text=True)
    assert proc.returncode == 0
    assert json.loads(proc.stdout)["total_rate_bits"] == pytest.approx(1.0)


def test_rd_curve_gap_tol(fx, capsys):
    code, out, _ = run(capsys, "rd-curve", "--config", fx / "rd_config.json", "--gap-tol", "1e-12")
    assert code == 0
    assert len(json.loads(out)["points"]) == 5
