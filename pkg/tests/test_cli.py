import csv
import hashlib
import json
import subprocess
import sys

import pytest

from imcmc.cli import main

SMALL = ('seed = 42\nkernels = "direct"\n[model]\nname = "fk3"\n'
         '[run]\nn_max = 1024\nreplicates = 10\n[diagnostics]\nsuites = ["rates", "normalizers", "path"]\n')


def write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def test_list_models_text(capsys):
    assert main(["list-models"]) == 0
    out = capsys.readouterr().out
    for name in ("fk3", "fk3-path", "annealing-3state", "bilaplace-continuous"):
        assert name in out


def test_list_models_json(capsys):
    assert main(["list-models", "--json"]) == 0
    models = json.loads(capsys.readouterr().out)
    assert len(models) >= 4
    assert all({"name", "description"} <= set(m) for m in models)


def test_unknown_subcommand_exits_2():
    proc = subprocess.run([sys.executable, "-m", "imcmc.cli", "frobnicate"], capture_output=True, text=True)
    assert proc.returncode == 2
    assert "usage" in proc.stderr


def test_missing_seed_exits_2(tmp_path, capsys):
    cfg = write(tmp_path, "noseed.toml", '[model]\nname = "fk3"\n')
    assert main(["run", cfg, "--out", str(tmp_path / "out")]) == 2
    assert "seed" in capsys.readouterr().err
    assert not (tmp_path / "out").exists()


def test_invalid_configs_exit_2(tmp_path):
    bad_suite = write(tmp_path, "suite.toml", 'seed = 1\n[model]\nname = "fk3"\n[diagnostics]\nsuites = ["nope"]\n')
    bad_model = write(tmp_path, "model.toml", 'seed = 1\n[model]\nname = "nope"\n')
    broken = write(tmp_path, "broken.toml", 'seed = = 1\n')
    for cfg in (bad_suite, bad_model, broken, str(tmp_path / "missing.toml")):
        assert main(["run", cfg, "--out", str(tmp_path / "o")]) == 2


def test_seed_flag_overrides_missing_seed(tmp_path):
    cfg = write(tmp_path, "noseed.toml", '[model]\nname = "fk3"\n[run]\nn_max = 1024\nreplicates = 4\n')
    assert main(["run", cfg, "--seed", "3", "--out", str(tmp_path / "o"), "--workers", "1"]) == 0
    assert json.loads((tmp_path / "o" / "summary.json").read_text())["seed"] == 3


def test_run_writes_artifacts(tmp_path, capsys):
    cfg = write(tmp_path, "small.toml", SMALL)
    out = tmp_path / "run"
    assert main(["run", cfg, "--out", str(out), "--workers", "1", "--json"]) == 0
    listed = json.loads(capsys.readouterr().out)
    assert set(listed["files"]) >= {"results.csv", "summary.json", "exact_flow.json", "plots.gp"}
    summary = json.loads((out / "summary.json").read_text())
    assert summary["schema"] == 1
    assert set(summary["rates"]) == {"0", "1", "2", "3"}
    assert "slope" in summary["rates"]["1"]["fit"]
    raw = (out / "results.csv").read_bytes()
    assert raw.startswith(b"n,level,replicate,function,error\r\n")
    rows = list(csv.reader(raw.decode("utf-8").splitlines()))
    assert {r[1] for r in rows[1:]} == {"0", "1", "2", "3", "path"}
    assert "plot" in (out / "plots.gp").read_text()
    assert not [p for p in tmp_path.iterdir() if p.name.startswith(".")]


def test_rerun_replaces_output_and_is_identical(tmp_path):
    cfg = write(tmp_path, "small.toml", SMALL)
    out = tmp_path / "run"
    digests = []
    for workers in ("1", "2"):
        assert main(["run", cfg, "--out", str(out), "--workers", workers]) == 0
        digests.append(hashlib.sha256((out / "results.csv").read_bytes()).hexdigest())
    assert digests[0] == digests[1]


def test_summary_schema_is_stable(tmp_path):
    keys = []
    for seed in ("1", "2"):
        cfg = write(tmp_path, "small.toml", SMALL)
        out = tmp_path / f"o{seed}"
        assert main(["run", cfg, "--seed", seed, "--out", str(out), "--workers", "1"]) == 0
        keys.append(sorted(json.loads((out / "summary.json").read_text())))
    assert keys[0] == keys[1]


def test_bundled_rates_config_end_to_end(tmp_path):
    out = tmp_path / "rates"
    assert main(["run", "fk3-rates", "--out", str(out)]) == 0
    summary = json.loads((out / "summary.json").read_text())
    for k in ("0", "1", "2"):
        assert -0.65 <= summary["rates"][k]["fit"]["slope"] <= -0.35
    assert (out / "exact_flow.json").exists()


def test_bundled_continuous_config(tmp_path):
    out = tmp_path / "bl"
    assert main(["run", "bilaplace", "--out", str(out), "--workers", "1"]) == 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["constants"]["eps_L"] == pytest.approx(0.5)
    assert not (out / "exact_flow.json").exists()


def test_verify_bundled_fk3_passes(capsys):
    assert main(["verify", "fk3-rates"]) == 0
    out = capsys.readouterr().out
    assert "FAIL" not in out


def test_verify_json(capsys):
    assert main(["verify", "fk3-path-mh", "--json"]) == 0
    certs = json.loads(capsys.readouterr().out)
    assert {c["status"] for c in certs} <= {"pass", "skip"}
    assert any("unstable" in c["detail"] for c in certs)


def test_verify_zero_mixing_model_skips_and_passes(tmp_path, capsys):
    cfg = write(tmp_path, "eps0.toml",
                'seed = 1\n[model]\ninitial = [0.5, 0.5]\npotentials = [[1.0, 2.0], [1.0, 2.0]]\n'
                'transitions = [[[1.0, 0.0], [0.0, 1.0]], [[0.0, 1.0], [1.0, 0.0]]]\n')
    assert main(["verify", cfg]) == 0
    out = capsys.readouterr().out
    assert "unstable" in out and "SKIP" in out


def test_verify_corrupted_kernel_exits_1(tmp_path, capsys):
    cfg = write(tmp_path, "bad.toml",
                'seed = 1\n[model]\ninitial = [0.5, 0.5]\npotentials = [[1.0, 2.0]]\n'
                'transitions = [[[1.0, 0.5], [0.0, 1.0]]]\n')
    assert main(["verify", cfg]) == 1
    out = capsys.readouterr().out
    assert "FAIL" in out and "row 0 sums to 1.5" in out


def test_horizon_too_short_for_rate_fits_exits_2(tmp_path, capsys):
    cfg = write(tmp_path, "short.toml", 'seed = 1\n[model]\nname = "fk3"\n[run]\nn_max = 512\n')
    assert main(["run", cfg, "--out", str(tmp_path / "o")]) == 2
    assert "checkpoints" in capsys.readouterr().err


def test_run_corrupted_kernel_exits_2(tmp_path):
    cfg = write(tmp_path, "bad.toml",
                'seed = 1\n[model]\ninitial = [0.5, 0.5]\npotentials = [[1.0, 2.0]]\n'
                'transitions = [[[1.0, 0.5], [0.0, 1.0]]]\n')
    assert main(["run", cfg, "--out", str(tmp_path / "o")]) == 2


def test_json_config_accepted(tmp_path):
    cfg = write(tmp_path, "c.json", json.dumps({"seed": 4, "model": {"name": "annealing-3state"},
                                                 "run": {"n_max": 1024, "replicates": 4}}))
    assert main(["run", cfg, "--out", str(tmp_path / "o"), "--workers", "1"]) == 0
