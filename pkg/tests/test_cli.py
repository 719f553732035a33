"""End-to-end CLI contract tests: artifacts, exit codes, error envelopes."""

import csv
import io
import json
import math
import os
import re

import numpy as np
import pytest

from macrobell.cli import run

from conftest import CHSH_OPTIMUM

FLOAT_FIELD = re.compile(r"-?\d\.\d{17}e[+-]\d+")


def read_csv(text: str):
    rows = list(csv.reader(io.StringIO(text)))
    return rows[0], rows[1:]


def run_ok(capsys, argv):
    code = run(argv)
    captured = capsys.readouterr()
    assert code == 0, captured.err
    assert captured.err == ""
    return captured.out


def run_err(capsys, argv, expected_code):
    code = run(argv)
    captured = capsys.readouterr()
    assert code == expected_code
    payload = json.loads(captured.err)
    assert set(payload) == {"error", "message"}
    return payload


class TestChsh:
    def test_optimize_reaches_known_value(self, capsys, tmp_path):
        out = tmp_path / "chsh.json"
        summary = run_ok(capsys, ["chsh", "--coeffs", "paper", "--optimize",
                                  "--out", str(out)])
        payload = json.loads(out.read_text())
        assert abs(payload["value"] - CHSH_OPTIMUM) <= 1e-6
        assert payload["optimized"] is True
        assert set(payload["correlators"]) == {"AB", "AB'", "A'B", "A'B'"}
        assert json.loads(summary)["value"] == payload["value"]

    def test_explicit_angles(self, capsys):
        angles = "0,{},{},{}".format(math.pi / 2, -math.pi / 4, math.pi / 4)
        out = run_ok(capsys, ["chsh", "--coeffs", "paper",
                              "--angles", angles])
        payload = json.loads(out)
        assert payload["value"] == pytest.approx(CHSH_OPTIMUM, abs=1e-9)
        assert payload["optimized"] is False

    def test_angles_or_optimize_required(self, capsys):
        payload = run_err(capsys, ["chsh", "--coeffs", "paper"], 1)
        assert "optimize" in payload["message"]


class TestDist:
    def test_probabilities_sum_to_one(self, capsys):
        out = run_ok(capsys, ["dist", "--N", "20", "--povm", "sx",
                              "--state", "paper"])
        header, rows = read_csv(out)
        assert header == ["x", "prob"]
        probs = np.array([float(r[1]) for r in rows])
        assert probs.sum() == pytest.approx(1.0, abs=1e-12)
        assert all(FLOAT_FIELD.fullmatch(field) for r in rows for f in (0, 1)
                   for field in [r[f]])

    def test_custom_coefficients_and_base_level(self, capsys):
        out = run_ok(capsys, ["dist", "--N", "12", "--povm", "sx",
                              "--coeffs", "1,0,1i", "--base-level", "2"])
        _, rows = read_csv(out)
        probs = np.array([float(r[1]) for r in rows])
        assert probs.sum() == pytest.approx(1.0, abs=1e-12)

    def test_degenerate_povm_needs_overrides(self, capsys):
        payload = run_err(capsys, ["dist", "--N", "10", "--povm", "sz",
                                   "--state", "w"], 1)
        assert payload["error"] == "degenerate_off_diagonal"
        run_ok(capsys, ["dist", "--N", "10", "--povm", "sz", "--state", "w",
                        "--mu", "0", "--tau", "1"])


class TestLimit:
    def test_half_density_normalized(self, capsys):
        out = run_ok(capsys, ["limit", "--alpha", "0.5", "--coeffs", "paper"])
        header, rows = read_csv(out)
        assert header == ["x", "density"]
        x = np.array([float(r[0]) for r in rows])
        density = np.array([float(r[1]) for r in rows])
        assert np.trapezoid(density, x) == pytest.approx(1.0, abs=1e-8)

    def test_one_rotor_normalized(self, capsys):
        out = run_ok(capsys, ["limit", "--alpha", "1.0", "--coeffs", "paper"])
        header, rows = read_csv(out)
        assert header == ["theta", "density"]
        theta = np.array([float(r[0]) for r in rows])
        density = np.array([float(r[1]) for r in rows])
        assert theta[0] == 0.0 and theta[-1] == pytest.approx(math.pi)
        assert np.trapezoid(density, theta) == pytest.approx(1.0, abs=1e-8)

    def test_width_from_povm(self, capsys):
        direct = run_ok(capsys, ["limit", "--coeffs", "w", "--povm", "sx"])
        explicit = run_ok(capsys, ["limit", "--coeffs", "w",
                                   "--phi", str(math.pi), "--width", "0"])
        assert direct == explicit

    def test_bad_alpha_rejected(self, capsys):
        payload = run_err(capsys, ["limit", "--alpha", "0.75",
                                   "--coeffs", "paper"], 1)
        assert payload["error"] == "validation"


class TestChannel:
    def test_depolarizing_width_closed_form(self, capsys):
        out = run_ok(capsys, ["channel", "--povm", "sx", "--depol", "0.1"])
        payload = json.loads(out)
        assert payload["s_squared"] == pytest.approx(1.0 / 0.81 - 1.0,
                                                     rel=1e-12)
        assert payload["phi"] == pytest.approx(math.pi, abs=1e-12)

    def test_divergent_loss_is_numeric_error(self, capsys):
        payload = run_err(capsys, ["channel", "--povm", "sx",
                                   "--loss", "1e-05"], 2)
        assert payload["error"] == "divergent_width"

    def test_singular_channel_rejected(self, capsys):
        payload = run_err(capsys, ["channel", "--povm", "sx",
                                   "--dephase", "0.5"], 1)
        assert payload["error"] == "singular_channel"


class TestLocalModel:
    def test_discrepancy_is_tiny(self, capsys, tmp_path):
        out = tmp_path / "joint.csv"
        summary = json.loads(run_ok(capsys, [
            "local-model", "--coeffs", "random", "--dim", "3", "--seed", "4",
            "--points", "41", "--out", str(out)]))
        assert summary["max_discrepancy"] < 1e-12
        header, rows = read_csv(out.read_text())
        assert header == ["theta_a", "theta_b", "quantum", "lhv", "abs_diff"]
        assert len(rows) == 41 * 41


class TestNoiseSweep:
    def test_sweep_artifact_and_summary(self, capsys, tmp_path):
        out = tmp_path / "sweep.csv"
        summary = json.loads(run_ok(capsys, [
            "noise-sweep", "--coeffs", "paper", "--s-grid", "0:0.2:5",
            "--eps-grid", "0:0:1", "--out", str(out)]))
        assert summary["clean_value"] == pytest.approx(CHSH_OPTIMUM, abs=1e-6)
        thresholds = list(summary["threshold_s"].values())
        assert len(thresholds) == 1
        assert thresholds[0] is None or 0.0 < thresholds[0] < 0.2
        header, rows = read_csv(out.read_text())
        assert header == ["s", "eps", "chsh"]
        assert len(rows) == 5
        values = [float(r[2]) for r in rows]
        assert values[0] == pytest.approx(CHSH_OPTIMUM, abs=5e-9)
        assert values == sorted(values, reverse=True)


class TestSample:
    def test_writes_csv_and_sidecar(self, capsys, tmp_path):
        out = tmp_path / "records.csv"
        summary = json.loads(run_ok(capsys, [
            "sample", "--N", "50", "--povm", "sx", "--state", "w",
            "--n-samples", "200", "--seed", "9", "--out", str(out)]))
        header, rows = read_csv(out.read_text())
        assert header == ["x"] and len(rows) == 200
        meta = json.loads((tmp_path / "records.csv.meta.json").read_text())
        assert meta == summary
        assert meta["N"] == 50 and meta["seed"] == 9
        assert meta["n_samples"] == 200 and meta["alpha"] == 0.5

    def test_requires_out(self, capsys):
        payload = run_err(capsys, ["sample", "--N", "10", "--povm", "sx",
                                   "--state", "w", "--n-samples", "5"], 1)
        assert "--out" in payload["message"]

    def test_deterministic_artifacts(self, capsys, tmp_path):
        argv = ["sample", "--N", "30", "--povm", "sx", "--state", "paper",
                "--n-samples", "100", "--seed", "3"]
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        run_ok(capsys, argv + ["--out", str(a)])
        run_ok(capsys, argv + ["--out", str(b)])
        assert a.read_bytes() == b.read_bytes()


class TestConverge:
    def test_ks_per_size(self, capsys):
        out = run_ok(capsys, ["converge", "--povm", "sx", "--state", "w",
                              "--n-list", "10,20,40", "--n-samples", "400"])
        header, rows = read_csv(out)
        assert header == ["N", "ks"]
        assert [int(r[0]) for r in rows] == [10, 20, 40]
        for row in rows:
            assert 0.0 <= float(row[1]) <= 1.0


class TestSelftest:
    def test_all_checks_pass(self, capsys):
        out = run_ok(capsys, ["selftest"])
        assert "all checks passed" in out
        assert "FAIL" not in out


class TestPlumbing:
    def test_unknown_flag(self, capsys):
        payload = run_err(capsys, ["chsh", "--coeffs", "paper", "--optimize",
                                   "--frobnicate"], 1)
        assert payload["error"] == "validation"

    def test_unknown_command(self, capsys):
        run_err(capsys, ["transmogrify"], 1)

    def test_missing_povm_file(self, capsys, tmp_path):
        payload = run_err(capsys, ["dist", "--N", "10", "--state", "w",
                                   "--povm", str(tmp_path / "nope.json")], 1)
        assert "nope.json" in payload["message"]

    def test_out_parent_must_exist(self, capsys, tmp_path):
        target = tmp_path / "missing" / "artifact.csv"
        run_err(capsys, ["chsh", "--coeffs", "paper", "--optimize",
                         "--out", str(target)], 1)

    def test_atomic_overwrite_leaves_no_temp_files(self, capsys, tmp_path):
        out = tmp_path / "chsh.json"
        argv = ["chsh", "--coeffs", "paper", "--optimize", "--out", str(out)]
        run_ok(capsys, argv)
        first = out.read_text()
        run_ok(capsys, argv)
        assert out.read_text() == first
        assert os.listdir(tmp_path) == ["chsh.json"]

    def test_thread_cap_validation(self, capsys):
        run_err(capsys, ["selftest", "--threads", "0"], 1)

    def test_thread_env_validation(self, capsys, monkeypatch):
        monkeypatch.setenv("MACROBELL_THREADS", "lots")
        run_err(capsys, ["chsh", "--coeffs", "paper", "--optimize"], 1)

    def test_thread_cap_sets_environment(self, capsys, monkeypatch):
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS"):
            monkeypatch.delenv(var, raising=False)
        run_ok(capsys, ["chsh", "--coeffs", "paper", "--optimize",
                        "--threads", "2"])
        assert os.environ["OMP_NUM_THREADS"] == "2"
        assert os.environ["OPENBLAS_NUM_THREADS"] == "2"
