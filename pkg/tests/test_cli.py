import json
import math
import subprocess
import sys

import numpy as np

from matchbench import MatchedSample
from matchbench.cli import ExperimentConfig, load_config, main

COUNTEREXAMPLE_MARKET = {
    "dx": 2,
    "dy": 1,
    "alpha": [0.7071067811865476, 0.7071067811865476],
    "beta": [1.0],
    "p_components": [{"kind": "rademacher"}, {"kind": "exponential", "param": 1.0}],
    "q_components": [{"kind": "uniform01"}],
    "phi": "product",
}


def write_config(path, **overrides):
    config = {
        "market": COUNTEREXAMPLE_MARKET,
        "n": 400,
        "seed": 7,
        "methods": ["cca", "ols"],
        "replications": 2,
    }
    config.update(overrides)
    path.write_text(json.dumps(config))
    return path


class TestConfig:
    def test_round_trip_identity(self, tmp_path):
        path = write_config(tmp_path / "cfg.json", sweep=[100, 200], spearman={"restarts": 4})
        config = load_config(path)
        again = ExperimentConfig.from_json_dict(config.to_json_dict())
        assert again.to_json_dict() == config.to_json_dict()

    def test_zero_weight_rejected_with_field_name(self, tmp_path, capsys):
        market = dict(COUNTEREXAMPLE_MARKET, alpha=[0.0, 0.0])
        path = write_config(tmp_path / "cfg.json", market=market)
        rc = main(["simulate", "--config", str(path), "--out", str(tmp_path / "o")])
        assert rc == 2
        assert "alpha" in capsys.readouterr().err

    def test_non_spd_covariance_rejected(self, tmp_path, capsys):
        market = {
            "dx": 2, "dy": 1, "alpha": [1.0, 1.0], "beta": [1.0],
            "p_gaussian_cov": [[1.0, 2.0], [2.0, 1.0]],
            "q_components": [{"kind": "uniform01"}],
        }
        path = write_config(tmp_path / "cfg.json", market=market)
        rc = main(["simulate", "--config", str(path), "--out", str(tmp_path / "o")])
        assert rc == 2
        assert "covariance" in capsys.readouterr().err

    def test_empty_methods_rejected(self, tmp_path):
        path = write_config(tmp_path / "cfg.json", methods=[])
        assert main(["estimate", "--config", str(path), "--sample", "x.csv"]) == 2

    def test_unknown_method_rejected(self, tmp_path):
        path = write_config(tmp_path / "cfg.json", methods=["pca"])
        assert main(["estimate", "--config", str(path), "--sample", "x.csv"]) == 2

    def test_missing_config_file(self, tmp_path):
        assert main(["simulate", "--config", str(tmp_path / "nope.json")]) == 2


class TestSimulate:
    def test_writes_rows_and_summary(self, tmp_path):
        path = write_config(tmp_path / "cfg.json", n=1000)
        out = tmp_path / "out"
        assert main(["simulate", "--config", str(path), "--out", str(out)]) == 0
        lines = (out / "sample.csv").read_text().splitlines()
        assert len(lines) == 1001
        assert lines[0] == "x1,x2,y1"
        summary = json.loads((out / "summary.json").read_text())
        assert summary["n"] == 1000 and summary["dx"] == 2

    def test_byte_identical_rerun(self, tmp_path):
        path = write_config(tmp_path / "cfg.json", n=500)
        out1, out2 = tmp_path / "a", tmp_path / "b"
        main(["simulate", "--config", str(path), "--out", str(out1)])
        main(["simulate", "--config", str(path), "--out", str(out2)])
        assert (out1 / "sample.csv").read_bytes() == (out2 / "sample.csv").read_bytes()
        assert (out1 / "summary.json").read_bytes() == (out2 / "summary.json").read_bytes()

    def test_seed_override_changes_output(self, tmp_path):
        path = write_config(tmp_path / "cfg.json", n=300)
        out1, out2 = tmp_path / "a", tmp_path / "b"
        main(["simulate", "--config", str(path), "--out", str(out1)])
        main(["simulate", "--config", str(path), "--seed", "8", "--out", str(out2)])
        assert (out1 / "sample.csv").read_bytes() != (out2 / "sample.csv").read_bytes()


class TestEstimate:
    def test_cca_and_ols_agree_on_scalar_y(self, tmp_path):
        cfg = write_config(tmp_path / "cfg.json", n=2000)
        out = tmp_path / "out"
        main(["simulate", "--config", str(cfg), "--out", str(out)])
        rc = main(["estimate", "--config", str(cfg), "--sample", str(out / "sample.csv"),
                   "--out", str(out)])
        assert rc == 0
        cca_json = json.loads((out / "estimate_cca.json").read_text())
        ols_json = json.loads((out / "estimate_ols.json").read_text())
        np.testing.assert_allclose(cca_json["alpha"], ols_json["alpha"], atol=1e-8)
        assert cca_json["objective"] <= 1.0 + 1e-10

    def test_spearman_method_runs(self, tmp_path):
        cfg = write_config(tmp_path / "cfg.json", n=800,
                           methods=["spearman"], spearman={"restarts": 2})
        out = tmp_path / "out"
        main(["simulate", "--config", str(cfg), "--out", str(out)])
        rc = main(["estimate", "--config", str(cfg), "--sample", str(out / "sample.csv"),
                   "--out", str(out)])
        assert rc == 0
        payload = json.loads((out / "estimate_spearman.json").read_text())
        ratio = payload["alpha"][1] / payload["alpha"][0]
        assert abs(ratio - 1.0) < 0.35

    def test_saliency_method_with_inline_affinity(self, tmp_path):
        alpha = [1.0 / math.sqrt(5.0), 2.0 / math.sqrt(5.0)]
        affinity = [[alpha[0]], [alpha[1]]]
        cfg = write_config(tmp_path / "cfg.json", methods=["saliency"], affinity=affinity)
        out = tmp_path / "out"
        main(["simulate", "--config", str(cfg), "--out", str(out)])
        rc = main(["estimate", "--config", str(cfg), "--sample", str(out / "sample.csv"),
                   "--out", str(out)])
        assert rc == 0
        payload = json.loads((out / "estimate_saliency.json").read_text())
        np.testing.assert_allclose(payload["alpha"], alpha, atol=1e-10)

    def test_dimension_mismatch_is_config_error(self, tmp_path):
        cfg = write_config(tmp_path / "cfg.json")
        sample = MatchedSample(xs=np.random.default_rng(0).normal(size=(50, 3)),
                               ys=np.random.default_rng(1).normal(size=(50, 1)))
        sample_path = tmp_path / "bad.csv"
        sample.to_csv(sample_path)
        assert main(["estimate", "--config", str(cfg), "--sample", str(sample_path)]) == 2

    def test_degenerate_sample_is_numerical_error(self, tmp_path, capsys):
        cfg = write_config(tmp_path / "cfg.json")
        sample = MatchedSample(xs=np.ones((50, 2)), ys=np.ones((50, 1)))
        sample_path = tmp_path / "flat.csv"
        sample.to_csv(sample_path)
        rc = main(["estimate", "--config", str(cfg), "--sample", str(sample_path),
                   "--out", str(tmp_path / "o")])
        assert rc == 3
        assert "numerical" in capsys.readouterr().err


class TestCounterexampleCommand:
    def test_default_run_is_inconsistent(self, tmp_path, capsys):
        rc = main(["counterexample", "--tol", "1e-9", "--n", "50000",
                   "--out", str(tmp_path)])
        assert rc == 0
        assert "INCONSISTENT" in capsys.readouterr().out
        payload = json.loads((tmp_path / "counterexample.json").read_text())
        assert payload["flag"] == "INCONSISTENT"
        assert all(payload["agreement"]["quadrature_vs_closed"].values())
        assert all(payload["agreement"]["monte_carlo_vs_closed"].values())
        ratio = payload["closed_form"]["ratio_cca"]["value"]
        assert abs(ratio - 0.8130352854993312) < 1e-12

    def test_gaussian_run_is_consistent(self, tmp_path):
        rc = main(["counterexample", "--gaussian", "--tol", "1e-8", "--n", "50000",
                   "--out", str(tmp_path)])
        assert rc == 0
        payload = json.loads((tmp_path / "counterexample.json").read_text())
        assert payload["flag"] == "CONSISTENT"

    def test_tolerance_is_plumbed_through(self, tmp_path):
        rc = main(["counterexample", "--tol", "1e-3", "--n", "5000", "--out", str(tmp_path)])
        assert rc == 0
        payload = json.loads((tmp_path / "counterexample.json").read_text())
        assert payload["tol"] == 1e-3

    def test_byte_identical_rerun(self, tmp_path):
        out1, out2 = tmp_path / "a", tmp_path / "b"
        for out in (out1, out2):
            main(["counterexample", "--tol", "1e-9", "--n", "20000", "--out", str(out)])
        assert (out1 / "counterexample.json").read_bytes() == (out2 / "counterexample.json").read_bytes()


class TestBenchmark:
    def test_table_shape_and_determinism(self, tmp_path, monkeypatch):
        cfg = write_config(tmp_path / "cfg.json", sweep=[200, 400], replications=3)
        out1, out2 = tmp_path / "a", tmp_path / "b"
        monkeypatch.setenv("MATCHBENCH_THREADS", "1")
        assert main(["benchmark", "--config", str(cfg), "--out", str(out1)]) == 0
        monkeypatch.setenv("MATCHBENCH_THREADS", "3")
        assert main(["benchmark", "--config", str(cfg), "--out", str(out2)]) == 0
        assert (out1 / "benchmark.csv").read_bytes() == (out2 / "benchmark.csv").read_bytes()
        assert (out1 / "benchmark_long.csv").read_bytes() == (out2 / "benchmark_long.csv").read_bytes()
        lines = (out1 / "benchmark.csv").read_text().splitlines()
        assert len(lines) == 1 + 2 * 2  # header + methods x sweep
        long_lines = (out1 / "benchmark_long.csv").read_text().splitlines()
        assert len(long_lines) == 1 + 2 * 2 * 3

    def test_single_replication_leaves_sd_empty(self, tmp_path):
        cfg = write_config(tmp_path / "cfg.json", sweep=[200], replications=1, methods=["cca"])
        out = tmp_path / "out"
        assert main(["benchmark", "--config", str(cfg), "--out", str(out)]) == 0
        rows = (out / "benchmark.csv").read_text().splitlines()
        assert rows[1].split(",")[4] == ""

    def test_requires_sweep(self, tmp_path):
        cfg = write_config(tmp_path / "cfg.json")
        assert main(["benchmark", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2

    def test_saliency_not_sweepable(self, tmp_path):
        cfg = write_config(tmp_path / "cfg.json", sweep=[100], methods=["saliency"],
                           affinity=[[1.0], [1.0]])
        assert main(["benchmark", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2


class TestSaliencyCommand:
    def test_rank_one_csv(self, tmp_path):
        a = np.outer([0.6, 0.8], [1.0])
        path = tmp_path / "A.csv"
        np.savetxt(path, a, delimiter=",")
        rc = main(["saliency", "--affinity", str(path), "--out", str(tmp_path)])
        assert rc == 0
        payload = json.loads((tmp_path / "saliency.json").read_text())
        assert payload["rank"] == 1
        np.testing.assert_allclose(payload["alpha"], [0.6, 0.8], atol=1e-10)

    def test_requires_matrix_source(self):
        assert main(["saliency"]) == 2


class TestEntryPoint:
    def test_module_invocation(self, tmp_path):
        cfg = write_config(tmp_path / "cfg.json", n=100)
        proc = subprocess.run(
            [sys.executable, "-m", "matchbench", "simulate",
             "--config", str(cfg), "--out", str(tmp_path / "out")],
            capture_output=True, text=True,
        )
        assert proc.returncode == 0, proc.stderr
        assert (tmp_path / "out" / "sample.csv").exists()

    def test_no_command_prints_help(self, capsys):
        assert main([]) == 2
        assert "matchbench" in capsys.readouterr().out
