"""CSV ingestion, explainer wrappers and the command-line interface."""

import json

import numpy as np
import pytest

from emshap.cli import (EXIT_CONFIG, EXIT_MISSING_INPUT, EXIT_OK, EXIT_USAGE,
                        run_command)
from emshap.data import Dataset, ingest_csv
from emshap.errors import UsageError
from emshap.explainers import (EmshapExplainer, ExactShapleyExplainer,
                               KernelShapExplainer, SamplingShapExplainer)


def write_csv(path, text):
    path.write_text(text)
    return str(path)


@pytest.fixture
def toy_csv(tmp_path):
    rng = np.random.default_rng(0)
    x = rng.standard_normal((80, 3))
    y = x @ np.array([1.0, -2.0, 0.5]) + 0.01 * rng.standard_normal(80)
    lines = ["a,b,c,y"]
    for row, target in zip(x, y):
        lines.append(",".join(f"{v:.6f}" for v in row) + f",{target:.6f}")
    return write_csv(tmp_path / "toy.csv", "\n".join(lines) + "\n")


class TestIngestCsv:
    def test_basic_parse_and_target_split(self, tmp_path):
        path = write_csv(tmp_path / "t.csv", "a,b,y\n1,2,3\n4,5,6\n")
        ds = ingest_csv(path, target="y")
        assert ds.feature_names == ["a", "b"]
        np.testing.assert_array_equal(ds.rows, [[1, 2], [4, 5]])
        np.testing.assert_array_equal(ds.target, [3, 6])

    def test_missing_markers_drop_rows(self, tmp_path):
        path = write_csv(tmp_path / "t.csv",
                         "a,b\n1,2\nNA,3\n4,?\n5,6\n,7\n")
        ds = ingest_csv(path)
        assert ds.n == 2
        assert ds.n_dropped == 3

    def test_malformed_cell_names_line_and_column(self, tmp_path):
        path = write_csv(tmp_path / "t.csv", "a,b\n1,2\n3,zebra\n")
        with pytest.raises(UsageError) as err:
            ingest_csv(path)
        assert "line 3" in str(err.value)
        assert "'b'" in str(err.value)

    def test_ragged_row_rejected(self, tmp_path):
        path = write_csv(tmp_path / "t.csv", "a,b\n1,2,3\n")
        with pytest.raises(UsageError) as err:
            ingest_csv(path)
        assert "line 2" in str(err.value)

    def test_empty_file_rejected(self, tmp_path):
        path = write_csv(tmp_path / "t.csv", "")
        with pytest.raises(UsageError):
            ingest_csv(path)

    def test_unknown_target_rejected(self, tmp_path):
        path = write_csv(tmp_path / "t.csv", "a,b\n1,2\n")
        with pytest.raises(UsageError):
            ingest_csv(path, target="nope")

    def test_normalization_round_trip(self):
        rng = np.random.default_rng(1)
        ds = Dataset(["a", "b"], rng.standard_normal((50, 2)) * 3 + 1)
        z = ds.normalized()
        np.testing.assert_allclose(z.mean(axis=0), 0.0, atol=1e-12)
        np.testing.assert_allclose(z.std(axis=0), 1.0, atol=1e-12)
        np.testing.assert_allclose(ds.denormalize(z), ds.rows, atol=1e-12)

    def test_constant_column_gets_unit_scale(self):
        ds = Dataset(["a", "b"], np.array([[1.0, 5.0], [2.0, 5.0]]))
        assert ds.scale[1] == 1.0


class TestExplainers:
    def test_unfitted_explain_raises(self):
        with pytest.raises(RuntimeError):
            ExactShapleyExplainer(model=lambda r: r.sum(axis=1)).explain(np.zeros((1, 2)))

    def test_exact_and_kernel_agree(self):
        rng = np.random.default_rng(2)
        x = rng.standard_normal((12, 4))
        f = lambda rows: rows[:, 0] * rows[:, 1] + rows[:, 2] - rows[:, 3] ** 2
        exact = ExactShapleyExplainer(model=f).fit(x)
        kernel = KernelShapExplainer(model=f).fit(x)
        np.testing.assert_allclose(kernel.attributions(x[:2]),
                                   exact.attributions(x[:2]), atol=1e-6)

    def test_sampling_matches_exact_on_additive_model(self):
        rng = np.random.default_rng(3)
        x = rng.standard_normal((10, 3))
        w = np.array([1.0, -1.0, 2.0])
        f = lambda rows: rows @ w
        exact = ExactShapleyExplainer(model=f).fit(x)
        sampling = SamplingShapExplainer(model=f, n_permutations=400, seed=1).fit(x)
        np.testing.assert_allclose(sampling.attributions(x[:2]),
                                   exact.attributions(x[:2]), atol=0.15)

    def test_emshap_explainer_end_to_end_efficiency(self):
        rng = np.random.default_rng(4)
        x = rng.standard_normal((96, 3))
        f = lambda rows: 1.0 / (1.0 + np.exp(-(rows @ np.array([1.0, 0.5, -0.5]))))
        expl = EmshapExplainer(model=f, epochs=2, batch_size=32, k=32,
                               k_tilde=4, gamma_dim=8, energy_hidden=8,
                               seed=0).fit(x)
        results = expl.explain(x[:2])
        for r, row in zip(results, x[:2]):
            v_full = float(f(row.reshape(1, -1))[0])
            assert r.phi0 + r.phi.sum() == pytest.approx(v_full, abs=1e-8)

    def test_explain_checks_feature_count(self):
        x = np.zeros((5, 3))
        expl = ExactShapleyExplainer(model=lambda r: r.sum(axis=1)).fit(x)
        with pytest.raises(ValueError):
            expl.explain(np.zeros((1, 4)))

    def test_get_params_sklearn_contract(self):
        params = KernelShapExplainer(seed=7).get_params()
        assert params["seed"] == 7
        assert "subset_budget" in params


class TestCliCommands:
    def test_theory_check(self, tmp_path, capsys):
        code = run_command(["theory-check", "--d", "3",
                            "--out", str(tmp_path / "o")])
        assert code == EXIT_OK
        out = capsys.readouterr().out
        assert "alpha = 0.227273" in out
        payload = json.loads((tmp_path / "o" / "theory.json").read_text())
        assert payload["inverse_deviation"] < 1e-8
        manifest = json.loads((tmp_path / "o" / "manifest.json").read_text())
        assert manifest["version"]
        assert str(tmp_path / "o" / "theory.json") in manifest["outputs"]

    def test_theory_check_rejects_small_d(self, tmp_path):
        assert run_command(["theory-check", "--d", "1",
                            "--out", str(tmp_path / "o")]) == EXIT_CONFIG

    def test_exact_shapley_weights_game(self, tmp_path, capsys):
        code = run_command(["exact-shapley", "--weights=-0.4,-1.2,0.8",
                            "--out", str(tmp_path / "o")])
        assert code == EXIT_OK
        payload = json.loads((tmp_path / "o" / "exact_shapley.json").read_text())
        np.testing.assert_allclose(payload["phi"], [-0.4, -1.2, 0.8], atol=1e-12)

    def test_exact_shapley_bad_weights(self, tmp_path):
        assert run_command(["exact-shapley", "--weights", "a,b",
                            "--out", str(tmp_path / "o")]) == EXIT_USAGE

    def test_train_writes_checkpoint_and_loss_log(self, toy_csv, tmp_path):
        out = tmp_path / "train-out"
        code = run_command(["train", "--data", toy_csv, "--target", "y",
                            "--epochs", "2", "--k-tilde", "4", "--seed", "0",
                            "--out", str(out)])
        assert code == EXIT_OK
        ckpt = json.loads((out / "checkpoint.json").read_text())
        assert ckpt["feature_names"] == ["a", "b", "c"]
        assert ckpt["energy"]["kind"] == "energy"
        log = (out / "loss_log.csv").read_text().strip().splitlines()
        assert log[0] == "epoch,zeta,loss"
        assert len(log) == 3

    def test_attribute_writes_jsonl(self, toy_csv, tmp_path):
        out = tmp_path / "attr-out"
        code = run_command(["attribute", "--data", toy_csv, "--target", "y",
                            "--estimator", "kernel", "--limit", "2",
                            "--seed", "0", "--out", str(out)])
        assert code == EXIT_OK
        lines = (out / "attributions.jsonl").read_text().strip().splitlines()
        assert len(lines) == 2
        rec = json.loads(lines[0])
        assert rec["estimator"] == "kernel"
        assert len(rec["phi"]) == 3
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["config"]["output_transform"]
        assert toy_csv in manifest["input_hashes"]

    def test_attribute_requires_target(self, toy_csv, tmp_path):
        assert run_command(["attribute", "--data", toy_csv,
                            "--out", str(tmp_path / "o")]) == EXIT_USAGE

    def test_evaluate_writes_sic_and_summary(self, toy_csv, tmp_path):
        out = tmp_path / "eval-out"
        code = run_command(["evaluate", "--data", toy_csv, "--target", "y",
                            "--estimator", "exact", "--limit", "2",
                            "--steps", "3", "--seed", "0", "--out", str(out)])
        assert code == EXIT_OK
        summary = json.loads((out / "summary.json").read_text())
        assert summary["n_samples"] == 2
        assert 0.0 <= summary["mean_auc_add"] <= 1.0
        sic = (out / "sic.csv").read_text().strip().splitlines()
        assert sic[0] == "sample_id,direction,fraction,output,auc"

    def test_missing_data_file_exit_code(self, tmp_path):
        assert run_command(["train", "--data", str(tmp_path / "absent.csv"),
                            "--target", "y", "--epochs", "1",
                            "--out", str(tmp_path / "o")]) == EXIT_MISSING_INPUT

    def test_invalid_config_file_exit_code(self, toy_csv, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text("{not json")
        assert run_command(["train", "--data", toy_csv, "--target", "y",
                            "--config", str(cfg),
                            "--out", str(tmp_path / "o")]) == EXIT_CONFIG

    def test_config_file_merged_with_flag_override(self, toy_csv, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"epochs": 1, "k_tilde": 2, "gamma_dim": 8,
                                   "energy_hidden": 8}))
        out = tmp_path / "o"
        code = run_command(["train", "--data", toy_csv, "--target", "y",
                            "--config", str(cfg), "--epochs", "2",
                            "--seed", "0", "--out", str(out)])
        assert code == EXIT_OK
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["config"]["epochs"] == 2       # flag wins
        assert manifest["config"]["k_tilde"] == 2      # file value kept

    def test_unknown_config_key_exit_code(self, toy_csv, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"epochs": 1, "bogus": True}))
        assert run_command(["train", "--data", toy_csv, "--target", "y",
                            "--config", str(cfg),
                            "--out", str(tmp_path / "o")]) == EXIT_CONFIG

    def test_unknown_flag_is_usage_error(self, tmp_path):
        assert run_command(["theory-check", "--d", "3", "--bogus",
                            "--out", str(tmp_path / "o")]) == EXIT_USAGE

    def test_error_record_is_json_on_stderr(self, tmp_path, capsys):
        run_command(["theory-check", "--d", "1", "--out", str(tmp_path / "o")])
        record = json.loads(capsys.readouterr().err.strip())
        assert record["exit_code"] == EXIT_CONFIG
        assert record["error"] == "ConfigError"
