import json

import numpy as np
import pytest

from doseresponse.cli import main
from doseresponse.data import Dataset
from doseresponse.metrics import MetricsReport


BENCH = ["--benchmark", "news", "--preset", "desk", "--samples", "300", "--features", "60"]


def test_generate_train_evaluate_pipeline(tmp_path, capsys):
    ds_path = tmp_path / "ds.npz"
    assert main(["generate", *BENCH, "--seed", "4", "--out", str(ds_path)]) == 0
    ds = Dataset.load(ds_path)
    assert ds.num_samples == 300

    model_path = tmp_path / "model.json"
    record_path = tmp_path / "record.json"
    code = main(
        [
            "train",
            "--dataset", str(ds_path),
            "--model", "drnet",
            "--epochs", "10",
            "--width", "24",
            "--out", str(model_path),
            "--record", str(record_path),
        ]
    )
    assert code == 0
    record = json.loads(record_path.read_text())
    assert record["model"] == "drnet"
    assert np.isfinite(record["val_nn_mise"])

    out_dir = tmp_path / "eval"
    assert main(["evaluate", "--model", str(model_path), "--dataset", str(ds_path), "--out", str(out_dir)]) == 0
    report = MetricsReport.from_json((out_dir / "report.json").read_text())
    assert report.root_mise > 0
    csv_lines = (out_dir / "report.csv").read_text().splitlines()
    assert csv_lines[0] == MetricsReport.csv_header()
    assert (out_dir / "curves.png").exists()
    capsys.readouterr()


def test_experiment_verb_with_config_file(tmp_path, capsys):
    config = {
        "benchmark": {"family": "news", "preset": "desk", "num_samples": 300, "num_features": 60, "seed": 2},
        "models": ["drnet", "knn"],
        "num_hyperopt_runs": 1,
        "num_repeats": 1,
        "hyper": {"width": [24], "epochs": [10], "depth": [1]},
    }
    config_path = tmp_path / "exp.json"
    config_path.write_text(json.dumps(config))
    out_dir = tmp_path / "exp"
    code = main(["experiment", "--config", str(config_path), "--out", str(out_dir)])
    assert code == 0
    text = (out_dir / "summary.csv").read_text()
    assert text.count("\n") == 3  # header + 2 model rows
    shown = capsys.readouterr().out
    assert "drnet" in shown and "knn" in shown


def test_sweep_verbs(tmp_path, capsys):
    out_a = tmp_path / "strata"
    code = main(["sweep-strata", *BENCH, "--seed", "1", "--strata", "1,2", "--out", str(out_a)])
    assert code == 0
    assert (out_a / "strata.csv").exists() and (out_a / "strata.png").exists()

    out_b = tmp_path / "bias"
    code = main(
        ["sweep-bias", *BENCH, "--seed", "1", "--kappas", "5,10", "--models", "drnet,mlp", "--out", str(out_b)]
    )
    assert code == 0
    lines = (out_b / "bias.csv").read_text().splitlines()
    assert len(lines) == 5  # header + 2 kappas x 2 models
    capsys.readouterr()


def test_usage_errors_exit_one():
    with pytest.raises(SystemExit) as exc:
        main(["experiment", "--benchmark", "news"])  # --out missing
    assert exc.value.code == 1
    with pytest.raises(SystemExit) as exc:
        main(["no-such-verb"])
    assert exc.value.code == 1


def test_runtime_errors_exit_two(tmp_path, capsys):
    code = main(
        ["evaluate", "--model", str(tmp_path / "nope.json"), "--dataset", str(tmp_path / "nope.npz"), "--out", str(tmp_path)]
    )
    assert code == 2
    capsys.readouterr()


def test_generate_rejects_bad_combination(tmp_path):
    # news vocabulary smaller than the topic count is a runtime failure (exit 2)
    code = main(["generate", "--benchmark", "news", "--preset", "desk", "--features", "10", "--out", str(tmp_path / "x.npz")])
    assert code == 2


def test_generate_with_csv_covariates(tmp_path):
    from doseresponse.data import write_csv_covariates

    rng = np.random.default_rng(3)
    csv_path = tmp_path / "cov.csv"
    write_csv_covariates(rng.normal(size=(90, 8)), csv_path)
    out = tmp_path / "ds.npz"
    code = main(
        [
            "generate", "--benchmark", "mvicu", "--samples", "90", "--features", "8",
            "--covariates-csv", str(csv_path), "--out", str(out),
        ]
    )
    assert code == 0
    ds = Dataset.load(out)
    assert ds.X.shape == (90, 8)
