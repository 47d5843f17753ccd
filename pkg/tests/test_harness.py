import json

import numpy as np
import pytest

import doseresponse.harness as harness
from doseresponse.data import benchmark_preset
from doseresponse.harness import (
    ExperimentConfig,
    HyperSpace,
    default_hyperopt_runs,
    parse_model_name,
    run_experiment,
    summarize,
    summary_csv_text,
    sweep_bias,
    sweep_strata,
)


def tiny_config(tmp_path=None, **overrides):
    spec = benchmark_preset("news", "desk", seed=5)
    spec.num_samples = 400
    spec.num_features = 50
    hyper = HyperSpace(width=(24, 32), epochs=(15,), patience=(5,), depth=(1,))
    base = dict(
        benchmark=spec,
        models=("drnet", "mlp"),
        num_hyperopt_runs=2,
        num_repeats=1,
        hyper=hyper,
        master_seed=3,
        output_dir=str(tmp_path) if tmp_path else "",
    )
    base.update(overrides)
    return ExperimentConfig(**base)


def test_parse_model_name():
    assert parse_model_name("drnet") == ("drnet", "none")
    assert parse_model_name("drnet+wasserstein") == ("drnet", "wasserstein")
    assert parse_model_name("drnet-norepeat") == ("drnet-norepeat", "none")
    with pytest.raises(ValueError):
        parse_model_name("gps")
    with pytest.raises(ValueError):
        parse_model_name("drnet+magic")
    with pytest.raises(ValueError):
        parse_model_name("mlp+pd")


def test_default_hyperopt_run_counts():
    assert default_hyperopt_runs("news") == 10
    assert default_hyperopt_runs("mvicu") == 10
    assert default_hyperopt_runs("tcga") == 5


def test_single_run_single_repeat_counts():
    config = tiny_config(num_hyperopt_runs=1, models=("drnet", "mlp", "knn"))
    records, summary = run_experiment(config, log=lambda *a: None)
    assert len(records) == 3
    assert all(r.selected for r in records)
    assert {row["model"] for row in summary} == {"drnet", "mlp", "knn"}


def test_hyperparameter_sequence_identical_across_kinds():
    config = tiny_config(models=("drnet", "mlp", "knn"), num_hyperopt_runs=3)
    records, _ = run_experiment(config, log=lambda *a: None)
    by_kind = {}
    for r in records:
        by_kind.setdefault(r.model, []).append((r.run_index, r.hyperparameters, r.seed))
    reference = sorted(by_kind["drnet"])
    for kind, rows in by_kind.items():
        assert sorted(rows) == reference


def test_selection_minimises_validation_nn_mise():
    config = tiny_config(num_hyperopt_runs=3)
    records, _ = run_experiment(config, log=lambda *a: None)
    for name in config.models:
        rows = [r for r in records if r.model == name]
        chosen = [r for r in rows if r.selected]
        assert len(chosen) == 1
        assert chosen[0].val_nn_mise == min(r.val_nn_mise for r in rows)
        assert chosen[0].test_report is not None
        assert all(r.test_report is None for r in rows if not r.selected)


def test_experiment_summary_bytes_deterministic(tmp_path):
    out_a = tmp_path / "a"
    out_b = tmp_path / "b"
    run_experiment(tiny_config(out_a), log=lambda *a: None)
    run_experiment(tiny_config(out_b), log=lambda *a: None)
    assert (out_a / "summary.csv").read_bytes() == (out_b / "summary.csv").read_bytes()


def test_experiment_artifacts_written(tmp_path):
    config = tiny_config(tmp_path)
    records, summary = run_experiment(config, log=lambda *a: None)
    assert (tmp_path / "summary.csv").exists()
    assert (tmp_path / "summary.png").exists()
    run_files = list((tmp_path / "runs").glob("*.json"))
    assert len(run_files) == len(records)
    payload = json.loads(run_files[0].read_text())
    assert {"model", "hyperparameters", "seed", "val_nn_mise"} <= payload.keys()
    text = summary_csv_text(summary)
    assert text.splitlines()[0].startswith("model,repeats,root_mise_mean")


def test_failed_runs_recorded_and_experiment_continues(monkeypatch):
    original = harness.train_model

    def sabotaged(name, dataset, hyper, seed):
        if name == "mlp":
            raise RuntimeError("injected failure")
        return original(name, dataset, hyper, seed)

    monkeypatch.setattr(harness, "train_model", sabotaged)
    config = tiny_config(models=("drnet", "mlp"))
    records, summary = run_experiment(config, log=lambda *a: None)
    mlp_rows = [r for r in records if r.model == "mlp"]
    assert all("injected failure" in r.error for r in mlp_rows)
    assert not any(r.selected for r in mlp_rows)
    drnet_row = next(row for row in summary if row["model"] == "drnet")
    assert drnet_row["repeats"] == 1
    gap_row = next(row for row in summary if row["model"] == "mlp")
    assert gap_row["repeats"] == 0
    assert gap_row["failures"] == 2


def test_redraw_data_changes_datasets():
    config = tiny_config(num_repeats=2, redraw_data=True, models=("knn",))
    records, _ = run_experiment(config, log=lambda *a: None)
    selected = [r for r in records if r.selected]
    assert len(selected) == 2
    # different data draws give different test scores
    assert selected[0].test_report.root_mise != selected[1].test_report.root_mise


def test_config_from_dict_and_json(tmp_path):
    payload = {
        "benchmark": {"family": "news", "preset": "desk", "kappa": 7.5, "num_samples": 300},
        "models": ["drnet", "knn"],
        "num_hyperopt_runs": 2,
        "num_repeats": 1,
        "master_seed": 9,
        "hyper": {"width": [16, 24], "epochs": [10]},
    }
    config = ExperimentConfig.from_dict(payload)
    assert config.benchmark.kappa == 7.5
    assert config.benchmark.num_samples == 300
    assert config.models == ("drnet", "knn")
    assert config.hyper.width == (16, 24)
    path = tmp_path / "config.json"
    path.write_text(json.dumps(payload))
    clone = ExperimentConfig.from_json_file(path)
    assert clone.benchmark == config.benchmark
    assert clone.hyper == config.hyper


def test_config_rejects_unknown_fields_and_models():
    with pytest.raises(ValueError):
        ExperimentConfig.from_dict(
            {"benchmark": {"family": "news", "preset": "desk", "bogus": 1}}
        )
    with pytest.raises(ValueError):
        tiny_config(models=("drnet", "gps"))


def test_sweep_strata_row_count_and_csv(tmp_path):
    config = tiny_config(tmp_path)
    results = sweep_strata(config, strata_values=(1, 2, 5), log=lambda *a: None)
    assert len(results) == 3
    assert [r["num_strata"] for r in results] == [1, 2, 5]
    lines = (tmp_path / "strata.csv").read_text().splitlines()
    assert len(lines) == 4
    assert lines[0] == "num_strata,root_mise,root_dpe,root_pe,mise,seconds"
    assert (tmp_path / "strata.png").exists()


def test_sweep_bias_grid_shape(tmp_path):
    config = tiny_config(tmp_path)
    results = sweep_bias(
        config, kappa_values=(5.0, 10.0, 15.0, 20.0), models=("drnet", "mlp", "knn"),
        log=lambda *a: None,
    )
    assert len(results) == 12  # 4 kappas x 3 models
    assert (tmp_path / "bias.csv").exists()
    assert (tmp_path / "bias.png").exists()


def test_hyperspace_sampling_bounds():
    space = HyperSpace()
    rng = np.random.default_rng(0)
    for _ in range(50):
        h = space.sample(rng)
        assert h["depth"] in space.depth
        assert h["width"] in space.width
        assert space.learning_rate[0] <= h["learning_rate"] <= space.learning_rate[1]
        assert space.pd_gamma[0] <= h["pd_gamma"] <= space.pd_gamma[1]
        assert h["num_strata"] == 5


def test_norepeat_ablation_is_structurally_distinct():
    from doseresponse.data import generate
    from doseresponse.harness import build_model

    spec = benchmark_preset("news", "desk", seed=5)
    spec.num_samples, spec.num_features = 300, 60
    dataset = generate(spec)
    hyper = HyperSpace().sample(np.random.default_rng(0))
    rng = np.random.default_rng(1)
    full = build_model("drnet", hyper, dataset, rng)
    ablated = build_model("drnet-norepeat", hyper, dataset, rng)
    k, E = dataset.num_treatments, hyper["num_strata"]
    assert full.parameter_count() - ablated.parameter_count() == k * E * hyper["width"]
    assert full.config.repeat_dosage and not ablated.config.repeat_dosage
