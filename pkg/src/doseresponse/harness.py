"""Experiment driver: seeded random hyperparameter search with identical
configuration sequences across model kinds, NN-MISE model selection,
repeated runs, persistence, and report/figure emission.

Model kind strings: ``drnet``, ``drnet-norepeat``, ``tarnet``, ``mlp``,
``knn``, plus regularised variants ``drnet+wasserstein``, ``drnet+pd``,
``drnet+pm``, ``drnet+psm_pm``.
"""

import dataclasses
import json
import time
import traceback
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from .data import BenchmarkSpec, Dataset, benchmark_preset, generate
from .knn import KnnModel
from .metrics import MetricsReport, evaluate_model, nn_mise
from .models import DRNet, DRNetConfig, build_baseline, fit, save_model
from .regularizers import Regularizer, RegularizerConfig

MODEL_KINDS = ("drnet", "drnet-norepeat", "tarnet", "mlp", "knn")
REGULARIZED = ("wasserstein", "pd", "pm", "psm_pm")
SUMMARY_COLUMNS = [
    "model",
    "repeats",
    "root_mise_mean",
    "root_mise_std",
    "root_dpe_mean",
    "root_dpe_std",
    "root_pe_mean",
    "root_pe_std",
    "val_nn_mise_mean",
    "failures",
]


def default_hyperopt_runs(family):
    """5 search runs on tcga, 10 everywhere else."""
    return 5 if family == "tcga" else 10


def parse_model_name(name):
    """'drnet+pd' -> ('drnet', 'pd'); bare kinds get regulariser 'none'."""
    base, _, reg = name.partition("+")
    if base not in MODEL_KINDS:
        raise ValueError(f"unknown model kind {base!r}, expected one of {MODEL_KINDS}")
    if reg and reg not in REGULARIZED:
        raise ValueError(f"unknown regulariser {reg!r}, expected one of {REGULARIZED}")
    if reg and base in ("mlp", "knn"):
        raise ValueError(f"regularisers only apply to the drnet family, got {name!r}")
    return base, reg or "none"


@dataclass
class HyperSpace:
    """Searchable ranges. ``sample`` draws every field exactly once, so the
    drawn sequence is identical for every model kind under a shared seed."""

    depth: tuple = (1, 2)
    width: tuple = (32, 48, 64)
    learning_rate: tuple = (3e-4, 3e-3)  # log-uniform bounds
    batch_size: tuple = (64, 128)
    epochs: tuple = (60, 100)
    patience: tuple = (5, 10)
    dropout: tuple = (0.0, 0.1, 0.2)
    penalty_weight: tuple = (0.1, 3.0)  # log-uniform bounds
    pd_gamma: tuple = (0.2, 0.8)  # uniform bounds
    num_strata: tuple = (5,)
    knn_k: tuple = (3, 5, 10)
    knn_h: tuple = (0.05, 0.1, 0.2)

    def sample(self, rng):
        lo, hi = self.learning_rate
        plo, phi = self.penalty_weight
        glo, ghi = self.pd_gamma
        return {
            "depth": int(rng.choice(self.depth)),
            "width": int(rng.choice(self.width)),
            "learning_rate": float(np.exp(rng.uniform(np.log(lo), np.log(hi)))),
            "batch_size": int(rng.choice(self.batch_size)),
            "epochs": int(rng.choice(self.epochs)),
            "patience": int(rng.choice(self.patience)),
            "dropout": float(rng.choice(self.dropout)),
            "penalty_weight": float(np.exp(rng.uniform(np.log(plo), np.log(phi)))),
            "pd_gamma": float(rng.uniform(glo, ghi)),
            "num_strata": int(rng.choice(self.num_strata)),
            "knn_k": int(rng.choice(self.knn_k)),
            "knn_h": float(rng.choice(self.knn_h)),
        }


@dataclass
class ExperimentConfig:
    benchmark: BenchmarkSpec
    models: tuple = ("drnet", "tarnet", "mlp")
    num_hyperopt_runs: int = 10
    num_repeats: int = 5
    hyper: HyperSpace = field(default_factory=HyperSpace)
    master_seed: int = 0
    output_dir: str = ""
    redraw_data: bool = False

    def __post_init__(self):
        for name in self.models:
            parse_model_name(name)
        if self.num_hyperopt_runs < 1 or self.num_repeats < 1:
            raise ValueError("need at least one hyperopt run and one repeat")

    @classmethod
    def from_dict(cls, payload):
        payload = dict(payload)
        bench = dict(payload.pop("benchmark"))
        preset = bench.pop("preset", None)
        if preset is not None:
            spec = benchmark_preset(
                bench.pop("family"),
                preset,
                kappa=bench.pop("kappa", None),
                seed=bench.pop("seed", 0),
            )
            for key, value in bench.items():
                if not hasattr(spec, key):
                    raise ValueError(f"unknown benchmark field {key!r}")
                setattr(spec, key, value)
        else:
            if "dose_means" in bench:
                bench["dose_means"] = tuple(bench["dose_means"])
            spec = BenchmarkSpec(**bench)
        if "hyper" in payload:
            hyper = HyperSpace(**{k: tuple(v) for k, v in payload.pop("hyper").items()})
        else:
            hyper = HyperSpace()
        if "models" in payload:
            payload["models"] = tuple(payload["models"])
        return cls(benchmark=spec, hyper=hyper, **payload)

    @classmethod
    def from_json_file(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


@dataclass
class RunRecord:
    model: str
    repeat: int
    run_index: int
    hyperparameters: dict
    seed: int
    val_nn_mise: float = float("nan")
    selected: bool = False
    test_report: MetricsReport = None
    train_seconds: float = 0.0
    eval_seconds: float = 0.0
    error: str = ""

    def to_dict(self):
        out = asdict(self)
        if self.test_report is not None:
            out["test_report"] = asdict(self.test_report)
        return out


def build_model(kind, hyper, dataset, rng):
    """Instantiate an untrained model of the given kind from a shared
    hyperparameter draw."""
    ranges = [[dataset.dosage_low, dataset.dosage_high]] * dataset.num_treatments
    if kind == "knn":
        return KnnModel(num_neighbours=hyper["knn_k"], bandwidth=hyper["knn_h"])
    # heads get two hidden layers so the dosage-repetition ablation is a
    # real architectural difference, not a no-op
    cfg = DRNetConfig(
        input_dim=dataset.features().shape[1],
        num_treatments=dataset.num_treatments,
        num_strata=hyper["num_strata"],
        base_depth=hyper["depth"],
        base_width=hyper["width"],
        treatment_depth=1,
        treatment_width=hyper["width"],
        head_depth=2,
        head_width=hyper["width"],
        repeat_dosage=kind != "drnet-norepeat",
        dosage_ranges=ranges,
    )
    if kind in ("drnet", "drnet-norepeat"):
        return DRNet(cfg, rng=rng)
    return build_baseline(kind, cfg, rng=rng)


def make_regularizer(reg_kind, hyper, dataset, seed=0):
    if reg_kind == "none":
        return None
    config = RegularizerConfig(
        kind=reg_kind,
        penalty_weight=hyper["penalty_weight"] if reg_kind == "wasserstein" else 0.0,
        pd_gamma=hyper["pd_gamma"],
    )
    _, train = dataset.split("train")
    _, val = dataset.split("val")
    return Regularizer(
        config, train_data=train, val_data=val,
        num_treatments=dataset.num_treatments, seed=seed,
    )


def train_model(name, dataset, hyper, seed):
    """Train one model of the named kind; returns (model, seconds)."""
    kind, reg_kind = parse_model_name(name)
    _, train = dataset.split("train")
    _, val = dataset.split("val")
    start = time.perf_counter()
    if kind == "knn":
        model = KnnModel(num_neighbours=hyper["knn_k"], bandwidth=hyper["knn_h"]).fit(train)
        return model, time.perf_counter() - start
    model = build_model(kind, hyper, dataset, rng=np.random.default_rng([seed, 0]))
    regularizer = make_regularizer(reg_kind, hyper, dataset, seed=seed)
    fit(
        model,
        train,
        val,
        epochs=hyper["epochs"],
        batch_size=hyper["batch_size"],
        learning_rate=hyper["learning_rate"],
        dropout=hyper["dropout"] or None,
        regularizer=regularizer,
        seed=[seed, 1],
        patience=hyper["patience"],
    )
    return model, time.perf_counter() - start


def _derived_seed(master, repeat, run):
    # same value for every model kind: fairness across architectures
    return int(master) * 1_000_003 + int(repeat) * 1_009 + int(run)


def run_experiment(config: ExperimentConfig, log=print):
    """Full protocol: per repeat, per model kind, the same hyperparameter
    sequence is trained, the best run by validation NN-MISE is selected and
    scored on the test split. Artifacts: per-run JSON records, an aggregate
    summary CSV (mean +/- std over repeats) and a summary figure."""
    records = []
    datasets = {}
    for repeat in range(config.num_repeats):
        data_seed = config.benchmark.seed + (repeat if config.redraw_data else 0)
        if data_seed not in datasets:
            spec = dataclasses.replace(config.benchmark, seed=data_seed)
            datasets[data_seed] = generate(spec)
        dataset = datasets[data_seed]
        hyper_rng = np.random.default_rng([config.master_seed, repeat])
        hypers = [config.hyper.sample(hyper_rng) for _ in range(config.num_hyperopt_runs)]
        for name in config.models:
            best = None
            for j, hyper in enumerate(hypers):
                seed = _derived_seed(config.master_seed, repeat, j)
                record = RunRecord(
                    model=name, repeat=repeat, run_index=j,
                    hyperparameters=dict(hyper), seed=seed,
                )
                try:
                    model, record.train_seconds = train_model(name, dataset, hyper, seed)
                    record.val_nn_mise = nn_mise(model, dataset)
                except Exception:
                    record.error = traceback.format_exc(limit=3)
                    records.append(record)
                    log(f"[{name} repeat {repeat} run {j}] FAILED")
                    continue
                records.append(record)
                if best is None or record.val_nn_mise < best[0].val_nn_mise:
                    best = (record, model)
            if best is None:
                log(f"[{name} repeat {repeat}] no successful runs")
                continue
            record, model = best
            start = time.perf_counter()
            record.test_report = evaluate_model(
                model, dataset, model_id=name, seed=record.seed
            )
            record.eval_seconds = time.perf_counter() - start
            record.selected = True
            log(
                f"[{name} repeat {repeat}] selected run {record.run_index} "
                f"nn_mise={record.val_nn_mise:.3f} "
                f"test root_mise={record.test_report.root_mise:.3f}"
            )
    summary = summarize(records, config.models)
    if config.output_dir:
        write_artifacts(config, records, summary)
    return records, summary


def summarize(records, models):
    """Aggregate selected-run test metrics: mean +/- std per model kind."""
    rows = []
    for name in models:
        picked = [r for r in records if r.model == name and r.selected]
        failures = sum(1 for r in records if r.model == name and r.error)
        if not picked:
            rows.append({"model": name, "repeats": 0, "failures": failures})
            continue
        def stats(getter):
            vals = np.array([getter(r) for r in picked])
            return float(vals.mean()), float(vals.std())
        mise_m, mise_s = stats(lambda r: r.test_report.root_mise)
        dpe_m, dpe_s = stats(lambda r: r.test_report.root_dpe)
        pe_m, pe_s = stats(lambda r: r.test_report.root_pe)
        nn_m, _ = stats(lambda r: r.val_nn_mise)
        rows.append(
            {
                "model": name,
                "repeats": len(picked),
                "root_mise_mean": mise_m,
                "root_mise_std": mise_s,
                "root_dpe_mean": dpe_m,
                "root_dpe_std": dpe_s,
                "root_pe_mean": pe_m,
                "root_pe_std": pe_s,
                "val_nn_mise_mean": nn_m,
                "failures": failures,
            }
        )
    return rows


def summary_csv_text(summary):
    lines = [",".join(SUMMARY_COLUMNS)]
    for row in summary:
        cells = []
        for col in SUMMARY_COLUMNS:
            value = row.get(col, "")
            if isinstance(value, float):
                cells.append(f"{value:.6f}")
            else:
                cells.append(str(value))
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


def format_summary_table(summary):
    header = f"{'model':<18} {'sqrt(MISE)':>16} {'sqrt(DPE)':>16} {'sqrt(PE)':>16}"
    lines = [header, "-" * len(header)]
    for row in summary:
        if row.get("repeats", 0) == 0:
            lines.append(f"{row['model']:<18} {'(no successful runs)':>16}")
            continue
        lines.append(
            f"{row['model']:<18} "
            f"{row['root_mise_mean']:>8.2f} ± {row['root_mise_std']:<5.2f} "
            f"{row['root_dpe_mean']:>8.2f} ± {row['root_dpe_std']:<5.2f} "
            f"{row['root_pe_mean']:>8.2f} ± {row['root_pe_std']:<5.2f}"
        )
    return "\n".join(lines)


def write_artifacts(config, records, summary):
    out = Path(config.output_dir)
    runs_dir = out / "runs"
    runs_dir.mkdir(parents=True, exist_ok=True)
    for record in records:
        path = runs_dir / f"{record.model.replace('+', '_')}_r{record.repeat}_h{record.run_index}.json"
        with open(path, "w") as fh:
            json.dump(record.to_dict(), fh, indent=2)
    (out / "summary.csv").write_text(summary_csv_text(summary))
    from . import plots

    plots.plot_experiment_summary(summary, out / "summary.png")


# ----------------------------------------------------------------- sweeps


def sweep_strata(config: ExperimentConfig, strata_values=(1, 2, 5, 10), log=print):
    """Train DRNet at each stratum count with every other hyperparameter
    held equal (fixed epochs: wall-clock comparisons stay meaningful)."""
    dataset = generate(config.benchmark)
    hyper = config.hyper.sample(np.random.default_rng([config.master_seed, 0]))
    hyper["patience"] = None  # fixed-length training across E
    results = []
    for E in strata_values:
        h = dict(hyper, num_strata=int(E))
        seed = _derived_seed(config.master_seed, 0, int(E))
        start = time.perf_counter()
        model, train_seconds = train_model("drnet", dataset, h, seed)
        report = evaluate_model(model, dataset, model_id=f"drnet-E{E}", seed=seed)
        total = time.perf_counter() - start
        results.append(
            {
                "num_strata": int(E),
                "root_mise": report.root_mise,
                "root_dpe": report.root_dpe,
                "root_pe": report.root_pe,
                "mise": report.mise,
                "seconds": total,
            }
        )
        log(f"[strata E={E}] root_mise={report.root_mise:.3f} seconds={total:.2f}")
    if config.output_dir:
        out = Path(config.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        _write_rows_csv(out / "strata.csv", results)
        from . import plots

        plots.plot_strata_sweep(results, out / "strata.png")
    return results


def sweep_bias(config: ExperimentConfig, kappa_values=(5.0, 10.0, 15.0, 20.0),
               models=("drnet", "tarnet", "mlp"), log=print):
    """Regenerate the benchmark at each assignment-bias level (same
    structural seed) and score each architecture with shared fixed
    hyperparameters."""
    hyper = config.hyper.sample(np.random.default_rng([config.master_seed, 0]))
    results = []
    for kappa in kappa_values:
        spec = dataclasses.replace(config.benchmark, kappa=float(kappa))
        dataset = generate(spec)
        for name in models:
            seed = _derived_seed(config.master_seed, 0, 0)
            model, _ = train_model(name, dataset, hyper, seed)
            report = evaluate_model(model, dataset, model_id=name, seed=seed)
            results.append(
                {
                    "kappa": float(kappa),
                    "model": name,
                    "root_mise": report.root_mise,
                    "root_dpe": report.root_dpe,
                }
            )
            log(f"[bias kappa={kappa}] {name} root_mise={report.root_mise:.3f}")
    if config.output_dir:
        out = Path(config.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        _write_rows_csv(out / "bias.csv", results)
        from . import plots

        plots.plot_bias_sweep(results, out / "bias.png")
    return results


def _write_rows_csv(path, rows):
    columns = list(rows[0].keys())
    lines = [",".join(columns)]
    for row in rows:
        lines.append(
            ",".join(
                f"{row[c]:.6f}" if isinstance(row[c], float) else str(row[c])
                for c in columns
            )
        )
    Path(path).write_text("\n".join(lines) + "\n")


# ----------------------------------------------------------------- one-offs


def train_single(dataset_path, name, hyper_overrides=None, seed=0, out_model=None,
                 out_record=None, log=print):
    """CLI `train` verb: one model on a saved dataset, optional persistence."""
    dataset = Dataset.load(dataset_path)
    hyper = HyperSpace().sample(np.random.default_rng([seed, 42]))
    if hyper_overrides:
        hyper.update(hyper_overrides)
    model, seconds = train_model(name, dataset, hyper, seed)
    record = RunRecord(
        model=name, repeat=0, run_index=0, hyperparameters=hyper, seed=seed,
        train_seconds=seconds,
    )
    record.val_nn_mise = nn_mise(model, dataset)
    log(f"trained {name} in {seconds:.2f}s, validation NN-MISE {record.val_nn_mise:.4f}")
    if out_model:
        kind, _ = parse_model_name(name)
        if kind == "knn":
            raise ValueError("knn models are instance-based and are not serialised")
        save_model(model, out_model)
    if out_record:
        with open(out_record, "w") as fh:
            json.dump(record.to_dict(), fh, indent=2)
    return model, record
