"""Command-line interface.

Verbs: generate, train, evaluate, experiment, sweep-strata, sweep-bias.
Exit codes: 0 success, 1 usage error, 2 runtime failure.
"""

import argparse
import json
import sys
from pathlib import Path

from .data import Dataset, benchmark_preset, generate
from .harness import (
    ExperimentConfig,
    default_hyperopt_runs,
    format_summary_table,
    run_experiment,
    summary_csv_text,
    sweep_bias,
    sweep_strata,
    train_single,
)
from .metrics import MetricsReport, evaluate_model
from .models import load_model


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage failures exit 1, not argparse's 2
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        sys.exit(1)


def _add_benchmark_args(p):
    p.add_argument("--benchmark", choices=("news", "mvicu", "tcga"), default="news")
    p.add_argument("--preset", choices=("desk", "full"), default="desk")
    p.add_argument("--kappa", type=float, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--samples", type=int, default=None, help="override sample count")
    p.add_argument("--features", type=int, default=None, help="override feature count")
    p.add_argument("--treatments", type=int, default=None, help="override treatment count")
    p.add_argument("--covariates-csv", default=None, help="real covariates instead of synthetic")


def _benchmark_from_args(args):
    spec = benchmark_preset(
        args.benchmark,
        args.preset,
        kappa=args.kappa,
        seed=args.seed,
        num_treatments=args.treatments,
    )
    if args.samples is not None:
        spec.num_samples = args.samples
    if args.features is not None:
        spec.num_features = args.features
    if args.covariates_csv:
        spec.covariates_csv = args.covariates_csv
    return spec


def build_parser():
    parser = _Parser(prog="doseresponse", description=__doc__)
    sub = parser.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("generate", parents=[], help="benchmark -> dataset file")
    _add_benchmark_args(p)
    p.add_argument("--out", required=True, help="output .npz path")

    p = sub.add_parser("train", help="dataset + model kind -> model file + run record")
    p.add_argument("--dataset", required=True)
    p.add_argument("--model", default="drnet", help="e.g. drnet, tarnet, mlp, drnet+wasserstein")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None, help="model JSON path")
    p.add_argument("--record", default=None, help="run-record JSON path")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--width", type=int, default=None)
    p.add_argument("--depth", type=int, default=None)
    p.add_argument("--strata", type=int, default=None)
    p.add_argument("--learning-rate", type=float, default=None)
    p.add_argument("--batch-size", type=int, default=None)

    p = sub.add_parser("evaluate", help="model + dataset -> metrics report (+figure)")
    p.add_argument("--model", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--split", choices=("train", "val", "test"), default="test")
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("experiment", help="full search/selection/evaluation protocol")
    _add_benchmark_args(p)
    p.add_argument("--models", default="drnet,tarnet,mlp", help="comma-separated kinds")
    p.add_argument("--hyperopt-runs", type=int, default=None)
    p.add_argument("--repeats", type=int, default=5)
    p.add_argument("--master-seed", type=int, default=0)
    p.add_argument("--redraw-data", action="store_true")
    p.add_argument("--config", default=None, help="JSON file mirroring ExperimentConfig")
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("sweep-strata", help="metrics/time against the stratum count")
    _add_benchmark_args(p)
    p.add_argument("--strata", default="1,2,5,10")
    p.add_argument("--master-seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("sweep-bias", help="metrics against assignment bias kappa")
    _add_benchmark_args(p)
    p.add_argument("--kappas", default="5,10,15,20")
    p.add_argument("--models", default="drnet,tarnet,mlp")
    p.add_argument("--master-seed", type=int, default=0)
    p.add_argument("--out", required=True)

    return parser


def _cmd_generate(args):
    dataset = generate(_benchmark_from_args(args))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    dataset.save(out)
    print(f"wrote {out} ({dataset.num_samples} samples, {dataset.X.shape[1]} features)")


def _cmd_train(args):
    overrides = {}
    for key, attr in (
        ("epochs", "epochs"),
        ("width", "width"),
        ("depth", "depth"),
        ("num_strata", "strata"),
        ("learning_rate", "learning_rate"),
        ("batch_size", "batch_size"),
    ):
        value = getattr(args, attr)
        if value is not None:
            overrides[key] = value
    train_single(
        args.dataset,
        args.model,
        hyper_overrides=overrides,
        seed=args.seed,
        out_model=args.out,
        out_record=args.record,
    )


def _cmd_evaluate(args):
    dataset = Dataset.load(args.dataset)
    model = load_model(args.model)
    report = evaluate_model(
        model, dataset, split=args.split, model_id=model.kind, seed=args.seed,
        with_nn_mise=True,
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(report.to_json())
    (out / "report.csv").write_text(
        MetricsReport.csv_header() + "\n" + report.csv_row() + "\n"
    )
    from . import plots

    plots.plot_dose_response_curves(model, dataset, out / "curves.png")
    print(
        f"{report.model_id}: sqrt(MISE)={report.root_mise:.4f} "
        f"sqrt(DPE)={report.root_dpe:.4f} sqrt(PE)={report.root_pe:.4f}"
    )
    print(f"wrote {out / 'report.json'}, {out / 'report.csv'}, {out / 'curves.png'}")


def _experiment_config(args):
    if args.config:
        config = ExperimentConfig.from_json_file(args.config)
        if args.out:
            config.output_dir = args.out
        return config
    spec = _benchmark_from_args(args)
    runs = args.hyperopt_runs
    if runs is None:
        runs = default_hyperopt_runs(spec.family)
    return ExperimentConfig(
        benchmark=spec,
        models=tuple(args.models.split(",")),
        num_hyperopt_runs=runs,
        num_repeats=args.repeats,
        master_seed=args.master_seed,
        output_dir=args.out,
        redraw_data=args.redraw_data,
    )


def _cmd_experiment(args):
    config = _experiment_config(args)
    _, summary = run_experiment(config)
    print(format_summary_table(summary))
    print(f"artifacts in {config.output_dir}")


def _cmd_sweep_strata(args):
    config = ExperimentConfig(
        benchmark=_benchmark_from_args(args),
        num_hyperopt_runs=1,
        num_repeats=1,
        master_seed=args.master_seed,
        output_dir=args.out,
    )
    values = [int(v) for v in args.strata.split(",")]
    sweep_strata(config, values)
    print(f"artifacts in {args.out}")


def _cmd_sweep_bias(args):
    config = ExperimentConfig(
        benchmark=_benchmark_from_args(args),
        num_hyperopt_runs=1,
        num_repeats=1,
        master_seed=args.master_seed,
        output_dir=args.out,
    )
    kappas = [float(v) for v in args.kappas.split(",")]
    sweep_bias(config, kappas, models=tuple(args.models.split(",")))
    print(f"artifacts in {args.out}")


COMMANDS = {
    "generate": _cmd_generate,
    "train": _cmd_train,
    "evaluate": _cmd_evaluate,
    "experiment": _cmd_experiment,
    "sweep-strata": _cmd_sweep_strata,
    "sweep-bias": _cmd_sweep_bias,
}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        COMMANDS[args.verb](args)
    except (ValueError, OSError, KeyError) as err:
        sys.stderr.write(f"doseresponse: {err}\n")
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
