"""Individual dose-response estimation from observational data.

Library + CLI covering: a small dense-network engine, the DRNet family of
architectures (with MLP/TARNET baselines and a kNN baseline), treatment
assignment bias regularisers, semi-synthetic benchmark generators with
ground-truth oracles, counterfactual metrics, and an experiment harness.
"""

from .data import BenchmarkSpec, Dataset, GroundTruthOracle, benchmark_preset, generate
from .harness import ExperimentConfig, HyperSpace, RunRecord, run_experiment, sweep_bias, sweep_strata
from .knn import KnnModel
from .metrics import MetricsReport, evaluate_model, mise, dpe, pe, nn_mise, romberg
from .models import DRNet, DRNetConfig, DosageRange, build_baseline, fit, load_model, save_model
from .regularizers import PropensityModel, Regularizer, RegularizerConfig, sinkhorn_distance

__version__ = "0.1.0"

__all__ = [
    "BenchmarkSpec",
    "Dataset",
    "DosageRange",
    "DRNet",
    "DRNetConfig",
    "ExperimentConfig",
    "GroundTruthOracle",
    "HyperSpace",
    "KnnModel",
    "MetricsReport",
    "PropensityModel",
    "Regularizer",
    "RegularizerConfig",
    "RunRecord",
    "benchmark_preset",
    "build_baseline",
    "dpe",
    "evaluate_model",
    "fit",
    "generate",
    "load_model",
    "mise",
    "nn_mise",
    "pe",
    "romberg",
    "run_experiment",
    "save_model",
    "sinkhorn_distance",
    "sweep_bias",
    "sweep_strata",
]
