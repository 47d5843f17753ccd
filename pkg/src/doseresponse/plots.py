"""Figure rendering for experiment reports (written next to the CSVs)."""

import numpy as np
import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

MODEL_COLORS = {
    "drnet": "tab:red",
    "drnet-norepeat": "tab:pink",
    "tarnet": "tab:blue",
    "mlp": "tab:orange",
    "knn": "tab:green",
}


def _color(name):
    return MODEL_COLORS.get(name.split("+")[0], "tab:gray")


def plot_experiment_summary(summary, path):
    """Bar chart of mean +/- std test sqrt(MISE) per model kind."""
    rows = [r for r in summary if r.get("repeats", 0) > 0]
    if not rows:
        return
    names = [r["model"] for r in rows]
    means = [r["root_mise_mean"] for r in rows]
    stds = [r["root_mise_std"] for r in rows]
    fig, ax = plt.subplots(figsize=(1.6 + 1.1 * len(rows), 3.6))
    ax.bar(names, means, yerr=stds, capsize=4, color=[_color(n) for n in names])
    ax.set_ylabel(r"test $\sqrt{\mathrm{MISE}}$")
    ax.set_title("model comparison (mean ± std over repeats)")
    ax.tick_params(axis="x", rotation=20)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_strata_sweep(results, path):
    """Metrics (normalised to [0, 1]) and wall-clock time against the number
    of dosage strata."""
    E = [r["num_strata"] for r in results]
    fig, ax = plt.subplots(figsize=(5.2, 3.6))

    def normalised(key):
        vals = np.array([r[key] for r in results], dtype=float)
        span = vals.max() - vals.min()
        return (vals - vals.min()) / span if span > 0 else np.zeros_like(vals)

    ax.plot(E, normalised("root_mise"), "o-", color="tab:red", label=r"$\sqrt{\mathrm{MISE}}$")
    ax.plot(E, normalised("root_dpe"), "s-", color="tab:blue", label=r"$\sqrt{\mathrm{DPE}}$")
    ax.plot(E, normalised("root_pe"), "^-", color="tab:orange", label=r"$\sqrt{\mathrm{PE}}$")
    ax.plot(E, normalised("seconds"), "k--", label="time")
    ax.set_xlabel("number of dosage strata")
    ax.set_ylabel("normalised value")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_bias_sweep(results, path):
    """sqrt(MISE) against the treatment assignment bias per model."""
    fig, ax = plt.subplots(figsize=(5.2, 3.6))
    models = sorted({r["model"] for r in results})
    for name in models:
        rows = sorted((r for r in results if r["model"] == name), key=lambda r: r["kappa"])
        ax.plot(
            [r["kappa"] for r in rows],
            [r["root_mise"] for r in rows],
            "o-",
            color=_color(name),
            label=name,
        )
    ax.set_xlabel(r"treatment assignment bias $\kappa$")
    ax.set_ylabel(r"test $\sqrt{\mathrm{MISE}}$")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_dose_response_curves(model, dataset, path, sample_rows=None, points=101):
    """True vs predicted dose-response curves for a few test samples."""
    idx, (F, _, _, _) = dataset.split("test")
    if sample_rows is None:
        sample_rows = list(range(min(4, idx.size)))
    grid = np.linspace(dataset.dosage_low, dataset.dosage_high, points)
    k = dataset.num_treatments
    fig, axes = plt.subplots(
        len(sample_rows), k, figsize=(3.0 * k, 2.2 * len(sample_rows)),
        squeeze=False, sharex=True,
    )
    preds = {}
    for t in range(k):
        block = np.empty((idx.size, points))
        for j, s in enumerate(grid):
            block[:, j] = model.predict(F, t, float(s))
        preds[t] = block
    for row, n in enumerate(sample_rows):
        for t in range(k):
            ax = axes[row][t]
            truth = dataset.oracle.curve(idx[n : n + 1], t, grid)[0]
            ax.plot(grid, truth, color="black", lw=1.2, label="true")
            ax.plot(grid, preds[t][n], color="tab:red", lw=1.2, ls="--", label="model")
            if row == 0:
                ax.set_title(f"treatment {t}", fontsize=9)
            if t == 0:
                ax.set_ylabel(f"sample {int(idx[n])}", fontsize=8)
    axes[0][0].legend(fontsize=7)
    for ax in axes[-1]:
        ax.set_xlabel("dosage")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
