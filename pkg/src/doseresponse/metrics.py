"""Counterfactual evaluation metrics for dose-response models.

MISE integrates the squared curve error over the dosage range (Romberg on
64 equally spaced intervals = 65 nodes, so the power-of-two refinement
ladder applies exactly). DPE scores the outcome loss of dosing at the
model's preferred dosage; PE scores the joint treatment-and-dosage policy.
NN-MISE replaces the unobservable true curve with factual nearest-neighbour
outcomes from the training set, which makes model selection possible
without counterfactual ground truth.

Dosage maximisation uses a 101-point grid scan followed by golden-section
refinement around the best cell; on plateaus the lowest-dosage grid point
wins (deterministic tie-break, argmax ties in treatment space break to the
lowest index).
"""

import json
from dataclasses import dataclass, field, asdict

import numpy as np

DEFAULT_INTEGRATION_SAMPLES = 64
GRID_POINTS = 101
GOLDEN_ITERS = 30
_INVPHI = (np.sqrt(5.0) - 1.0) / 2.0

CSV_COLUMNS = [
    "model_id",
    "seed",
    "root_mise",
    "root_dpe",
    "root_pe",
    "nn_mise",
    "integration_samples",
]


class MetricError(ValueError):
    pass


# ----------------------------------------------------------------- romberg


def integration_nodes(a, b, num_samples=DEFAULT_INTEGRATION_SAMPLES):
    """num_samples equally spaced intervals -> num_samples + 1 nodes."""
    if not a < b:
        raise MetricError(f"integration needs a < b, got [{a}, {b}]")
    m = int(np.log2(num_samples))
    if 2**m != num_samples:
        raise MetricError(f"num_samples must be a power of two, got {num_samples}")
    return np.linspace(a, b, num_samples + 1)


def romberg_from_samples(values, a, b):
    """Romberg tableau over pre-sampled values at 2^m + 1 equally spaced
    nodes; integrates along the last axis (batched)."""
    values = np.asarray(values, dtype=np.float64)
    nodes = values.shape[-1]
    m = int(np.log2(nodes - 1))
    if 2**m + 1 != nodes:
        raise MetricError(f"need 2^m + 1 sample points, got {nodes}")
    if not np.all(np.isfinite(values)):
        raise MetricError("non-finite integrand value")
    width = b - a
    # trapezoid estimates at every refinement level, then Richardson
    rows = []
    for i in range(m + 1):
        stride = 2 ** (m - i)
        sub = values[..., ::stride]
        h = width / 2**i
        rows.append(h * (sub[..., 1:-1].sum(axis=-1) + 0.5 * (sub[..., 0] + sub[..., -1])))
    for j in range(1, m + 1):
        factor = 4.0**j
        rows = [
            (factor * rows[i + 1] - rows[i]) / (factor - 1.0) for i in range(len(rows) - 1)
        ]
    return rows[0]


def romberg(f, a, b, num_samples=DEFAULT_INTEGRATION_SAMPLES):
    """Integrate a scalar function on [a, b] from 64 equally spaced intervals."""
    nodes = integration_nodes(a, b, num_samples)
    values = np.array([float(f(s)) for s in nodes])
    return float(romberg_from_samples(values, a, b))


# ----------------------------------------------------------------- argmax


def optimal_dosage(curve, a, b, grid_points=GRID_POINTS, refine_iters=GOLDEN_ITERS):
    """Global maximiser of a scalar curve on [a, b].

    101-point grid scan, then golden-section refinement around the best
    cell. The grid point is kept on ties, so a constant curve returns the
    lowest grid point.
    """
    grid = np.linspace(a, b, grid_points)
    vals = np.array([float(curve(s)) for s in grid])
    if not np.all(np.isfinite(vals)):
        raise MetricError("non-finite curve value during dosage search")
    best = int(np.argmax(vals))
    lo = grid[max(best - 1, 0)]
    hi = grid[min(best + 1, grid_points - 1)]
    s_ref, v_ref = _golden_max(curve, lo, hi, refine_iters)
    if v_ref > vals[best]:
        return float(s_ref), float(v_ref)
    return float(grid[best]), float(vals[best])


def _golden_max(curve, lo, hi, iters):
    h = hi - lo
    c = hi - _INVPHI * h
    d = lo + _INVPHI * h
    yc, yd = float(curve(c)), float(curve(d))
    for _ in range(iters):
        if yc >= yd:  # ties move left: prefers lower dosages
            hi, d, yd = d, c, yc
            h = hi - lo
            c = hi - _INVPHI * h
            yc = float(curve(c))
        else:
            lo, c, yc = c, d, yd
            h = hi - lo
            d = lo + _INVPHI * h
            yd = float(curve(d))
    mid = 0.5 * (lo + hi)
    return mid, float(curve(mid))


def optimal_dosage_batch(eval_at, a, b, n_rows, grid_points=GRID_POINTS,
                         refine_iters=GOLDEN_ITERS):
    """Vectorised optimal_dosage: eval_at maps a per-row dosage vector to
    per-row values. Returns (s_star, value) arrays."""
    grid = np.linspace(a, b, grid_points)
    vals = np.empty((n_rows, grid_points))
    for j, s in enumerate(grid):
        vals[:, j] = eval_at(np.full(n_rows, s))
    if not np.all(np.isfinite(vals)):
        raise MetricError("non-finite curve value during dosage search")
    best = np.argmax(vals, axis=1)
    best_vals = vals[np.arange(n_rows), best]
    lo = grid[np.maximum(best - 1, 0)]
    hi = grid[np.minimum(best + 1, grid_points - 1)]
    for _ in range(refine_iters):
        h = hi - lo
        c = hi - _INVPHI * h
        d = lo + _INVPHI * h
        yc = eval_at(c)
        yd = eval_at(d)
        left = yc >= yd
        hi = np.where(left, d, hi)
        lo = np.where(left, lo, c)
    mid = 0.5 * (lo + hi)
    v_mid = eval_at(mid)
    refined_better = v_mid > best_vals
    s_star = np.where(refined_better, mid, grid[best])
    value = np.where(refined_better, v_mid, best_vals)
    return s_star, value


# ----------------------------------------------------------------- metrics


@dataclass
class MetricsReport:
    """Counterfactual metric bundle for one evaluated model."""

    root_mise: float
    root_dpe: float
    root_pe: float
    mise: float
    dpe: float
    pe: float
    nn_mise: float = float("nan")
    per_treatment_root_mise: list = field(default_factory=list)
    per_treatment_root_dpe: list = field(default_factory=list)
    integration_samples: int = DEFAULT_INTEGRATION_SAMPLES
    seed: int = 0
    model_id: str = ""

    def to_json(self):
        return json.dumps(asdict(self))

    @classmethod
    def from_json(cls, text):
        return cls(**json.loads(text))

    @staticmethod
    def csv_header():
        return ",".join(CSV_COLUMNS)

    def csv_row(self):
        return ",".join(
            [
                self.model_id,
                str(self.seed),
                f"{self.root_mise:.6f}",
                f"{self.root_dpe:.6f}",
                f"{self.root_pe:.6f}",
                f"{self.nn_mise:.6f}",
                str(self.integration_samples),
            ]
        )


class OraclePredictor:
    """Adapter exposing the ground-truth oracle through the model predict
    interface for a fixed split (rows are matched positionally)."""

    kind = "oracle"

    def __init__(self, oracle, indices):
        self.oracle = oracle
        self.indices = np.asarray(indices, dtype=np.int64)

    def predict(self, X, t, s):
        return self.oracle.evaluate_each(
            self.indices, t, np.full(self.indices.size, float(s))
        )

    def predict_each(self, X, t, s):
        return self.oracle.evaluate_each(self.indices, t, np.asarray(s, dtype=np.float64))


def mise(model, dataset, split="test", num_samples=DEFAULT_INTEGRATION_SAMPLES):
    """Mean integrated squared error between true and predicted curves."""
    value, _ = _mise_with_breakdown(model, dataset, split, num_samples)
    return value


def _mise_with_breakdown(model, dataset, split, num_samples):
    idx, (F, _, _, _) = dataset.split(split)
    oracle = dataset.oracle
    per_t = []
    for t in range(dataset.num_treatments):
        nodes = integration_nodes(dataset.dosage_low, dataset.dosage_high, num_samples)
        truth = oracle.curve(idx, t, nodes)
        preds = np.empty_like(truth)
        for j, s in enumerate(nodes):
            preds[:, j] = model.predict(F, t, float(s))
        integrals = romberg_from_samples(
            (truth - preds) ** 2, dataset.dosage_low, dataset.dosage_high
        )
        per_t.append(float(np.mean(integrals)))
    return float(np.mean(per_t)), per_t


def _best_dosages(eval_at, dataset, n_rows):
    return optimal_dosage_batch(eval_at, dataset.dosage_low, dataset.dosage_high, n_rows)


def dpe(model, dataset, split="test"):
    """Mean squared outcome loss of dosing at the model's preferred dosage."""
    value, _, _ = _policy_errors(model, dataset, split)
    return value


def pe(model, dataset, split="test"):
    """Mean squared outcome loss of the model's joint treatment+dosage policy."""
    _, value, _ = _policy_errors(model, dataset, split)
    return value


def _policy_errors(model, dataset, split):
    idx, (F, _, _, _) = dataset.split(split)
    oracle = dataset.oracle
    n = idx.size
    k = dataset.num_treatments
    true_best_val = np.empty((n, k))
    dpe_terms = np.empty((n, k))
    model_best_val = np.empty((n, k))
    model_best_y = np.empty((n, k))  # true outcome at the model's dosage pick
    per_t_dpe = []
    for t in range(k):
        s_true, v_true = _best_dosages(lambda sv, t=t: oracle.evaluate_each(idx, t, sv), dataset, n)
        s_model, v_model = _best_dosages(lambda sv, t=t: model.predict_each(F, t, sv), dataset, n)
        y_at_model_pick = oracle.evaluate_each(idx, t, s_model)
        true_best_val[:, t] = v_true
        model_best_val[:, t] = v_model
        model_best_y[:, t] = y_at_model_pick
        dpe_terms[:, t] = (v_true - y_at_model_pick) ** 2
        per_t_dpe.append(float(np.mean(dpe_terms[:, t])))
    dpe_value = float(np.mean(dpe_terms))
    t_star = np.argmax(true_best_val, axis=1)  # ties: lowest treatment index
    t_hat = np.argmax(model_best_val, axis=1)
    rows = np.arange(n)
    pe_value = float(np.mean((true_best_val[rows, t_star] - model_best_y[rows, t_hat]) ** 2))
    return dpe_value, pe_value, per_t_dpe


def nn_mise(model, dataset, split="val", num_samples=DEFAULT_INTEGRATION_SAMPLES,
            candidate_pool=5):
    """Nearest-neighbour approximation of MISE from factual data only.

    For each evaluation sample, treatment, and integration node s, the true
    outcome is replaced by the factual outcome of the training sample that
    is nearest in standardised-covariate Euclidean distance among the
    ``candidate_pool`` training samples (with that treatment) whose factual
    dosages are closest to s.
    """
    idx, (F, _, _, _) = dataset.split(split)
    _, (F_tr, t_tr, s_tr, y_tr) = dataset.split("train")
    low, high = dataset.dosage_low, dataset.dosage_high
    nodes = integration_nodes(low, high, num_samples)
    per_t = []
    for t in range(dataset.num_treatments):
        group = np.where(t_tr == t)[0]
        if group.size == 0:
            raise MetricError(f"treatment {t} absent from the training split (no common support)")
        order = group[np.argsort(s_tr[group], kind="stable")]
        s_sorted = s_tr[order]
        preds = np.empty((idx.size, nodes.size))
        ynn = np.empty((idx.size, nodes.size))
        for j, s in enumerate(nodes):
            cand = order[_nearest_window(s_sorted, float(s), candidate_pool)]
            d = (
                np.sum(F[:, None, :] ** 2, axis=2)
                - 2.0 * F @ F_tr[cand].T
                + np.sum(F_tr[cand] ** 2, axis=1)[None, :]
            )
            ynn[:, j] = y_tr[cand[np.argmin(d, axis=1)]]
            preds[:, j] = model.predict(F, t, float(s))
        integrals = romberg_from_samples((ynn - preds) ** 2, low, high)
        per_t.append(float(np.mean(integrals)))
    return float(np.mean(per_t))


def _nearest_window(sorted_vals, target, m):
    """Positions of the m values nearest to target in a sorted array."""
    m = min(m, sorted_vals.size)
    pos = np.searchsorted(sorted_vals, target)
    lo = max(0, pos - m)
    hi = min(sorted_vals.size, pos + m)
    window = np.arange(lo, hi)
    order = np.argsort(np.abs(sorted_vals[window] - target), kind="stable")
    return np.sort(window[order[:m]])


def evaluate_model(model, dataset, split="test", num_samples=DEFAULT_INTEGRATION_SAMPLES,
                   model_id="", seed=0, with_nn_mise=False):
    """Full MetricsReport for a model on one dataset split."""
    mise_value, per_t_mise = _mise_with_breakdown(model, dataset, split, num_samples)
    dpe_value, pe_value, per_t_dpe = _policy_errors(model, dataset, split)
    nn = nn_mise(model, dataset, num_samples=num_samples) if with_nn_mise else float("nan")
    return MetricsReport(
        root_mise=float(np.sqrt(mise_value)),
        root_dpe=float(np.sqrt(dpe_value)),
        root_pe=float(np.sqrt(pe_value)),
        mise=mise_value,
        dpe=dpe_value,
        pe=pe_value,
        nn_mise=nn,
        per_treatment_root_mise=[float(np.sqrt(v)) for v in per_t_mise],
        per_treatment_root_dpe=[float(np.sqrt(v)) for v in per_t_dpe],
        integration_samples=num_samples,
        seed=seed,
        model_id=model_id or getattr(model, "kind", type(model).__name__),
    )
