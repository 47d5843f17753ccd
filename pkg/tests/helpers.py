"""Hand-built toy oracles/datasets for exercising the metrics layer."""

import numpy as np

from doseresponse.data import GroundTruthOracle


class ToyData:
    """Minimal stand-in for Dataset: fixed splits over a hand-built oracle."""

    def __init__(self, oracle, X, t_f, s_f, y_f, train_idx, val_idx, test_idx):
        self.oracle = oracle
        self.X = X
        self.t_f = t_f
        self.s_f = s_f
        self.y_f = y_f
        self.train_idx = train_idx
        self.val_idx = val_idx
        self.test_idx = test_idx

    @property
    def num_treatments(self):
        return self.oracle.num_treatments

    @property
    def dosage_low(self):
        return self.oracle.dosage_low

    @property
    def dosage_high(self):
        return self.oracle.dosage_high

    def features(self):
        return self.X

    def split(self, name):
        idx = {"train": self.train_idx, "val": self.val_idx, "test": self.test_idx}[name]
        return idx, (self.X[idx], self.t_f[idx], self.s_f[idx], self.y_f[idx])


def make_toy_oracle(
    n=30,
    k=2,
    mix_means=None,
    mix_sds=None,
    weights=None,
    y_t=None,
    scale_c=1.0,
    low=0.0,
    high=1.0,
    seed=0,
):
    """Oracle with controllable dose-response shapes on [low, high]."""
    rng = np.random.default_rng(seed)
    if mix_means is None:
        mix_means = np.tile([0.25, 0.75], (k, 1))
    if mix_sds is None:
        mix_sds = np.full((k, 2), 0.15)
    if weights is None:
        w = rng.uniform(0.2, 0.8, size=(n, k, 1))
        weights = np.concatenate([w, 1.0 - w], axis=2)
    if y_t is None:
        y_t = rng.uniform(0.5, 1.5, size=(n, k))
    dim = 3
    return GroundTruthOracle(
        scale_c=scale_c,
        y_t=y_t,
        mix_means=np.asarray(mix_means, dtype=float),
        mix_sds=np.asarray(mix_sds, dtype=float),
        mix_weights=np.asarray(weights, dtype=float),
        mu_t=np.full(k, 0.45),
        sigma_t=np.full(k, 0.1),
        centroids_t=np.zeros((k, dim)),
        centroids_s=np.zeros((k, 2, dim)),
        dosage_low=low,
        dosage_high=high,
    )


def make_toy_dataset(n=30, k=2, p=4, seed=0, **oracle_kwargs):
    """ToyData with random factuals consistent with its oracle."""
    rng = np.random.default_rng(seed)
    oracle = make_toy_oracle(n=n, k=k, seed=seed, **oracle_kwargs)
    X = rng.normal(size=(n, p))
    t_f = rng.integers(0, k, size=n)
    s_f = rng.uniform(oracle.dosage_low, oracle.dosage_high, size=n)
    y_f = np.empty(n)
    for t in range(k):
        rows = np.where(t_f == t)[0]
        if rows.size:
            y_f[rows] = oracle.evaluate_each(rows, t, s_f[rows])
    order = rng.permutation(n)
    n_tr = int(0.6 * n)
    n_val = int(0.25 * n)
    return ToyData(
        oracle,
        X,
        t_f,
        s_f,
        y_f,
        train_idx=np.sort(order[:n_tr]),
        val_idx=np.sort(order[n_tr : n_tr + n_val]),
        test_idx=np.sort(order[n_tr + n_val :]),
    )
