"""k-nearest-neighbour counterfactual regression baseline.

Predictions average the factual outcomes of the K covariate-nearest
training samples among those that received the queried treatment at a
dosage within ``bandwidth`` of the queried one; the bandwidth doubles
until at least K candidates exist. Exhaustive scan (no tree), stable
index tie-breaking, deterministic given (data, K, h).
"""

import numpy as np


class CommonSupportError(ValueError):
    pass


class KnnModel:
    kind = "knn"

    def __init__(self, num_neighbours=5, bandwidth=0.1):
        if num_neighbours < 1:
            raise ValueError("need at least one neighbour")
        if bandwidth <= 0.0:
            raise ValueError("bandwidth must be positive")
        self.num_neighbours = int(num_neighbours)
        self.bandwidth = float(bandwidth)
        self._X = None

    def fit(self, train_data):
        """Store (already standardised) covariates and factuals."""
        X, t, s, y = train_data
        self._X = np.asarray(X, dtype=np.float64)
        self._t = np.asarray(t, dtype=np.int64)
        self._s = np.asarray(s, dtype=np.float64)
        self._y = np.asarray(y, dtype=np.float64)
        self._groups = {
            int(tt): np.where(self._t == tt)[0] for tt in np.unique(self._t)
        }
        return self

    def _candidates(self, t, s):
        group = self._groups.get(int(t))
        if group is None or group.size == 0:
            raise CommonSupportError(f"no training sample received treatment {t}")
        h = self.bandwidth
        while True:
            mask = np.abs(self._s[group] - s) <= h
            cand = group[mask]
            if cand.size >= min(self.num_neighbours, group.size):
                return cand
            h *= 2.0

    def predict(self, X, t, s):
        """Mean factual outcome of the K nearest candidates, per query row."""
        if self._X is None:
            raise RuntimeError("knn model not fitted")
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        cand = self._candidates(t, float(s))
        d = (
            np.sum(X * X, axis=1)[:, None]
            - 2.0 * X @ self._X[cand].T
            + np.sum(self._X[cand] ** 2, axis=1)[None, :]
        )
        k = min(self.num_neighbours, cand.size)
        # stable K smallest: sort by (distance, original index)
        order = np.lexsort((np.broadcast_to(cand, d.shape), d), axis=1)[:, :k]
        return self._y[cand[order]].mean(axis=1)

    def predict_each(self, X, t, s):
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        s = np.asarray(s, dtype=np.float64)
        out = np.empty(X.shape[0])
        for i in range(X.shape[0]):
            out[i] = self.predict(X[i : i + 1], t, float(s[i]))[0]
        return out

    def predict_factual(self, X, t, s):
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        t = np.asarray(t, dtype=np.int64)
        out = np.empty(X.shape[0])
        for tt in np.unique(t):
            rows = np.where(t == tt)[0]
            out[rows] = self.predict_each(X[rows], int(tt), np.asarray(s)[rows])
        return out
