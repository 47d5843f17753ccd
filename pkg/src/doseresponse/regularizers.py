"""Treatment-assignment-bias regularisation schemes.

Four pluggable schemes: an entropic-optimal-transport (Sinkhorn) penalty
between treatment-group representations, propensity dropout, propensity
batch matching, and whole-training-set propensity matching. The dosage
extension of each scheme is a reconstruction: the transport penalty and
the matching schemes group/compare by treatment only (dosage ignored),
and the dropout rate uses a normalised-entropy form with a searchable
ceiling.
"""

from dataclasses import dataclass, field

import numpy as np

from .nn import Adam

REGULARIZER_KINDS = ("none", "wasserstein", "pd", "pm", "psm_pm")


@dataclass
class RegularizerConfig:
    kind: str = "none"
    penalty_weight: float = 0.0  # lambda for the transport penalty
    sinkhorn_epsilon: float = 0.01
    sinkhorn_iters: int = 100
    pd_gamma: float = 0.5

    def __post_init__(self):
        if self.kind not in REGULARIZER_KINDS:
            raise ValueError(f"unknown regularizer kind {self.kind!r}")
        if self.penalty_weight < 0.0:
            raise ValueError("penalty weight must be nonnegative")
        if self.sinkhorn_epsilon <= 0.0:
            raise ValueError("sinkhorn epsilon must be positive")
        if not 0.0 <= self.pd_gamma <= 1.0:
            raise ValueError("pd gamma must lie in [0, 1]")


@dataclass
class SinkhornResult:
    cost: float
    converged: bool
    plan: np.ndarray

    def __float__(self):
        return self.cost


def _pairwise_sq_dists(a, b):
    d = np.sum(a * a, axis=1)[:, None] + np.sum(b * b, axis=1)[None, :] - 2.0 * (a @ b.T)
    np.maximum(d, 0.0, out=d)
    return d


def _entropic_transport(a, b, epsilon, iters, tol):
    """Raw entropic transport: cost <P, C> under the Sinkhorn plan for
    uniform marginals and squared Euclidean ground cost (log-domain)."""
    n, m = a.shape[0], b.shape[0]
    cost = _pairwise_sq_dists(a, b)
    log_mu = np.full(n, -np.log(n))
    log_nu = np.full(m, -np.log(m))
    f = np.zeros(n)
    g = np.zeros(m)
    k = -cost / epsilon
    converged = False
    for _ in range(iters):
        f = epsilon * (log_mu - _logsumexp(k + g[None, :] / epsilon, axis=1))
        g = epsilon * (log_nu - _logsumexp(k + f[:, None] / epsilon, axis=0))
        log_plan = k + f[:, None] / epsilon + g[None, :] / epsilon
        marginal = np.exp(_logsumexp(log_plan, axis=1))
        if np.max(np.abs(marginal - np.exp(log_mu))) < tol:
            converged = True
            break
    plan = np.exp(k + f[:, None] / epsilon + g[None, :] / epsilon)
    return float(np.sum(plan * cost)), plan, converged


def sinkhorn_distance(a, b, epsilon=0.01, iters=100, tol=1e-9):
    """Debiased entropy-regularised optimal transport cost between point sets.

    Squared Euclidean ground metric, uniform marginals, log-domain Sinkhorn
    updates. The returned cost is the cross transport cost <P_ab, C_ab>
    minus half of each self term, which removes the entropic smearing bias:
    identical sets score exactly zero even when close point pairs would
    otherwise exchange mass. Arguments are processed in a canonical order,
    so the cost is symmetric by construction. If the plan marginals have
    not converged to ``tol`` after ``iters`` iterations the current value
    is returned with ``converged=False``.
    """
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    b = np.atleast_2d(np.asarray(b, dtype=np.float64))
    if a.shape[0] == 0 or b.shape[0] == 0:
        raise ValueError("sinkhorn_distance needs nonempty point sets")
    if a.shape[1] != b.shape[1]:
        raise ValueError(f"dimension mismatch: {a.shape[1]} vs {b.shape[1]}")
    swapped = (b.shape[0], b.tobytes()) < (a.shape[0], a.tobytes())
    if swapped:
        a, b = b, a
    cross, plan, conv_ab = _entropic_transport(a, b, epsilon, iters, tol)
    if a.shape == b.shape and np.array_equal(a, b):
        return SinkhornResult(cost=0.0, converged=conv_ab, plan=plan.T if swapped else plan)
    self_a, _, conv_a = _entropic_transport(a, a, epsilon, iters, tol)
    self_b, _, conv_b = _entropic_transport(b, b, epsilon, iters, tol)
    value = max(cross - 0.5 * self_a - 0.5 * self_b, 0.0)
    return SinkhornResult(
        cost=value,
        converged=conv_ab and conv_a and conv_b,
        plan=plan.T if swapped else plan,
    )


def _logsumexp(x, axis):
    hi = np.max(x, axis=axis, keepdims=True)
    out = hi + np.log(np.sum(np.exp(x - hi), axis=axis, keepdims=True))
    return np.squeeze(out, axis=axis)


def wasserstein_penalty(representations, treatments, epsilon=0.01, iters=100):
    """Mean debiased Sinkhorn distance between each treatment group's
    representations and the pooled remaining groups, on per-batch
    standardised coordinates.

    Returns (penalty, gradient w.r.t. the raw representations, degenerate).
    The transport plans and the standardisation statistics are treated as
    constants, so the gradient flows only through the point coordinates.
    ``degenerate`` is True when fewer than two usable groups exist (groups
    with under two samples are skipped) and the penalty is then 0.
    """
    reps = np.atleast_2d(np.asarray(representations, dtype=np.float64))
    t = np.asarray(treatments, dtype=np.int64)
    mean = reps.mean(axis=0)
    sd = reps.std(axis=0)
    sd[sd == 0.0] = 1.0
    z = (reps - mean) / sd
    groups = [np.where(t == tt)[0] for tt in np.unique(t)]
    groups = [g for g in groups if g.size >= 2]
    if len(groups) < 2:
        return 0.0, np.zeros_like(reps), True
    total = 0.0
    grad_z = np.zeros_like(z)
    tol = 1e-9
    for g_idx in groups:
        rest = np.setdiff1d(np.arange(reps.shape[0]), g_idx, assume_unique=False)
        if rest.size == 0:
            continue
        zg, zr = z[g_idx], z[rest]
        cross, p, _ = _entropic_transport(zg, zr, epsilon, iters, tol)
        self_g, pg, _ = _entropic_transport(zg, zg, epsilon, iters, tol)
        self_r, pr, _ = _entropic_transport(zr, zr, epsilon, iters, tol)
        total += max(cross - 0.5 * self_g - 0.5 * self_r, 0.0)
        # plan-constant gradients: d<P,C>/da_i = sum_j P_ij * 2 (a_i - b_j),
        # with self plans entering through both rows and columns
        grad_z[g_idx] += 2.0 * (zg * p.sum(axis=1)[:, None] - p @ zr)
        grad_z[rest] += 2.0 * (zr * p.sum(axis=0)[:, None] - p.T @ zg)
        sg = pg + pg.T
        grad_z[g_idx] -= zg * sg.sum(axis=1)[:, None] - sg @ zg
        sr = pr + pr.T
        grad_z[rest] -= zr * sr.sum(axis=1)[:, None] - sr @ zr
    penalty = total / len(groups)
    grad = grad_z / (len(groups) * sd)
    return penalty, grad, False


def shannon_entropy(p):
    p = np.asarray(p, dtype=np.float64)
    nonzero = p[p > 0.0]
    return float(-np.sum(nonzero * np.log(nonzero)))


def propensity_dropout_rate(p, gamma):
    """Per-sample dropout probability gamma * (1 - H(p)/log k).

    Maximum-entropy (uniform) propensities give 0; one-hot propensities
    give gamma, so confidently-assigned samples are regularised hardest.
    """
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 1 or p.size < 2:
        raise ValueError("propensity vector must have at least two entries")
    if np.any(p < 0.0) or abs(p.sum() - 1.0) > 1e-9:
        raise ValueError(f"not a probability vector: {p!r}")
    if not 0.0 <= gamma <= 1.0:
        raise ValueError("gamma must lie in [0, 1]")
    rate = gamma * (1.0 - shannon_entropy(p) / np.log(p.size))
    return float(np.clip(rate, 0.0, gamma))


def propensity_dropout_rates(probs, gamma):
    """Vectorised propensity_dropout_rate over rows of a probability matrix."""
    probs = np.atleast_2d(np.asarray(probs, dtype=np.float64))
    with np.errstate(divide="ignore", invalid="ignore"):
        logp = np.where(probs > 0.0, np.log(probs), 0.0)
    entropy = -np.sum(probs * logp, axis=1)
    rates = gamma * (1.0 - entropy / np.log(probs.shape[1]))
    return np.clip(rates, 0.0, gamma)


class PropensityModel:
    """Multinomial logistic regression p(t|x) with early stopping on
    validation accuracy. Covariates are standardised internally."""

    def __init__(self, num_treatments):
        self.num_treatments = num_treatments
        self.weights = None
        self.bias = None
        self._mean = None
        self._sd = None

    def fit(self, X, t, X_val=None, t_val=None, epochs=200, learning_rate=0.05, patience=20, seed=0):
        X = np.asarray(X, dtype=np.float64)
        t = np.asarray(t, dtype=np.int64)
        self._mean = X.mean(axis=0)
        self._sd = X.std(axis=0)
        self._sd[self._sd == 0.0] = 1.0
        z = (X - self._mean) / self._sd
        k, p = self.num_treatments, X.shape[1]
        rng = np.random.default_rng(seed)
        self.weights = rng.normal(scale=0.01, size=(k, p))
        self.bias = np.zeros(k)
        onehot = np.zeros((X.shape[0], k))
        onehot[np.arange(X.shape[0]), t] = 1.0
        opt = Adam(learning_rate=learning_rate)
        best_acc, best, bad = -1.0, None, 0
        for _ in range(epochs):
            probs = self._softmax(z @ self.weights.T + self.bias)
            grad_logits = (probs - onehot) / X.shape[0]
            gw = grad_logits.T @ z
            gb = grad_logits.sum(axis=0)
            opt.step([(self.weights, gw), (self.bias, gb)])
            if X_val is not None:
                acc = float(np.mean(self.predict(X_val) == np.asarray(t_val)))
                if acc > best_acc:
                    best_acc, best, bad = acc, (self.weights.copy(), self.bias.copy()), 0
                else:
                    bad += 1
                    if bad >= patience:
                        break
        if best is not None:
            self.weights, self.bias = best
        return self

    @staticmethod
    def _softmax(logits):
        shifted = logits - logits.max(axis=1, keepdims=True)
        e = np.exp(shifted)
        return e / e.sum(axis=1, keepdims=True)

    def predict_proba(self, X):
        if self.weights is None:
            raise RuntimeError("propensity model not fitted")
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        z = (X - self._mean) / self._sd
        return self._softmax(z @ self.weights.T + self.bias)

    def predict(self, X):
        return np.argmax(self.predict_proba(X), axis=1)


def nearest_by_propensity(query_probs, pool_probs, pool_rows):
    """Index (into pool_rows) of the pool sample closest in propensity space.

    Euclidean distance over the propensity vectors; ties break to the
    lowest original index (stable argmin), so matching is deterministic.
    """
    d = np.sum((pool_probs - query_probs[None, :]) ** 2, axis=1)
    return pool_rows[int(np.argmin(d))]


def match_batch(batch, train_data, train_probs, propensity):
    """Augment a factual batch with its propensity-matched counterfactual twins.

    For every sample and every treatment other than its factual one, the
    training sample with that treatment nearest in propensity space is
    appended. Output size = batch size * k, containing the original batch
    as a prefix.
    """
    Xb, tb, sb, yb = batch
    Xtr, ttr, str_, ytr = train_data
    k = train_probs.shape[1]
    pools = [np.where(ttr == tt)[0] for tt in range(k)]
    for tt, pool in enumerate(pools):
        if pool.size == 0:
            raise ValueError(f"treatment {tt} absent from the training set (no common support)")
    batch_probs = propensity.predict_proba(Xb)
    extra = []
    for i in range(Xb.shape[0]):
        for tt in range(k):
            if tt == int(tb[i]):
                continue
            j = nearest_by_propensity(batch_probs[i], train_probs[pools[tt]], pools[tt])
            extra.append(j)
    extra = np.asarray(extra, dtype=np.int64)
    return (
        np.concatenate([Xb, Xtr[extra]], axis=0),
        np.concatenate([tb, ttr[extra]]),
        np.concatenate([sb, str_[extra]]),
        np.concatenate([yb, ytr[extra]]),
    )


def match_dataset(train_data, propensity):
    """Whole-training-set matching: for every sample and every treatment,
    keep the sample itself (its factual treatment) or its nearest
    propensity match with that treatment. Output size N*k with exactly N
    samples per treatment."""
    X, t, s, y = train_data
    probs = propensity.predict_proba(X)
    k = probs.shape[1]
    pools = [np.where(t == tt)[0] for tt in range(k)]
    for tt, pool in enumerate(pools):
        if pool.size == 0:
            raise ValueError(f"treatment {tt} absent from the training set (no common support)")
    rows = []
    for i in range(X.shape[0]):
        for tt in range(k):
            if tt == int(t[i]):
                rows.append(i)
            else:
                rows.append(nearest_by_propensity(probs[i], probs[pools[tt]], pools[tt]))
    rows = np.asarray(rows, dtype=np.int64)
    return X[rows], t[rows], s[rows], y[rows]


class Regularizer:
    """Orchestrates one configured scheme across the three hook points:
    training-set preparation (psm_pm), batch preparation (pm), per-sample
    dropout rates (pd) and the representation penalty (wasserstein).
    A ``none`` or zero-weight configuration is an exact no-op."""

    def __init__(self, config: RegularizerConfig, train_data=None, val_data=None,
                 num_treatments=None, seed=0):
        self.config = config
        self.propensity = None
        self._train_data = None
        self._train_probs = None
        self.degenerate_batches = 0
        if config.kind in ("pd", "pm", "psm_pm"):
            if train_data is None:
                raise ValueError(f"{config.kind} needs the training set to fit propensities")
            X, t, _, _ = train_data
            k = int(np.max(t)) + 1 if num_treatments is None else int(num_treatments)
            if config.kind in ("pm", "psm_pm"):
                present = set(np.unique(t).tolist())
                missing = sorted(set(range(k)) - present)
                if missing:
                    raise ValueError(
                        f"treatment {missing[0]} absent from the training set (no common support)"
                    )
            self.propensity = PropensityModel(k)
            if val_data is not None:
                self.propensity.fit(X, t, val_data[0], val_data[1], seed=seed)
            else:
                self.propensity.fit(X, t, seed=seed)
            self._train_data = train_data
            self._train_probs = self.propensity.predict_proba(X)

    def prepare_training_set(self, train_data):
        if self.config.kind == "psm_pm":
            return match_dataset(train_data, self.propensity)
        return train_data

    def prepare_batch(self, batch):
        if self.config.kind == "pm":
            return match_batch(batch, self._train_data, self._train_probs, self.propensity)
        return batch

    def dropout_rates(self, X):
        if self.config.kind != "pd":
            return None
        probs = self.propensity.predict_proba(X)
        return propensity_dropout_rates(probs, self.config.pd_gamma)

    def penalty_gradient(self, representations, treatments):
        """lambda-weighted gradient of the transport penalty w.r.t. the
        representations, or None when inactive. Zero weight short-circuits
        so training trajectories are bit-identical to vanilla."""
        if self.config.kind != "wasserstein" or self.config.penalty_weight == 0.0:
            return None
        penalty, grad, degenerate = wasserstein_penalty(
            representations,
            treatments,
            epsilon=self.config.sinkhorn_epsilon,
            iters=self.config.sinkhorn_iters,
        )
        if degenerate:
            self.degenerate_batches += 1
            return None
        self.last_penalty = penalty
        return self.config.penalty_weight * grad
