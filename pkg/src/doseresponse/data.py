"""Semi-synthetic dose-response benchmarks with ground-truth oracles.

Three generating-process families over synthetic covariates (real
covariates can be substituted via CSV):

* ``news``  - bag-of-words documents from a Dirichlet-multinomial topic
  model; outcomes built in topic space; exponential dosages.
* ``mvicu`` - continuous biosignal-like covariates from a Gaussian
  mixture; outcomes built in (standardised) covariate space; Gaussian
  per-treatment dosages.
* ``tcga``  - expression-like covariates, cosine similarity in covariate
  space, shared Gaussian dosage law.

Every generated dataset keeps a closed-form oracle for the true
individual dose-response y_{n,t}(s) = C * y_t[n,t] * mix(n,t,s), where
y_t is a per-(sample, treatment) draw from a treatment-specific Gaussian
outcome distribution plus sample noise, and mix is a two-component
softmax-weighted sum of peak-normalised Gaussian bumps over the dosage.
All randomness is drawn at build time; oracle evaluation is deterministic.
"""

import csv
import io
import json
from dataclasses import dataclass, field, asdict

import numpy as np

DATASET_FORMAT = "doseresponse-dataset/1"
DOSAGE_LOW = 1e-3
DOSAGE_HIGH = 1.0

FAMILIES = ("news", "mvicu", "tcga")
DISTANCES = ("euclidean_topics", "euclidean_covariates", "cosine_covariates")
DOSAGE_LAWS = ("exponential", "gaussian")


class CsvFormatError(ValueError):
    """Structured CSV parse failure with row/column location."""

    def __init__(self, message, row=None, column=None):
        super().__init__(message)
        self.row = row
        self.column = column


@dataclass
class BenchmarkSpec:
    family: str
    num_samples: int
    num_features: int
    num_treatments: int
    kappa: float = 10.0
    scale_c: float = 50.0
    dosage_law: str = "exponential"
    exp_scale: float = 0.25  # mean of the exponential dosage law
    exp_is_rate: bool = False  # alternative reading: 0.25 as a rate
    dose_means: tuple = ()
    dose_sd: float = 0.1
    distance: str = "euclidean_topics"
    num_topics: int = 50
    seed: int = 0
    covariates_csv: str = ""

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}, expected one of {FAMILIES}")
        if self.distance not in DISTANCES:
            raise ValueError(f"unknown distance {self.distance!r}")
        if self.dosage_law not in DOSAGE_LAWS:
            raise ValueError(f"unknown dosage law {self.dosage_law!r}")
        if self.kappa < 0.0:
            raise ValueError("kappa must be nonnegative")
        if self.scale_c <= 0.0:
            raise ValueError("scale coefficient must be positive")
        if self.num_treatments < 2:
            raise ValueError("need at least 2 treatments")
        if self.dosage_law == "gaussian" and not self.dose_means:
            self.dose_means = tuple([0.65] * self.num_treatments)
        if self.dose_means and len(self.dose_means) != self.num_treatments:
            raise ValueError(
                f"{len(self.dose_means)} dosage means for {self.num_treatments} treatments"
            )


def benchmark_preset(family, scale="desk", kappa=None, seed=0, num_treatments=None):
    """Named benchmark configurations.

    ``full`` reproduces the reference dimensions (news 5000x2870 k=2,
    mvicu 8040x49 k=3, tcga 9659x20531 k=3); ``desk`` keeps every process
    identical but shrinks samples/features to laptop scale.
    """
    if family == "news":
        k = 2 if num_treatments is None else num_treatments
        spec = BenchmarkSpec(
            family="news",
            num_samples=5000 if scale == "full" else 2000,
            num_features=2870 if scale == "full" else 200,
            num_treatments=k,
            kappa=7.0 if k == 16 else 10.0,
            scale_c=50.0,
            dosage_law="exponential",
            distance="euclidean_topics",
            seed=seed,
        )
    elif family == "mvicu":
        spec = BenchmarkSpec(
            family="mvicu",
            num_samples=8040 if scale == "full" else 2000,
            num_features=49,
            num_treatments=3 if num_treatments is None else num_treatments,
            kappa=10.0,
            scale_c=150.0,
            dosage_law="gaussian",
            dose_means=(0.6, 0.65, 0.4),
            dose_sd=0.1,
            distance="euclidean_covariates",
            seed=seed,
        )
    elif family == "tcga":
        spec = BenchmarkSpec(
            family="tcga",
            num_samples=9659 if scale == "full" else 2000,
            num_features=20531 if scale == "full" else 200,
            num_treatments=3 if num_treatments is None else num_treatments,
            kappa=10.0,
            scale_c=50.0,
            dosage_law="gaussian",
            dose_means=(0.65, 0.65, 0.65),
            dose_sd=0.1,
            distance="cosine_covariates",
            seed=seed,
        )
    else:
        raise ValueError(f"unknown benchmark family {family!r}")
    if scale not in ("desk", "full"):
        raise ValueError(f"unknown preset scale {scale!r}")
    if kappa is not None:
        spec.kappa = float(kappa)
    return spec


# --------------------------------------------------------------- covariates


def generate_covariates(spec):
    """Sample covariates X and the embedding z(X) used for outcome geometry.

    news: per-document topic mixtures from a Dirichlet over ``num_topics``
    latent topics, word counts from a multinomial over ``num_features``
    vocabulary terms; z is the (known) topic mixture. mvicu/tcga:
    Gaussian-mixture covariates; z is the standardised covariate matrix.
    A ``covariates_csv`` path overrides generation (z = standardised X).
    """
    if spec.covariates_csv:
        X = load_csv_covariates(spec.covariates_csv)
        return X, _standardize(X)
    rng = np.random.default_rng([0, spec.seed])
    n, p = spec.num_samples, spec.num_features
    if spec.family == "news":
        topics = spec.num_topics
        if p < topics:
            raise ValueError(f"news vocabulary size {p} smaller than {topics} topics")
        topic_word = rng.dirichlet(np.full(p, 0.05), size=topics)
        z = rng.dirichlet(np.full(topics, 0.1), size=n)
        lengths = rng.poisson(200.0, size=n) + 1
        word_probs = z @ topic_word
        X = np.empty((n, p))
        for i in range(n):
            X[i] = rng.multinomial(lengths[i], word_probs[i])
        return X, z
    components = min(5, n)
    means = rng.normal(scale=2.0, size=(components, p))
    assignment = rng.integers(0, components, size=n)
    X = means[assignment] + rng.normal(size=(n, p))
    return X, _standardize(X)


def _standardize(X):
    mean = X.mean(axis=0)
    sd = X.std(axis=0)
    sd[sd == 0.0] = 1.0
    return (X - mean) / sd


# --------------------------------------------------------------- oracle


class GroundTruthOracle:
    """Closed-form true dose-response retained by the generator.

    y_{n,t}(s) = C * y_t[n,t] * (d0 * bump(s; m0, sd0) + d1 * bump(s; m1, sd1))
    with bump the peak-normalised Gaussian shape exp(-(s-m)^2 / (2 sd^2)).
    """

    def __init__(self, scale_c, y_t, mix_means, mix_sds, mix_weights,
                 mu_t, sigma_t, centroids_t, centroids_s,
                 dosage_low=DOSAGE_LOW, dosage_high=DOSAGE_HIGH):
        self.scale_c = float(scale_c)
        self.y_t = np.asarray(y_t, dtype=np.float64)              # (N, k)
        self.mix_means = np.asarray(mix_means, dtype=np.float64)  # (k, 2)
        self.mix_sds = np.asarray(mix_sds, dtype=np.float64)      # (k, 2)
        self.mix_weights = np.asarray(mix_weights, dtype=np.float64)  # (N, k, 2)
        self.mu_t = np.asarray(mu_t, dtype=np.float64)
        self.sigma_t = np.asarray(sigma_t, dtype=np.float64)
        self.centroids_t = np.asarray(centroids_t, dtype=np.float64)
        self.centroids_s = np.asarray(centroids_s, dtype=np.float64)
        self.dosage_low = float(dosage_low)
        self.dosage_high = float(dosage_high)

    @property
    def num_samples(self):
        return self.y_t.shape[0]

    @property
    def num_treatments(self):
        return self.y_t.shape[1]

    def _check(self, n, t, s):
        if not 0 <= t < self.num_treatments:
            raise ValueError(f"treatment {t} outside [0, {self.num_treatments})")
        if np.any(n < 0) or np.any(np.asarray(n) >= self.num_samples):
            raise ValueError("sample index out of range")
        s = np.asarray(s, dtype=np.float64)
        if np.any(s < self.dosage_low) or np.any(s > self.dosage_high):
            raise ValueError(
                f"dosage outside [{self.dosage_low}, {self.dosage_high}]"
            )

    def dose_factor(self, rows, t, s):
        """Mixture dose factor for sample rows at dosages s (scalar s is
        shared across rows, a vector gives one dosage per row)."""
        rows = np.asarray(rows, dtype=np.int64)
        m = self.mix_means[t]
        sd = self.mix_sds[t]
        w = self.mix_weights[rows, t]  # (n, 2)
        s = np.asarray(s, dtype=np.float64)
        if s.ndim == 0:
            s = np.full(rows.size, float(s))
        bump = np.exp(-((s[:, None] - m) ** 2) / (2.0 * sd**2))  # (n, 2)
        return np.sum(w * bump, axis=1)

    def evaluate(self, n, t, s):
        """True outcome y_{n,t}(s) for a single sample."""
        return float(self.evaluate_each(np.asarray([n]), t, np.asarray([float(s)]))[0])

    def curve(self, rows, t, s_nodes):
        """(len(rows), len(s_nodes)) matrix of true outcomes."""
        rows = np.asarray(rows, dtype=np.int64)
        s_nodes = np.asarray(s_nodes, dtype=np.float64)
        self._check(rows, t, s_nodes)
        m = self.mix_means[t]
        sd = self.mix_sds[t]
        bump = np.exp(-((s_nodes[:, None] - m) ** 2) / (2.0 * sd**2))  # (nodes, 2)
        factor = self.mix_weights[rows, t] @ bump.T  # (n, nodes)
        return self.scale_c * self.y_t[rows, t][:, None] * factor

    def evaluate_each(self, rows, t, s):
        """True outcomes for per-row dosages."""
        rows = np.asarray(rows, dtype=np.int64)
        s = np.asarray(s, dtype=np.float64)
        self._check(rows, t, s)
        m = self.mix_means[t]
        sd = self.mix_sds[t]
        bump = np.exp(-((s[:, None] - m) ** 2) / (2.0 * sd**2))
        factor = np.sum(self.mix_weights[rows, t] * bump, axis=1)
        return self.scale_c * self.y_t[rows, t] * factor

    def to_arrays(self):
        return {
            "oracle_y_t": self.y_t,
            "oracle_mix_means": self.mix_means,
            "oracle_mix_sds": self.mix_sds,
            "oracle_mix_weights": self.mix_weights,
            "oracle_mu_t": self.mu_t,
            "oracle_sigma_t": self.sigma_t,
            "oracle_centroids_t": self.centroids_t,
            "oracle_centroids_s": self.centroids_s,
        }

    @classmethod
    def from_arrays(cls, arrays, scale_c, dosage_low=DOSAGE_LOW, dosage_high=DOSAGE_HIGH):
        return cls(
            scale_c=scale_c,
            y_t=arrays["oracle_y_t"],
            mix_means=arrays["oracle_mix_means"],
            mix_sds=arrays["oracle_mix_sds"],
            mix_weights=arrays["oracle_mix_weights"],
            mu_t=arrays["oracle_mu_t"],
            sigma_t=arrays["oracle_sigma_t"],
            centroids_t=arrays["oracle_centroids_t"],
            centroids_s=arrays["oracle_centroids_s"],
            dosage_low=dosage_low,
            dosage_high=dosage_high,
        )


def _positive_normal(rng, mean, sd, size):
    """Draw N(mean, sd) values, redrawing any nonpositive ones."""
    vals = rng.normal(mean, sd, size=size)
    while np.any(vals <= 0.0):
        bad = vals <= 0.0
        vals[bad] = rng.normal(mean, sd, size=int(bad.sum()))
    return vals


def _centroid_distances(z, centroids, metric):
    """Distance (or similarity) from every embedding row to each centroid."""
    if metric in ("euclidean_topics", "euclidean_covariates"):
        diff = z[:, None, :] - centroids[None, :, :]
        return np.sqrt(np.sum(diff * diff, axis=2))
    # cosine similarity, the tcga reading of D
    zn = z / np.maximum(np.linalg.norm(z, axis=1, keepdims=True), 1e-12)
    cn = centroids / np.maximum(np.linalg.norm(centroids, axis=1, keepdims=True), 1e-12)
    return zn @ cn.T


def _softmax(x, axis=-1):
    shifted = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


def build_oracle(spec, z):
    """Draw all outcome-process randomness and freeze it into an oracle.

    Per treatment: a centroid row z_t with outcome distribution
    N(mu_t, sigma_t) (mu ~ N(0.45, 0.15), sigma ~ N(0.1, 0.05), redrawn
    until positive) and two dosage centroids carrying the dose-mixture
    components. Per sample: y_t ~ N(mu_t, sigma_t) + eps, eps ~ N(0, 0.15),
    and softmax distance weights over the two dosage centroids.
    """
    rng = np.random.default_rng([1, spec.seed])
    n = z.shape[0]
    k = spec.num_treatments
    if 3 * k > n:
        raise ValueError(f"{k} treatments need at least {3 * k} samples, got {n}")
    picks = rng.choice(n, size=3 * k, replace=False)
    centroids_t = z[picks[:k]]
    centroids_s = z[picks[k:]].reshape(k, 2, -1)

    mu_t = rng.normal(0.45, 0.15, size=k)
    sigma_t = _positive_normal(rng, 0.1, 0.05, size=k)
    mix_means = rng.normal(0.45, 0.15, size=(k, 2))
    mix_sds = _positive_normal(rng, 0.1, 0.05, size=(k, 2))

    eps = rng.normal(0.0, 0.15, size=n)
    y_t = rng.normal(mu_t[None, :], sigma_t[None, :], size=(n, k)) + eps[:, None]

    weights = np.empty((n, k, 2))
    for t in range(k):
        d = _centroid_distances(z, centroids_s[t], spec.distance)  # (n, 2)
        weights[:, t, :] = _softmax(d, axis=1)

    return GroundTruthOracle(
        scale_c=spec.scale_c,
        y_t=y_t,
        mix_means=mix_means,
        mix_sds=mix_sds,
        mix_weights=weights,
        mu_t=mu_t,
        sigma_t=sigma_t,
        centroids_t=centroids_t,
        centroids_s=centroids_s,
    )


# --------------------------------------------------------------- assignment


def draw_dosages(spec, rng, n):
    """Candidate dosage per (sample, treatment), clipped into (0, 1]."""
    k = spec.num_treatments
    if spec.dosage_law == "exponential":
        scale = 1.0 / spec.exp_scale if spec.exp_is_rate else spec.exp_scale
        s = rng.exponential(scale, size=(n, k))
    else:
        means = np.asarray(spec.dose_means, dtype=np.float64)
        s = rng.normal(means[None, :], spec.dose_sd, size=(n, k))
    return np.clip(s, DOSAGE_LOW, DOSAGE_HIGH)


def assignment_logit_factors(oracle, dosages, rows=None):
    """y_t * y_s(s_t) per (sample, candidate treatment): the softmax
    score that drives biased treatment assignment."""
    n, k = dosages.shape
    rows = np.arange(n) if rows is None else np.asarray(rows)
    factors = np.empty((n, k))
    for t in range(k):
        factors[:, t] = oracle.y_t[rows, t] * oracle.dose_factor(rows, t, dosages[:, t])
    return factors


def draw_assignment(oracle, spec, rng, rows=None):
    """One draw of (t_f, s_f) per sample: dosages first, then the treatment
    from Categorical(softmax(kappa * y_t * y_s))."""
    rows = np.arange(oracle.num_samples) if rows is None else np.asarray(rows)
    dosages = draw_dosages(spec, rng, rows.size)
    probs = _softmax(spec.kappa * assignment_logit_factors(oracle, dosages, rows), axis=1)
    u = rng.random(rows.size)
    t_f = (u[:, None] > np.cumsum(probs, axis=1)).sum(axis=1)
    t_f = np.minimum(t_f, spec.num_treatments - 1)
    s_f = dosages[np.arange(rows.size), t_f]
    return t_f.astype(np.int64), s_f


def assign_treatments_and_dosages(oracle, spec, rng):
    """Factual (t_f, s_f, y_f) for every sample."""
    t_f, s_f = draw_assignment(oracle, spec, rng)
    y_f = np.empty(oracle.num_samples)
    for t in np.unique(t_f):
        rows = np.where(t_f == t)[0]
        y_f[rows] = oracle.evaluate_each(rows, int(t), s_f[rows])
    return t_f, s_f, y_f


# --------------------------------------------------------------- dataset


@dataclass
class Dataset:
    spec: BenchmarkSpec
    X: np.ndarray
    t_f: np.ndarray
    s_f: np.ndarray
    y_f: np.ndarray
    train_idx: np.ndarray
    val_idx: np.ndarray
    test_idx: np.ndarray
    oracle: GroundTruthOracle
    _features: np.ndarray = field(default=None, repr=False, compare=False)

    @property
    def num_samples(self):
        return self.X.shape[0]

    @property
    def num_treatments(self):
        return self.spec.num_treatments

    @property
    def dosage_low(self):
        return self.oracle.dosage_low

    @property
    def dosage_high(self):
        return self.oracle.dosage_high

    def features(self):
        """Covariates standardised by train-split mean/sd (models and
        neighbour searches all consume this view)."""
        if self._features is None:
            mean = self.X[self.train_idx].mean(axis=0)
            sd = self.X[self.train_idx].std(axis=0)
            sd[sd == 0.0] = 1.0
            self._features = (self.X - mean) / sd
        return self._features

    def split(self, name):
        idx = {"train": self.train_idx, "val": self.val_idx, "test": self.test_idx}[name]
        F = self.features()
        return idx, (F[idx], self.t_f[idx], self.s_f[idx], self.y_f[idx])

    def save(self, path):
        """Single-file container: binary arrays plus a JSON metadata entry."""
        arrays = {
            "X": self.X,
            "t_f": self.t_f,
            "s_f": self.s_f,
            "y_f": self.y_f,
            "train_idx": self.train_idx,
            "val_idx": self.val_idx,
            "test_idx": self.test_idx,
        }
        arrays.update(self.oracle.to_arrays())
        meta = {
            "format": DATASET_FORMAT,
            "spec": asdict(self.spec),
            "dosage_low": self.oracle.dosage_low,
            "dosage_high": self.oracle.dosage_high,
        }
        meta["spec"]["dose_means"] = list(meta["spec"]["dose_means"])
        np.savez_compressed(path, meta_json=np.str_(json.dumps(meta)), **arrays)

    @classmethod
    def load(cls, path):
        with np.load(path, allow_pickle=False) as payload:
            meta = json.loads(str(payload["meta_json"]))
            if meta.get("format") != DATASET_FORMAT:
                raise ValueError(f"unsupported dataset format {meta.get('format')!r}")
            spec_dict = meta["spec"]
            spec_dict["dose_means"] = tuple(spec_dict["dose_means"])
            spec = BenchmarkSpec(**spec_dict)
            oracle = GroundTruthOracle.from_arrays(
                payload, meta["spec"]["scale_c"], meta["dosage_low"], meta["dosage_high"]
            )
            return cls(
                spec=spec,
                X=payload["X"],
                t_f=payload["t_f"],
                s_f=payload["s_f"],
                y_f=payload["y_f"],
                train_idx=payload["train_idx"],
                val_idx=payload["val_idx"],
                test_idx=payload["test_idx"],
                oracle=oracle,
            )


def make_splits(n, rng):
    """Shuffled 63/27/10 train/validation/test split."""
    order = rng.permutation(n)
    n_train = int(round(0.63 * n))
    n_val = int(round(0.27 * n))
    return (
        np.sort(order[:n_train]),
        np.sort(order[n_train : n_train + n_val]),
        np.sort(order[n_train + n_val :]),
    )


def generate(spec):
    """Run the full generating process for a benchmark spec."""
    X, z = generate_covariates(spec)
    oracle = build_oracle(spec, z)
    rng = np.random.default_rng([2, spec.seed])
    t_f, s_f, y_f = assign_treatments_and_dosages(oracle, spec, rng)
    split_rng = np.random.default_rng([3, spec.seed])
    train_idx, val_idx, test_idx = make_splits(X.shape[0], split_rng)
    return Dataset(
        spec=spec,
        X=X,
        t_f=t_f,
        s_f=s_f,
        y_f=y_f,
        train_idx=train_idx,
        val_idx=val_idx,
        test_idx=test_idx,
        oracle=oracle,
    )


# --------------------------------------------------------------- CSV


def load_csv_covariates(path, expected_columns=None):
    """Numeric CSV with a header row -> float64 matrix.

    Ragged rows, non-numeric cells and NaNs are rejected with the offending
    row (1-based, header excluded) and column named in the error.
    """
    with open(path, newline="") as fh:
        return _parse_covariates(fh, expected_columns)


def _parse_covariates(fh, expected_columns=None):
    reader = csv.reader(fh)
    try:
        header = next(reader)
    except StopIteration:
        raise CsvFormatError("empty CSV: missing header row") from None
    width = len(header)
    if expected_columns is not None and list(header) != list(expected_columns):
        raise CsvFormatError(f"header {header!r} does not match expected columns")
    rows = []
    for i, row in enumerate(reader, start=1):
        if len(row) != width:
            raise CsvFormatError(
                f"row {i} has {len(row)} fields, expected {width}", row=i
            )
        try:
            vals = [float(v) for v in row]
        except ValueError:
            for j, v in enumerate(row):
                try:
                    float(v)
                except ValueError:
                    raise CsvFormatError(
                        f"row {i}, column {header[j]!r}: non-numeric value {v!r}",
                        row=i,
                        column=header[j],
                    ) from None
        for j, v in enumerate(vals):
            if not np.isfinite(v):
                raise CsvFormatError(
                    f"row {i}, column {header[j]!r}: non-finite value {row[j]!r}",
                    row=i,
                    column=header[j],
                )
        rows.append(vals)
    if not rows:
        raise CsvFormatError("CSV contains a header but no data rows")
    return np.asarray(rows, dtype=np.float64)


def write_csv_covariates(X, path, column_prefix="x"):
    """Full-precision CSV writer (round-trips bit-exactly through the loader)."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"{column_prefix}{j}" for j in range(X.shape[1])])
        for row in X:
            writer.writerow([repr(float(v)) for v in row])


def parse_csv_string(text, expected_columns=None):
    """Parse CSV content from a string (convenience for tests/tools)."""
    return _parse_covariates(io.StringIO(text), expected_columns)
